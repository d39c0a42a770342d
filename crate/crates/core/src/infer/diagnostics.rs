//! Convergence diagnostics: split potential scale reduction and effective
//! sample size with Geyer's initial monotone sequence truncation.

/// Split each chain in half and return the resulting sequences.
fn split_sequences(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Split potential scale reduction over per-chain kept draws.
///
/// Returns 1.0 for (numerically) constant sequences.
pub fn split_psr(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_sequences(chains);
    let n = seqs.iter().map(|s| s.len()).min().unwrap_or(0);
    if n < 4 || seqs.len() < 2 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = seqs.iter().map(|s| mean(&s[..n])).collect();
    let vars: Vec<f64> = seqs.iter().zip(&means).map(|(s, &m)| var(&s[..n], m)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = var(&means, grand);
    let scale = means.iter().map(|m| m.abs()).fold(1.0_f64, f64::max);
    if w <= 1e-24 * scale * scale {
        return 1.0;
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size over per-chain kept draws (split sequences,
/// combined autocorrelations, Geyer initial monotone truncation).
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let seqs = split_sequences(chains);
    let n = seqs.iter().map(|s| s.len()).min().unwrap_or(0);
    if n < 4 {
        return 0.0;
    }
    let m = seqs.len();
    let total: f64 = chains.iter().map(|c| c.len() as f64).sum();
    let means: Vec<f64> = seqs.iter().map(|s| mean(&s[..n])).collect();
    let vars: Vec<f64> = seqs.iter().zip(&means).map(|(s, &m)| var(&s[..n], m)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = var(&means, grand);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    let scale = means.iter().map(|x| x.abs()).fold(1.0_f64, f64::max);
    if var_plus <= 1e-24 * scale * scale {
        // Constant draws: no autocorrelation information, treat as iid.
        return total;
    }

    let acov = |s: &[f64], mu: f64, t: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - t {
            acc += (s[i] - mu) * (s[i + t] - mu);
        }
        acc / n as f64
    };

    let rho_hat = |_t: usize, acovs: &[f64]| -> f64 {
        1.0 - (w - acovs.iter().sum::<f64>() / m as f64) / var_plus
    };

    let max_lag = (n - 4).min(2000);
    let mut rho_sum = 0.0;
    let mut t = 1usize;
    let mut prev_pair = f64::INFINITY;
    while t + 1 <= max_lag {
        let ac_t: Vec<f64> = seqs.iter().zip(&means).map(|(s, &mu)| acov(&s[..n], mu, t)).collect();
        let ac_t1: Vec<f64> = seqs
            .iter()
            .zip(&means)
            .map(|(s, &mu)| acov(&s[..n], mu, t + 1))
            .collect();
        let pair = rho_hat(t, &ac_t) + rho_hat(t + 1, &ac_t1);
        if pair <= 0.0 {
            break;
        }
        // Enforce monotone non-increasing pair sums.
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        rho_sum += pair;
        t += 2;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    (total / tau).min(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(n_chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n_chains)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn iid_draws_pass() {
        let chains = iid_chains(4, 1000, 1);
        let psr = split_psr(&chains);
        assert!(psr < 1.02, "psr = {psr}");
        let ess = effective_sample_size(&chains);
        assert!(ess > 2500.0 && ess <= 4000.0, "ess = {ess}");
    }

    #[test]
    fn ar1_draws_have_reduced_ess() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let rho = 0.9_f64;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        x = rho * x + (1.0 - rho * rho).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let ess = effective_sample_size(&chains);
        // Theory: n (1-rho)/(1+rho) = 8000/19 ~ 421.
        assert!(ess > 180.0 && ess < 900.0, "ess = {ess}");
    }

    #[test]
    fn diverged_means_raise_psr() {
        let mut chains = iid_chains(4, 500, 3);
        for x in chains[0].iter_mut() {
            *x += 3.0;
        }
        assert!(split_psr(&chains) > 1.5);
    }

    #[test]
    fn constant_chains_are_benign() {
        let chains = vec![vec![2.0; 100]; 4];
        assert_eq!(split_psr(&chains), 1.0);
        assert_eq!(effective_sample_size(&chains), 400.0);
    }
}
