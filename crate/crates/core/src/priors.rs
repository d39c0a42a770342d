//! Hyperprior log-densities for the latent-field parameters.
//!
//! Precision parameters carry either a penalised complexity prior stated
//! through the tail event Pr(tau^{-1/2} > U) = alpha, or a Gamma law on tau
//! stated through log tau (the convention used for internal log-precision
//! parameters). The BYM2 mixing parameter phi carries a penalised complexity
//! prior with no closed form; it is built numerically from the scaled
//! structured covariance of the graph and tabulated on a fixed grid.

use statrs::function::gamma::ln_gamma;

use crate::error::{CoreError, Result};
use crate::graph::AreaGraph;

/// Penalised complexity prior on a precision, parameterised by
/// Pr(tau^{-1/2} > threshold_u) = tail_prob_alpha.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PcPrecisionPrior {
    pub threshold_u: f64,
    pub tail_prob_alpha: f64,
}

impl Default for PcPrecisionPrior {
    fn default() -> Self {
        PcPrecisionPrior {
            threshold_u: 1.0,
            tail_prob_alpha: 0.01,
        }
    }
}

impl PcPrecisionPrior {
    /// Rate of the exponential prior on the standard deviation sigma = tau^{-1/2}.
    pub fn lambda(&self) -> f64 {
        -self.tail_prob_alpha.ln() / self.threshold_u
    }
}

/// Log-density of the PC precision prior at `tau`:
/// log(lambda/2) - (3/2) log tau - lambda tau^{-1/2}.
pub fn pc_precision_logdensity(tau: f64, prior: &PcPrecisionPrior) -> Result<f64> {
    if !(prior.threshold_u > 0.0) || !(prior.tail_prob_alpha > 0.0 && prior.tail_prob_alpha < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "PC precision prior requires U > 0 and alpha in (0,1), got ({}, {})",
            prior.threshold_u, prior.tail_prob_alpha
        )));
    }
    if !(tau > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    Ok(pc_precision_logdensity_unchecked(tau, prior))
}

pub(crate) fn pc_precision_logdensity_unchecked(tau: f64, prior: &PcPrecisionPrior) -> f64 {
    if !(tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lambda = prior.lambda();
    (lambda / 2.0).ln() - 1.5 * tau.ln() - lambda / tau.sqrt()
}

/// Gamma law on tau stated through log tau: tau ~ Gamma(shape, rate), the
/// usual convention for weakly informative priors on internal log-precisions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LogGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for LogGammaPrior {
    fn default() -> Self {
        LogGammaPrior {
            shape: 1.0,
            rate: 0.00005,
        }
    }
}

/// Log-density in tau of the log-Gamma prior.
pub fn loggamma_logdensity(tau: f64, prior: &LogGammaPrior) -> Result<f64> {
    if !(prior.shape > 0.0) || !(prior.rate > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "log-Gamma prior requires positive shape and rate, got ({}, {})",
            prior.shape, prior.rate
        )));
    }
    if !(tau > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    Ok(loggamma_logdensity_unchecked(tau, prior))
}

pub(crate) fn loggamma_logdensity_unchecked(tau: f64, prior: &LogGammaPrior) -> f64 {
    if !(tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    prior.shape * prior.rate.ln() - ln_gamma(prior.shape) + (prior.shape - 1.0) * tau.ln()
        - prior.rate * tau
}

/// PC prior on the BYM2 mixing parameter, calibrated so that
/// Pr(phi < median_phi) = 0.5.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PcMixingPrior {
    pub median_phi: f64,
}

impl Default for PcMixingPrior {
    fn default() -> Self {
        PcMixingPrior { median_phi: 0.5 }
    }
}

/// Default number of tabulation points on [0, 1].
pub const PC_MIXING_GRID_POINTS: usize = 201;

/// Tabulated PC prior density for the mixing parameter of a given graph.
///
/// The distance function is d(phi) = sqrt(2 KLD(phi)) where KLD compares the
/// BYM2 covariance phi*S + (1-phi)*I against the base I on the structured
/// subspace (S the scaled constrained generalized inverse of Q). An
/// exponential is placed on the distance, truncated to the attainable range
/// [0, d(1)], with rate solved from the median constraint. Log-densities are
/// stored on a uniform grid and interpolated linearly; the table is
/// renormalised so the interpolated density integrates to one.
#[derive(Debug, Clone)]
pub struct PcMixingTable {
    pub median_phi: f64,
    grid_log_density: Vec<f64>,
}

fn kld_terms(gammas: &[f64], phi: f64) -> f64 {
    // 0.5 * sum[(gamma-1)phi - log(1 + phi(gamma-1))]
    0.5 * gammas
        .iter()
        .map(|&g| {
            let x = phi * (g - 1.0);
            x - x.ln_1p()
        })
        .sum::<f64>()
}

fn kld_derivative(gammas: &[f64], phi: f64) -> f64 {
    0.5 * gammas
        .iter()
        .map(|&g| {
            let gm1 = g - 1.0;
            phi * gm1 * gm1 / (1.0 + phi * gm1)
        })
        .sum::<f64>()
}

fn distance(gammas: &[f64], phi: f64) -> f64 {
    (2.0 * kld_terms(gammas, phi)).max(0.0).sqrt()
}

/// d'(phi) = KLD'(phi) / sqrt(2 KLD(phi)), with the analytic phi -> 0 limit.
fn distance_derivative(gammas: &[f64], phi: f64) -> f64 {
    let kld = kld_terms(gammas, phi);
    if kld < 1e-14 {
        let s: f64 = gammas.iter().map(|&g| (g - 1.0) * (g - 1.0)).sum();
        return (s / 2.0).sqrt();
    }
    kld_derivative(gammas, phi) / (2.0 * kld).sqrt()
}

/// log(exp(x) - 1) for x > 0, stable for large x.
fn ln_expm1(x: f64) -> f64 {
    if x > 50.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}

/// Pr(d < t) under the truncated exponential with rate `lambda` on [0, dmax].
fn trunc_exp_cdf(lambda: f64, t: f64, dmax: f64) -> f64 {
    if lambda.abs() * dmax < 1e-12 {
        return t / dmax;
    }
    if lambda > 0.0 {
        (-(-lambda * t).exp_m1()) / (-(-lambda * dmax).exp_m1())
    } else {
        // (e^{|l| t} - 1) / (e^{|l| d} - 1), computed in log space.
        if t <= 0.0 {
            return 0.0;
        }
        (ln_expm1(-lambda * t) - ln_expm1(-lambda * dmax)).exp()
    }
}

impl PcMixingTable {
    pub fn new(graph: &AreaGraph, prior: &PcMixingPrior) -> Result<Self> {
        Self::with_grid(graph, prior, PC_MIXING_GRID_POINTS)
    }

    pub fn with_grid(graph: &AreaGraph, prior: &PcMixingPrior, n_grid: usize) -> Result<Self> {
        let m = prior.median_phi;
        if !(m > 0.0 && m < 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "median_phi must lie in (0,1), got {m}"
            )));
        }
        if n_grid < 3 {
            return Err(CoreError::InvalidParameter("grid needs >= 3 points".into()));
        }
        let gammas = graph.structure_spectrum();
        if gammas.is_empty() {
            return Err(CoreError::Graph(
                "mixing prior undefined: graph has no structured subspace".into(),
            ));
        }
        let d_max = distance(gammas, 1.0);
        let d_med = distance(gammas, m);
        if !(d_max.is_finite() && d_max > 0.0) {
            return Err(CoreError::Graph("degenerate distance function".into()));
        }

        // Solve Pr(phi < m) = 0.5 for the exponential rate by bisection; the
        // truncated-exponential CDF at d_med is monotone increasing in lambda.
        let target = 0.5;
        let (mut lo, mut hi) = (-1000.0 / d_max, 1000.0 / d_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if trunc_exp_cdf(mid, d_med, d_max) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);

        let log_norm = if lambda.abs() * d_max < 1e-12 {
            d_max.ln()
        } else if lambda > 0.0 {
            // log((1 - exp(-lambda d_max)) / lambda)
            (-(-lambda * d_max).exp_m1()).ln() - lambda.ln()
        } else {
            ln_expm1(-lambda * d_max) - (-lambda).ln()
        };

        let mut grid_log_density: Vec<f64> = (0..n_grid)
            .map(|k| {
                let phi = k as f64 / (n_grid - 1) as f64;
                let d = distance(gammas, phi);
                let dd = distance_derivative(gammas, phi);
                -lambda * d + dd.max(1e-300).ln() - log_norm
            })
            .collect();

        // Renormalise so the piecewise-exponential interpolant integrates to 1.
        let raw = Self {
            median_phi: m,
            grid_log_density: grid_log_density.clone(),
        };
        let z = raw.integral();
        let log_z = z.ln();
        for v in &mut grid_log_density {
            *v -= log_z;
        }
        Ok(PcMixingTable {
            median_phi: m,
            grid_log_density,
        })
    }

    pub fn n_grid(&self) -> usize {
        self.grid_log_density.len()
    }

    /// Interpolated log-density at `phi` in [0, 1].
    pub fn logdensity(&self, phi: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(CoreError::InvalidParameter(format!(
                "phi must lie in [0,1], got {phi}"
            )));
        }
        Ok(self.logdensity_unchecked(phi))
    }

    pub(crate) fn logdensity_unchecked(&self, phi: f64) -> f64 {
        if !(0.0..=1.0).contains(&phi) {
            return f64::NEG_INFINITY;
        }
        let n = self.grid_log_density.len();
        let pos = phi * (n - 1) as f64;
        let k = (pos.floor() as usize).min(n - 2);
        let w = pos - k as f64;
        (1.0 - w) * self.grid_log_density[k] + w * self.grid_log_density[k + 1]
    }

    /// Integral of the interpolated density over [0, 1]: exact segment-wise
    /// integration of exp(linear).
    pub fn integral(&self) -> f64 {
        let n = self.grid_log_density.len();
        let h = 1.0 / (n - 1) as f64;
        let mut acc = 0.0;
        for k in 0..n - 1 {
            let a = self.grid_log_density[k];
            let b = self.grid_log_density[k + 1];
            let diff = b - a;
            acc += if diff.abs() < 1e-10 {
                h * 0.5 * (a.exp() + b.exp())
            } else {
                h * (b.exp() - a.exp()) / diff
            };
        }
        acc
    }

    /// Median of the interpolated density.
    pub fn median(&self) -> f64 {
        let n = self.grid_log_density.len();
        let h = 1.0 / (n - 1) as f64;
        let mut acc = 0.0;
        for k in 0..n - 1 {
            let a = self.grid_log_density[k];
            let b = self.grid_log_density[k + 1];
            let diff = b - a;
            let seg = if diff.abs() < 1e-10 {
                h * 0.5 * (a.exp() + b.exp())
            } else {
                h * (b.exp() - a.exp()) / diff
            };
            if acc + seg >= 0.5 {
                let need = 0.5 - acc;
                // Solve integral over [0, t*h] of exp(a + diff*s/h) ds = need.
                let t = if diff.abs() < 1e-10 {
                    need / seg
                } else {
                    (need * diff / (h * a.exp()) + 1.0).max(1e-300).ln() / diff
                };
                return (k as f64 + t.clamp(0.0, 1.0)) * h;
            }
            acc += seg;
        }
        1.0
    }
}

/// Mixing prior choice: the numeric PC construction or the documented
/// uniform fallback on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MixingPrior {
    Pc(PcMixingPrior),
    Uniform,
}

impl Default for MixingPrior {
    fn default() -> Self {
        MixingPrior::Pc(PcMixingPrior::default())
    }
}

/// Precision prior choice for one latent field.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PrecisionPrior {
    Pc(PcPrecisionPrior),
    LogGamma(LogGammaPrior),
}

impl PrecisionPrior {
    pub(crate) fn logdensity_unchecked(&self, tau: f64) -> f64 {
        match self {
            PrecisionPrior::Pc(p) => pc_precision_logdensity_unchecked(tau, p),
            PrecisionPrior::LogGamma(p) => loggamma_logdensity_unchecked(tau, p),
        }
    }
}

#[cfg(test)]
pub(crate) mod quadrature {
    //! Test-only adaptive Simpson integration.

    pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: usize,
        ) -> f64 {
            let (left, lm, flm) = simpson(f, a, fa, m, fm);
            let (right, rm, frm) = simpson(f, m, fm, b, fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                    + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let (whole, m, fm) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
    }
}

#[cfg(test)]
mod tests {
    use super::quadrature::adaptive_simpson;
    use super::*;
    use crate::graph::build_adjacency_from_edges;
    use approx::assert_relative_eq;

    #[test]
    fn pc_precision_lambda_default() {
        let p = PcPrecisionPrior::default();
        assert_relative_eq!(p.lambda(), -(0.01_f64.ln()), max_relative = 1e-12);
        assert_relative_eq!(p.lambda(), 4.605170185988091, max_relative = 1e-12);
    }

    #[test]
    fn pc_precision_at_one_closed_form() {
        let p = PcPrecisionPrior::default();
        let lambda = p.lambda();
        let ld = pc_precision_logdensity(1.0, &p).unwrap();
        assert_relative_eq!(ld, (lambda / 2.0).ln() - lambda, max_relative = 1e-12);
    }

    #[test]
    fn pc_precision_integrates_to_one() {
        let p = PcPrecisionPrior::default();
        // Integrate in x = log tau for a well-behaved integrand.
        let f = |x: f64| pc_precision_logdensity_unchecked(x.exp(), &p).exp() * x.exp();
        let integral = adaptive_simpson(&f, -30.0, 40.0, 1e-9);
        assert!((integral - 1.0).abs() < 1e-6, "integral = {integral}");
    }

    #[test]
    fn pc_precision_rejects_nonpositive_tau() {
        let p = PcPrecisionPrior::default();
        assert!(pc_precision_logdensity(0.0, &p).is_err());
        assert!(pc_precision_logdensity(-1.0, &p).is_err());
        assert_eq!(
            pc_precision_logdensity_unchecked(-1.0, &p),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn loggamma_integrates_to_one() {
        let p = LogGammaPrior::default();
        let f = |x: f64| loggamma_logdensity_unchecked(x.exp(), &p).exp() * x.exp();
        let integral = adaptive_simpson(&f, -25.0, 25.0, 1e-9);
        assert!((integral - 1.0).abs() < 1e-6, "integral = {integral}");
    }

    #[test]
    fn loggamma_shape_one_is_exponential_in_tau() {
        let p = LogGammaPrior::default();
        let ld = loggamma_logdensity(3.0, &p).unwrap();
        assert_relative_eq!(ld, p.rate.ln() - p.rate * 3.0, max_relative = 1e-12);
    }

    #[test]
    fn loggamma_tail_monotone_decreasing() {
        let p = LogGammaPrior::default();
        let hi = loggamma_logdensity(1e6, &p).unwrap();
        let lo = loggamma_logdensity(1e2, &p).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn mixing_table_integrates_to_one() {
        let g = build_adjacency_from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)])
            .unwrap();
        let table = PcMixingTable::new(&g, &PcMixingPrior::default()).unwrap();
        assert!((table.integral() - 1.0).abs() < 1e-4);
        // Finer quadrature over the interpolated density agrees.
        let f = |phi: f64| table.logdensity_unchecked(phi).exp();
        let integral = adaptive_simpson(&f, 0.0, 1.0, 1e-8);
        assert!((integral - 1.0).abs() < 1e-4, "integral = {integral}");
    }

    #[test]
    fn mixing_table_median_matches_constraint() {
        let g = build_adjacency_from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)])
            .unwrap();
        let table = PcMixingTable::new(&g, &PcMixingPrior { median_phi: 0.5 }).unwrap();
        let grid_h = 1.0 / (table.n_grid() - 1) as f64;
        assert!(
            (table.median() - 0.5).abs() <= grid_h,
            "median = {}",
            table.median()
        );
    }

    #[test]
    fn mixing_rejects_phi_outside_unit_interval() {
        let g = build_adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let table = PcMixingTable::new(&g, &PcMixingPrior::default()).unwrap();
        assert!(table.logdensity(-0.1).is_err());
        assert!(table.logdensity(1.1).is_err());
        assert_eq!(table.logdensity_unchecked(1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn interior_logdensities_finite() {
        let g = build_adjacency_from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let table = PcMixingTable::new(&g, &PcMixingPrior::default()).unwrap();
        for k in 1..100 {
            let phi = k as f64 / 100.0;
            assert!(table.logdensity(phi).unwrap().is_finite());
        }
        let pc = PcPrecisionPrior::default();
        let lg = LogGammaPrior::default();
        for &tau in &[1e-6, 1e-2, 1.0, 1e3, 1e8] {
            assert!(pc_precision_logdensity(tau, &pc).unwrap().is_finite());
            assert!(loggamma_logdensity(tau, &lg).unwrap().is_finite());
        }
    }
}
