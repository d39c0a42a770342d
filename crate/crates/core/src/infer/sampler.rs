//! Adaptive Metropolis-within-Gibbs chain for the joint models.
//!
//! One iteration sweeps, per latent field: a gradient-informed
//! (Langevin-type) joint proposal on the structured coordinates projected to
//! the per-component sum-to-zero subspace, the same on the unstructured
//! coordinates, then hyperparameter moves: a random walk on log tau and
//! logit phi plus complementary scale moves that rescale the coordinates to
//! keep the combined field fixed (these carry the prior and Jacobian terms
//! and restore mixing when the data pin the field tightly). Intercepts are
//! refreshed from their likelihood-conjugate Gamma form with a
//! Metropolis-Hastings correction for the Gaussian prior. Latent blocks are
//! preconditioned by fixed per-coordinate scales refreshed during warmup.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{CoreError, Result};
use crate::priors::PrecisionPrior;

use super::logjoint::{sigmoid, ModelCtx};
use super::ParamLayout;

/// Sampler configuration. Defaults: 4 chains, 2000 warmup and 2000 kept
/// iterations per chain, no thinning; convergence thresholds 1.05 / 200.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_keep: usize,
    pub thinning: usize,
    pub psr_threshold: f64,
    pub ess_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 2000,
            n_keep: 2000,
            thinning: 1,
            psr_threshold: 1.05,
            ess_threshold: 200.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 4 {
            return Err(CoreError::InvalidParameter(format!(
                "at least 4 chains required, got {}",
                self.n_chains
            )));
        }
        if self.n_keep == 0 || self.thinning == 0 {
            return Err(CoreError::InvalidParameter(
                "n_keep and thinning must be positive".into(),
            ));
        }
        if !(self.psr_threshold > 1.0) || !(self.ess_threshold > 0.0) {
            return Err(CoreError::InvalidParameter(
                "convergence thresholds must satisfy psr > 1 and ess > 0".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(base: u64, lane: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(lane.wrapping_mul(0xA24BAED4963EE407)))
}

const LOG_TAU_BOUND: f64 = 60.0;
const LOGIT_PHI_BOUND: f64 = 30.0;

struct Adapt {
    log_step: f64,
    target: f64,
    count: u64,
}

impl Adapt {
    fn new(initial_step: f64, target: f64) -> Self {
        Adapt {
            log_step: initial_step.ln(),
            target,
            count: 0,
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn update(&mut self, accept_prob: f64) {
        self.count += 1;
        let gamma = (self.count as f64 + 10.0).powf(-0.7);
        self.log_step += gamma * (accept_prob - self.target);
        self.log_step = self.log_step.clamp(-12.0, 3.0);
    }
}

struct FieldChainState {
    u: Vec<f64>,
    v: Vec<f64>,
    log_tau: f64,
    logit_phi: f64,
    b: Vec<f64>,
    u_quad: f64,
    v_quad: f64,
    // Preconditioner scales, frozen after warmup.
    u_scale: Vec<f64>,
    v_scale: Vec<f64>,
    // Step adapters.
    u_mala: Adapt,
    v_mala: Adapt,
    tau_rw: Adapt,
    tau_scale: Adapt,
    phi_rw: Adapt,
    phi_scale: Adapt,
}

struct ChainState {
    alpha: [f64; 2],
    fields: Vec<FieldChainState>,
    eta1: Vec<f64>,
    eta2: Vec<f64>,
    loglik1: f64,
    loglik2: f64,
    alpha_rw: [Adapt; 2],
}

pub(crate) struct ChainRunner<'a, 'c> {
    ctx: &'a ModelCtx<'c>,
    layout: &'a ParamLayout,
    config: &'a SamplerConfig,
    rng: ChaCha20Rng,
    state: ChainState,
    adapting: bool,
    // Scratch buffers.
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}


fn sumsq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

impl<'a, 'c> ChainRunner<'a, 'c> {
    pub fn new(
        ctx: &'a ModelCtx<'c>,
        layout: &'a ParamLayout,
        config: &'a SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = ctx.n_areas();
        let data = ctx.data;
        let total_e: f64 = data.expected.iter().sum();
        let a1 = ((data.total_ref() as f64).max(0.5) / total_e).ln();
        let a2 = ((data.total_cand() as f64).max(0.5) / total_e).ln();
        let norm = |rng: &mut ChaCha20Rng| rng.sample::<f64, _>(StandardNormal);
        let alpha = [a1 + 0.2 * norm(&mut rng), a2 + 0.2 * norm(&mut rng)];
        let n_latent = n as f64;
        let mala_step = 0.5 / n_latent.powf(1.0 / 3.0);
        let mut fields = Vec::with_capacity(ctx.defs.len());
        for def in &ctx.defs {
            let mut u = vec![0.0; if def.structured { n } else { 0 }];
            for x in u.iter_mut() {
                *x = 0.01 * norm(&mut rng);
            }
            if def.structured {
                data.graph.project_sum_to_zero(&mut u);
            }
            let mut v = vec![0.0; n];
            for x in v.iter_mut() {
                *x = 0.01 * norm(&mut rng);
            }
            let log_tau = (3.0 + 0.5 * norm(&mut rng)).clamp(-5.0, 10.0);
            let logit_phi = if def.structured { 0.5 * norm(&mut rng) } else { 0.0 };
            let u_quad = if def.structured { data.graph.icar_quadform(&u) } else { 0.0 };
            let v_quad = sumsq(&v);
            fields.push(FieldChainState {
                u,
                v,
                log_tau,
                logit_phi,
                b: vec![0.0; n],
                u_quad,
                v_quad,
                u_scale: vec![1.0; n],
                v_scale: vec![1.0; n],
                u_mala: Adapt::new(mala_step, 0.574),
                v_mala: Adapt::new(mala_step, 0.574),
                tau_rw: Adapt::new(0.5, 0.44),
                tau_scale: Adapt::new(0.5, 0.44),
                phi_rw: Adapt::new(0.5, 0.44),
                phi_scale: Adapt::new(0.5, 0.44),
            });
        }
        let state = ChainState {
            alpha,
            fields,
            eta1: vec![0.0; n],
            eta2: vec![0.0; n],
            loglik1: 0.0,
            loglik2: 0.0,
            alpha_rw: [Adapt::new(0.1, 0.44), Adapt::new(0.1, 0.44)],
        };
        let mut runner = ChainRunner {
            ctx,
            layout,
            config,
            rng,
            state,
            adapting: true,
            scratch_a: vec![0.0; n],
            scratch_b: vec![0.0; n],
        };
        runner.refresh_combined();
        runner.refresh_preconditioner();
        Ok(runner)
    }

    fn norm(&mut self) -> f64 {
        self.rng.sample::<f64, _>(StandardNormal)
    }

    fn unif(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn field_weights(&self, idx: usize) -> (f64, f64) {
        let f = &self.state.fields[idx];
        let inv_sqrt_tau = (-0.5 * f.log_tau).exp();
        if self.ctx.defs[idx].structured {
            let phi = sigmoid(f.logit_phi);
            (inv_sqrt_tau * phi.sqrt(), inv_sqrt_tau * (1.0 - phi).sqrt())
        } else {
            (0.0, 1.0)
        }
    }

    /// Rebuild b for every field and the linear predictors and likelihood
    /// caches from scratch.
    fn refresh_combined(&mut self) {
        let n = self.ctx.n_areas();
        for idx in 0..self.state.fields.len() {
            let (ku, kv) = self.field_weights(idx);
            let structured = self.ctx.defs[idx].structured;
            let f = &mut self.state.fields[idx];
            for i in 0..n {
                f.b[i] = if structured { ku * f.u[i] + kv * f.v[i] } else { f.v[i] };
            }
        }
        for i in 0..n {
            let mut e1 = self.state.alpha[0];
            let mut e2 = self.state.alpha[1];
            for (def, f) in self.ctx.defs.iter().zip(&self.state.fields) {
                if def.in_db1 {
                    e1 += f.b[i];
                }
                if def.in_db2 {
                    e2 += f.b[i];
                }
            }
            self.state.eta1[i] = e1;
            self.state.eta2[i] = e2;
        }
        self.state.loglik1 = self.loglik_db(1, &self.state.eta1);
        self.state.loglik2 = self.loglik_db(2, &self.state.eta2);
    }

    fn loglik_db(&self, db: u8, eta: &[f64]) -> f64 {
        let d = self.ctx.data;
        let counts = if db == 1 { &d.counts_ref } else { &d.counts_cand };
        eta.iter()
            .enumerate()
            .map(|(i, &e)| counts[i] as f64 * e - d.expected[i] * e.exp())
            .sum()
    }

    /// Likelihood delta if field `idx` changes its combined values to `b_new`,
    /// also writing proposed etas into the scratch buffers.
    fn propose_field_etas(&mut self, idx: usize, b_new: &[f64]) -> (f64, bool, bool) {
        let def = &self.ctx.defs[idx];
        let n = self.ctx.n_areas();
        let b_old = &self.state.fields[idx].b;
        let mut delta = 0.0;
        if def.in_db1 {
            for i in 0..n {
                self.scratch_a[i] = self.state.eta1[i] + b_new[i] - b_old[i];
            }
            delta += self.loglik_db(1, &self.scratch_a) - self.state.loglik1;
        }
        if def.in_db2 {
            for i in 0..n {
                self.scratch_b[i] = self.state.eta2[i] + b_new[i] - b_old[i];
            }
            delta += self.loglik_db(2, &self.scratch_b) - self.state.loglik2;
        }
        (delta, def.in_db1, def.in_db2)
    }

    fn commit_field_etas(&mut self, in1: bool, in2: bool) {
        if in1 {
            std::mem::swap(&mut self.state.eta1, &mut self.scratch_a);
            self.state.loglik1 = self.loglik_db(1, &self.state.eta1);
        }
        if in2 {
            std::mem::swap(&mut self.state.eta2, &mut self.scratch_b);
            self.state.loglik2 = self.loglik_db(2, &self.state.eta2);
        }
    }

    /// d loglik / d b_i for field `idx` at the current state.
    fn likelihood_residual(&self, idx: usize, out: &mut [f64]) {
        let def = &self.ctx.defs[idx];
        let d = self.ctx.data;
        for i in 0..out.len() {
            let mut g = 0.0;
            if def.in_db1 {
                g += d.counts_ref[i] as f64 - d.expected[i] * self.state.eta1[i].exp();
            }
            if def.in_db2 {
                g += d.counts_cand[i] as f64 - d.expected[i] * self.state.eta2[i].exp();
            }
            out[i] = g;
        }
    }

    /// Project `w` onto the subspace where the reconstructed u = scale * w
    /// sums to zero per component (islands forced to zero).
    fn project_w(&self, w: &mut [f64], scale: &[f64]) {
        for comp in self.ctx.data.graph.components() {
            if comp.len() == 1 {
                w[comp[0]] = 0.0;
                continue;
            }
            let num: f64 = comp.iter().map(|&i| scale[i] * w[i]).sum();
            let den: f64 = comp.iter().map(|&i| scale[i] * scale[i]).sum();
            let c = num / den;
            for &i in comp {
                w[i] -= scale[i] * c;
            }
        }
    }

    fn refresh_preconditioner(&mut self) {
        let n = self.ctx.n_areas();
        let d = self.ctx.data;
        for idx in 0..self.state.fields.len() {
            let def = &self.ctx.defs[idx];
            let (ku, kv) = self.field_weights(idx);
            let tau = self.state.fields[idx].log_tau.exp();
            for i in 0..n {
                let mut lik_curv = 0.0;
                if def.in_db1 {
                    lik_curv += d.expected[i] * self.state.eta1[i].exp();
                }
                if def.in_db2 {
                    lik_curv += d.expected[i] * self.state.eta2[i].exp();
                }
                if def.structured {
                    let cu = self.ctx.sigma_gv * d.graph.degrees()[i] as f64 + ku * ku * lik_curv;
                    let cv = 1.0 + kv * kv * lik_curv;
                    self.state.fields[idx].u_scale[i] = cu.max(1e-12).powf(-0.5).clamp(1e-6, 1e6);
                    self.state.fields[idx].v_scale[i] = cv.max(1e-12).powf(-0.5).clamp(1e-6, 1e6);
                } else {
                    let cv = tau + lik_curv;
                    self.state.fields[idx].v_scale[i] = cv.max(1e-12).powf(-0.5).clamp(1e-6, 1e6);
                }
            }
        }
    }

    /// Langevin proposal for the structured coordinates of field `idx`.
    fn move_u(&mut self, idx: usize) {
        if !self.ctx.defs[idx].structured {
            return;
        }
        let n = self.ctx.n_areas();
        let (ku, _) = self.field_weights(idx);
        let step = self.state.fields[idx].u_mala.step();

        let mut resid = vec![0.0; n];
        self.likelihood_residual(idx, &mut resid);
        let mut qu = vec![0.0; n];
        self.ctx.data.graph.icar_mul(&self.state.fields[idx].u, &mut qu);
        let scale = self.state.fields[idx].u_scale.clone();
        // Gradient in the whitened coordinates w = u / scale.
        let mut gw: Vec<f64> = (0..n)
            .map(|i| scale[i] * (ku * resid[i] - self.ctx.sigma_gv * qu[i]))
            .collect();
        self.project_w(&mut gw, &scale);

        let w: Vec<f64> = (0..n).map(|i| self.state.fields[idx].u[i] / scale[i]).collect();
        let mut noise: Vec<f64> = (0..n).map(|_| self.norm()).collect();
        self.project_w(&mut noise, &scale);
        let w_new: Vec<f64> = (0..n)
            .map(|i| w[i] + 0.5 * step * step * gw[i] + step * noise[i])
            .collect();
        let u_new: Vec<f64> = (0..n).map(|i| scale[i] * w_new[i]).collect();

        // Proposed combined field and likelihood delta.
        let (_, kv) = self.field_weights(idx);
        let b_new: Vec<f64> = (0..n)
            .map(|i| ku * u_new[i] + kv * self.state.fields[idx].v[i])
            .collect();
        let (lik_delta, in1, in2) = self.propose_field_etas(idx, &b_new);

        let quad_new = self.ctx.data.graph.icar_quadform(&u_new);
        let prior_delta =
            -0.5 * self.ctx.sigma_gv * (quad_new - self.state.fields[idx].u_quad);

        // Reverse-move gradient at the proposal (scratch buffers hold the
        // proposed etas for exactly the databases the field enters).
        let mut resid_new = vec![0.0; n];
        {
            let d = self.ctx.data;
            let def = &self.ctx.defs[idx];
            for i in 0..n {
                let mut g = 0.0;
                if def.in_db1 {
                    g += d.counts_ref[i] as f64 - d.expected[i] * self.scratch_a[i].exp();
                }
                if def.in_db2 {
                    g += d.counts_cand[i] as f64 - d.expected[i] * self.scratch_b[i].exp();
                }
                resid_new[i] = g;
            }
        }
        let mut qu_new = vec![0.0; n];
        self.ctx.data.graph.icar_mul(&u_new, &mut qu_new);
        let mut gw_new: Vec<f64> = (0..n)
            .map(|i| scale[i] * (ku * resid_new[i] - self.ctx.sigma_gv * qu_new[i]))
            .collect();
        self.project_w(&mut gw_new, &scale);

        // log q(w'|w) = -||w' - w - (step^2/2) gw||^2 / (2 step^2)
        let mut fwd = 0.0;
        let mut rev = 0.0;
        for i in 0..n {
            let df = w_new[i] - w[i] - 0.5 * step * step * gw[i];
            fwd += df * df;
            let dr = w[i] - w_new[i] - 0.5 * step * step * gw_new[i];
            rev += dr * dr;
        }
        let log_q_diff = (fwd - rev) / (2.0 * step * step);

        let log_accept = lik_delta + prior_delta + log_q_diff;
        let accept_prob = log_accept.min(0.0).exp();
        if self.unif().ln() < log_accept {
            let f = &mut self.state.fields[idx];
            f.u = u_new;
            f.u_quad = quad_new;
            f.b = b_new;
            self.commit_field_etas(in1, in2);
        }
        if self.adapting {
            self.state.fields[idx].u_mala.update(accept_prob);
        }
    }

    /// Langevin proposal for the unstructured coordinates of field `idx`.
    fn move_v(&mut self, idx: usize) {
        let n = self.ctx.n_areas();
        let structured = self.ctx.defs[idx].structured;
        let (ku, kv) = self.field_weights(idx);
        let tau = self.state.fields[idx].log_tau.exp();
        let step = self.state.fields[idx].v_mala.step();
        let scale = self.state.fields[idx].v_scale.clone();

        let mut resid = vec![0.0; n];
        self.likelihood_residual(idx, &mut resid);
        let prior_coeff = if structured { 1.0 } else { tau };
        let gw: Vec<f64> = (0..n)
            .map(|i| {
                scale[i] * (kv * resid[i] - prior_coeff * self.state.fields[idx].v[i])
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|i| self.state.fields[idx].v[i] / scale[i]).collect();
        let w_new: Vec<f64> = (0..n)
            .map(|i| w[i] + 0.5 * step * step * gw[i] + step * self.norm())
            .collect();
        let v_new: Vec<f64> = (0..n).map(|i| scale[i] * w_new[i]).collect();

        let b_new: Vec<f64> = if structured {
            (0..n)
                .map(|i| ku * self.state.fields[idx].u[i] + kv * v_new[i])
                .collect()
        } else {
            v_new.clone()
        };
        let (lik_delta, in1, in2) = self.propose_field_etas(idx, &b_new);
        let quad_new = sumsq(&v_new);
        let prior_delta = -0.5 * prior_coeff * (quad_new - self.state.fields[idx].v_quad);

        let mut resid_new = vec![0.0; n];
        {
            let d = self.ctx.data;
            let def = &self.ctx.defs[idx];
            for i in 0..n {
                let mut g = 0.0;
                if def.in_db1 {
                    g += d.counts_ref[i] as f64 - d.expected[i] * self.scratch_a[i].exp();
                }
                if def.in_db2 {
                    g += d.counts_cand[i] as f64 - d.expected[i] * self.scratch_b[i].exp();
                }
                resid_new[i] = g;
            }
        }
        let gw_new: Vec<f64> = (0..n)
            .map(|i| scale[i] * (kv * resid_new[i] - prior_coeff * v_new[i]))
            .collect();
        let mut fwd = 0.0;
        let mut rev = 0.0;
        for i in 0..n {
            let df = w_new[i] - w[i] - 0.5 * step * step * gw[i];
            fwd += df * df;
            let dr = w[i] - w_new[i] - 0.5 * step * step * gw_new[i];
            rev += dr * dr;
        }
        let log_q_diff = (fwd - rev) / (2.0 * step * step);

        let log_accept = lik_delta + prior_delta + log_q_diff;
        let accept_prob = log_accept.min(0.0).exp();
        if self.unif().ln() < log_accept {
            let f = &mut self.state.fields[idx];
            f.v = v_new;
            f.v_quad = quad_new;
            f.b = b_new;
            self.commit_field_etas(in1, in2);
        }
        if self.adapting {
            self.state.fields[idx].v_mala.update(accept_prob);
        }
    }

    fn prec_logprior(&self, idx: usize, log_tau: f64) -> f64 {
        // Density over log tau: pi(tau) * tau.
        self.ctx.defs[idx]
            .precision_prior
            .logdensity_unchecked(log_tau.exp())
            + log_tau
    }

    fn mixing_logprior(&self, idx: usize, logit_phi: f64) -> f64 {
        // Density over logit phi: pi(phi) * phi (1 - phi).
        let phi = sigmoid(logit_phi);
        let base = match &self.ctx.mixing_tables[idx] {
            Some(t) => t.logdensity_unchecked(phi),
            None => 0.0,
        };
        base + phi.ln() + (1.0 - phi).ln()
    }

    /// Random walk on log tau holding (u, v) fixed: the combined field
    /// rescales by exp(-delta/2).
    fn move_tau_rw(&mut self, idx: usize) {
        let n = self.ctx.n_areas();
        if !self.ctx.defs[idx].structured {
            return self.move_tau_iid(idx);
        }
        let step = self.state.fields[idx].tau_rw.step();
        let delta = step * self.norm();
        let lt_old = self.state.fields[idx].log_tau;
        let lt_new = lt_old + delta;
        let mut accept_prob = 0.0;
        if lt_new.abs() <= LOG_TAU_BOUND {
            let shrink = (-0.5 * delta).exp();
            let b_new: Vec<f64> = (0..n).map(|i| self.state.fields[idx].b[i] * shrink).collect();
            let (lik_delta, in1, in2) = self.propose_field_etas(idx, &b_new);
            let log_accept =
                lik_delta + self.prec_logprior(idx, lt_new) - self.prec_logprior(idx, lt_old);
            accept_prob = log_accept.min(0.0).exp();
            if self.unif().ln() < log_accept {
                let f = &mut self.state.fields[idx];
                f.log_tau = lt_new;
                f.b = b_new;
                self.commit_field_etas(in1, in2);
            }
        }
        if self.adapting {
            self.state.fields[idx].tau_rw.update(accept_prob);
        }
    }

    /// Gibbs (or random-walk) update of the precision of an iid field.
    fn move_tau_iid(&mut self, idx: usize) {
        let n = self.ctx.n_areas() as f64;
        let ssq = self.state.fields[idx].v_quad;
        match self.ctx.defs[idx].precision_prior {
            PrecisionPrior::LogGamma(p) => {
                // Conjugate: tau | e ~ Gamma(shape + I/2, rate + e'e/2).
                let shape = p.shape + 0.5 * n;
                let rate = p.rate + 0.5 * ssq;
                let gamma = Gamma::new(shape, 1.0 / rate).expect("gamma params");
                let tau_new: f64 = gamma.sample(&mut self.rng);
                if tau_new > 0.0 && tau_new.ln().abs() <= LOG_TAU_BOUND {
                    self.state.fields[idx].log_tau = tau_new.ln();
                }
            }
            PrecisionPrior::Pc(_) => {
                let step = self.state.fields[idx].tau_rw.step();
                let delta = step * self.norm();
                let lt_old = self.state.fields[idx].log_tau;
                let lt_new = lt_old + delta;
                let mut accept_prob = 0.0;
                if lt_new.abs() <= LOG_TAU_BOUND {
                    let tau_old = lt_old.exp();
                    let tau_new = lt_new.exp();
                    let log_accept = 0.5 * n * (lt_new - lt_old)
                        - 0.5 * (tau_new - tau_old) * ssq
                        + self.prec_logprior(idx, lt_new)
                        - self.prec_logprior(idx, lt_old);
                    accept_prob = log_accept.min(0.0).exp();
                    if self.unif().ln() < log_accept {
                        self.state.fields[idx].log_tau = lt_new;
                    }
                }
                if self.adapting {
                    self.state.fields[idx].tau_rw.update(accept_prob);
                }
            }
        }
    }

    /// Scale move: change tau and rescale the coordinates so the combined
    /// field is unchanged. Carries prior and Jacobian terms only.
    fn move_tau_scale(&mut self, idx: usize) {
        let structured = self.ctx.defs[idx].structured;
        let step = self.state.fields[idx].tau_scale.step();
        let delta = step * self.norm();
        let lt_old = self.state.fields[idx].log_tau;
        let lt_new = lt_old + delta;
        let mut accept_prob = 0.0;
        if lt_new.abs() <= LOG_TAU_BOUND {
            if structured {
                // u' = u e^{d/2}, v' = v e^{d/2}; Jacobian e^{(n_u + I) d / 2}.
                let growth = delta.exp() - 1.0;
                let f = &self.state.fields[idx];
                let prior_delta = -0.5 * self.ctx.sigma_gv * f.u_quad * growth
                    - 0.5 * f.v_quad * growth;
                let jac = 0.5 * (self.ctx.n_structured as f64 + self.ctx.n_areas() as f64) * delta;
                let log_accept = prior_delta
                    + self.prec_logprior(idx, lt_new)
                    - self.prec_logprior(idx, lt_old)
                    + jac;
                accept_prob = log_accept.min(0.0).exp();
                if self.unif().ln() < log_accept {
                    let half = (0.5 * delta).exp();
                    let f = &mut self.state.fields[idx];
                    f.log_tau = lt_new;
                    for x in f.u.iter_mut() {
                        *x *= half;
                    }
                    for x in f.v.iter_mut() {
                        *x *= half;
                    }
                    f.u_quad *= delta.exp();
                    f.v_quad *= delta.exp();
                }
            } else {
                // e' = e e^{-d/2} keeps sqrt(tau) e fixed; the iid prior and
                // Jacobian cancel, leaving likelihood and hyperprior terms.
                let n = self.ctx.n_areas();
                let shrink = (-0.5 * delta).exp();
                let b_new: Vec<f64> =
                    (0..n).map(|i| self.state.fields[idx].v[i] * shrink).collect();
                let (lik_delta, in1, in2) = self.propose_field_etas(idx, &b_new);
                let log_accept = lik_delta + self.prec_logprior(idx, lt_new)
                    - self.prec_logprior(idx, lt_old);
                accept_prob = log_accept.min(0.0).exp();
                if self.unif().ln() < log_accept {
                    let f = &mut self.state.fields[idx];
                    f.log_tau = lt_new;
                    f.v = b_new.clone();
                    f.v_quad = sumsq(&f.v);
                    f.b = b_new;
                    self.commit_field_etas(in1, in2);
                }
            }
        }
        if self.adapting {
            self.state.fields[idx].tau_scale.update(accept_prob);
        }
    }

    /// Random walk on logit phi holding (u, v) fixed.
    fn move_phi_rw(&mut self, idx: usize) {
        if !self.ctx.defs[idx].structured {
            return;
        }
        let n = self.ctx.n_areas();
        let step = self.state.fields[idx].phi_rw.step();
        let delta = step * self.norm();
        let lp_old = self.state.fields[idx].logit_phi;
        let lp_new = lp_old + delta;
        let mut accept_prob = 0.0;
        if lp_new.abs() <= LOGIT_PHI_BOUND {
            let inv_sqrt_tau = (-0.5 * self.state.fields[idx].log_tau).exp();
            let phi_new = sigmoid(lp_new);
            let (ku, kv) = (
                inv_sqrt_tau * phi_new.sqrt(),
                inv_sqrt_tau * (1.0 - phi_new).sqrt(),
            );
            let b_new: Vec<f64> = (0..n)
                .map(|i| ku * self.state.fields[idx].u[i] + kv * self.state.fields[idx].v[i])
                .collect();
            let (lik_delta, in1, in2) = self.propose_field_etas(idx, &b_new);
            let log_accept = lik_delta + self.mixing_logprior(idx, lp_new)
                - self.mixing_logprior(idx, lp_old);
            accept_prob = log_accept.min(0.0).exp();
            if self.unif().ln() < log_accept {
                let f = &mut self.state.fields[idx];
                f.logit_phi = lp_new;
                f.b = b_new;
                self.commit_field_etas(in1, in2);
            }
        }
        if self.adapting {
            self.state.fields[idx].phi_rw.update(accept_prob);
        }
    }

    /// Compensated mixing move: change phi and rescale (u, v) to keep the
    /// combined field fixed.
    fn move_phi_scale(&mut self, idx: usize) {
        if !self.ctx.defs[idx].structured {
            return;
        }
        let step = self.state.fields[idx].phi_scale.step();
        let delta = step * self.norm();
        let lp_old = self.state.fields[idx].logit_phi;
        let lp_new = lp_old + delta;
        let mut accept_prob = 0.0;
        if lp_new.abs() <= LOGIT_PHI_BOUND {
            let phi_old = sigmoid(lp_old);
            let phi_new = sigmoid(lp_new);
            let ru = phi_old / phi_new;
            let rv = (1.0 - phi_old) / (1.0 - phi_new);
            let f = &self.state.fields[idx];
            let prior_delta = -0.5 * self.ctx.sigma_gv * f.u_quad * (ru - 1.0)
                - 0.5 * f.v_quad * (rv - 1.0);
            let jac = 0.5 * self.ctx.n_structured as f64 * ru.ln()
                + 0.5 * self.ctx.n_areas() as f64 * rv.ln();
            let log_accept = prior_delta
                + self.mixing_logprior(idx, lp_new)
                - self.mixing_logprior(idx, lp_old)
                + jac;
            accept_prob = log_accept.min(0.0).exp();
            if self.unif().ln() < log_accept {
                let su = ru.sqrt();
                let sv = rv.sqrt();
                let f = &mut self.state.fields[idx];
                f.logit_phi = lp_new;
                for x in f.u.iter_mut() {
                    *x *= su;
                }
                for x in f.v.iter_mut() {
                    *x *= sv;
                }
                f.u_quad *= ru;
                f.v_quad *= rv;
            }
        }
        if self.adapting {
            self.state.fields[idx].phi_scale.update(accept_prob);
        }
    }

    /// Likelihood-conjugate intercept refresh with MH correction for the
    /// Gaussian prior. Falls back to a random walk when the database total
    /// is zero.
    fn move_alpha(&mut self, db: usize) {
        let d = self.ctx.data;
        let n = self.ctx.n_areas();
        let counts_total = if db == 0 { d.total_ref() } else { d.total_cand() } as f64;
        let alpha_old = self.state.alpha[db];
        let sum_e_exp: f64 = {
            let eta = if db == 0 { &self.state.eta1 } else { &self.state.eta2 };
            (0..n).map(|i| d.expected[i] * eta[i].exp()).sum()
        };
        let sd = self.ctx.spec.intercept_prior_sd;
        if counts_total >= 1.0 {
            let rate = sum_e_exp * (-alpha_old).exp();
            let gamma = Gamma::new(counts_total, 1.0 / rate).expect("gamma params");
            let z: f64 = gamma.sample(&mut self.rng);
            let alpha_new = z.ln();
            if alpha_new.is_finite() {
                let log_accept =
                    (alpha_old * alpha_old - alpha_new * alpha_new) / (2.0 * sd * sd);
                if self.unif().ln() < log_accept {
                    self.apply_alpha(db, alpha_new);
                }
            }
        } else {
            let step = self.state.alpha_rw[db].step();
            let delta = step * self.norm();
            let alpha_new = alpha_old + delta;
            // Counts are all zero for this database: loglik delta reduces to
            // -(e^{delta} - 1) * sum E e^{eta}.
            let lik_delta = -(delta.exp() - 1.0) * sum_e_exp;
            let prior_delta =
                (alpha_old * alpha_old - alpha_new * alpha_new) / (2.0 * sd * sd);
            let log_accept = lik_delta + prior_delta;
            let accept_prob = log_accept.min(0.0).exp();
            if self.unif().ln() < log_accept {
                self.apply_alpha(db, alpha_new);
            }
            if self.adapting {
                self.state.alpha_rw[db].update(accept_prob);
            }
        }
    }

    fn apply_alpha(&mut self, db: usize, alpha_new: f64) {
        let shift = alpha_new - self.state.alpha[db];
        self.state.alpha[db] = alpha_new;
        if db == 0 {
            for e in self.state.eta1.iter_mut() {
                *e += shift;
            }
            self.state.loglik1 = self.loglik_db(1, &self.state.eta1);
        } else {
            for e in self.state.eta2.iter_mut() {
                *e += shift;
            }
            self.state.loglik2 = self.loglik_db(2, &self.state.eta2);
        }
    }

    /// Numerical hygiene: re-project structured coordinates and rebuild the
    /// caches. The projected means are floating dust because every proposal
    /// already lives in the constrained subspace.
    fn recenter(&mut self) {
        for idx in 0..self.state.fields.len() {
            if self.ctx.defs[idx].structured {
                let graph = &self.ctx.data.graph;
                let f = &mut self.state.fields[idx];
                graph.project_sum_to_zero(&mut f.u);
                f.u_quad = graph.icar_quadform(&f.u);
            }
        }
        self.refresh_combined();
    }

    fn sweep(&mut self) {
        for idx in 0..self.state.fields.len() {
            self.move_u(idx);
            self.move_v(idx);
            self.move_tau_rw(idx);
            self.move_tau_scale(idx);
            self.move_phi_rw(idx);
            self.move_phi_scale(idx);
        }
        self.move_alpha(0);
        self.move_alpha(1);
    }

    fn record_row(&self, out: &mut Vec<f64>) {
        out.push(self.state.alpha[0]);
        out.push(self.state.alpha[1]);
        for (idx, def) in self.ctx.defs.iter().enumerate() {
            let f = &self.state.fields[idx];
            out.push(f.log_tau.exp());
            if def.structured {
                out.push(sigmoid(f.logit_phi));
            }
        }
        for f in &self.state.fields {
            out.extend_from_slice(&f.b);
        }
    }

    /// Run the chain: warmup with adaptation, then collect kept draws.
    pub fn run(mut self) -> Result<Array2<f64>> {
        let warmup = self.config.n_warmup;
        let refresh_points = [warmup / 20, warmup / 4, (3 * warmup) / 4];
        for it in 0..warmup {
            self.sweep();
            if refresh_points.contains(&(it + 1)) {
                self.refresh_preconditioner();
            }
            if (it + 1) % 512 == 0 {
                self.recenter();
            }
        }
        self.adapting = false;
        self.recenter();

        let n_params = self.layout.names.len();
        let mut rows = Vec::with_capacity(self.config.n_keep * n_params);
        for it in 0..self.config.n_keep * self.config.thinning {
            self.sweep();
            if (it + 1) % 512 == 0 {
                self.recenter();
            }
            if (it + 1) % self.config.thinning == 0 {
                self.record_row(&mut rows);
            }
        }
        Array2::from_shape_vec((self.config.n_keep, n_params), rows)
            .map_err(|e| CoreError::InvalidData(format!("draw storage: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_derivation_varies_by_lane() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn config_validation() {
        let mut c = SamplerConfig::default();
        assert!(c.validate().is_ok());
        c.n_chains = 2;
        assert!(c.validate().is_err());
        c = SamplerConfig::default();
        c.thinning = 0;
        assert!(c.validate().is_err());
    }
}
