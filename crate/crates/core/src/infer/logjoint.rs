//! Joint log-density of the three models and its gradient with respect to
//! the latent coordinates.
//!
//! Conventions, shared with the sampler and any oracle re-implementation:
//! the Poisson terms are O*eta - E*exp(eta) (area- and parameter-free
//! constants dropped); structured coordinates u carry the improper scaled
//! ICAR density -sigma_gv/2 * u'Qu on the per-component sum-to-zero
//! subspace; unstructured coordinates v carry -v'v/2; an iid error field e
//! carries (I/2) log tau - tau/2 e'e; hyperparameters enter through their
//! prior log-densities on the natural (tau, phi) scales without transform
//! Jacobians; intercepts carry -alpha^2 / (2 sd^2).

use crate::data::PairedDataset;
use crate::error::{CoreError, Result};
use crate::model::{FieldDef, ModelSpec};
use crate::priors::{MixingPrior, PcMixingTable};

/// Parameters of one latent field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    /// Structured coordinates (scaled ICAR); empty for an iid field.
    pub u: Vec<f64>,
    /// Unstructured coordinates; for an iid field this is the field itself.
    pub v: Vec<f64>,
    pub log_tau: f64,
    /// Ignored for iid fields.
    pub logit_phi: f64,
}

/// Full parameter vector of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub alpha: [f64; 2],
    /// One entry per field, in the order of [`ModelSpec::field_defs`].
    pub fields: Vec<FieldParams>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Precomputed evaluation context for one (spec, dataset) pair.
pub struct ModelCtx<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a PairedDataset,
    pub defs: Vec<FieldDef>,
    pub mixing_tables: Vec<Option<PcMixingTable>>,
    /// Scaling factor of the graph (precision multiplier of u).
    pub sigma_gv: f64,
    /// Dimension of the structured subspace: sum over components of size
    /// >= 2 of (size - 1).
    pub n_structured: usize,
}

impl<'a> ModelCtx<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a PairedDataset) -> Result<Self> {
        let defs = spec.field_defs()?;
        let graph = &data.graph;
        let mut mixing_tables = Vec::with_capacity(defs.len());
        for def in &defs {
            match &def.mixing_prior {
                Some(MixingPrior::Pc(p)) => mixing_tables.push(Some(PcMixingTable::new(graph, p)?)),
                Some(MixingPrior::Uniform) | None => mixing_tables.push(None),
            }
        }
        let n_structured = graph
            .components()
            .iter()
            .filter(|c| c.len() >= 2)
            .map(|c| c.len() - 1)
            .sum();
        Ok(ModelCtx {
            spec,
            data,
            defs,
            mixing_tables,
            sigma_gv: graph.scaling_factor(),
            n_structured,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.data.n_areas()
    }

    /// Field coefficients: weight of u and v in the combined field.
    pub fn field_weights(&self, def: &FieldDef, params: &FieldParams) -> (f64, f64) {
        let tau = params.log_tau.exp();
        let inv_sqrt_tau = (-0.5 * params.log_tau).exp();
        if def.structured {
            let phi = sigmoid(params.logit_phi);
            (inv_sqrt_tau * phi.sqrt(), inv_sqrt_tau * (1.0 - phi).sqrt())
        } else {
            let _ = tau;
            (0.0, 1.0)
        }
    }

    /// Combined field b for one field.
    pub fn combine_field(&self, def: &FieldDef, params: &FieldParams) -> Vec<f64> {
        let n = self.n_areas();
        let (ku, kv) = self.field_weights(def, params);
        if def.structured {
            (0..n).map(|i| ku * params.u[i] + kv * params.v[i]).collect()
        } else {
            params.v.clone()
        }
    }

    /// Validate dimensions and finiteness of a state.
    pub fn check_state(&self, state: &ParameterState) -> Result<()> {
        let n = self.n_areas();
        if state.fields.len() != self.defs.len() {
            return Err(CoreError::LengthMismatch {
                expected: self.defs.len(),
                got: state.fields.len(),
            });
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !finite(&state.alpha) {
            return Err(CoreError::InvalidParameter("non-finite intercept".into()));
        }
        for (def, fp) in self.defs.iter().zip(&state.fields) {
            if def.structured {
                if fp.u.len() != n {
                    return Err(CoreError::LengthMismatch { expected: n, got: fp.u.len() });
                }
                if !fp.logit_phi.is_finite() {
                    return Err(CoreError::InvalidParameter(format!(
                        "non-finite logit_phi in field '{}'",
                        def.name
                    )));
                }
            } else if !fp.u.is_empty() {
                return Err(CoreError::InvalidParameter(format!(
                    "iid field '{}' must have empty structured coordinates",
                    def.name
                )));
            }
            if fp.v.len() != n {
                return Err(CoreError::LengthMismatch { expected: n, got: fp.v.len() });
            }
            if !finite(&fp.u) || !finite(&fp.v) || !fp.log_tau.is_finite() {
                return Err(CoreError::InvalidParameter(format!(
                    "non-finite entry in field '{}'",
                    def.name
                )));
            }
        }
        Ok(())
    }

    /// Linear predictors for both databases, with structured coordinates
    /// projected to the per-component sum-to-zero subspace first.
    pub fn linear_predictors(&self, state: &ParameterState) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_areas();
        let mut eta1 = vec![state.alpha[0]; n];
        let mut eta2 = vec![state.alpha[1]; n];
        for (def, fp) in self.defs.iter().zip(&state.fields) {
            let fp = self.projected(def, fp);
            let b = self.combine_field(def, &fp);
            if def.in_db1 {
                for i in 0..n {
                    eta1[i] += b[i];
                }
            }
            if def.in_db2 {
                for i in 0..n {
                    eta2[i] += b[i];
                }
            }
        }
        (eta1, eta2)
    }

    fn projected(&self, def: &FieldDef, fp: &FieldParams) -> FieldParams {
        let mut out = fp.clone();
        if def.structured {
            self.data.graph.project_sum_to_zero(&mut out.u);
        }
        out
    }

    /// Poisson log-likelihood terms over both databases.
    pub fn loglik(&self, eta1: &[f64], eta2: &[f64]) -> f64 {
        let d = self.data;
        let mut acc = 0.0;
        for i in 0..self.n_areas() {
            acc += d.counts_ref[i] as f64 * eta1[i] - d.expected[i] * eta1[i].exp();
            acc += d.counts_cand[i] as f64 * eta2[i] - d.expected[i] * eta2[i].exp();
        }
        acc
    }

    /// Log prior contribution of one field (latent coordinates and
    /// hyperparameters).
    pub fn field_logprior(&self, idx: usize, fp: &FieldParams) -> f64 {
        let def = &self.defs[idx];
        let tau = fp.log_tau.exp();
        let mut acc = def.precision_prior.logdensity_unchecked(tau);
        if def.structured {
            let phi = sigmoid(fp.logit_phi);
            acc += match &self.mixing_tables[idx] {
                Some(table) => table.logdensity_unchecked(phi),
                None => 0.0,
            };
            acc += -0.5 * self.sigma_gv * self.data.graph.icar_quadform(&fp.u);
            acc += -0.5 * fp.v.iter().map(|v| v * v).sum::<f64>();
        } else {
            let n = self.n_areas() as f64;
            let ss: f64 = fp.v.iter().map(|v| v * v).sum();
            acc += 0.5 * n * fp.log_tau - 0.5 * tau * ss;
        }
        acc
    }

    pub fn intercept_logprior(&self, alpha: &[f64; 2]) -> f64 {
        let sd = self.spec.intercept_prior_sd;
        -(alpha[0] * alpha[0] + alpha[1] * alpha[1]) / (2.0 * sd * sd)
    }

    /// Full joint log-density.
    pub fn log_joint(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let (eta1, eta2) = self.linear_predictors(state);
        let mut acc = self.loglik(&eta1, &eta2);
        for (idx, fp) in state.fields.iter().enumerate() {
            let fp = self.projected(&self.defs[idx], fp);
            acc += self.field_logprior(idx, &fp);
        }
        acc += self.intercept_logprior(&state.alpha);
        Ok(acc)
    }

    /// Gradient of the log joint with respect to every latent coordinate
    /// (u then v per field, in field order). The intercept and
    /// hyperparameter coordinates are not included.
    pub fn latent_gradient(&self, state: &ParameterState) -> Result<Vec<Vec<f64>>> {
        self.check_state(state)?;
        let n = self.n_areas();
        let d = self.data;
        let (eta1, eta2) = self.linear_predictors(state);
        let resid1: Vec<f64> = (0..n)
            .map(|i| d.counts_ref[i] as f64 - d.expected[i] * eta1[i].exp())
            .collect();
        let resid2: Vec<f64> = (0..n)
            .map(|i| d.counts_cand[i] as f64 - d.expected[i] * eta2[i].exp())
            .collect();
        let mut out = Vec::new();
        for (idx, fp) in state.fields.iter().enumerate() {
            let def = &self.defs[idx];
            let fp_proj = self.projected(def, fp);
            let (ku, kv) = self.field_weights(def, &fp_proj);
            let db: Vec<f64> = (0..n)
                .map(|i| {
                    let mut g = 0.0;
                    if def.in_db1 {
                        g += resid1[i];
                    }
                    if def.in_db2 {
                        g += resid2[i];
                    }
                    g
                })
                .collect();
            if def.structured {
                let mut qu = vec![0.0; n];
                d.graph.icar_mul(&fp_proj.u, &mut qu);
                let mut gu: Vec<f64> =
                    (0..n).map(|i| ku * db[i] - self.sigma_gv * qu[i]).collect();
                // The function seen by the optimizer is f(P u); its gradient
                // is P applied to the raw gradient.
                d.graph.project_sum_to_zero(&mut gu);
                let gv: Vec<f64> = (0..n).map(|i| kv * db[i] - fp_proj.v[i]).collect();
                out.push(gu);
                out.push(gv);
            } else {
                let tau = fp.log_tau.exp();
                let gv: Vec<f64> = (0..n).map(|i| db[i] - tau * fp.v[i]).collect();
                out.push(Vec::new());
                out.push(gv);
            }
        }
        Ok(out)
    }
}

/// Joint log-density of `spec` on `data` at `state`.
pub fn log_joint(spec: &ModelSpec, data: &PairedDataset, state: &ParameterState) -> Result<f64> {
    ModelCtx::new(spec, data)?.log_joint(state)
}

/// Gradient of [`log_joint`] with respect to the latent coordinates,
/// returned as one vector per (field, u/v) block in field order.
pub fn log_joint_latent_gradient(
    spec: &ModelSpec,
    data: &PairedDataset,
    state: &ParameterState,
) -> Result<Vec<Vec<f64>>> {
    ModelCtx::new(spec, data)?.latent_gradient(state)
}
