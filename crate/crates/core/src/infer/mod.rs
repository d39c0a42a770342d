//! Posterior inference by MCMC: model context, chain runner, diagnostics
//! and draw storage.

pub mod diagnostics;
pub mod logjoint;
pub mod sampler;
pub mod summary;

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::PairedDataset;
use crate::error::{CoreError, Result};
use crate::model::{ModelFamily, ModelSpec};

pub use logjoint::{log_joint, log_joint_latent_gradient, FieldParams, ModelCtx, ParameterState};
pub use sampler::SamplerConfig;
pub use summary::{median, quantile, summarize, MarginalSummary};

use sampler::{derive_seed, ChainRunner};

/// Names of the recorded parameter vector, in storage order: intercepts,
/// hyperparameters per field, then the combined field values per area.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub names: Vec<String>,
}

impl ParamLayout {
    pub fn new(ctx: &ModelCtx<'_>) -> Self {
        let ids = ctx.data.graph.area_ids();
        let mut names = vec!["alpha1".to_string(), "alpha2".to_string()];
        for def in &ctx.defs {
            names.push(format!("tau_{}", def.name));
            if def.structured {
                names.push(format!("phi_{}", def.name));
            }
        }
        for def in &ctx.defs {
            for id in ids {
                names.push(format!("{}[{}]", def.name, id));
            }
        }
        ParamLayout { names }
    }
}

/// Convergence diagnostic of one monitored parameter.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub psr: f64,
    pub ess: f64,
}

/// Retained MCMC draws with diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorFit {
    pub spec: ModelSpec,
    pub area_ids: Vec<String>,
    pub param_names: Vec<String>,
    /// One (n_kept x n_params) matrix per chain, in chain order.
    pub chains: Vec<Array2<f64>>,
    pub n_chains: usize,
    pub n_kept: usize,
    pub thinning: usize,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub converged: bool,
    index: BTreeMap<String, usize>,
    field_cols: BTreeMap<String, (usize, usize)>,
}

impl PosteriorFit {
    /// Assemble a fit from raw chain matrices (also used when reloading
    /// persisted draws); computes diagnostics and the convergence flag.
    pub fn from_chains(
        spec: ModelSpec,
        area_ids: Vec<String>,
        param_names: Vec<String>,
        chains: Vec<Array2<f64>>,
        thinning: usize,
        psr_threshold: f64,
        ess_threshold: f64,
    ) -> Result<Self> {
        if chains.is_empty() {
            return Err(CoreError::InvalidData("no chains".into()));
        }
        let n_kept = chains[0].nrows();
        let n_params = param_names.len();
        for c in &chains {
            if c.nrows() != n_kept || c.ncols() != n_params {
                return Err(CoreError::InvalidData(
                    "chains must be rectangular and share the parameter layout".into(),
                ));
            }
        }
        let index: BTreeMap<String, usize> = param_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let defs = spec.field_defs()?;
        let mut field_cols = BTreeMap::new();
        for def in &defs {
            let first = format!("{}[{}]", def.name, area_ids[0]);
            let start = *index.get(&first).ok_or_else(|| {
                CoreError::InvalidData(format!("missing field columns for '{}'", def.name))
            })?;
            field_cols.insert(def.name.clone(), (start, area_ids.len()));
        }
        let mut fit = PosteriorFit {
            spec,
            area_ids,
            param_names,
            n_chains: chains.len(),
            n_kept,
            thinning,
            chains,
            diagnostics: Vec::new(),
            converged: false,
            index,
            field_cols,
        };
        fit.compute_diagnostics(psr_threshold, ess_threshold);
        Ok(fit)
    }

    fn monitored(&self) -> Vec<String> {
        let mut names = vec!["alpha1".into(), "alpha2".into(), "delta".into()];
        for n in &self.param_names {
            if n.starts_with("tau_") || n.starts_with("phi_") {
                names.push(n.clone());
            }
        }
        let n_areas = self.area_ids.len();
        let coords: Vec<usize> = (0..5)
            .map(|k| k * (n_areas - 1) / 4)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        for field in self.field_cols.keys() {
            for &c in &coords {
                names.push(format!("{}[{}]", field, self.area_ids[c]));
            }
        }
        names
    }

    fn compute_diagnostics(&mut self, psr_threshold: f64, ess_threshold: f64) {
        let mut diags = Vec::new();
        let mut ok = true;
        for name in self.monitored() {
            let series = self.per_chain_draws(&name).expect("monitored name");
            let psr = diagnostics::split_psr(&series);
            let ess = diagnostics::effective_sample_size(&series);
            ok &= psr < psr_threshold && ess >= ess_threshold;
            diags.push(ParamDiagnostic { name, psr, ess });
        }
        self.diagnostics = diags;
        self.converged = ok;
    }

    fn column_per_chain(&self, col: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.column(col).to_vec()).collect()
    }

    /// Draws of a named parameter, one vector per chain. The derived name
    /// "delta" yields alpha2 - alpha1.
    pub fn per_chain_draws(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        if name == "delta" {
            let a1 = self.index["alpha1"];
            let a2 = self.index["alpha2"];
            return Ok(self
                .chains
                .iter()
                .map(|c| {
                    c.column(a2)
                        .iter()
                        .zip(c.column(a1).iter())
                        .map(|(x, y)| x - y)
                        .collect()
                })
                .collect());
        }
        let col = *self
            .index
            .get(name)
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))?;
        Ok(self.column_per_chain(col))
    }

    /// Pooled draws across chains, in chain order.
    pub fn pooled_draws(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.per_chain_draws(name)?.concat())
    }

    /// Pooled draws of a whole latent field: (total draws x areas).
    pub fn field_draws(&self, field: &str) -> Result<Array2<f64>> {
        let &(start, len) = self
            .field_cols
            .get(field)
            .ok_or_else(|| CoreError::UnknownParameter(field.to_string()))?;
        let total = self.n_chains * self.n_kept;
        let mut out = Array2::zeros((total, len));
        let mut row = 0;
        for c in &self.chains {
            for r in 0..c.nrows() {
                for j in 0..len {
                    out[(row, j)] = c[(r, start + j)];
                }
                row += 1;
            }
        }
        Ok(out)
    }

    /// Per-chain draws of a whole latent field.
    pub fn field_draws_per_chain(&self, field: &str) -> Result<Vec<Array2<f64>>> {
        let &(start, len) = self
            .field_cols
            .get(field)
            .ok_or_else(|| CoreError::UnknownParameter(field.to_string()))?;
        Ok(self
            .chains
            .iter()
            .map(|c| {
                let mut out = Array2::zeros((c.nrows(), len));
                for r in 0..c.nrows() {
                    for j in 0..len {
                        out[(r, j)] = c[(r, start + j)];
                    }
                }
                out
            })
            .collect())
    }

    /// The field feeding the local decision rules for this family.
    pub fn psi_field(&self) -> &'static str {
        self.spec.family.psi_field()
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family
    }

    /// Empirical summary of a named parameter over pooled draws.
    pub fn marginal_summary(&self, name: &str) -> Result<MarginalSummary> {
        summarize(&self.pooled_draws(name)?)
    }

    pub fn worst_psr(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.psr).fold(0.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.ess).fold(f64::INFINITY, f64::min)
    }
}

/// Empirical posterior summary of one parameter of a fit.
pub fn marginal_summary(fit: &PosteriorFit, parameter: &str) -> Result<MarginalSummary> {
    fit.marginal_summary(parameter)
}

/// Fit a model by MCMC. Chains run concurrently with seeds derived from
/// `rng_seed` and the chain index; results are reproducible for a fixed seed
/// and chain count regardless of scheduling. Non-convergence is reported
/// through `PosteriorFit::converged`, not as an error.
pub fn fit(
    spec: &ModelSpec,
    data: &PairedDataset,
    config: &SamplerConfig,
    rng_seed: u64,
) -> Result<PosteriorFit> {
    config.validate()?;
    let ctx = ModelCtx::new(spec, data)?;
    let layout = ParamLayout::new(&ctx);
    let chains: Vec<Array2<f64>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            ChainRunner::new(&ctx, &layout, config, derive_seed(rng_seed, c as u64))?.run()
        })
        .collect::<Result<_>>()?;
    PosteriorFit::from_chains(
        spec.clone(),
        data.graph.area_ids().to_vec(),
        layout.names,
        chains,
        config.thinning,
        config.psr_threshold,
        config.ess_threshold,
    )
}
