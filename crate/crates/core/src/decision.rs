//! Global contrast and per-area posterior decision functionals.
//!
//! The global summary is the intercept contrast delta = alpha2 - alpha1 and
//! its exponential, the map-wide multiplicative shift. Local summaries are
//! two exceedance probabilities of the model's residual field psi: the
//! null-referenced probability Pr(psi_i > 0 | data) used two-sided, and the
//! robustly centred probability Pr(|psi_i - c*| > eps | data), where c* is
//! the median of the per-area posterior medians and eps a log-scale
//! tolerance. c* is plug-in: estimated once and then treated as fixed.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::infer::{median, quantile, PosteriorFit};
use crate::model::ModelFamily;

/// Default tolerance radius: a 10% equivalence band on the relative-risk
/// scale.
pub fn default_epsilon() -> f64 {
    1.10f64.ln()
}

/// Source of the residual surface psi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiSource {
    /// The database-2 error field e (REM and SEM).
    ErrorField,
    /// The database-2 specific residual component (SCM benchmark).
    CandidateResidual,
}

impl PsiSource {
    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Rem | ModelFamily::Sem => PsiSource::ErrorField,
            ModelFamily::Scm => PsiSource::CandidateResidual,
        }
    }

    fn field_name(&self) -> &'static str {
        match self {
            PsiSource::ErrorField => "e",
            PsiSource::CandidateResidual => "d2",
        }
    }
}

fn psi_matrix(fit: &PosteriorFit, source: PsiSource) -> Result<Array2<f64>> {
    let expected = PsiSource::for_family(fit.family());
    if source != expected {
        return Err(CoreError::InvalidParameter(format!(
            "psi source {:?} does not match model family {}",
            source,
            fit.family().name()
        )));
    }
    fit.field_draws(source.field_name())
}

/// Global multiplicative contrast with credible interval.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlobalContrast {
    pub delta_mean: f64,
    pub delta_ci95: (f64, f64),
    pub rr_global_median: f64,
    pub rr_global_ci95: (f64, f64),
}

/// Posterior summary of delta = alpha2 - alpha1; the relative-risk scale
/// values are the exponentials of the delta quantiles.
pub fn global_contrast(fit: &PosteriorFit) -> Result<GlobalContrast> {
    let s = fit.marginal_summary("delta")?;
    Ok(GlobalContrast {
        delta_mean: s.mean,
        delta_ci95: (s.q025, s.q975),
        rr_global_median: s.q50.exp(),
        rr_global_ci95: (s.q025.exp(), s.q975.exp()),
    })
}

/// Per-area local surfaces: both exceedance probabilities plus the robust
/// centre they were computed with.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LocalSurface {
    pub psi_source: PsiSource,
    pub nrep: Vec<f64>,
    pub rcep: Vec<f64>,
    /// Per-area posterior medians of psi.
    pub psi_median: Vec<f64>,
    pub center_cstar: f64,
    pub epsilon: f64,
}

/// Null-referenced exceedance probabilities: empirical fraction of draws
/// with psi_i > 0.
pub fn nrep(fit: &PosteriorFit, psi_source: PsiSource) -> Result<Vec<f64>> {
    let psi = psi_matrix(fit, psi_source)?;
    let n_draws = psi.nrows() as f64;
    Ok((0..psi.ncols())
        .map(|j| psi.column(j).iter().filter(|&&x| x > 0.0).count() as f64 / n_draws)
        .collect())
}

/// Robustly centred exceedance probabilities, together with the NREP
/// surface over the same draws.
pub fn rcep(fit: &PosteriorFit, psi_source: PsiSource, epsilon: f64) -> Result<LocalSurface> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let psi = psi_matrix(fit, psi_source)?;
    let n_draws = psi.nrows() as f64;
    let n_areas = psi.ncols();
    let mut psi_median = Vec::with_capacity(n_areas);
    let mut nrep_surface = Vec::with_capacity(n_areas);
    for j in 0..n_areas {
        let mut col: Vec<f64> = psi.column(j).to_vec();
        nrep_surface.push(col.iter().filter(|&&x| x > 0.0).count() as f64 / n_draws);
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        psi_median.push(quantile(&col, 0.5));
    }
    let center_cstar = median(&psi_median);
    let rcep_surface: Vec<f64> = (0..n_areas)
        .map(|j| {
            psi.column(j)
                .iter()
                .filter(|&&x| (x - center_cstar).abs() > epsilon)
                .count() as f64
                / n_draws
        })
        .collect();
    Ok(LocalSurface {
        psi_source,
        nrep: nrep_surface,
        rcep: rcep_surface,
        psi_median,
        center_cstar,
        epsilon,
    })
}

/// Spread of the robust centre across chains, a stability diagnostic for
/// the plug-in centring step.
pub fn cstar_per_chain(fit: &PosteriorFit, psi_source: PsiSource) -> Result<Vec<f64>> {
    let expected = PsiSource::for_family(fit.family());
    if psi_source != expected {
        return Err(CoreError::InvalidParameter(
            "psi source does not match model family".into(),
        ));
    }
    let per_chain = fit.field_draws_per_chain(psi_source.field_name())?;
    Ok(per_chain
        .iter()
        .map(|m| {
            let medians: Vec<f64> = (0..m.ncols())
                .map(|j| {
                    let mut col = m.column(j).to_vec();
                    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    quantile(&col, 0.5)
                })
                .collect();
            median(&medians)
        })
        .collect())
}

/// Optional SCM diagnostic: per-area posterior medians of the residual
/// contrast D2 - D1. Never a decision input.
pub fn scm_residual_contrast_medians(fit: &PosteriorFit) -> Result<Vec<f64>> {
    if fit.family() != ModelFamily::Scm {
        return Err(CoreError::InvalidParameter(
            "residual contrast is defined for the shared component model only".into(),
        ));
    }
    let d2 = fit.field_draws("d2")?;
    let d1 = fit.field_draws("d1")?;
    Ok((0..d2.ncols())
        .map(|j| {
            let mut diff: Vec<f64> = d2
                .column(j)
                .iter()
                .zip(d1.column(j).iter())
                .map(|(a, b)| a - b)
                .collect();
            diff.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile(&diff, 0.5)
        })
        .collect())
}

/// A decision rule over a local surface.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Discrepant iff nrep <= lower or nrep > upper.
    Nrep { lower: f64, upper: f64 },
    /// Discrepant iff rcep > threshold.
    Rcep { threshold: f64 },
}

impl DecisionRule {
    pub fn label(&self) -> String {
        match self {
            DecisionRule::Nrep { lower, upper } => format!("nrep[{lower},{upper}]"),
            DecisionRule::Rcep { threshold } => format!("rcep[{threshold}]"),
        }
    }
}

/// Per-area discrepancy labels under one rule.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionLabels {
    pub rule: DecisionRule,
    pub labels: Vec<bool>,
}

/// Two-sided rule on the null-referenced probabilities: discrepant iff
/// nrep <= lower (inclusive) or nrep > upper (strict).
pub fn nrep_decide(surface: &LocalSurface, lower: f64, upper: f64) -> Result<DecisionLabels> {
    if !(0.0 < lower && lower < upper && upper < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "need 0 < lower < upper < 1, got ({lower}, {upper})"
        )));
    }
    Ok(DecisionLabels {
        rule: DecisionRule::Nrep { lower, upper },
        labels: surface.nrep.iter().map(|&p| p <= lower || p > upper).collect(),
    })
}

/// Threshold rule on the centred probabilities: discrepant iff
/// rcep > threshold (strict).
pub fn rcep_decide(surface: &LocalSurface, threshold: f64) -> Result<DecisionLabels> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(CoreError::InvalidParameter(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    Ok(DecisionLabels {
        rule: DecisionRule::Rcep { threshold },
        labels: surface.rcep.iter().map(|&p| p > threshold).collect(),
    })
}

/// Apply a rule to a surface.
pub fn decide(surface: &LocalSurface, rule: DecisionRule) -> Result<DecisionLabels> {
    match rule {
        DecisionRule::Nrep { lower, upper } => nrep_decide(surface, lower, upper),
        DecisionRule::Rcep { threshold } => rcep_decide(surface, threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(nrep: Vec<f64>, rcep: Vec<f64>) -> LocalSurface {
        LocalSurface {
            psi_source: PsiSource::ErrorField,
            psi_median: vec![0.0; nrep.len()],
            nrep,
            rcep,
            center_cstar: 0.0,
            epsilon: default_epsilon(),
        }
    }

    #[test]
    fn nrep_boundaries_follow_rule() {
        let s = surface(vec![0.5, 0.2, 0.8, 0.81, 0.19], vec![0.0; 5]);
        let d = nrep_decide(&s, 0.2, 0.8).unwrap();
        // 0.5 in band; 0.2 <= lower flags; 0.8 not > upper; 0.81 flags; 0.19 flags.
        assert_eq!(d.labels, vec![false, true, false, true, true]);
    }

    #[test]
    fn nrep_requires_ordered_band() {
        let s = surface(vec![0.5], vec![0.0]);
        assert!(nrep_decide(&s, 0.8, 0.2).is_err());
        assert!(nrep_decide(&s, 0.2, 0.2).is_err());
    }

    #[test]
    fn rcep_threshold_is_strict() {
        let s = surface(vec![0.5; 3], vec![0.9, 0.95, 0.0]);
        let d = rcep_decide(&s, 0.9).unwrap();
        assert_eq!(d.labels, vec![false, true, false]);
    }

    #[test]
    fn all_zero_rcep_never_detects() {
        let s = surface(vec![0.5; 4], vec![0.0; 4]);
        for t in [0.8, 0.9, 0.95] {
            assert!(rcep_decide(&s, t).unwrap().labels.iter().all(|&l| !l));
        }
    }
}
