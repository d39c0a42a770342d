//! Paired-dataset generation under a Leroux latent field with four
//! disturbance scenarios, and the replicate study driver.
//!
//! Database 1 is drawn from lambda = p * pop * exp(Z); expected counts come
//! from indirect internal standardisation of database 1 and are shared by
//! both databases. Database 2 reuses the same latent field with area-wise
//! multiplicative perturbation factors r. Scenarios: S1 null (all r = 1),
//! S2 uniform, S3 clustered (a fixed connected subset grown breadth-first
//! from a seed area), S4 random (a proportion of areas drawn without
//! replacement). Mixed variants perturb upward and downward simultaneously;
//! every perturbed area is truly discrepant.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::data::{expected_from_reference, PairedDataset};
use crate::decision::{self, GlobalContrast, LocalSurface};
use crate::error::{CoreError, Result};
use crate::fields::{LerouxParams, LerouxSampler};
use crate::graph::AreaGraph;
use crate::infer::{fit, SamplerConfig};
use crate::metrics::{confusion, score, ClassificationMetrics, ConfusionCounts};
use crate::model::{ModelFamily, ModelSpec};

pub(crate) use crate::infer::sampler::derive_seed;

/// One-sided perturbation grid from the study design.
pub const R_GRID: [f64; 9] = [0.25, 0.50, 0.75, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5];
/// Opposite-direction perturbation pairs (upward, downward).
pub const MIXED_PAIRS: [(f64, f64); 2] = [(1.5, 0.75), (1.75, 0.50)];
/// Proportions of modified areas for the random scenario.
pub const PROPORTIONS: [f64; 2] = [0.25, 0.50];

/// True per-area disturbance status.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TruthLabels {
    pub labels: Vec<bool>,
}

/// Generative settings shared by all scenarios.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GenerationConfig {
    /// Baseline incidence level p.
    pub baseline_p: f64,
    pub leroux: LerouxParams,
    pub population: Vec<f64>,
    pub target_replicates: usize,
    pub seed: u64,
    /// Abort a (setting, model) cell when the failed-attempt fraction
    /// exceeds this cap.
    pub failure_cap: f64,
}

impl GenerationConfig {
    pub fn validate(&self, graph: &AreaGraph) -> Result<()> {
        if !(self.baseline_p > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "baseline_p must be positive, got {}",
                self.baseline_p
            )));
        }
        if self.population.len() != graph.n_areas() {
            return Err(CoreError::LengthMismatch {
                expected: graph.n_areas(),
                got: self.population.len(),
            });
        }
        if self.population.iter().any(|&p| !(p > 0.0)) {
            return Err(CoreError::InvalidParameter("populations must be positive".into()));
        }
        if self.target_replicates == 0 {
            return Err(CoreError::InvalidParameter("target_replicates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.failure_cap) {
            return Err(CoreError::InvalidParameter("failure_cap must lie in [0,1)".into()));
        }
        LerouxParams::new(self.leroux.variance, self.leroux.correlation).map(|_| ())
    }
}

/// One-sided factor or an (upward, downward) pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    OneSided(f64),
    Mixed { up: f64, down: f64 },
}

impl FactorSpec {
    pub fn direction(&self) -> &'static str {
        match self {
            FactorSpec::OneSided(r) if *r < 1.0 => "down",
            FactorSpec::OneSided(_) => "up",
            FactorSpec::Mixed { .. } => "mixed",
        }
    }

    fn validate(&self, allow_custom: bool) -> Result<()> {
        let on_grid = |r: f64| R_GRID.iter().any(|&g| (g - r).abs() < 1e-12);
        match *self {
            FactorSpec::OneSided(r) => {
                if !(r > 0.0) {
                    return Err(CoreError::InvalidParameter(format!(
                        "perturbation factor must be positive, got {r}"
                    )));
                }
                if !allow_custom && !on_grid(r) {
                    return Err(CoreError::InvalidParameter(format!(
                        "factor {r} is not on the study grid; set allow_custom_factors to override"
                    )));
                }
            }
            FactorSpec::Mixed { up, down } => {
                if !(up > 1.0 && down > 0.0 && down < 1.0) {
                    return Err(CoreError::InvalidParameter(format!(
                        "mixed pair must satisfy up > 1 > down > 0, got ({up}, {down})"
                    )));
                }
                let on_pairs = MIXED_PAIRS
                    .iter()
                    .any(|&(u, d)| (u - up).abs() < 1e-12 && (d - down).abs() < 1e-12);
                if !allow_custom && !on_pairs {
                    return Err(CoreError::InvalidParameter(format!(
                        "mixed pair ({up}, {down}) is not on the study grid; set allow_custom_factors to override"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Seed area and target size of a clustered perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClusterSpec {
    pub seed_area: usize,
    pub size: usize,
}

/// Concrete disturbance applied to one simulated dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Perturbation {
    /// S1: no area modified.
    Null,
    /// S2: every area gets the same factor.
    Uniform { r: f64 },
    /// S3: a fixed connected cluster; mixed variants add a disjoint
    /// downward cluster.
    Clustered {
        factors: FactorSpec,
        cluster: ClusterSpec,
        down_cluster: Option<ClusterSpec>,
    },
    /// S4: round_half_even(proportion * I) areas drawn uniformly without
    /// replacement.
    Random { proportion: f64, factors: FactorSpec },
}

impl Perturbation {
    pub fn scenario(&self) -> &'static str {
        match self {
            Perturbation::Null => "S1",
            Perturbation::Uniform { .. } => "S2",
            Perturbation::Clustered { .. } => "S3",
            Perturbation::Random { .. } => "S4",
        }
    }

    pub fn direction(&self) -> &'static str {
        match self {
            Perturbation::Null => "none",
            Perturbation::Uniform { r } => {
                if *r < 1.0 {
                    "down"
                } else {
                    "up"
                }
            }
            Perturbation::Clustered { factors, .. } | Perturbation::Random { factors, .. } => {
                factors.direction()
            }
        }
    }

    /// Canonical setting label used in result tables.
    pub fn label(&self) -> String {
        match self {
            Perturbation::Null => "S1".into(),
            Perturbation::Uniform { r } => format!("S2:r={r}"),
            Perturbation::Clustered { factors, .. } => match factors {
                FactorSpec::OneSided(r) => format!("S3:r={r}"),
                FactorSpec::Mixed { up, down } => format!("S3:mixed={up}/{down}"),
            },
            Perturbation::Random { proportion, factors } => match factors {
                FactorSpec::OneSided(r) => format!("S4:pi={proportion}:r={r}"),
                FactorSpec::Mixed { up, down } => {
                    format!("S4:pi={proportion}:mixed={up}/{down}")
                }
            },
        }
    }

    pub fn factors(&self) -> Option<FactorSpec> {
        match self {
            Perturbation::Null => None,
            Perturbation::Uniform { r } => Some(FactorSpec::OneSided(*r)),
            Perturbation::Clustered { factors, .. } | Perturbation::Random { factors, .. } => {
                Some(*factors)
            }
        }
    }

    pub fn proportion(&self) -> Option<f64> {
        match self {
            Perturbation::Random { proportion, .. } => Some(*proportion),
            _ => None,
        }
    }

    /// Check factor grids and cluster structure against the graph.
    pub fn validate(&self, graph: &AreaGraph, allow_custom: bool) -> Result<()> {
        match self {
            Perturbation::Null => Ok(()),
            Perturbation::Uniform { r } => FactorSpec::OneSided(*r).validate(allow_custom),
            Perturbation::Clustered { factors, cluster, down_cluster } => {
                factors.validate(allow_custom)?;
                match (factors, down_cluster) {
                    (FactorSpec::OneSided(_), Some(_)) => {
                        return Err(CoreError::InvalidParameter(
                            "one-sided clustered settings take a single cluster".into(),
                        ))
                    }
                    (FactorSpec::Mixed { .. }, None) => {
                        return Err(CoreError::InvalidParameter(
                            "mixed clustered settings need a second (downward) cluster".into(),
                        ))
                    }
                    _ => {}
                }
                // Fail fast on impossible cluster growth.
                let first = grow_cluster(graph, cluster, &BTreeSet::new())?;
                if let Some(down) = down_cluster {
                    let forbidden: BTreeSet<usize> = first.into_iter().collect();
                    grow_cluster(graph, down, &forbidden)?;
                }
                Ok(())
            }
            Perturbation::Random { proportion, factors } => {
                factors.validate(allow_custom)?;
                if !(0.0 < *proportion && *proportion < 1.0) {
                    return Err(CoreError::InvalidParameter(format!(
                        "proportion must lie in (0,1), got {proportion}"
                    )));
                }
                if !allow_custom
                    && !PROPORTIONS.iter().any(|&p| (p - proportion).abs() < 1e-12)
                {
                    return Err(CoreError::InvalidParameter(format!(
                        "proportion {proportion} is not on the study grid; set allow_custom_factors to override"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Breadth-first growth from the seed area to the target size, visiting
/// neighbours in index order. `forbidden` areas are skipped (used to keep
/// mixed clusters disjoint).
fn grow_cluster(
    graph: &AreaGraph,
    spec: &ClusterSpec,
    forbidden: &BTreeSet<usize>,
) -> Result<Vec<usize>> {
    let n = graph.n_areas();
    if spec.seed_area >= n {
        return Err(CoreError::InvalidParameter(format!(
            "cluster seed {} out of range for {} areas",
            spec.seed_area, n
        )));
    }
    if spec.size == 0 || spec.size > n {
        return Err(CoreError::InvalidParameter(format!(
            "cluster size {} out of range",
            spec.size
        )));
    }
    if forbidden.contains(&spec.seed_area) {
        return Err(CoreError::Simulation(format!(
            "cluster seed {} collides with the other cluster",
            spec.seed_area
        )));
    }
    let mut member = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    let mut cluster = Vec::with_capacity(spec.size);
    member[spec.seed_area] = true;
    queue.push_back(spec.seed_area);
    while let Some(i) = queue.pop_front() {
        cluster.push(i);
        if cluster.len() == spec.size {
            return Ok(cluster);
        }
        for &j in graph.neighbors(i) {
            if !member[j] && !forbidden.contains(&j) {
                member[j] = true;
                queue.push_back(j);
            }
        }
    }
    Err(CoreError::Simulation(format!(
        "cluster growth from seed {} reached only {} of {} areas",
        spec.seed_area,
        cluster.len(),
        spec.size
    )))
}

/// Reference-database draw: latent field, counts, expected counts and the
/// Poisson intensities (needed to perturb database 2).
#[derive(Debug, Clone)]
pub struct Reference {
    pub z: Vec<f64>,
    pub counts_ref: Vec<u64>,
    pub expected: Vec<f64>,
    pub lambda_ref: Vec<f64>,
}

/// Draw database 1 and its indirect internally standardised expected
/// counts. An all-zero total count is an error: the caller regenerates with
/// a fresh seed and counts the attempt as failed.
pub fn generate_reference(
    graph: &AreaGraph,
    gen: &GenerationConfig,
    rng_seed: u64,
) -> Result<Reference> {
    gen.validate(graph)?;
    let sampler = LerouxSampler::new(graph, gen.leroux)?;
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let z = sampler.sample(&mut rng)?;
    let log_p = gen.baseline_p.ln();
    let lambda_ref: Vec<f64> = (0..graph.n_areas())
        .map(|i| (log_p + gen.population[i].ln() + z[i]).exp())
        .collect();
    let counts_ref: Vec<u64> = lambda_ref
        .iter()
        .map(|&l| {
            let pois = Poisson::new(l).expect("positive intensity");
            pois.sample(&mut rng) as u64
        })
        .collect();
    let expected = expected_from_reference(&counts_ref, &gen.population).map_err(|_| {
        CoreError::Simulation("reference database drew an all-zero total count".into())
    })?;
    Ok(Reference {
        z,
        counts_ref,
        expected,
        lambda_ref,
    })
}

/// Realize the perturbation factors and truth labels for one dataset.
pub fn build_perturbation(
    graph: &AreaGraph,
    perturbation: &Perturbation,
    rng_seed: u64,
) -> Result<(Vec<f64>, TruthLabels)> {
    let n = graph.n_areas();
    let mut r = vec![1.0; n];
    match perturbation {
        Perturbation::Null => {}
        Perturbation::Uniform { r: factor } => {
            r = vec![*factor; n];
        }
        Perturbation::Clustered { factors, cluster, down_cluster } => match factors {
            FactorSpec::OneSided(factor) => {
                for i in grow_cluster(graph, cluster, &BTreeSet::new())? {
                    r[i] = *factor;
                }
            }
            FactorSpec::Mixed { up, down } => {
                let up_members = grow_cluster(graph, cluster, &BTreeSet::new())?;
                let forbidden: BTreeSet<usize> = up_members.iter().copied().collect();
                let down_spec = down_cluster.as_ref().ok_or_else(|| {
                    CoreError::InvalidParameter("mixed clustered settings need a second cluster".into())
                })?;
                let down_members = grow_cluster(graph, down_spec, &forbidden)?;
                for i in up_members {
                    r[i] = *up;
                }
                for i in down_members {
                    r[i] = *down;
                }
            }
        },
        Perturbation::Random { proportion, factors } => {
            let k = (proportion * n as f64).round_ties_even() as usize;
            let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
            let mut chosen = rand::seq::index::sample(&mut rng, n, k).into_vec();
            chosen.sort_unstable();
            match factors {
                FactorSpec::OneSided(factor) => {
                    for i in chosen {
                        r[i] = *factor;
                    }
                }
                FactorSpec::Mixed { up, down } => {
                    for i in chosen {
                        r[i] = if rng.random::<f64>() < 0.5 { *up } else { *down };
                    }
                }
            }
        }
    }
    let labels = TruthLabels {
        labels: r.iter().map(|&x| x != 1.0).collect(),
    };
    Ok((r, labels))
}

/// Draw database 2 from the same latent field with per-area factors:
/// lambda2 = exp(log p + log pop + Z + log r).
pub fn generate_candidate(
    z: &[f64],
    r_vector: &[f64],
    gen: &GenerationConfig,
    rng_seed: u64,
) -> Result<Vec<u64>> {
    if z.len() != r_vector.len() || z.len() != gen.population.len() {
        return Err(CoreError::LengthMismatch {
            expected: z.len(),
            got: r_vector.len().min(gen.population.len()),
        });
    }
    if r_vector.iter().any(|&x| !(x > 0.0)) {
        return Err(CoreError::InvalidParameter("perturbation factors must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let log_p = gen.baseline_p.ln();
    Ok((0..z.len())
        .map(|i| {
            let lambda = (log_p + gen.population[i].ln() + z[i] + r_vector[i].ln()).exp();
            let pois = Poisson::new(lambda).expect("positive intensity");
            pois.sample(&mut rng) as u64
        })
        .collect())
}

/// One decision rule of the study, with its tolerance when centred.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyRule {
    Nrep { lower: f64, upper: f64 },
    Rcep { threshold: f64, epsilon: f64 },
}

impl StudyRule {
    pub fn family_name(&self) -> &'static str {
        match self {
            StudyRule::Nrep { .. } => "nrep",
            StudyRule::Rcep { .. } => "rcep",
        }
    }

    pub fn param_label(&self) -> String {
        match self {
            StudyRule::Nrep { lower, upper } => format!("{lower}-{upper}"),
            StudyRule::Rcep { threshold, .. } => format!("{threshold}"),
        }
    }
}

/// The default rule battery: the three two-sided NREP pairs and the three
/// RCEP thresholds at the default tolerance.
pub fn default_rules() -> Vec<StudyRule> {
    let eps = decision::default_epsilon();
    vec![
        StudyRule::Nrep { lower: 0.2, upper: 0.8 },
        StudyRule::Nrep { lower: 0.05, upper: 0.95 },
        StudyRule::Nrep { lower: 0.025, upper: 0.975 },
        StudyRule::Rcep { threshold: 0.8, epsilon: eps },
        StudyRule::Rcep { threshold: 0.9, epsilon: eps },
        StudyRule::Rcep { threshold: 0.95, epsilon: eps },
    ]
}

/// One row of the tidy results table: a (replicate, setting, model, rule)
/// combination with its global and local outputs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub setting: String,
    pub direction: String,
    pub r_up: Option<f64>,
    pub r_down: Option<f64>,
    pub pi: Option<f64>,
    pub p: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub model: String,
    pub replicate: usize,
    pub seed: u64,
    pub rr_median: f64,
    pub rr_lo: f64,
    pub rr_hi: f64,
    pub delta_mean: f64,
    pub rule: String,
    pub rule_param: String,
    pub epsilon: Option<f64>,
    pub n_flagged: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
    pub mcc: Option<f64>,
}

/// Health report for one (setting, model) cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CellReport {
    pub setting: String,
    pub model: String,
    pub attempts: usize,
    pub failures: usize,
    pub aborted: bool,
}

/// Study output: tidy rows plus per-cell attempt accounting.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellReport>,
}

struct ReplicateSuccess {
    global: GlobalContrast,
    truth: TruthLabels,
    surfaces: Vec<LocalSurface>,
    seed: u64,
}

fn unique_epsilons(rules: &[StudyRule]) -> Vec<f64> {
    let mut eps: Vec<f64> = Vec::new();
    for rule in rules {
        if let StudyRule::Rcep { epsilon, .. } = rule {
            if !eps.iter().any(|e| (e - epsilon).abs() < 1e-15) {
                eps.push(*epsilon);
            }
        }
    }
    if eps.is_empty() {
        eps.push(decision::default_epsilon());
    }
    eps
}

fn attempt_replicate(
    graph: &Arc<AreaGraph>,
    gen: &GenerationConfig,
    perturbation: &Perturbation,
    model: ModelFamily,
    sampler: &SamplerConfig,
    epsilons: &[f64],
    seed: u64,
) -> Result<Option<ReplicateSuccess>> {
    let seed_data = derive_seed(seed, 0);
    let seed_pert = derive_seed(seed, 1);
    let seed_cand = derive_seed(seed, 2);
    let seed_fit = derive_seed(seed, 3);
    let reference = match generate_reference(graph, gen, seed_data) {
        Ok(r) => r,
        Err(CoreError::Simulation(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (r_vector, truth) = build_perturbation(graph, perturbation, seed_pert)?;
    let counts_cand = generate_candidate(&reference.z, &r_vector, gen, seed_cand)?;
    if counts_cand.iter().sum::<u64>() == 0 {
        return Ok(None);
    }
    let dataset = PairedDataset::new(
        graph.clone(),
        reference.counts_ref,
        counts_cand,
        reference.expected,
        gen.population.clone(),
    )?;
    let spec = ModelSpec::new(model);
    let posterior = fit(&spec, &dataset, sampler, seed_fit)?;
    if !posterior.converged {
        return Ok(None);
    }
    let psi = decision::PsiSource::for_family(model);
    let global = decision::global_contrast(&posterior)?;
    let surfaces = epsilons
        .iter()
        .map(|&eps| decision::rcep(&posterior, psi, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(ReplicateSuccess {
        global,
        truth,
        surfaces,
        seed,
    }))
}

fn metrics_for_rule(
    rule: &StudyRule,
    surfaces: &[LocalSurface],
    epsilons: &[f64],
    truth: &TruthLabels,
) -> Result<(u64, ConfusionCounts, ClassificationMetrics)> {
    let labels = match rule {
        StudyRule::Nrep { lower, upper } => decision::nrep_decide(&surfaces[0], *lower, *upper)?,
        StudyRule::Rcep { threshold, epsilon } => {
            let k = epsilons
                .iter()
                .position(|e| (e - epsilon).abs() < 1e-15)
                .expect("epsilon registered");
            decision::rcep_decide(&surfaces[k], *threshold)?
        }
    };
    let n_flagged = labels.labels.iter().filter(|&&l| l).count() as u64;
    let counts = confusion(truth, &labels)?;
    Ok((n_flagged, counts, score(&counts)))
}

/// Run the full replicate study: for every (setting, model) cell, generate
/// datasets and fit until `target_replicates` successful fits are
/// collected, discarding failures (non-convergence or degenerate data) and
/// regenerating with fresh seeds. Rows are emitted in deterministic order;
/// every attempt's seed derives from the study seed, the cell coordinates
/// and the attempt index.
pub fn run_study(
    graph: &Arc<AreaGraph>,
    gen: &GenerationConfig,
    settings: &[Perturbation],
    models: &[ModelFamily],
    rules: &[StudyRule],
    sampler: &SamplerConfig,
) -> Result<StudyOutcome> {
    gen.validate(graph)?;
    sampler.validate()?;
    if settings.is_empty() || models.is_empty() || rules.is_empty() {
        return Err(CoreError::InvalidParameter(
            "study needs at least one setting, one model and one rule".into(),
        ));
    }
    let epsilons = unique_epsilons(rules);
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (si, setting) in settings.iter().enumerate() {
        // Deterministic structural errors must surface before any fitting.
        setting.validate(graph, true)?;
        for (mi, &model) in models.iter().enumerate() {
            let cell_lane = (si as u64) << 20 | (mi as u64);
            let cell_seed = derive_seed(gen.seed, cell_lane);
            let target = gen.target_replicates;
            let mut successes: Vec<ReplicateSuccess> = Vec::with_capacity(target);
            let mut attempts = 0usize;
            let mut failures = 0usize;
            let mut aborted = false;
            while successes.len() < target {
                let remaining = target - successes.len();
                let wave: Vec<Result<Option<ReplicateSuccess>>> = (0..remaining)
                    .into_par_iter()
                    .map(|k| {
                        let attempt_seed = derive_seed(cell_seed, (attempts + k) as u64);
                        attempt_replicate(
                            graph,
                            gen,
                            setting,
                            model,
                            sampler,
                            &epsilons,
                            attempt_seed,
                        )
                    })
                    .collect();
                attempts += remaining;
                for item in wave {
                    match item? {
                        Some(s) => {
                            if successes.len() < target {
                                successes.push(s)
                            }
                        }
                        None => failures += 1,
                    }
                }
                if attempts >= target.max(10)
                    && (failures as f64) > gen.failure_cap * attempts as f64
                {
                    aborted = true;
                    log::warn!(
                        "cell ({}, {}) aborted: {failures} failures in {attempts} attempts",
                        setting.label(),
                        model.name()
                    );
                    break;
                }
            }
            cells.push(CellReport {
                setting: setting.label(),
                model: model.name().into(),
                attempts,
                failures,
                aborted,
            });
            if aborted {
                continue;
            }
            for (rep_idx, success) in successes.iter().enumerate() {
                for rule in rules {
                    let (n_flagged, counts, m) =
                        metrics_for_rule(rule, &success.surfaces, &epsilons, &success.truth)?;
                    let (r_up, r_down) = match setting.factors() {
                        None => (None, None),
                        Some(FactorSpec::OneSided(r)) if r < 1.0 => (None, Some(r)),
                        Some(FactorSpec::OneSided(r)) => (Some(r), None),
                        Some(FactorSpec::Mixed { up, down }) => (Some(up), Some(down)),
                    };
                    rows.push(ResultRow {
                        scenario: setting.scenario().into(),
                        setting: setting.label(),
                        direction: setting.direction().into(),
                        r_up,
                        r_down,
                        pi: setting.proportion(),
                        p: gen.baseline_p,
                        rho: gen.leroux.correlation,
                        sigma2: gen.leroux.variance,
                        model: model.name().into(),
                        replicate: rep_idx,
                        seed: success.seed,
                        rr_median: success.global.rr_global_median,
                        rr_lo: success.global.rr_global_ci95.0,
                        rr_hi: success.global.rr_global_ci95.1,
                        delta_mean: success.global.delta_mean,
                        rule: rule.family_name().into(),
                        rule_param: rule.param_label(),
                        epsilon: match rule {
                            StudyRule::Rcep { epsilon, .. } => Some(*epsilon),
                            StudyRule::Nrep { .. } => None,
                        },
                        n_flagged,
                        tp: counts.tp,
                        fp: counts.fp,
                        fn_: counts.fn_,
                        tn: counts.tn,
                        sensitivity: m.sensitivity,
                        specificity: m.specificity,
                        fdr: m.fdr,
                        mcc: m.mcc,
                    });
                }
            }
        }
    }
    Ok(StudyOutcome { rows, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_adjacency_from_edges;

    fn grid_graph(nx: usize, ny: usize) -> Arc<AreaGraph> {
        // Rook edges are enough for structural tests.
        let idx = |x: usize, y: usize| y * nx + x;
        let mut edges = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                if x + 1 < nx {
                    edges.push((idx(x, y), idx(x + 1, y)));
                }
                if y + 1 < ny {
                    edges.push((idx(x, y), idx(x, y + 1)));
                }
            }
        }
        Arc::new(build_adjacency_from_edges(nx * ny, &edges).unwrap())
    }

    fn gen_config(graph: &AreaGraph) -> GenerationConfig {
        GenerationConfig {
            baseline_p: 0.01,
            leroux: LerouxParams { variance: 0.2, correlation: 0.5 },
            population: vec![5000.0; graph.n_areas()],
            target_replicates: 3,
            seed: 9,
            failure_cap: 0.5,
        }
    }

    #[test]
    fn expected_counts_total_matches_reference() {
        let graph = grid_graph(5, 5);
        let gen = gen_config(&graph);
        let reference = generate_reference(&graph, &gen, 1).unwrap();
        let total_e: f64 = reference.expected.iter().sum();
        let total_o: u64 = reference.counts_ref.iter().sum();
        assert!((total_e - total_o as f64).abs() < 1e-9 * total_o as f64);
    }

    #[test]
    fn flat_field_uniform_population_gives_equal_intensities() {
        let graph = grid_graph(3, 3);
        let mut gen = gen_config(&graph);
        gen.leroux.variance = 1e-12;
        let reference = generate_reference(&graph, &gen, 2).unwrap();
        let first = reference.lambda_ref[0];
        assert!(reference
            .lambda_ref
            .iter()
            .all(|&l| (l - first).abs() < 1e-3 * first));
    }

    #[test]
    fn s1_has_unit_factors_and_no_truth() {
        let graph = grid_graph(10, 10);
        let (r, y) = build_perturbation(&graph, &Perturbation::Null, 3).unwrap();
        assert_eq!(r, vec![1.0; 100]);
        assert!(y.labels.iter().all(|&l| !l));
    }

    #[test]
    fn s4_selects_exact_count() {
        let graph = grid_graph(10, 10);
        let pert = Perturbation::Random {
            proportion: 0.25,
            factors: FactorSpec::OneSided(2.0),
        };
        let (r, y) = build_perturbation(&graph, &pert, 4).unwrap();
        assert_eq!(y.labels.iter().filter(|&&l| l).count(), 25);
        assert_eq!(r.iter().filter(|&&x| x == 2.0).count(), 25);
    }

    #[test]
    fn s3_mixed_clusters_disjoint_connected_fully_labeled() {
        let graph = grid_graph(10, 10);
        let pert = Perturbation::Clustered {
            factors: FactorSpec::Mixed { up: 1.75, down: 0.50 },
            cluster: ClusterSpec { seed_area: 22, size: 15 },
            down_cluster: Some(ClusterSpec { seed_area: 77, size: 15 }),
        };
        let (r, y) = build_perturbation(&graph, &pert, 5).unwrap();
        let ups: Vec<usize> = (0..100).filter(|&i| r[i] == 1.75).collect();
        let downs: Vec<usize> = (0..100).filter(|&i| r[i] == 0.50).collect();
        assert_eq!(ups.len(), 15);
        assert_eq!(downs.len(), 15);
        assert!(ups.iter().all(|i| !downs.contains(i)));
        for (i, &label) in y.labels.iter().enumerate() {
            assert_eq!(label, r[i] != 1.0);
        }
        // Connectivity: every member has a neighbour in the same cluster.
        for group in [&ups, &downs] {
            for &i in group {
                if group.len() > 1 {
                    assert!(graph.neighbors(i).iter().any(|j| group.contains(j)));
                }
            }
        }
    }

    #[test]
    fn cluster_growth_fails_when_component_too_small() {
        let graph = Arc::new(build_adjacency_from_edges(5, &[(0, 1), (2, 3), (3, 4)]).unwrap());
        let err = grow_cluster(&graph, &ClusterSpec { seed_area: 0, size: 4 }, &BTreeSet::new());
        assert!(err.is_err());
    }

    #[test]
    fn candidate_factors_scale_intensity() {
        let graph = grid_graph(3, 3);
        let gen = gen_config(&graph);
        let z = vec![0.0; 9];
        let r: Vec<f64> = (0..9).map(|i| if i == 4 { 2.0 } else { 1.0 }).collect();
        // Monte-Carlo check of the mean against lambda1 * r.
        let n_draws = 10_000;
        let mut sums = vec![0.0; 9];
        for k in 0..n_draws {
            let counts = generate_candidate(&z, &r, &gen, 1000 + k).unwrap();
            for i in 0..9 {
                sums[i] += counts[i] as f64;
            }
        }
        for i in 0..9 {
            let lambda1 = gen.baseline_p * gen.population[i];
            let expect = lambda1 * r[i];
            let mean = sums[i] / n_draws as f64;
            let se = (expect / n_draws as f64).sqrt();
            assert!(
                (mean - expect).abs() < 4.0 * se,
                "area {i}: mean {mean} vs {expect}"
            );
        }
    }

    #[test]
    fn perturbation_grid_validation() {
        let graph = grid_graph(4, 4);
        let ok = Perturbation::Uniform { r: 1.5 };
        assert!(ok.validate(&graph, false).is_ok());
        let off_grid = Perturbation::Uniform { r: 1.37 };
        assert!(off_grid.validate(&graph, false).is_err());
        assert!(off_grid.validate(&graph, true).is_ok());
    }

    #[test]
    fn truth_labels_iff_factor_not_one() {
        let graph = grid_graph(6, 6);
        for (seed, pert) in [
            (1u64, Perturbation::Uniform { r: 0.75 }),
            (
                2,
                Perturbation::Random { proportion: 0.5, factors: FactorSpec::Mixed { up: 1.5, down: 0.75 } },
            ),
            (
                3,
                Perturbation::Clustered {
                    factors: FactorSpec::OneSided(2.5),
                    cluster: ClusterSpec { seed_area: 0, size: 6 },
                    down_cluster: None,
                },
            ),
        ] {
            let (r, y) = build_perturbation(&graph, &pert, seed).unwrap();
            for i in 0..r.len() {
                assert_eq!(y.labels[i], r[i] != 1.0);
            }
        }
    }
}
