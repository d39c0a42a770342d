//! Paired observed counts on a shared areal support.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::graph::AreaGraph;

/// Observed counts from the reference source (database 1) and the candidate
/// source (database 2), with expected counts shared by both databases.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub graph: Arc<AreaGraph>,
    pub counts_ref: Vec<u64>,
    pub counts_cand: Vec<u64>,
    pub expected: Vec<f64>,
    pub population: Vec<f64>,
}

impl PairedDataset {
    pub fn new(
        graph: Arc<AreaGraph>,
        counts_ref: Vec<u64>,
        counts_cand: Vec<u64>,
        expected: Vec<f64>,
        population: Vec<f64>,
    ) -> Result<Self> {
        let n = graph.n_areas();
        for (name, len) in [
            ("counts_ref", counts_ref.len()),
            ("counts_cand", counts_cand.len()),
            ("expected", expected.len()),
            ("population", population.len()),
        ] {
            if len != n {
                return Err(CoreError::InvalidData(format!(
                    "{name} has length {len}, expected {n}"
                )));
            }
        }
        if let Some(i) = expected.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(CoreError::InvalidData(format!(
                "expected count for area '{}' must be positive and finite, got {}",
                graph.area_ids()[i],
                expected[i]
            )));
        }
        if let Some(i) = population.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(CoreError::InvalidData(format!(
                "population for area '{}' must be positive and finite, got {}",
                graph.area_ids()[i],
                population[i]
            )));
        }
        Ok(PairedDataset {
            graph,
            counts_ref,
            counts_cand,
            expected,
            population,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.graph.n_areas()
    }

    pub fn total_ref(&self) -> u64 {
        self.counts_ref.iter().sum()
    }

    pub fn total_cand(&self) -> u64 {
        self.counts_cand.iter().sum()
    }
}

/// Expected counts by indirect internal standardisation against the
/// reference source: E_i = pop_i * (sum O_ref) / (sum pop). The totals then
/// satisfy sum E = sum O_ref.
pub fn expected_from_reference(counts_ref: &[u64], population: &[f64]) -> Result<Vec<f64>> {
    if counts_ref.len() != population.len() {
        return Err(CoreError::LengthMismatch {
            expected: counts_ref.len(),
            got: population.len(),
        });
    }
    let total_counts: u64 = counts_ref.iter().sum();
    if total_counts == 0 {
        return Err(CoreError::InvalidData(
            "reference counts are all zero; expected counts undefined".into(),
        ));
    }
    let total_pop: f64 = population.iter().sum();
    if !(total_pop > 0.0) {
        return Err(CoreError::InvalidData("total population must be positive".into()));
    }
    let ratio = total_counts as f64 / total_pop;
    Ok(population.iter().map(|&p| p * ratio).collect())
}
