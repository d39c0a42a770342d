//! Classification metrics with not-applicable handling for degenerate
//! denominators.

use crate::decision::DecisionLabels;
use crate::error::{CoreError, Result};
use crate::sim::TruthLabels;

/// Two-by-two cross-tabulation of truth against prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Cross-tabulate truth and predicted labels.
pub fn confusion(truth: &TruthLabels, predicted: &DecisionLabels) -> Result<ConfusionCounts> {
    if truth.labels.len() != predicted.labels.len() {
        return Err(CoreError::LengthMismatch {
            expected: truth.labels.len(),
            got: predicted.labels.len(),
        });
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for (&y, &yhat) in truth.labels.iter().zip(&predicted.labels) {
        match (y, yhat) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Sensitivity, specificity, false discovery rate and Matthews correlation
/// coefficient. A zero denominator (including any zero factor under the MCC
/// root) yields `None`, never zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassificationMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
    pub mcc: Option<f64>,
}

/// Score a confusion table.
pub fn score(counts: &ConfusionCounts) -> ClassificationMetrics {
    let (tp, fp, fn_, tn) = (
        counts.tp as f64,
        counts.fp as f64,
        counts.fn_ as f64,
        counts.tn as f64,
    );
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let fdr = ratio(fp, tp + fp);
    let mcc_den_sq = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if mcc_den_sq > 0.0 {
        Some((tp * tn - fp * fn_) / mcc_den_sq.sqrt())
    } else {
        None
    };
    ClassificationMetrics {
        sensitivity,
        specificity,
        fdr,
        mcc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::DecisionRule;

    fn truth(labels: Vec<bool>) -> TruthLabels {
        TruthLabels { labels }
    }

    fn pred(labels: Vec<bool>) -> DecisionLabels {
        DecisionLabels {
            rule: DecisionRule::Rcep { threshold: 0.9 },
            labels,
        }
    }

    #[test]
    fn perfect_two_area_case() {
        let c = confusion(&truth(vec![true, false]), &pred(vec![true, false])).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 1 });
        let m = score(&c);
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.fdr, Some(0.0));
        assert_eq!(m.mcc, Some(1.0));
    }

    #[test]
    fn all_false_positive_case() {
        let n = 7;
        let c = confusion(&truth(vec![false; n]), &pred(vec![true; n])).unwrap();
        assert_eq!(c.fp, n as u64);
        assert_eq!(c.total(), n as u64);
    }

    #[test]
    fn random_case_matches_naive_recount() {
        // Independent oracle: an explicit index loop.
        let t: Vec<bool> = (0..100).map(|i| (i * 37) % 5 == 0).collect();
        let p: Vec<bool> = (0..100).map(|i| (i * 53) % 3 == 0).collect();
        let c = confusion(&truth(t.clone()), &pred(p.clone())).unwrap();
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        let mut tn = 0;
        for i in 0..100 {
            if t[i] && p[i] {
                tp += 1;
            } else if !t[i] && p[i] {
                fp += 1;
            } else if t[i] && !p[i] {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
        assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(confusion(&truth(vec![true]), &pred(vec![true, false])).is_err());
    }

    #[test]
    fn hand_arithmetic_case() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 5 };
        let m = score(&c);
        assert!((m.sensitivity.unwrap() - 0.75).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.fdr.unwrap() - 0.25).abs() < 1e-12);
        assert!((m.mcc.unwrap() - 14.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_not_applicable() {
        // No truly discrepant areas: sensitivity undefined.
        let m = score(&ConfusionCounts { tp: 0, fp: 2, fn_: 0, tn: 8 });
        assert_eq!(m.sensitivity, None);
        assert!(m.specificity.is_some());
        // Nothing flagged: FDR undefined.
        let m = score(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 7 });
        assert_eq!(m.fdr, None);
        // One zero factor under the MCC root: not applicable, never zero.
        let m = score(&ConfusionCounts { tp: 5, fp: 5, fn_: 0, tn: 0 });
        assert_eq!(m.mcc, None);
    }

    #[test]
    fn mcc_symmetries() {
        let c = ConfusionCounts { tp: 9, fp: 4, fn_: 6, tn: 11 };
        let swapped = ConfusionCounts { tp: 11, fp: 6, fn_: 4, tn: 9 };
        assert!((score(&c).mcc.unwrap() - score(&swapped).mcc.unwrap()).abs() < 1e-12);
        // Negating predictions flips the sign when all factors stay positive.
        let negated = ConfusionCounts { tp: 6, fp: 11, fn_: 9, tn: 4 };
        assert!((score(&c).mcc.unwrap() + score(&negated).mcc.unwrap()).abs() < 1e-12);
    }
}
