//! Self-training: grow the labelled pool with confident pseudo-labels.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::label::Class;
use crate::learners::{train, ClassifierSpec, TrainedModel};

use super::{Result, SslError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Promote every instance whose top-class probability is at least `threshold`.
    Threshold,
    /// Promote the `k_best` most confident instances (confidence > 0.5).
    KBest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainingSpec {
    pub base: ClassifierSpec,
    pub criterion: Criterion,
    pub threshold: f64,
    pub k_best: usize,
    pub max_iter: usize,
}

impl SelfTrainingSpec {
    pub fn validate(&self) -> Result<()> {
        // thresholds above 1 are accepted and simply never promote
        if !(self.threshold >= 0.5) || !self.threshold.is_finite() {
            return Err(SslError::InvalidSpec(format!("threshold must be >= 0.5, got {}", self.threshold)));
        }
        if self.k_best == 0 {
            return Err(SslError::InvalidSpec("k_best must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SslError::InvalidSpec("max_iter must be positive".into()));
        }
        self.base.params.validate()?;
        Ok(())
    }
}

/// One pseudo-label promotion. `index` is the row in the unlabelled input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub iteration: usize,
    pub index: usize,
    pub label: Class,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct SelfTrainingOutcome {
    pub model: TrainedModel,
    pub audit: Vec<Promotion>,
    /// Promotion rounds performed, at most `max_iter`.
    pub iterations: usize,
    /// Labelled pool size before the first round and after each round.
    pub pool_sizes: Vec<usize>,
}

impl SelfTrainingOutcome {
    /// Audit trail as `iteration,pair_id,pseudo_label,confidence`.
    pub fn audit_csv(&self, pair_ids: &[String]) -> String {
        let mut s = String::from("iteration,pair_id,pseudo_label,confidence\n");
        for p in &self.audit {
            let id = pair_ids.get(p.index).map(String::as_str).unwrap_or("?");
            let _ = writeln!(s, "{},{},{},{}", p.iteration, id, p.label, p.confidence);
        }
        s
    }
}

fn stack(parts: &[(ArrayView2<f64>, &[usize])], cols: usize) -> Array2<f64> {
    let rows: usize = parts.iter().map(|(_, idx)| idx.len()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut r = 0;
    for (x, idx) in parts {
        for &i in *idx {
            out.row_mut(r).assign(&x.row(i));
            r += 1;
        }
    }
    out
}

/// Wrap `spec.base` in a self-training loop over `x_unlab`.
///
/// Unlabelled rows still unpromoted when the loop stops are left out of the
/// final model.
pub fn self_train(
    spec: &SelfTrainingSpec,
    x_lab: ArrayView2<f64>,
    y_lab: &[Class],
    x_unlab: ArrayView2<f64>,
) -> Result<SelfTrainingOutcome> {
    spec.validate()?;
    if x_unlab.nrows() > 0 && x_unlab.ncols() != x_lab.ncols() {
        return Err(SslError::DimensionMismatch {
            expected: x_lab.ncols(),
            found: x_unlab.ncols(),
        });
    }
    let cols = x_lab.ncols();
    let lab_idx: Vec<usize> = (0..x_lab.nrows()).collect();
    let mut promoted: Vec<usize> = Vec::new();
    let mut pool_y = y_lab.to_vec();
    let mut remaining: Vec<usize> = (0..x_unlab.nrows()).collect();
    let mut audit = Vec::new();
    let mut pool_sizes = vec![pool_y.len()];

    let mut model = train(&spec.base, x_lab, y_lab)?;
    let mut iterations = 0;
    while iterations < spec.max_iter && !remaining.is_empty() {
        let x_rem = stack(&[(x_unlab, &remaining)], cols);
        let proba = model.predict_proba(x_rem.view())?;
        let mut scored: Vec<(usize, usize, Class, f64)> = proba
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let label = Class::from_proba(*p);
                (k, remaining[k], label, p[label.index()])
            })
            .collect();
        let selected: Vec<(usize, usize, Class, f64)> = match spec.criterion {
            Criterion::Threshold => scored.into_iter().filter(|s| s.3 >= spec.threshold).collect(),
            Criterion::KBest => {
                scored.retain(|s| s.3 > 0.5);
                scored.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.1.cmp(&b.1)));
                scored.truncate(spec.k_best);
                scored
            }
        };
        if selected.is_empty() {
            break;
        }
        iterations += 1;
        let mut taken = vec![false; remaining.len()];
        for (k, idx, label, confidence) in &selected {
            taken[*k] = true;
            promoted.push(*idx);
            pool_y.push(*label);
            audit.push(Promotion {
                iteration: iterations,
                index: *idx,
                label: *label,
                confidence: *confidence,
            });
        }
        remaining = remaining
            .into_iter()
            .zip(taken)
            .filter(|(_, t)| !t)
            .map(|(i, _)| i)
            .collect();
        pool_sizes.push(pool_y.len());
        let x_pool = stack(&[(x_lab, &lab_idx), (x_unlab, &promoted)], cols);
        model = train(&spec.base, x_pool.view(), &pool_y)?;
    }

    Ok(SelfTrainingOutcome {
        model,
        audit,
        iterations,
        pool_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(criterion: Criterion, threshold: f64) -> SelfTrainingSpec {
        SelfTrainingSpec {
            base: ClassifierSpec::random_forest(20, None, 5),
            criterion,
            threshold,
            k_best: 2,
            max_iter: 10,
        }
    }

    fn data() -> (Array2<f64>, Vec<Class>, Array2<f64>) {
        let xl = array![[0.0, 0.0], [0.2, 0.1], [5.0, 5.0], [5.1, 4.9]];
        let yl = vec![Class::Similar, Class::Similar, Class::Variant, Class::Variant];
        let xu = array![[0.1, 0.1], [4.9, 5.2], [0.3, -0.1], [5.3, 5.0], [0.05, 0.2]];
        (xl, yl, xu)
    }

    #[test]
    fn unreachable_threshold_is_supervised_training() {
        let (xl, yl, xu) = data();
        let out = self_train(&spec(Criterion::Threshold, 1.01), xl.view(), &yl, xu.view()).unwrap();
        assert!(out.audit.is_empty());
        assert_eq!(out.iterations, 0);
        let base = train(&spec(Criterion::Threshold, 1.01).base, xl.view(), &yl).unwrap();
        assert_eq!(out.model.digest(), base.digest());
    }

    #[test]
    fn empty_pool_is_supervised_training() {
        let (xl, yl, _) = data();
        let empty = Array2::zeros((0, 2));
        let out = self_train(&spec(Criterion::Threshold, 0.6), xl.view(), &yl, empty.view()).unwrap();
        let base = train(&spec(Criterion::Threshold, 0.6).base, xl.view(), &yl).unwrap();
        assert_eq!(out.model.digest(), base.digest());
        assert_eq!(out.pool_sizes, vec![4]);
    }

    #[test]
    fn k_best_promotes_at_most_k_per_round() {
        let (xl, yl, xu) = data();
        let out = self_train(&spec(Criterion::KBest, 0.5), xl.view(), &yl, xu.view()).unwrap();
        for it in 1..=out.iterations {
            assert!(out.audit.iter().filter(|p| p.iteration == it).count() <= 2);
        }
        assert!(out.audit.iter().all(|p| p.confidence > 0.5));
        assert_eq!(out.audit.len(), 5);
        let expected = [Class::Similar, Class::Variant, Class::Similar, Class::Variant, Class::Similar];
        for p in &out.audit {
            assert_eq!(p.label, expected[p.index]);
        }
    }

    #[test]
    fn audit_is_consistent_with_pool_growth() {
        let (xl, yl, xu) = data();
        let out = self_train(&spec(Criterion::Threshold, 0.7), xl.view(), &yl, xu.view()).unwrap();
        assert!(out.pool_sizes.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*out.pool_sizes.last().unwrap(), 4 + out.audit.len());
        let mut seen: Vec<usize> = out.audit.iter().map(|p| p.index).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), out.audit.len());
        let csv = out.audit_csv(&(0..5).map(|i| format!("p{i}")).collect::<Vec<_>>());
        assert!(csv.starts_with("iteration,pair_id,pseudo_label,confidence\n"));
        assert_eq!(csv.lines().count(), 1 + out.audit.len());
    }

    #[test]
    fn invalid_specs_rejected() {
        let (xl, yl, xu) = data();
        let mut s = spec(Criterion::Threshold, 0.4);
        assert!(self_train(&s, xl.view(), &yl, xu.view()).is_err());
        s.threshold = 0.9;
        s.max_iter = 0;
        assert!(self_train(&s, xl.view(), &yl, xu.view()).is_err());
        let one_class = vec![Class::Similar; 4];
        assert!(self_train(&spec(Criterion::Threshold, 0.9), xl.view(), &one_class, xu.view()).is_err());
    }
}
