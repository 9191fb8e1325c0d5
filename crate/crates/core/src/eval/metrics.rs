//! F1 with Variant as the positive class, and percentile bootstrap CIs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::Class;

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (Class, Class)>) -> Self {
        let mut c = Confusion::default();
        for (t, p) in pairs {
            c.add(*t, *p);
        }
        c
    }

    pub fn add(&mut self, truth: Class, pred: Class) {
        match (truth, pred) {
            (Class::Variant, Class::Variant) => self.tp += 1,
            (Class::Similar, Class::Variant) => self.fp += 1,
            (Class::Variant, Class::Similar) => self.fn_ += 1,
            (Class::Similar, Class::Similar) => self.tn += 1,
        }
    }

    /// `2TP / (2TP + FP + FN)`, zero when the denominator is zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn f1_score(y_true: &[Class], y_pred: &[Class]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty("f1_score input"));
    }
    let mut c = Confusion::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        c.add(*t, *p);
    }
    Ok(c.f1())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap of a statistic over groups of outcomes. Each
/// resample draws, within every group, as many items as it holds.
pub fn bootstrap_statistic<T: Clone>(
    groups: &[Vec<T>],
    n_resamples: usize,
    level: f64,
    seed: u64,
    stat: impl Fn(&[Vec<T>]) -> f64,
) -> Result<(f64, f64)> {
    if groups.iter().all(Vec::is_empty) {
        return Err(EvalError::Empty("bootstrap outcomes"));
    }
    if n_resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidConfig(format!(
            "bootstrap needs resamples > 0 and 0 < level < 1 (got {n_resamples}, {level})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_resamples);
    let mut buf: Vec<Vec<T>> = groups.iter().map(|g| Vec::with_capacity(g.len())).collect();
    for _ in 0..n_resamples {
        for (g, b) in groups.iter().zip(buf.iter_mut()) {
            b.clear();
            for _ in 0..g.len() {
                b.push(g[rng.gen_range(0..g.len())].clone());
            }
        }
        values.push(stat(&buf));
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&values, tail), quantile(&values, 1.0 - tail)))
}

/// Percentile CI of F1 over `(truth, prediction)` pairs resampled with
/// replacement.
pub fn bootstrap_ci(outcomes: &[(Class, Class)], n_resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    bootstrap_statistic(&[outcomes.to_vec()], n_resamples, level, seed, |g| Confusion::from_pairs(&g[0]).f1())
}
