//! Hyperparameter grids and inner-CV grid search.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::learners::{LearnerKind, LearnerParams, RfParams, SvmParams};
use crate::ssl::{Criterion, DEFAULT_TOL};

use super::{EvalError, Result};

/// `max_depth` lists accept integers and the string "None".
mod depth_list {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Depth(usize),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &[Option<usize>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let r: Vec<Repr> = v
            .iter()
            .map(|d| match d {
                Some(d) => Repr::Depth(*d),
                None => Repr::Word("None".into()),
            })
            .collect();
        r.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Option<usize>>, D::Error> {
        let r: Vec<Repr> = Vec::deserialize(d)?;
        r.into_iter()
            .map(|x| match x {
                Repr::Depth(0) => Err(serde::de::Error::custom("max_depth must be positive")),
                Repr::Depth(n) => Ok(Some(n)),
                Repr::Word(w) if w.eq_ignore_ascii_case("none") => Ok(None),
                Repr::Word(w) => Err(serde::de::Error::custom(format!("invalid max_depth {w:?}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfGrid {
    pub n_estimators: Vec<usize>,
    #[serde(with = "depth_list")]
    pub max_depth: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmGrid {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpreadingGrid {
    pub alpha: Vec<f64>,
    pub n_neighbors: Vec<usize>,
    pub max_iter: Vec<usize>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfTrainingGrid {
    pub threshold: Vec<f64>,
    pub criterion: Vec<Criterion>,
    pub k_best: Vec<usize>,
    pub max_iter: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub rf: RfGrid,
    pub svm: SvmGrid,
    pub label_spreading: LabelSpreadingGrid,
    pub self_training: SelfTrainingGrid,
}

/// Eight decades, `1e-6` through `1e1`.
pub fn log_decades() -> Vec<f64> {
    (-6..=1).map(|e| 10f64.powi(e)).collect()
}

impl Default for RfGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![10, 50, 100, 150, 200],
            max_depth: vec![Some(5), Some(10), Some(15), Some(20), None],
        }
    }
}

impl Default for SvmGrid {
    fn default() -> Self {
        Self {
            c: log_decades(),
            gamma: log_decades(),
        }
    }
}

impl Default for LabelSpreadingGrid {
    fn default() -> Self {
        Self {
            alpha: vec![0.1, 0.2, 0.3],
            n_neighbors: vec![3, 5, 7, 11, 20, 30, 40, 50, 75, 100],
            max_iter: (20..=50).step_by(5).collect(),
            tol: DEFAULT_TOL,
        }
    }
}

impl Default for SelfTrainingGrid {
    fn default() -> Self {
        let mut threshold: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
        threshold.push(0.99);
        Self {
            threshold,
            criterion: vec![Criterion::Threshold, Criterion::KBest],
            k_best: vec![3, 5, 10, 15],
            max_iter: vec![5, 10, 15, 20],
        }
    }
}

/// Self-training wrapper settings, without the base learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainingParams {
    pub criterion: Criterion,
    pub threshold: f64,
    pub k_best: usize,
    pub max_iter: usize,
}

/// Label spreading settings for one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadingParams {
    pub alpha: f64,
    pub n_neighbors: usize,
    pub max_iter: usize,
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(EvalError::InvalidConfig(format!("grid `{name}` is empty")))
    } else {
        Ok(())
    }
}

impl Grids {
    pub fn validate(&self) -> Result<()> {
        nonempty("rf.n_estimators", &self.rf.n_estimators)?;
        nonempty("rf.max_depth", &self.rf.max_depth)?;
        nonempty("svm.c", &self.svm.c)?;
        nonempty("svm.gamma", &self.svm.gamma)?;
        nonempty("label_spreading.alpha", &self.label_spreading.alpha)?;
        nonempty("label_spreading.n_neighbors", &self.label_spreading.n_neighbors)?;
        nonempty("label_spreading.max_iter", &self.label_spreading.max_iter)?;
        nonempty("self_training.criterion", &self.self_training.criterion)?;
        nonempty("self_training.max_iter", &self.self_training.max_iter)?;
        let st = &self.self_training;
        if st.criterion.contains(&Criterion::Threshold) {
            nonempty("self_training.threshold", &st.threshold)?;
        }
        if st.criterion.contains(&Criterion::KBest) {
            nonempty("self_training.k_best", &st.k_best)?;
        }
        for p in self.learner_configs(LearnerKind::RandomForest).iter().chain(&self.learner_configs(LearnerKind::Svm)) {
            p.validate().map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
        }
        let ls = &self.label_spreading;
        if ls.alpha.iter().any(|a| !(0.0..1.0).contains(a)) {
            return Err(EvalError::InvalidConfig("label_spreading.alpha values must lie in [0, 1)".into()));
        }
        if ls.n_neighbors.contains(&0) || ls.max_iter.contains(&0) || !(ls.tol > 0.0) {
            return Err(EvalError::InvalidConfig("label_spreading n_neighbors, max_iter and tol must be positive".into()));
        }
        if st.threshold.iter().any(|t| !(*t >= 0.5)) || st.k_best.contains(&0) || st.max_iter.contains(&0) {
            return Err(EvalError::InvalidConfig(
                "self_training thresholds must be >= 0.5 and k_best, max_iter positive".into(),
            ));
        }
        Ok(())
    }

    /// Supervised configurations in grid order.
    pub fn learner_configs(&self, kind: LearnerKind) -> Vec<LearnerParams> {
        match kind {
            LearnerKind::RandomForest => self
                .rf
                .n_estimators
                .iter()
                .flat_map(|&n| {
                    self.rf.max_depth.iter().map(move |&d| {
                        LearnerParams::RandomForest(RfParams {
                            n_estimators: n,
                            max_depth: d,
                        })
                    })
                })
                .collect(),
            LearnerKind::Svm => self
                .svm
                .c
                .iter()
                .flat_map(|&c| self.svm.gamma.iter().map(move |&g| LearnerParams::Svm(SvmParams { c, gamma: g })))
                .collect(),
        }
    }

    /// Self-training settings in grid order. The field unused by a criterion
    /// is pinned to the first value of its list.
    pub fn self_training_configs(&self) -> Vec<SelfTrainingParams> {
        let st = &self.self_training;
        let first_t = st.threshold.first().copied().unwrap_or(1.0);
        let first_k = st.k_best.first().copied().unwrap_or(1);
        let mut out = Vec::new();
        for &criterion in &st.criterion {
            for &max_iter in &st.max_iter {
                match criterion {
                    Criterion::Threshold => out.extend(st.threshold.iter().map(|&t| SelfTrainingParams {
                        criterion,
                        threshold: t,
                        k_best: first_k,
                        max_iter,
                    })),
                    Criterion::KBest => out.extend(st.k_best.iter().map(|&k| SelfTrainingParams {
                        criterion,
                        threshold: first_t,
                        k_best: k,
                        max_iter,
                    })),
                }
            }
        }
        out
    }

    pub fn spreading_configs(&self) -> Vec<SpreadingParams> {
        let ls = &self.label_spreading;
        let mut out = Vec::new();
        for &alpha in &ls.alpha {
            for &n_neighbors in &ls.n_neighbors {
                for &max_iter in &ls.max_iter {
                    out.push(SpreadingParams {
                        alpha,
                        n_neighbors,
                        max_iter,
                    });
                }
            }
        }
        out
    }
}

/// Mean inner-CV score of one configuration, or why it could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore<P> {
    pub params: P,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome<P> {
    pub best: P,
    pub best_score: f64,
    pub scores: Vec<ConfigScore<P>>,
}

/// Score every candidate with `evaluate(candidate, fold)` over `n_folds`
/// folds and keep the best mean. Ties go to the smaller `size_key`, then to
/// the earlier candidate. A candidate failing on any fold is discarded.
pub fn grid_search<P: Clone>(
    candidates: &[P],
    n_folds: usize,
    size_key: impl Fn(&P) -> f64,
    evaluate: impl Fn(&P, usize) -> std::result::Result<f64, String>,
) -> Result<GridOutcome<P>> {
    if candidates.is_empty() || n_folds == 0 {
        return Err(EvalError::InvalidConfig("grid search needs candidates and folds".into()));
    }
    let scores: Vec<ConfigScore<P>> = candidates
        .iter()
        .map(|p| {
            let mut total = 0.0;
            for f in 0..n_folds {
                match evaluate(p, f) {
                    Ok(s) => total += s,
                    Err(e) => {
                        return ConfigScore {
                            params: p.clone(),
                            score: None,
                            error: Some(format!("fold {f}: {e}")),
                        }
                    }
                }
            }
            ConfigScore {
                params: p.clone(),
                score: Some(total / n_folds as f64),
                error: None,
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(score) = s.score else { continue };
        let better = match best {
            None => true,
            Some((b, bs)) => score > bs || (score == bs && size_key(&s.params) < size_key(&scores[b].params)),
        };
        if better {
            best = Some((i, score));
        }
    }
    match best {
        Some((i, score)) => Ok(GridOutcome {
            best: scores[i].params.clone(),
            best_score: score,
            scores,
        }),
        None => Err(EvalError::AllConfigsFailed(
            scores.iter().filter_map(|s| s.error.clone()).collect(),
        )),
    }
}
