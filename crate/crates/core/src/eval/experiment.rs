//! Nested cross-validation over (embedding, paradigm, learner, ratio) cells.

use std::collections::HashSet;
use std::fmt;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Subtype;
use crate::features::FeatureSet;
use crate::label::{Class, Label};
use crate::learners::{train, ClassifierSpec, LearnerKind, LearnerParams};
use crate::ssl::{label_spread, self_train, LabelSpreadingSpec, Metric, NeighborLists, SelfTrainingSpec};

use super::folds::{make_folds_with, mask_labels, stratified_splits, FoldPlan, Split, SupervisionRatio, INNER_K, OUTER_K};
use super::grid::{grid_search, Grids, SelfTrainingParams, SpreadingParams};
use super::metrics::{bootstrap_statistic, Confusion};
use super::{derive_seed, EvalError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Supervised,
    SelfTraining,
    LabelSpreading,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::Supervised, Paradigm::SelfTraining, Paradigm::LabelSpreading];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Supervised => "supervised",
            Paradigm::SelfTraining => "self_training",
            Paradigm::LabelSpreading => "label_spreading",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labelled and genuinely unlabelled feature rows for one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embedding: String,
    pub x: Array2<f64>,
    pub y: Vec<Class>,
    pub subtypes: Vec<Subtype>,
    pub ids: Vec<String>,
    pub x_unlab: Array2<f64>,
    pub unlab_subtypes: Vec<Subtype>,
    pub unlab_ids: Vec<String>,
}

impl Dataset {
    pub fn from_features(embedding: impl Into<String>, fs: &FeatureSet) -> Self {
        let (mut lab, mut unlab) = (Vec::new(), Vec::new());
        for (i, l) in fs.labels.iter().enumerate() {
            if l.is_labelled() {
                lab.push(i);
            } else {
                unlab.push(i);
            }
        }
        Dataset {
            embedding: embedding.into(),
            x: fs.x.select(Axis(0), &lab),
            y: lab.iter().map(|&i| fs.labels[i].class().expect("labelled")).collect(),
            subtypes: lab.iter().map(|&i| fs.subtypes[i]).collect(),
            ids: lab.iter().map(|&i| fs.pair_ids[i].clone()).collect(),
            x_unlab: fs.x.select(Axis(0), &unlab),
            unlab_subtypes: unlab.iter().map(|&i| fs.subtypes[i]).collect(),
            unlab_ids: unlab.iter().map(|&i| fs.pair_ids[i].clone()).collect(),
        }
    }

    /// Back to one feature set, labelled rows first.
    pub fn to_features(&self) -> FeatureSet {
        let x = concatenate(Axis(0), &[self.x.view(), self.x_unlab.view()]).expect("matching columns");
        let mut labels: Vec<Label> = self.y.iter().map(|c| Label::from(*c)).collect();
        labels.extend(std::iter::repeat(Label::Unlabelled).take(self.unlab_ids.len()));
        let mut subtypes = self.subtypes.clone();
        subtypes.extend(self.unlab_subtypes.iter().copied());
        let mut pair_ids = self.ids.clone();
        pair_ids.extend(self.unlab_ids.iter().cloned());
        FeatureSet { x, labels, subtypes, pair_ids }
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.nrows() != n || self.subtypes.len() != n || self.ids.len() != n {
            return Err(EvalError::InvalidDataset(format!("{}: labelled arrays disagree in length", self.embedding)));
        }
        if self.x_unlab.nrows() != self.unlab_ids.len()
            || self.unlab_subtypes.len() != self.unlab_ids.len()
            || self.x_unlab.ncols() != self.x.ncols()
        {
            return Err(EvalError::InvalidDataset(format!("{}: unlabelled rows malformed", self.embedding)));
        }
        if self.x.iter().chain(self.x_unlab.iter()).any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidDataset(format!("{}: non-finite feature", self.embedding)));
        }
        let mut seen = HashSet::new();
        for id in self.ids.iter().chain(&self.unlab_ids) {
            if !seen.insert(id.as_str()) {
                return Err(EvalError::InvalidDataset(format!("{}: duplicate pair id {id}", self.embedding)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub ratios: Vec<SupervisionRatio>,
    pub paradigms: Vec<Paradigm>,
    pub learners: Vec<LearnerKind>,
    pub metric: Metric,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub grids: Grids,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            outer_folds: OUTER_K,
            inner_folds: INNER_K,
            ratios: SupervisionRatio::ALL.to_vec(),
            paradigms: Paradigm::ALL.to_vec(),
            learners: vec![LearnerKind::RandomForest, LearnerKind::Svm],
            metric: Metric::Euclidean,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            grids: Grids::default(),
        }
    }
}

fn no_duplicates<T: PartialEq + fmt::Debug>(name: &str, v: &[T]) -> Result<()> {
    for (i, a) in v.iter().enumerate() {
        if v[..i].contains(a) {
            return Err(EvalError::InvalidConfig(format!("{name} lists {a:?} twice")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(EvalError::InvalidConfig("fold counts must be at least 2".into()));
        }
        if self.ratios.is_empty() || self.paradigms.is_empty() {
            return Err(EvalError::InvalidConfig("ratios and paradigms must be non-empty".into()));
        }
        no_duplicates("ratios", &self.ratios)?;
        no_duplicates("paradigms", &self.paradigms)?;
        no_duplicates("learners", &self.learners)?;
        let needs_learner = self.paradigms.iter().any(|p| *p != Paradigm::LabelSpreading);
        if needs_learner && self.learners.is_empty() {
            return Err(EvalError::InvalidConfig("supervised and self-training cells need at least one learner".into()));
        }
        if self.bootstrap_resamples == 0 || !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(EvalError::InvalidConfig("bootstrap_resamples must be positive and 0 < ci_level < 1".into()));
        }
        self.grids.validate()
    }

    /// Cells in run order.
    pub fn cells(&self, embeddings: &[String]) -> Vec<CellKey> {
        let mut out = Vec::new();
        for e in embeddings {
            for &p in &self.paradigms {
                let learners: Vec<Option<LearnerKind>> = match p {
                    Paradigm::LabelSpreading => vec![None],
                    _ => self.learners.iter().copied().map(Some).collect(),
                };
                for l in learners {
                    for &r in &self.ratios {
                        out.push(CellKey {
                            embedding: e.clone(),
                            paradigm: p,
                            learner: l,
                            ratio: r,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub embedding: String,
    pub paradigm: Paradigm,
    /// Absent for label spreading, which needs no base learner.
    pub learner: Option<LearnerKind>,
    pub ratio: SupervisionRatio,
}

impl CellKey {
    pub fn learner_name(&self) -> String {
        self.learner.map_or_else(|| "kNN".to_string(), |l| l.to_string())
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.embedding, self.paradigm, self.learner_name(), self.ratio)
    }
}

/// Where a score row's pairs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scope {
    Subtype(Subtype),
    MacroOverSubtypes,
    AllPairs,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Subtype(s) => write!(f, "{s}"),
            Scope::MacroOverSubtypes => f.write_str("macro"),
            Scope::AllPairs => f.write_str("all"),
        }
    }
}

impl From<Scope> for String {
    fn from(s: Scope) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Scope {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "macro" => Ok(Scope::MacroOverSubtypes),
            "all" => Ok(Scope::AllPairs),
            other => other.parse().map(Scope::Subtype),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scope: Scope,
    pub mean_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub fold_f1: Vec<f64>,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub learner: Option<LearnerParams>,
    pub self_training: Option<SelfTrainingParams>,
    pub spreading: Option<SpreadingParams>,
    pub inner_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub selection: Selection,
    pub n_retained: usize,
    pub n_pul: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
    pub confusion: Confusion,
    pub promoted: Option<usize>,
    pub spreading_converged: Option<bool>,
    pub undecidable: Option<usize>,
}

/// One test-fold prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub fold: usize,
    pub pair_id: String,
    pub subtype: Subtype,
    pub truth: Class,
    pub predicted: Class,
}

/// One pseudo-label promotion, keyed by pair id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub fold: usize,
    pub iteration: usize,
    pub pair_id: String,
    pub label: Class,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    pub error: Option<String>,
    pub rows: Vec<ScoreRow>,
    pub folds: Vec<FoldRecord>,
    pub leakage_checks: usize,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
    #[serde(skip)]
    pub audit: Vec<AuditEntry>,
}

impl CellReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn row(&self, scope: Scope) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.scope == scope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub embedding: String,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub folds_by_subtype: bool,
    pub datasets: Vec<DatasetSummary>,
    pub cells: Vec<CellReport>,
}

/// Shared state of one sweep.
struct Sweep<'a> {
    config: &'a ExperimentConfig,
    plan: FoldPlan,
}

/// Everything one outer fold of one cell may see.
struct FoldView<'a> {
    data: &'a Dataset,
    retained: Vec<usize>,
    /// PUL rows followed by genuinely unlabelled rows, features only.
    pool: Array2<f64>,
    pool_ids: Vec<&'a str>,
    inner: Vec<Split>,
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

fn classes(y: &[Class], idx: &[usize]) -> Vec<Class> {
    idx.iter().map(|&i| y[i]).collect()
}

fn disjoint(a: &HashSet<&str>, b: &HashSet<&str>, what: &str) -> Result<()> {
    match a.intersection(b).next() {
        Some(id) => Err(EvalError::Leakage(format!("{what}: pair {id} on both sides"))),
        None => Ok(()),
    }
}

fn id_set<'a>(data: &'a Dataset, idx: &[usize]) -> HashSet<&'a str> {
    idx.iter().map(|&i| data.ids[i].as_str()).collect()
}

/// Check that nothing from `test` is visible to training, at both levels.
/// Returns the number of checks performed.
fn audit_leakage(data: &Dataset, split: &Split, retained: &[usize], pul: &[usize], inner: &[Split]) -> Result<usize> {
    let test = id_set(data, &split.test);
    let kept = id_set(data, retained);
    let masked = id_set(data, pul);
    let unlab: HashSet<&str> = data.unlab_ids.iter().map(String::as_str).collect();
    disjoint(&test, &kept, "outer test vs retained labels")?;
    disjoint(&test, &masked, "outer test vs PUL")?;
    disjoint(&test, &unlab, "outer test vs unlabelled pool")?;
    disjoint(&kept, &masked, "retained vs PUL")?;
    if kept.len() + masked.len() != split.train.len() {
        return Err(EvalError::Leakage("mask does not partition the training fold".into()));
    }
    let mut checks = 1;
    for s in inner {
        let itest = id_set(data, &s.test);
        let itrain = id_set(data, &s.train);
        disjoint(&itest, &itrain, "inner test vs inner train")?;
        disjoint(&itest, &masked, "inner test vs PUL")?;
        disjoint(&itest, &unlab, "inner test vs unlabelled pool")?;
        disjoint(&itest, &test, "inner test vs outer test")?;
        disjoint(&itrain, &test, "inner train vs outer test")?;
        checks += 1;
    }
    Ok(checks)
}

impl FoldView<'_> {
    fn fit_predict(&self, spec: &ClassifierSpec, train_idx: &[usize], x_eval: ArrayView2<f64>) -> Result<Vec<Class>> {
        let x = rows(&self.data.x, train_idx);
        let model = train(spec, x.view(), &classes(&self.data.y, train_idx))?;
        Ok(model.predict(x_eval)?)
    }

    fn inner_f1(&self, split: &Split, pred: &[Class]) -> f64 {
        let mut c = Confusion::default();
        for (&i, &p) in split.test.iter().zip(pred) {
            c.add(self.data.y[i], p);
        }
        c.f1()
    }

    fn select_learner(&self, configs: &[LearnerParams], seed: u64) -> Result<(LearnerParams, f64)> {
        let out = grid_search(configs, self.inner.len(), LearnerParams::size_key, |p, f| {
            let s = &self.inner[f];
            let spec = ClassifierSpec { params: *p, seed };
            let x_eval = rows(&self.data.x, &s.test);
            self.fit_predict(&spec, &s.train, x_eval.view())
                .map(|pred| self.inner_f1(s, &pred))
                .map_err(|e| e.to_string())
        })?;
        Ok((out.best, out.best_score))
    }

    fn self_training_spec(base: ClassifierSpec, p: &SelfTrainingParams) -> SelfTrainingSpec {
        SelfTrainingSpec {
            base,
            criterion: p.criterion,
            threshold: p.threshold,
            k_best: p.k_best,
            max_iter: p.max_iter,
        }
    }

    fn select_self_training(&self, base: ClassifierSpec, configs: &[SelfTrainingParams]) -> Result<(SelfTrainingParams, f64)> {
        let out = grid_search(configs, self.inner.len(), |_| 0.0, |p, f| {
            let s = &self.inner[f];
            let spec = Self::self_training_spec(base, p);
            let x = rows(&self.data.x, &s.train);
            let outcome = self_train(&spec, x.view(), &classes(&self.data.y, &s.train), self.pool.view()).map_err(|e| e.to_string())?;
            let x_eval = rows(&self.data.x, &s.test);
            let pred = outcome.model.predict(x_eval.view()).map_err(|e| e.to_string())?;
            Ok(self.inner_f1(s, &pred))
        })?;
        Ok((out.best, out.best_score))
    }

    /// Graph nodes: seeded rows, then the pool, then the rows to predict.
    fn spreading_nodes(&self, seeded: &[usize], target: &Array2<f64>) -> (Array2<f64>, Vec<Option<Class>>) {
        let x_seed = rows(&self.data.x, seeded);
        let x = concatenate(Axis(0), &[x_seed.view(), self.pool.view(), target.view()]).expect("matching columns");
        let mut seeds: Vec<Option<Class>> = seeded.iter().map(|&i| Some(self.data.y[i])).collect();
        seeds.extend(std::iter::repeat(None).take(self.pool.nrows() + target.nrows()));
        (x, seeds)
    }

    fn select_spreading(&self, configs: &[SpreadingParams], metric: Metric, tol: f64) -> Result<(SpreadingParams, f64)> {
        let k_max = configs.iter().map(|c| c.n_neighbors).max().unwrap_or(1);
        // one neighbour search per inner fold, reused by every grid point
        let prepared: Vec<std::result::Result<(NeighborLists, Vec<Option<Class>>), String>> = self
            .inner
            .iter()
            .map(|s| {
                let (x, seeds) = self.spreading_nodes(&s.train, &rows(&self.data.x, &s.test));
                let k = k_max.min(x.nrows() - 1);
                NeighborLists::compute(x.view(), k, metric).map(|n| (n, seeds)).map_err(|e| e.to_string())
            })
            .collect();
        let out = grid_search(configs, self.inner.len(), |p| p.n_neighbors as f64, |p, f| {
            let s = &self.inner[f];
            let (lists, seeds) = prepared[f].as_ref().map_err(Clone::clone)?;
            let graph = lists.graph(p.n_neighbors).map_err(|e| e.to_string())?;
            let spec = LabelSpreadingSpec {
                n_neighbors: p.n_neighbors,
                alpha: p.alpha,
                max_iter: p.max_iter,
                tol,
            };
            let outcome = label_spread(&spec, &graph, seeds).map_err(|e| e.to_string())?;
            let pred = outcome.predictions();
            Ok(self.inner_f1(s, &pred[pred.len() - s.test.len()..]))
        })?;
        Ok((out.best, out.best_score))
    }
}

struct FoldOutcome {
    record: FoldRecord,
    predictions: Vec<Prediction>,
    audit: Vec<AuditEntry>,
    checks: usize,
}

impl Sweep<'_> {
    fn learner_seed(&self, key: &CellKey, fold: usize) -> u64 {
        // shared by supervised and self-training cells of the same learner
        let learner = key.learner_name();
        derive_seed(self.config.seed, &["learner", &key.embedding, &learner, &key.ratio.percent().to_string(), &fold.to_string()])
    }

    fn run_fold(&self, data: &Dataset, key: &CellKey, f: usize) -> Result<FoldOutcome> {
        let cfg = self.config;
        let split = &self.plan.folds[f];
        let tag = [key.ratio.percent().to_string(), f.to_string()];
        let mask = mask_labels(&split.train, &data.y, key.ratio, derive_seed(cfg.seed, &["mask", &tag[0], &tag[1]]))?;
        let (inner, _) = stratified_splits(
            &mask.retained,
            &data.y,
            &data.subtypes,
            cfg.inner_folds,
            derive_seed(cfg.seed, &["inner", &tag[0], &tag[1]]),
        )?;
        let checks = audit_leakage(data, split, &mask.retained, &mask.pul, &inner)?;

        let pool = concatenate(Axis(0), &[rows(&data.x, &mask.pul).view(), data.x_unlab.view()]).expect("matching columns");
        let pool_ids: Vec<&str> = mask
            .pul
            .iter()
            .map(|&i| data.ids[i].as_str())
            .chain(data.unlab_ids.iter().map(String::as_str))
            .collect();
        let view = FoldView {
            data,
            retained: mask.retained.clone(),
            pool,
            pool_ids,
            inner,
        };
        let x_test = rows(&data.x, &split.test);
        let seed = self.learner_seed(key, f);
        let mut promoted = None;
        let mut spreading_converged = None;
        let mut undecidable = None;
        let mut audit = Vec::new();

        let (selection, pred) = match key.paradigm {
            Paradigm::Supervised | Paradigm::SelfTraining => {
                let kind = key.learner.expect("learner cell");
                let (params, score) = view.select_learner(&cfg.grids.learner_configs(kind), seed)?;
                let base = ClassifierSpec { params, seed };
                if key.paradigm == Paradigm::Supervised {
                    let pred = view.fit_predict(&base, &view.retained, x_test.view())?;
                    (
                        Selection {
                            learner: Some(params),
                            self_training: None,
                            spreading: None,
                            inner_f1: score,
                        },
                        pred,
                    )
                } else {
                    let (st, score) = view.select_self_training(base, &cfg.grids.self_training_configs())?;
                    let x = rows(&data.x, &view.retained);
                    let outcome = self_train(&FoldView::self_training_spec(base, &st), x.view(), &classes(&data.y, &view.retained), view.pool.view())?;
                    promoted = Some(outcome.audit.len());
                    audit = outcome
                        .audit
                        .iter()
                        .map(|p| AuditEntry {
                            fold: f,
                            iteration: p.iteration,
                            pair_id: view.pool_ids[p.index].to_string(),
                            label: p.label,
                            confidence: p.confidence,
                        })
                        .collect();
                    let pred = outcome.model.predict(x_test.view())?;
                    (
                        Selection {
                            learner: Some(params),
                            self_training: Some(st),
                            spreading: None,
                            inner_f1: score,
                        },
                        pred,
                    )
                }
            }
            Paradigm::LabelSpreading => {
                let ls = &cfg.grids.label_spreading;
                let (p, score) = view.select_spreading(&cfg.grids.spreading_configs(), cfg.metric, ls.tol)?;
                let (x, seeds) = view.spreading_nodes(&view.retained, &x_test);
                let graph = NeighborLists::compute(x.view(), p.n_neighbors, cfg.metric)?.graph(p.n_neighbors)?;
                let spec = LabelSpreadingSpec {
                    n_neighbors: p.n_neighbors,
                    alpha: p.alpha,
                    max_iter: p.max_iter,
                    tol: ls.tol,
                };
                let outcome = label_spread(&spec, &graph, &seeds)?;
                let n = seeds.len();
                let pred = outcome.predictions()[n - split.test.len()..].to_vec();
                spreading_converged = Some(outcome.converged);
                undecidable = Some(outcome.labels[n - split.test.len()..].iter().filter(|l| l.is_none()).count());
                (
                    Selection {
                        learner: None,
                        self_training: None,
                        spreading: Some(p),
                        inner_f1: score,
                    },
                    pred,
                )
            }
        };

        let mut confusion = Confusion::default();
        let predictions: Vec<Prediction> = split
            .test
            .iter()
            .zip(&pred)
            .map(|(&i, &p)| {
                confusion.add(data.y[i], p);
                Prediction {
                    fold: f,
                    pair_id: data.ids[i].clone(),
                    subtype: data.subtypes[i],
                    truth: data.y[i],
                    predicted: p,
                }
            })
            .collect();
        Ok(FoldOutcome {
            record: FoldRecord {
                fold: f,
                selection,
                n_retained: mask.retained.len(),
                n_pul: mask.pul.len(),
                n_unlabelled: data.unlab_ids.len(),
                n_test: split.test.len(),
                confusion,
                promoted,
                spreading_converged,
                undecidable,
            },
            predictions,
            audit,
            checks,
        })
    }

    fn run_cell(&self, data: &Dataset, key: CellKey) -> CellReport {
        let mut report = CellReport {
            key,
            error: None,
            rows: Vec::new(),
            folds: Vec::new(),
            leakage_checks: 0,
            predictions: Vec::new(),
            audit: Vec::new(),
        };
        for f in 0..self.plan.folds.len() {
            match self.run_fold(data, &report.key, f) {
                Ok(out) => {
                    report.leakage_checks += out.checks;
                    report.folds.push(out.record);
                    report.predictions.extend(out.predictions);
                    report.audit.extend(out.audit);
                }
                Err(e) => {
                    log::error!("cell {} failed in fold {f}: {e}", report.key);
                    report.error = Some(format!("fold {f}: {e}"));
                    return report;
                }
            }
        }
        match score_rows(&report.predictions, self.plan.folds.len(), self.config, &report.key) {
            Ok(rows) => report.rows = rows,
            Err(e) => report.error = Some(e.to_string()),
        }
        log::info!("cell {} done", report.key);
        report
    }
}

type Outcome = (Class, Class, Subtype);

fn fold_f1(group: &[Outcome], subtype: Option<Subtype>) -> Option<f64> {
    let mut c = Confusion::default();
    let mut n = 0;
    for &(t, p, s) in group {
        if subtype.map_or(true, |want| want == s) {
            c.add(t, p);
            n += 1;
        }
    }
    (n > 0).then(|| c.f1())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over folds of the per-fold F1 on pairs of `subtype` (all pairs when
/// `None`). Folds without such pairs are skipped.
fn scope_mean(groups: &[Vec<Outcome>], subtype: Option<Subtype>) -> Option<f64> {
    let v: Vec<f64> = groups.iter().filter_map(|g| fold_f1(g, subtype)).collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn macro_mean(groups: &[Vec<Outcome>], subtypes: &[Subtype]) -> f64 {
    let v: Vec<f64> = subtypes.iter().filter_map(|&s| scope_mean(groups, Some(s))).collect();
    if v.is_empty() {
        0.0
    } else {
        mean(&v)
    }
}

fn score_rows(preds: &[Prediction], n_folds: usize, cfg: &ExperimentConfig, key: &CellKey) -> Result<Vec<ScoreRow>> {
    let mut groups: Vec<Vec<Outcome>> = vec![Vec::new(); n_folds];
    for p in preds {
        groups[p.fold].push((p.truth, p.predicted, p.subtype));
    }
    let present: Vec<Subtype> = Subtype::ALL.into_iter().filter(|s| preds.iter().any(|p| p.subtype == *s)).collect();
    let mut scopes: Vec<Scope> = present.iter().map(|&s| Scope::Subtype(s)).collect();
    scopes.push(Scope::MacroOverSubtypes);
    scopes.push(Scope::AllPairs);

    let mut out = Vec::new();
    for scope in scopes {
        let seed = derive_seed(cfg.seed, &["bootstrap", &key.to_string(), &scope.to_string()]);
        let (point, fold_values, n_test, ci) = match scope {
            Scope::Subtype(s) => {
                let sub: Vec<Vec<Outcome>> = groups
                    .iter()
                    .map(|g| g.iter().copied().filter(|o| o.2 == s).collect::<Vec<_>>())
                    .filter(|g: &Vec<Outcome>| !g.is_empty())
                    .collect();
                let values: Vec<f64> = sub.iter().filter_map(|g| fold_f1(g, None)).collect();
                let ci = bootstrap_statistic(&sub, cfg.bootstrap_resamples, cfg.ci_level, seed, |g| scope_mean(g, None).unwrap_or(0.0))?;
                (mean(&values), values, sub.iter().map(Vec::len).sum(), ci)
            }
            Scope::MacroOverSubtypes => {
                let values: Vec<f64> = groups.iter().map(|g| macro_mean(std::slice::from_ref(g), &present)).collect();
                let ci = bootstrap_statistic(&groups, cfg.bootstrap_resamples, cfg.ci_level, seed, |g| macro_mean(g, &present))?;
                (macro_mean(&groups, &present), values, preds.len(), ci)
            }
            Scope::AllPairs => {
                let values: Vec<f64> = groups.iter().filter_map(|g| fold_f1(g, None)).collect();
                let ci = bootstrap_statistic(&groups, cfg.bootstrap_resamples, cfg.ci_level, seed, |g| scope_mean(g, None).unwrap_or(0.0))?;
                (mean(&values), values, preds.len(), ci)
            }
        };
        // the percentile interval of a resampled mean need not cover the
        // point estimate; widen it so it always does
        out.push(ScoreRow {
            scope,
            mean_f1: point,
            ci_low: ci.0.min(point),
            ci_high: ci.1.max(point),
            fold_f1: fold_values,
            n_test,
        });
    }
    Ok(out)
}

/// Run every cell of `config` over `datasets`. Cell failures are recorded in
/// the report; only invalid configuration or data aborts the sweep.
pub fn run_experiment(config: &ExperimentConfig, datasets: &[Dataset]) -> Result<ExperimentReport> {
    config.validate()?;
    let first = datasets.first().ok_or(EvalError::Empty("datasets"))?;
    for d in datasets {
        d.validate()?;
        if d.ids != first.ids || d.y != first.y || d.subtypes != first.subtypes {
            return Err(EvalError::InvalidDataset(format!(
                "{} and {} label different pairs",
                first.embedding, d.embedding
            )));
        }
    }
    no_duplicates("embeddings", &datasets.iter().map(|d| &d.embedding).collect::<Vec<_>>())?;
    let plan = make_folds_with(
        &first.y,
        &first.subtypes,
        config.outer_folds,
        config.inner_folds,
        derive_seed(config.seed, &["folds"]),
    )?;
    let sweep = Sweep { config, plan };
    let names: Vec<String> = datasets.iter().map(|d| d.embedding.clone()).collect();
    let keys = config.cells(&names);
    log::info!("running {} cells", keys.len());
    let cells: Vec<CellReport> = keys
        .into_par_iter()
        .map(|key| {
            let data = datasets.iter().find(|d| d.embedding == key.embedding).expect("known embedding");
            sweep.run_cell(data, key)
        })
        .collect();
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        folds_by_subtype: sweep.plan.by_subtype,
        datasets: datasets
            .iter()
            .map(|d| DatasetSummary {
                embedding: d.embedding.clone(),
                n_labelled: d.y.len(),
                n_unlabelled: d.unlab_ids.len(),
                n_features: d.x.ncols(),
            })
            .collect(),
        cells,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| EvalError::Report(e.to_string()))?;
        let version = v.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(EvalError::Report(format!("unsupported schema_version {version:?}, expected {SCHEMA_VERSION}")));
        }
        serde_json::from_value(v).map_err(|e| EvalError::Report(e.to_string()))
    }

    /// SHA-256 of the canonical JSON.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("report serialises")))
    }

    pub fn cell(&self, paradigm: Paradigm, learner: Option<LearnerKind>, ratio: SupervisionRatio, embedding: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| {
            c.key.paradigm == paradigm && c.key.learner == learner && c.key.ratio == ratio && c.key.embedding == embedding
        })
    }

    pub fn failed_cells(&self) -> Vec<&CellReport> {
        self.cells.iter().filter(|c| !c.is_ok()).collect()
    }

    /// One line per (cell, scope).
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("embedding,paradigm,learner,ratio,scope,mean_f1,ci_low,ci_high,fold_f1,status\n");
        for c in &self.cells {
            let k = &c.key;
            let status = if c.is_ok() { "ok" } else { "failed" };
            if c.rows.is_empty() {
                let _ = writeln!(s, "{},{},{},{},,,,,,{status}", k.embedding, k.paradigm, k.learner_name(), k.ratio.value());
            }
            for r in &c.rows {
                let folds: Vec<String> = r.fold_f1.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.6},{:.6},{:.6},{},{status}",
                    k.embedding,
                    k.paradigm,
                    k.learner_name(),
                    k.ratio.value(),
                    r.scope,
                    r.mean_f1,
                    r.ci_low,
                    r.ci_high,
                    folds.join(";")
                );
            }
        }
        s
    }
}
