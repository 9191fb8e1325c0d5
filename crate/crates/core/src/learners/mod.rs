//! Supervised base classifiers shared by the baselines and the SSL wrappers.
//!
//! Both learners expose the same contract: [`train`] on labelled rows, then
//! [`TrainedModel::predict_proba`] returning `[p_similar, p_variant]` rows
//! and [`TrainedModel::predict`] taking the argmax (ties go to Variant).

pub mod forest;
pub mod svm;

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::label::Class;
use forest::{DecisionTree, Node, RandomForest};
use svm::SvmModel;

/// KKT tolerance for the SMO solver.
pub const SVM_TOLERANCE: f64 = 1e-3;

const MODEL_MAGIC: &[u8; 4] = b"AGML";
const MODEL_FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("training labels contain only {0}; both classes are required")]
    SingleClass(Class),
    #[error("training set is empty")]
    Empty,
    #[error("feature matrix has {rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("model expects {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidParams(String),
    #[error("model blob: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[serde(rename = "rf")]
    RandomForest,
    Svm,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::RandomForest => "RF",
            LearnerKind::Svm => "SVM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_estimators: usize,
    /// `None` grows each tree until its leaves are pure.
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerParams {
    #[serde(rename = "rf")]
    RandomForest(RfParams),
    Svm(SvmParams),
}

impl LearnerParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerParams::RandomForest(_) => LearnerKind::RandomForest,
            LearnerParams::Svm(_) => LearnerKind::Svm,
        }
    }

    /// Model-size key used to break tuning ties (smaller first).
    pub fn size_key(&self) -> f64 {
        match self {
            LearnerParams::RandomForest(p) => p.n_estimators as f64,
            LearnerParams::Svm(p) => p.c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerParams::RandomForest(p) => {
                if p.n_estimators == 0 {
                    return Err(LearnerError::InvalidParams("n_estimators must be positive".into()));
                }
                if p.max_depth == Some(0) {
                    return Err(LearnerError::InvalidParams("max_depth must be positive".into()));
                }
            }
            LearnerParams::Svm(p) => {
                if !(p.c > 0.0 && p.c.is_finite()) || !(p.gamma > 0.0 && p.gamma.is_finite()) {
                    return Err(LearnerError::InvalidParams(format!(
                        "C and gamma must be positive, got C={} gamma={}",
                        p.c, p.gamma
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for LearnerParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerParams::RandomForest(p) => match p.max_depth {
                Some(d) => write!(f, "n_estimators={} max_depth={d}", p.n_estimators),
                None => write!(f, "n_estimators={} max_depth=None", p.n_estimators),
            },
            LearnerParams::Svm(p) => write!(f, "C={:e} gamma={:e}", p.c, p.gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub params: LearnerParams,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn random_forest(n_estimators: usize, max_depth: Option<usize>, seed: u64) -> Self {
        Self {
            params: LearnerParams::RandomForest(RfParams {
                n_estimators,
                max_depth,
            }),
            seed,
        }
    }

    pub fn svm(c: f64, gamma: f64, seed: u64) -> Self {
        Self {
            params: LearnerParams::Svm(SvmParams { c, gamma }),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Forest(RandomForest),
    Svm(SvmModel),
}

/// Immutable fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    spec: ClassifierSpec,
    n_features: usize,
    fitted: Fitted,
}

fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(LearnerError::NonFinite { row, col });
        }
    }
    Ok(())
}

fn check_labels(x: ArrayView2<f64>, y: &[Class]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(LearnerError::LabelCount {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if y.is_empty() {
        return Err(LearnerError::Empty);
    }
    if let Some(first) = y.first() {
        if y.iter().all(|c| c == first) {
            return Err(LearnerError::SingleClass(*first));
        }
    }
    Ok(())
}

fn select_rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Stratified 80/20 split used for Platt calibration. `None` when either
/// side would miss a class.
fn calibration_split(y: &[Class], seed: u64) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut fit = Vec::new();
    let mut hold = Vec::new();
    for class in Class::ALL {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_hold = (idx.len() as f64 * 0.2).round() as usize;
        if n_hold == 0 || n_hold == idx.len() {
            return None;
        }
        hold.extend_from_slice(&idx[..n_hold]);
        fit.extend_from_slice(&idx[n_hold..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    Some((fit, hold))
}

/// Fit `spec` on labelled rows. Deterministic in (spec, x, y).
pub fn train(spec: &ClassifierSpec, x: ArrayView2<f64>, y: &[Class]) -> Result<TrainedModel> {
    spec.params.validate()?;
    check_labels(x, y)?;
    check_finite(x)?;
    let fitted = match &spec.params {
        LearnerParams::RandomForest(p) => Fitted::Forest(RandomForest::fit(p, spec.seed, x, y)),
        LearnerParams::Svm(p) => {
            let (mut model, _) = svm::fit_raw(x, y, p.c, p.gamma, SVM_TOLERANCE);
            let mut calibrated = None;
            if let Some((fit_idx, hold_idx)) = calibration_split(y, spec.seed) {
                let xf = select_rows(x, &fit_idx);
                let yf: Vec<Class> = fit_idx.iter().map(|&i| y[i]).collect();
                let (inner, _) = svm::fit_raw(xf.view(), &yf, p.c, p.gamma, SVM_TOLERANCE);
                let dec: Vec<f64> = hold_idx.iter().map(|&i| inner.decision_value(x.row(i))).collect();
                let yh: Vec<Class> = hold_idx.iter().map(|&i| y[i]).collect();
                let (a, b) = svm::fit_platt(&dec, &yh);
                if a < 0.0 {
                    calibrated = Some((a, b));
                }
            }
            // Held-out fit unavailable or inverted: calibrate on the full model's
            // own decision values.
            let (a, b) = calibrated.unwrap_or_else(|| {
                let dec: Vec<f64> = x.rows().into_iter().map(|r| model.decision_value(r)).collect();
                svm::fit_platt(&dec, y)
            });
            model.platt_a = a;
            model.platt_b = b;
            Fitted::Svm(model)
        }
    };
    Ok(TrainedModel {
        spec: *spec,
        n_features: x.ncols(),
        fitted,
    })
}

impl TrainedModel {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn classes(&self) -> [Class; 2] {
        Class::ALL
    }

    pub fn forest(&self) -> Option<&RandomForest> {
        match &self.fitted {
            Fitted::Forest(f) => Some(f),
            Fitted::Svm(_) => None,
        }
    }

    pub fn svm(&self) -> Option<&SvmModel> {
        match &self.fitted {
            Fitted::Svm(s) => Some(s),
            Fitted::Forest(_) => None,
        }
    }

    fn check_dim(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features && x.nrows() > 0 {
            return Err(LearnerError::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// `[p_similar, p_variant]` per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<[f64; 2]>> {
        self.check_dim(x)?;
        check_finite(x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| match &self.fitted {
                Fitted::Forest(f) => match row.as_slice() {
                    Some(s) => f.vote_fractions(s),
                    None => f.vote_fractions(&row.to_vec()),
                },
                Fitted::Svm(s) => {
                    let p = s.platt(s.decision_value(row));
                    [1.0 - p, p]
                }
            })
            .collect())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Class>> {
        Ok(self.predict_proba(x)?.into_iter().map(Class::from_proba).collect())
    }

    /// Self-describing binary encoding: magic, format version, learner tag,
    /// spec, then the fitted state with floats stored bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MODEL_MAGIC);
        w.push(MODEL_FORMAT_VERSION);
        w.extend_from_slice(&self.spec.seed.to_le_bytes());
        put_u32(&mut w, self.n_features);
        match (&self.spec.params, &self.fitted) {
            (LearnerParams::RandomForest(p), Fitted::Forest(f)) => {
                w.push(1);
                put_u32(&mut w, p.n_estimators);
                put_u32(&mut w, p.max_depth.unwrap_or(0));
                put_u32(&mut w, f.trees.len());
                for t in &f.trees {
                    put_u32(&mut w, t.nodes.len());
                    for n in &t.nodes {
                        match n {
                            Node::Leaf(c) => {
                                w.push(0);
                                w.push(c.index() as u8);
                            }
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                w.push(1);
                                put_u32(&mut w, *feature);
                                w.extend_from_slice(&threshold.to_le_bytes());
                                put_u32(&mut w, *left);
                                put_u32(&mut w, *right);
                            }
                        }
                    }
                }
            }
            (LearnerParams::Svm(p), Fitted::Svm(s)) => {
                w.push(2);
                for v in [p.c, p.gamma, s.gamma, s.rho, s.platt_a, s.platt_b] {
                    w.extend_from_slice(&v.to_le_bytes());
                }
                put_u32(&mut w, s.coef.len());
                for (k, coef) in s.coef.iter().enumerate() {
                    w.extend_from_slice(&coef.to_le_bytes());
                    for v in s.support.row(k) {
                        w.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            _ => unreachable!("spec and fitted state always agree"),
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(LearnerError::Decode("bad magic".into()));
        }
        let version = r.u8()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(LearnerError::Decode(format!("unsupported format version {version}")));
        }
        let seed = r.u64()?;
        let n_features = r.u32()?;
        let model = match r.u8()? {
            1 => {
                let n_estimators = r.u32()?;
                let depth = r.u32()?;
                let params = RfParams {
                    n_estimators,
                    max_depth: (depth > 0).then_some(depth),
                };
                let n_trees = r.u32()?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes = r.u32()?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        nodes.push(match r.u8()? {
                            0 => Node::Leaf(Class::from_index(r.u8()? as usize)),
                            1 => Node::Split {
                                feature: r.u32()?,
                                threshold: r.f64()?,
                                left: r.u32()?,
                                right: r.u32()?,
                            },
                            t => return Err(LearnerError::Decode(format!("bad node tag {t}"))),
                        });
                    }
                    trees.push(DecisionTree { nodes });
                }
                TrainedModel {
                    spec: ClassifierSpec {
                        params: LearnerParams::RandomForest(params),
                        seed,
                    },
                    n_features,
                    fitted: Fitted::Forest(RandomForest { trees }),
                }
            }
            2 => {
                let (c, gamma_spec, gamma, rho, platt_a, platt_b) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let n_sv = r.u32()?;
                let mut coef = Vec::with_capacity(n_sv);
                let mut support = Array2::zeros((n_sv, n_features));
                for k in 0..n_sv {
                    coef.push(r.f64()?);
                    for j in 0..n_features {
                        support[[k, j]] = r.f64()?;
                    }
                }
                TrainedModel {
                    spec: ClassifierSpec {
                        params: LearnerParams::Svm(SvmParams { c, gamma: gamma_spec }),
                        seed,
                    },
                    n_features,
                    fitted: Fitted::Svm(SvmModel {
                        gamma,
                        support,
                        coef,
                        rho,
                        platt_a,
                        platt_b,
                    }),
                }
            }
            t => return Err(LearnerError::Decode(format!("unknown learner tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(LearnerError::Decode("trailing bytes".into()));
        }
        Ok(model)
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn put_u32(w: &mut Vec<u8>, v: usize) {
    w.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(LearnerError::Decode(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn separable() -> (Array2<f64>, Vec<Class>) {
        // 40 points on a 2-D grid split by the line x0 + x1 = 0
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for k in 0..40 {
            let a = (k % 8) as f64 * 0.5 - 2.0;
            let b = (k / 8) as f64 * 0.5 - 1.0;
            let shift = if k % 2 == 0 { 1.5 } else { -1.5 };
            rows.extend_from_slice(&[a + shift, b + shift]);
            y.push(if shift > 0.0 { Class::Variant } else { Class::Similar });
        }
        (Array2::from_shape_vec((40, 2), rows).unwrap(), y)
    }

    #[test]
    fn separable_set_resubstitutes_perfectly() {
        let (x, y) = separable();
        for spec in [ClassifierSpec::random_forest(50, None, 7), ClassifierSpec::svm(10.0, 0.5, 7)] {
            let m = train(&spec, x.view(), &y).unwrap();
            assert_eq!(m.predict(x.view()).unwrap(), y, "{:?}", spec.params);
        }
    }

    #[test]
    fn conflicting_duplicates_cannot_be_fit() {
        let x = Array2::from_elem((6, 2), 0.5);
        let y = vec![Class::Similar, Class::Variant, Class::Similar, Class::Variant, Class::Similar, Class::Variant];
        for spec in [ClassifierSpec::random_forest(10, None, 1), ClassifierSpec::svm(1.0, 1.0, 1)] {
            let m = train(&spec, x.view(), &y).unwrap();
            let pred = m.predict(x.view()).unwrap();
            let correct = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
            assert!(correct as f64 / 6.0 <= 0.5);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable();
        for spec in [ClassifierSpec::random_forest(20, Some(5), 42), ClassifierSpec::svm(1.0, 0.1, 42)] {
            let a = train(&spec, x.view(), &y).unwrap();
            let b = train(&spec, x.view(), &y).unwrap();
            assert_eq!(a.digest(), b.digest());
            assert_eq!(a.predict_proba(x.view()).unwrap(), b.predict_proba(x.view()).unwrap());
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let x = array![[0.0], [1.0]];
        let spec = ClassifierSpec::random_forest(5, None, 0);
        assert_eq!(
            train(&spec, x.view(), &[Class::Variant, Class::Variant]).unwrap_err(),
            LearnerError::SingleClass(Class::Variant)
        );
        let bad = array![[0.0], [f64::NAN]];
        assert_eq!(
            train(&spec, bad.view(), &[Class::Similar, Class::Variant]).unwrap_err(),
            LearnerError::NonFinite { row: 1, col: 0 }
        );
        assert!(matches!(
            train(&spec, x.view(), &[Class::Similar]),
            Err(LearnerError::LabelCount { .. })
        ));
        assert!(train(&ClassifierSpec::svm(0.0, 1.0, 0), x.view(), &[Class::Similar, Class::Variant]).is_err());
    }

    #[test]
    fn probabilities_are_normalised_and_dims_checked() {
        let (x, y) = separable();
        for spec in [ClassifierSpec::random_forest(10, None, 3), ClassifierSpec::svm(1.0, 1.0, 3)] {
            let m = train(&spec, x.view(), &y).unwrap();
            for p in m.predict_proba(x.view()).unwrap() {
                assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
                assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            }
            let wide = Array2::zeros((2, 3));
            assert_eq!(
                m.predict(wide.view()).unwrap_err(),
                LearnerError::DimensionMismatch { expected: 2, found: 3 }
            );
            assert!(m.predict(Array2::zeros((0, 2)).view()).unwrap().is_empty());
        }
    }

    #[test]
    fn forest_vote_fraction() {
        let (x, y) = separable();
        let m = train(&ClassifierSpec::random_forest(10, Some(1), 5), x.view(), &y).unwrap();
        let f = m.forest().unwrap();
        let row = [0.3, 0.1];
        let votes = f.trees().iter().filter(|t| t.predict_row(&row) == Class::Variant).count();
        let p = m.predict_proba(array![[0.3, 0.1]].view()).unwrap()[0];
        assert_eq!(p, [(10 - votes) as f64 / 10.0, votes as f64 / 10.0]);
    }

    #[test]
    fn serialization_round_trip_is_bit_identical() {
        let (x, y) = separable();
        for spec in [ClassifierSpec::random_forest(15, Some(4), 11), ClassifierSpec::svm(2.0, 0.3, 11)] {
            let m = train(&spec, x.view(), &y).unwrap();
            let bytes = m.to_bytes();
            assert_eq!(bytes[4], MODEL_FORMAT_VERSION);
            let back = TrainedModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            let pa = m.predict_proba(x.view()).unwrap();
            let pb = back.predict_proba(x.view()).unwrap();
            assert!(pa.iter().zip(&pb).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits()));
            let mut bad = bytes.clone();
            bad[4] = 99;
            assert!(TrainedModel::from_bytes(&bad).is_err());
            assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        }
    }
}
