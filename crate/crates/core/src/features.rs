//! Per-strain embeddings and pair features.
//!
//! Two encodings share one logical schema:
//!
//! * text: `#model=<name>,dim=<D>,count=<N>` then `strain_id,v1,...,vD` rows;
//! * binary: `EMB1`, u32-length-prefixed UTF-8 model name, u32 dim, u32 count,
//!   then per record a u32-length-prefixed strain id and `dim` f32 values.
//!
//! All integers and floats are little-endian. Values are held as f64 in memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PairExample, Subtype};
use crate::label::Label;

pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";

/// Output width of the pretrained models this pipeline was designed around.
pub const KNOWN_MODEL_DIMS: [(&str, usize); 4] = [("esm2", 640), ("protbert", 1024), ("prott5", 1024), ("protvec", 100)];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("binary embedding file: {0}")]
    Binary(String),
    #[error("strain `{strain_id}` has {found} values, expected dim={expected}")]
    DimensionMismatch {
        strain_id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate strain id `{0}` in embedding file")]
    DuplicateStrain(String),
    #[error("header declares count={declared} but {found} rows were read")]
    CountMismatch { declared: usize, found: usize },
    #[error("model `{model}` must have dim={expected}, file declares {declared}")]
    ModelDimension {
        model: String,
        expected: usize,
        declared: usize,
    },
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no embedding for strains: {}", .0.join(", "))]
    MissingStrains(Vec<String>),
    #[error("non-finite value for strain `{0}`")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

pub fn known_dim(model_name: &str) -> Option<usize> {
    KNOWN_MODEL_DIMS
        .iter()
        .find(|(m, _)| m.eq_ignore_ascii_case(model_name))
        .map(|(_, d)| *d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    model_name: String,
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(model_name: impl Into<String>, dim: usize) -> Result<Self> {
        let model_name = model_name.into();
        if dim == 0 {
            return Err(FeatureError::Parse {
                line: 1,
                message: "dim must be positive".into(),
            });
        }
        if let Some(expected) = known_dim(&model_name) {
            if expected != dim {
                return Err(FeatureError::ModelDimension {
                    model: model_name,
                    expected,
                    declared: dim,
                });
            }
        }
        Ok(Self {
            model_name,
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, strain_id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let strain_id = strain_id.into();
        if v.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                strain_id,
                expected: self.dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite(strain_id));
        }
        if self.vectors.contains_key(&strain_id) {
            return Err(FeatureError::DuplicateStrain(strain_id));
        }
        self.vectors.insert(strain_id, v);
        Ok(())
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, strain_id: &str) -> Option<&[f64]> {
        self.vectors.get(strain_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Parse either encoding, sniffing the binary magic.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(BINARY_MAGIC) {
            Self::from_binary(bytes)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|e| FeatureError::Parse {
                line: 1,
                message: format!("not UTF-8 text and no `EMB1` magic: {e}"),
            })?;
            Self::from_text(text)
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| FeatureError::Parse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty embedding file".into()))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| perr(1, "header must start with `#model=`".into()))?;
        let mut model = None;
        let mut dim = None;
        let mut count = None;
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(1, format!("malformed header field `{kv}`")))?;
            match k.trim() {
                "model" => model = Some(v.trim().to_string()),
                "dim" => dim = Some(v.trim().parse::<usize>().map_err(|_| perr(1, format!("bad dim `{v}`")))?),
                "count" => count = Some(v.trim().parse::<usize>().map_err(|_| perr(1, format!("bad count `{v}`")))?),
                // extra header keys (e.g. precision) are informational
                _ => {}
            }
        }
        let (model, dim, count) = match (model, dim, count) {
            (Some(m), Some(d), Some(c)) => (m, d, c),
            _ => return Err(perr(1, "header needs model, dim and count".into())),
        };
        let mut store = EmbeddingStore::new(model, dim)?;
        for (i, raw) in lines {
            let mut fields = raw.split(',');
            let id = fields.next().unwrap_or_default().trim();
            if id.is_empty() {
                return Err(perr(i + 1, "empty strain id".into()));
            }
            let values = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(i + 1, format!("strain `{id}`: {e}")))?;
            store.insert(id, values)?;
        }
        if store.len() != count {
            return Err(FeatureError::CountMismatch {
                declared: count,
                found: store.len(),
            });
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#model={},dim={},count={}\n", self.model_name, self.dim, self.len());
        for (id, v) in &self.vectors {
            s.push_str(id);
            for x in v {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != BINARY_MAGIC {
            return Err(FeatureError::Binary("missing EMB1 magic".into()));
        }
        let model = r.string()?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut store = EmbeddingStore::new(model, dim)?;
        for _ in 0..count {
            let id = r.string()?;
            let raw = r.take(dim * 4)?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            store.insert(id, v)?;
        }
        if r.pos != bytes.len() {
            return Err(FeatureError::Binary(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    /// Binary encoding; values are narrowed to f32.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (self.dim * 4 + 16));
        out.extend_from_slice(BINARY_MAGIC);
        put_string(&mut out, &self.model_name);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, v) in &self.vectors {
            put_string(&mut out, id);
            for x in v {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        out
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| FeatureError::Binary(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|e| FeatureError::Binary(e.to_string()))
    }
}

/// How two strain embeddings are folded into one pair feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCombine {
    /// `|a - b|` followed by `(a + b) / 2`.
    #[default]
    AbsDiffMean,
    /// `|a - b|` only.
    AbsDiff,
}

impl PairCombine {
    pub fn output_dim(self, dim: usize) -> usize {
        match self {
            PairCombine::AbsDiffMean => 2 * dim,
            PairCombine::AbsDiff => dim,
        }
    }
}

/// Symmetric pair feature: `|a - b|` then the elementwise mean.
pub fn featurize_pair(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    featurize_pair_with(a, b, PairCombine::AbsDiffMean)
}

pub fn featurize_pair_with(a: &[f64], b: &[f64], combine: PairCombine) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(FeatureError::LengthMismatch(a.len(), b.len()));
    }
    let mut out = Vec::with_capacity(combine.output_dim(a.len()));
    out.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    if combine == PairCombine::AbsDiffMean {
        // x + y is commutative in IEEE arithmetic, so the mean is symmetric too.
        out.extend(a.iter().zip(b).map(|(x, y)| (x + y) / 2.0));
    }
    Ok(out)
}

/// Feature rows aligned with their pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub x: Array2<f64>,
    pub labels: Vec<Label>,
    pub subtypes: Vec<Subtype>,
    pub pair_ids: Vec<String>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_id,subtype,label");
        for j in 0..self.x.ncols() {
            let _ = write!(s, ",f{j}");
        }
        s.push('\n');
        for (i, row) in self.x.rows().into_iter().enumerate() {
            let _ = write!(s, "{},{},{}", self.pair_ids[i], self.subtypes[i], self.labels[i]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn featurize_corpus(store: &EmbeddingStore, pairs: &[PairExample]) -> Result<FeatureSet> {
    featurize_corpus_with(store, pairs, PairCombine::AbsDiffMean)
}

pub fn featurize_corpus_with(store: &EmbeddingStore, pairs: &[PairExample], combine: PairCombine) -> Result<FeatureSet> {
    let missing: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.a.as_str(), p.b.as_str()])
        .filter(|id| store.get(id).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(FeatureError::MissingStrains(missing.into_iter().map(String::from).collect()));
    }
    let cols = combine.output_dim(store.dim());
    let mut x = Array2::zeros((pairs.len(), cols));
    for (i, p) in pairs.iter().enumerate() {
        let f = featurize_pair_with(store.get(&p.a).expect("checked"), store.get(&p.b).expect("checked"), combine)?;
        x.row_mut(i).iter_mut().zip(f).for_each(|(dst, v)| *dst = v);
    }
    Ok(FeatureSet {
        x,
        labels: pairs.iter().map(|p| p.label).collect(),
        subtypes: pairs.iter().map(|p| p.subtype).collect(),
        pair_ids: pairs.iter().map(PairExample::pair_id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(dim: usize, n: usize) -> EmbeddingStore {
        let mut s = EmbeddingStore::new("custom", dim).unwrap();
        for i in 0..n {
            s.insert(format!("s{i}"), (0..dim).map(|j| (i * dim + j) as f64 * 0.25 - 1.0).collect())
                .unwrap();
        }
        s
    }

    #[test]
    fn text_load_well_formed() {
        let mut text = String::from("#model=protvec,dim=100,count=5\n");
        for i in 0..5 {
            text.push_str(&format!("s{i}"));
            for j in 0..100 {
                text.push_str(&format!(",{}", (i * j) as f64 / 7.0));
            }
            text.push('\n');
        }
        let s = EmbeddingStore::from_text(&text).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.dim(), 100);
        assert_eq!(EmbeddingStore::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn short_row_is_dimension_mismatch() {
        let mut text = String::from("#model=protvec,dim=100,count=1\nbad");
        for _ in 0..99 {
            text.push_str(",0.5");
        }
        assert_eq!(
            EmbeddingStore::from_text(&text).unwrap_err(),
            FeatureError::DimensionMismatch {
                strain_id: "bad".into(),
                expected: 100,
                found: 99
            }
        );
    }

    #[test]
    fn known_models_enforce_dimension() {
        assert!(EmbeddingStore::new("esm2", 640).is_ok());
        assert!(matches!(
            EmbeddingStore::new("esm2", 320),
            Err(FeatureError::ModelDimension { expected: 640, .. })
        ));
        assert!(EmbeddingStore::new("protbert", 1024).is_ok());
        assert!(EmbeddingStore::new("prott5", 1024).is_ok());
        assert!(EmbeddingStore::new("protvec", 100).is_ok());
        assert!(EmbeddingStore::new("my-model", 7).is_ok());
    }

    #[test]
    fn duplicates_and_count_checked() {
        let text = "#model=x,dim=2,count=2\na,1,2\na,3,4\n";
        assert_eq!(
            EmbeddingStore::from_text(text).unwrap_err(),
            FeatureError::DuplicateStrain("a".into())
        );
        let text = "#model=x,dim=2,count=3\na,1,2\nb,3,4\n";
        assert!(matches!(
            EmbeddingStore::from_text(text),
            Err(FeatureError::CountMismatch { declared: 3, found: 2 })
        ));
    }

    #[test]
    fn binary_round_trip_and_sniffing() {
        let s = store(3, 4);
        let bin = s.to_binary();
        assert_eq!(&bin[..4], BINARY_MAGIC);
        let back = EmbeddingStore::from_bytes(&bin).unwrap();
        // values chosen to be exactly representable in f32
        assert_eq!(back, s);
        assert_eq!(EmbeddingStore::from_bytes(s.to_text().as_bytes()).unwrap(), s);
        assert!(EmbeddingStore::from_binary(&bin[..bin.len() - 1]).is_err());
        let mut extra = bin.clone();
        extra.push(0);
        assert!(EmbeddingStore::from_binary(&extra).is_err());
    }

    #[test]
    fn pair_feature_examples() {
        let v = [0.3, -1.5, 2.0];
        assert_eq!(featurize_pair(&v, &v).unwrap(), vec![0.0, 0.0, 0.0, 0.3, -1.5, 2.0]);
        assert_eq!(featurize_pair(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 1.0, 0.5, 0.5]);
        assert_eq!(featurize_pair_with(&[1.0, 0.0], &[0.0, 3.0], PairCombine::AbsDiff).unwrap(), vec![1.0, 3.0]);
        assert_eq!(featurize_pair(&[1.0], &[1.0, 2.0]).unwrap_err(), FeatureError::LengthMismatch(1, 2));
    }

    #[test]
    fn corpus_featurization() {
        let s = store(4, 3);
        let pairs = vec![
            PairExample::new("s0", "s1", Subtype::H1N1, Some(1.0), Label::Similar),
            PairExample::new("s0", "s2", Subtype::H1N1, Some(8.0), Label::Variant),
            PairExample::unlabelled("s1", "s2", Subtype::H1N1),
        ];
        let f = featurize_corpus(&s, &pairs).unwrap();
        assert_eq!(f.x.dim(), (3, 8));
        assert_eq!(f.labels[2], Label::Unlabelled);
        assert_eq!(
            f.x.row(1).to_vec(),
            featurize_pair(s.get("s0").unwrap(), s.get("s2").unwrap()).unwrap()
        );
        assert_eq!(featurize_corpus(&s, &pairs).unwrap(), f);

        let empty = featurize_corpus(&s, &[]).unwrap();
        assert_eq!(empty.x.dim(), (0, 8));

        let missing = vec![
            PairExample::unlabelled("s0", "zz", Subtype::H1N1),
            PairExample::unlabelled("aa", "s1", Subtype::H1N1),
        ];
        assert_eq!(
            featurize_corpus(&s, &missing).unwrap_err(),
            FeatureError::MissingStrains(vec!["aa".into(), "zz".into()])
        );
    }
}
