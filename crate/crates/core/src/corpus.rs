//! Antigenic pair corpora.
//!
//! Strains come from FASTA (`>strain_id|subtype` headers), haemagglutination
//! inhibition titres from a `virus_id,antiserum_id,titre` CSV. Every pair of
//! strains within a subtype becomes one [`PairExample`]: pairs whose four
//! titre cells were all measured receive an Archetti-Horsfall distance and a
//! Similar/Variant label, the rest are kept as the unlabelled corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

/// Cutoff used for every subtype unless overridden: a four-fold titre ratio.
pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// Substitute for below-detection readings (half of the usual 1:10 limit).
pub const DEFAULT_CENSORED_FLOOR: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("titre cell {cell} is not strictly positive ({value})")]
    NonPositiveTitre { cell: &'static str, value: f64 },
    #[error("threshold for {subtype} must be > 1, got {value}")]
    InvalidThreshold { subtype: String, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate strain id `{0}`")]
    DuplicateStrain(String),
    #[error("titre entry references unknown strain `{0}`")]
    MissingStrain(String),
    #[error("titre entry ({virus}, {antiserum}) crosses subtypes {virus_subtype} and {antiserum_subtype}")]
    CrossSubtype {
        virus: String,
        antiserum: String,
        virus_subtype: Subtype,
        antiserum_subtype: Subtype,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn parse_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtype {
    H1N1,
    H3N2,
    H5N1,
    H9N2,
}

impl Subtype {
    pub const ALL: [Subtype; 4] = [Subtype::H1N1, Subtype::H3N2, Subtype::H5N1, Subtype::H9N2];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtype::H1N1 => "H1N1",
            Subtype::H3N2 => "H3N2",
            Subtype::H5N1 => "H5N1",
            Subtype::H9N2 => "H9N2",
        }
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subtype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Subtype::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown subtype `{s}`"))
    }
}

/// 20 standard residues plus `X` for unknown.
const AMINO_ACIDS: &[u8] = b"ACDEFGHIKLMNPQRSTVWYX";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrainRecord {
    pub strain_id: String,
    pub subtype: Subtype,
    pub sequence: String,
}

impl StrainRecord {
    pub fn new(strain_id: impl Into<String>, subtype: Subtype, sequence: impl Into<String>) -> std::result::Result<Self, String> {
        let strain_id = strain_id.into();
        let sequence: String = sequence.into().to_ascii_uppercase();
        if strain_id.is_empty() {
            return Err("empty strain id".into());
        }
        if strain_id.contains([',', '|']) || strain_id.chars().any(char::is_whitespace) {
            return Err(format!("strain id `{strain_id}` contains a reserved character"));
        }
        if sequence.is_empty() {
            return Err(format!("strain `{strain_id}` has an empty sequence"));
        }
        if let Some(bad) = sequence.bytes().find(|b| !AMINO_ACIDS.contains(b)) {
            return Err(format!(
                "strain `{strain_id}` has residue `{}` outside the amino-acid alphabet",
                bad as char
            ));
        }
        Ok(Self {
            strain_id,
            subtype,
            sequence,
        })
    }
}

/// Parse FASTA with `>strain_id|subtype` headers. Sequences may span lines.
pub fn parse_fasta(text: &str) -> Result<Vec<StrainRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut current: Option<(usize, String, Subtype, String)> = None;

    let finish = |cur: Option<(usize, String, Subtype, String)>,
                  out: &mut Vec<StrainRecord>,
                  seen: &mut BTreeSet<String>|
     -> Result<()> {
        if let Some((line, id, subtype, seq)) = cur {
            let rec = StrainRecord::new(id, subtype, seq).map_err(|m| parse_err(line, m))?;
            if !seen.insert(rec.strain_id.clone()) {
                return Err(CorpusError::DuplicateStrain(rec.strain_id));
            }
            out.push(rec);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            finish(current.take(), &mut out, &mut seen)?;
            let (id, subtype) = header
                .split_once('|')
                .ok_or_else(|| parse_err(line_no, "header must be `>strain_id|subtype`"))?;
            let subtype = subtype.parse::<Subtype>().map_err(|m| parse_err(line_no, m))?;
            current = Some((line_no, id.trim().to_string(), subtype, String::new()));
        } else {
            match current.as_mut() {
                Some((_, _, _, seq)) => seq.push_str(line),
                None => return Err(parse_err(line_no, "sequence data before the first header")),
            }
        }
    }
    finish(current.take(), &mut out, &mut seen)?;
    Ok(out)
}

pub fn write_fasta(strains: &[StrainRecord]) -> String {
    let mut s = String::new();
    for r in strains {
        let _ = writeln!(s, ">{}|{}", r.strain_id, r.subtype);
        for chunk in r.sequence.as_bytes().chunks(60) {
            s.push_str(std::str::from_utf8(chunk).expect("ascii sequence"));
            s.push('\n');
        }
    }
    s
}

/// One raw row of a titre CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TitreMeasurement {
    pub line: usize,
    pub virus_id: String,
    pub antiserum_id: String,
    pub titre: f64,
    /// Raw `<N` text when the reading was below detection.
    pub censored: Option<String>,
}

/// Parse the titre CSV. `<N` readings are replaced by `censored_floor`.
pub fn parse_titre_csv(text: &str, censored_floor: f64) -> Result<Vec<TitreMeasurement>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "virus_id,antiserum_id,titre" => {}
        Some((i, _)) => return Err(parse_err(i + 1, "expected header `virus_id,antiserum_id,titre`")),
        None => return Err(parse_err(1, "empty titre file")),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(line, "empty strain id"));
        }
        let (titre, censored) = if let Some(limit) = fields[2].strip_prefix('<') {
            limit
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad censored titre `{}`", fields[2])))?;
            (censored_floor, Some(fields[2].to_string()))
        } else {
            let v = fields[2]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad titre `{}`", fields[2])))?;
            (v, None)
        };
        if !(titre > 0.0) || !titre.is_finite() {
            return Err(parse_err(line, format!("titre must be positive, got `{}`", fields[2])));
        }
        out.push(TitreMeasurement {
            line,
            virus_id: fields[0].to_string(),
            antiserum_id: fields[1].to_string(),
            titre,
            censored,
        });
    }
    Ok(out)
}

/// Something the ingest step changed about the raw data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum IngestNote {
    CensoredSubstitution {
        line: usize,
        virus_id: String,
        antiserum_id: String,
        raw: String,
        substituted: f64,
    },
    MergedDuplicates {
        virus_id: String,
        antiserum_id: String,
        values: Vec<f64>,
        geometric_mean: f64,
    },
}

impl fmt::Display for IngestNote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestNote::CensoredSubstitution {
                line,
                virus_id,
                antiserum_id,
                raw,
                substituted,
            } => write!(
                f,
                "censored: line {line} ({virus_id}, {antiserum_id}) `{raw}` -> {substituted}"
            ),
            IngestNote::MergedDuplicates {
                virus_id,
                antiserum_id,
                values,
                geometric_mean,
            } => {
                let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(
                    f,
                    "merged: ({virus_id}, {antiserum_id}) [{}] -> geometric mean {}",
                    vals.join(", "),
                    fmt_titre(*geometric_mean)
                )
            }
        }
    }
}

fn fmt_titre(v: f64) -> String {
    let r = v.round();
    if (v - r).abs() < 1e-9 * v.abs().max(1.0) {
        format!("{r}")
    } else {
        format!("{v:.6}")
    }
}

fn geometric_mean(values: &[f64]) -> f64 {
    let product: f64 = values.iter().product();
    if product.is_finite() && product > 0.0 {
        product.powf(1.0 / values.len() as f64)
    } else {
        (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
    }
}

/// Virus x antiserum titre matrix, one value per cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiTitreTable {
    entries: BTreeMap<(String, String), f64>,
    pub censored_floor: f64,
}

impl HiTitreTable {
    pub fn new(censored_floor: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            censored_floor,
        }
    }

    /// Collapse raw measurements into cells. Repeated cells are merged by
    /// geometric mean; censored substitutions and merges are both logged.
    pub fn from_measurements(measurements: &[TitreMeasurement], censored_floor: f64) -> (Self, Vec<IngestNote>) {
        let mut notes = Vec::new();
        let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for m in measurements {
            if let Some(raw) = &m.censored {
                notes.push(IngestNote::CensoredSubstitution {
                    line: m.line,
                    virus_id: m.virus_id.clone(),
                    antiserum_id: m.antiserum_id.clone(),
                    raw: raw.clone(),
                    substituted: m.titre,
                });
            }
            cells
                .entry((m.virus_id.clone(), m.antiserum_id.clone()))
                .or_default()
                .push(m.titre);
        }
        let mut table = HiTitreTable::new(censored_floor);
        for (key, values) in cells {
            let merged = if values.len() == 1 {
                values[0]
            } else {
                let gm = geometric_mean(&values);
                notes.push(IngestNote::MergedDuplicates {
                    virus_id: key.0.clone(),
                    antiserum_id: key.1.clone(),
                    values: values.clone(),
                    geometric_mean: gm,
                });
                gm
            };
            table.entries.insert(key, merged);
        }
        (table, notes)
    }

    /// Titre of `virus` against antiserum raised to `antiserum`.
    pub fn get(&self, virus: &str, antiserum: &str) -> Option<f64> {
        self.entries.get(&(virus.to_string(), antiserum.to_string())).copied()
    }

    pub fn insert(&mut self, virus: impl Into<String>, antiserum: impl Into<String>, titre: f64) {
        self.entries.insert((virus.into(), antiserum.into()), titre);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.entries.iter().map(|((v, a), t)| (v.as_str(), a.as_str(), *t))
    }
}

/// Archetti-Horsfall antigenic distance between viruses D and V.
///
/// `h_dv` is the titre of virus D against antiserum raised to V.
pub fn archetti_horsfall(h_dd: f64, h_vv: f64, h_dv: f64, h_vd: f64) -> Result<f64> {
    for (cell, value) in [("H_DD", h_dd), ("H_VV", h_vv), ("H_DV", h_dv), ("H_VD", h_vd)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(CorpusError::NonPositiveTitre { cell, value });
        }
    }
    Ok((h_dd * h_vv / (h_dv * h_vd)).sqrt())
}

/// Distances strictly below `threshold` are Similar; the boundary is Variant.
pub fn label_pair(d_dv: f64, threshold: f64) -> Result<Label> {
    if !(threshold > 1.0) {
        return Err(CorpusError::InvalidThreshold {
            subtype: "-".into(),
            value: threshold,
        });
    }
    Ok(if d_dv < threshold {
        Label::Similar
    } else {
        Label::Variant
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub default: f64,
    #[serde(default)]
    pub per_subtype: BTreeMap<Subtype, f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            default: DEFAULT_THRESHOLD,
            per_subtype: BTreeMap::new(),
        }
    }
}

impl ThresholdConfig {
    pub fn threshold(&self, subtype: Subtype) -> f64 {
        self.per_subtype.get(&subtype).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.default > 1.0) {
            return Err(CorpusError::InvalidThreshold {
                subtype: "default".into(),
                value: self.default,
            });
        }
        for (s, v) in &self.per_subtype {
            if !(*v > 1.0) {
                return Err(CorpusError::InvalidThreshold {
                    subtype: s.to_string(),
                    value: *v,
                });
            }
        }
        Ok(())
    }
}

/// Unordered strain pair stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub a: String,
    pub b: String,
    pub subtype: Subtype,
    pub d_dv: Option<f64>,
    pub label: Label,
}

impl PairExample {
    pub fn new(x: impl Into<String>, y: impl Into<String>, subtype: Subtype, d_dv: Option<f64>, label: Label) -> Self {
        let (x, y) = (x.into(), y.into());
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Self {
            a,
            b,
            subtype,
            d_dv,
            label,
        }
    }

    pub fn unlabelled(x: impl Into<String>, y: impl Into<String>, subtype: Subtype) -> Self {
        Self::new(x, y, subtype, None, Label::Unlabelled)
    }

    pub fn pair_id(&self) -> String {
        format!("{}~{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtypeCounts {
    pub sequences: usize,
    pub pairs: usize,
    pub similar: usize,
    pub variant: usize,
    pub unlabelled: usize,
}

impl SubtypeCounts {
    pub fn is_consistent(&self) -> bool {
        self.similar + self.variant + self.unlabelled == self.pairs
            && self.pairs == self.sequences * self.sequences.saturating_sub(1) / 2
    }
}

/// All same-subtype pairs, sorted by (subtype, a, b).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<PairExample>,
    pub counts: BTreeMap<Subtype, SubtypeCounts>,
}

impl Corpus {
    pub fn from_pairs(mut pairs: Vec<PairExample>) -> Self {
        pairs.sort_by(|x, y| (x.subtype, &x.a, &x.b).cmp(&(y.subtype, &y.a, &y.b)));
        let mut counts: BTreeMap<Subtype, SubtypeCounts> = BTreeMap::new();
        let mut strains: BTreeMap<Subtype, BTreeSet<&str>> = BTreeMap::new();
        for p in &pairs {
            let c = counts.entry(p.subtype).or_default();
            c.pairs += 1;
            match p.label {
                Label::Similar => c.similar += 1,
                Label::Variant => c.variant += 1,
                Label::Unlabelled => c.unlabelled += 1,
            }
            let s = strains.entry(p.subtype).or_default();
            s.insert(&p.a);
            s.insert(&p.b);
        }
        for (t, s) in strains {
            counts.get_mut(&t).expect("counted").sequences = s.len();
        }
        Self { pairs, counts }
    }

    pub fn labelled(&self) -> impl Iterator<Item = &PairExample> {
        self.pairs.iter().filter(|p| p.label.is_labelled())
    }

    pub fn unlabelled(&self) -> impl Iterator<Item = &PairExample> {
        self.pairs.iter().filter(|p| !p.label.is_labelled())
    }

    pub fn total(&self) -> SubtypeCounts {
        self.counts.values().fold(SubtypeCounts::default(), |acc, c| SubtypeCounts {
            sequences: acc.sequences + c.sequences,
            pairs: acc.pairs + c.pairs,
            similar: acc.similar + c.similar,
            variant: acc.variant + c.variant,
            unlabelled: acc.unlabelled + c.unlabelled,
        })
    }

    /// Per-subtype table in the layout of the usual dataset summary.
    pub fn counts_table(&self) -> String {
        let mut s = String::from("subtype,sequences,pairs,similar,variant,unlabelled\n");
        let row = |name: &str, c: &SubtypeCounts| {
            format!(
                "{name},{},{},{},{},{}\n",
                c.sequences, c.pairs, c.similar, c.variant, c.unlabelled
            )
        };
        for (t, c) in &self.counts {
            s.push_str(&row(t.as_str(), c));
        }
        s.push_str(&row("Total", &self.total()));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("a,b,subtype,d_dv,label\n");
        for p in &self.pairs {
            let d = p.d_dv.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", p.a, p.b, p.subtype, d, p.label);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "a,b,subtype,d_dv,label" => {}
            Some((i, _)) => return Err(parse_err(i + 1, "expected header `a,b,subtype,d_dv,label`")),
            None => return Err(parse_err(1, "empty corpus file")),
        }
        let mut pairs = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let f: Vec<&str> = raw.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(parse_err(line, format!("expected 5 fields, found {}", f.len())));
            }
            let subtype = f[2].parse::<Subtype>().map_err(|m| parse_err(line, m))?;
            let d_dv = if f[3].is_empty() {
                None
            } else {
                Some(
                    f[3].parse::<f64>()
                        .map_err(|_| parse_err(line, format!("bad d_dv `{}`", f[3])))?,
                )
            };
            let label = f[4].parse::<Label>().map_err(|m| parse_err(line, m))?;
            if label.is_labelled() && d_dv.is_none() {
                return Err(parse_err(line, "labelled pair without d_dv"));
            }
            pairs.push(PairExample::new(f[0], f[1], subtype, d_dv, label));
        }
        Ok(Corpus::from_pairs(pairs))
    }
}

/// Enumerate every same-subtype pair and label those with complete titres.
pub fn build_corpus(strains: &[StrainRecord], titres: &HiTitreTable, cfg: &ThresholdConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut by_id: BTreeMap<&str, &StrainRecord> = BTreeMap::new();
    for s in strains {
        if by_id.insert(&s.strain_id, s).is_some() {
            return Err(CorpusError::DuplicateStrain(s.strain_id.clone()));
        }
    }
    for (virus, antiserum, _) in titres.iter() {
        let v = by_id
            .get(virus)
            .ok_or_else(|| CorpusError::MissingStrain(virus.to_string()))?;
        let a = by_id
            .get(antiserum)
            .ok_or_else(|| CorpusError::MissingStrain(antiserum.to_string()))?;
        if v.subtype != a.subtype {
            return Err(CorpusError::CrossSubtype {
                virus: virus.to_string(),
                antiserum: antiserum.to_string(),
                virus_subtype: v.subtype,
                antiserum_subtype: a.subtype,
            });
        }
    }

    let mut groups: BTreeMap<Subtype, Vec<&str>> = BTreeMap::new();
    for (id, s) in &by_id {
        groups.entry(s.subtype).or_default().push(id);
    }

    let mut pairs = Vec::new();
    for (subtype, ids) in &groups {
        let threshold = cfg.threshold(*subtype);
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let cells = (
                    titres.get(a, a),
                    titres.get(b, b),
                    titres.get(a, b),
                    titres.get(b, a),
                );
                let pair = match cells {
                    (Some(dd), Some(vv), Some(dv), Some(vd)) => {
                        let d = archetti_horsfall(dd, vv, dv, vd)?;
                        PairExample::new(*a, *b, *subtype, Some(d), label_pair(d, threshold)?)
                    }
                    _ => PairExample::unlabelled(*a, *b, *subtype),
                };
                pairs.push(pair);
            }
        }
    }
    let mut corpus = Corpus::from_pairs(pairs);
    // Strains without any partner still count as sequences of their subtype.
    for (subtype, ids) in &groups {
        corpus.counts.entry(*subtype).or_default().sequences = ids.len();
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strain(id: &str, t: Subtype) -> StrainRecord {
        StrainRecord::new(id, t, "MKAILVVLLYTFATANA").unwrap()
    }

    fn full_table(ids: &[&str], titre: impl Fn(&str, &str) -> f64) -> HiTitreTable {
        let mut t = HiTitreTable::new(DEFAULT_CENSORED_FLOOR);
        for v in ids {
            for a in ids {
                t.insert(*v, *a, titre(v, a));
            }
        }
        t
    }

    #[test]
    fn distance_examples() {
        assert_eq!(archetti_horsfall(10.0, 10.0, 10.0, 10.0).unwrap(), 1.0);
        assert_eq!(archetti_horsfall(1280.0, 640.0, 160.0, 320.0).unwrap(), 4.0);
        assert_eq!(archetti_horsfall(160.0, 320.0, 1280.0, 640.0).unwrap(), 0.25);
    }

    #[test]
    fn distance_names_bad_cell() {
        let err = archetti_horsfall(10.0, 10.0, 0.0, 10.0).unwrap_err();
        assert_eq!(err, CorpusError::NonPositiveTitre { cell: "H_DV", value: 0.0 });
        assert!(archetti_horsfall(-1.0, 10.0, 10.0, 10.0).is_err());
        assert!(archetti_horsfall(f64::NAN, 10.0, 10.0, 10.0).is_err());
    }

    #[test]
    fn labelling_boundary_is_variant() {
        assert_eq!(label_pair(1.0, 4.0).unwrap(), Label::Similar);
        assert_eq!(label_pair(4.0, 4.0).unwrap(), Label::Variant);
        assert_eq!(label_pair(16.0, 4.0).unwrap(), Label::Variant);
        assert!(label_pair(2.0, 1.0).is_err());
    }

    #[test]
    fn complete_measurement_labels_everything() {
        let ids = ["A", "B", "C"];
        let strains: Vec<_> = ids.iter().map(|i| strain(i, Subtype::H3N2)).collect();
        let table = full_table(&ids, |v, a| if v == a { 640.0 } else { 80.0 });
        let c = build_corpus(&strains, &table, &ThresholdConfig::default()).unwrap();
        assert_eq!(c.pairs.len(), 3);
        assert_eq!(c.unlabelled().count(), 0);
        // sqrt(640*640 / (80*80)) = 8 -> Variant
        assert!(c.pairs.iter().all(|p| p.d_dv == Some(8.0) && p.label == Label::Variant));
    }

    #[test]
    fn partial_measurement_leaves_unlabelled_pairs() {
        let strains: Vec<_> = ["A", "B", "C", "D"].iter().map(|i| strain(i, Subtype::H1N1)).collect();
        let table = full_table(&["A", "B", "C"], |_, _| 40.0);
        let c = build_corpus(&strains, &table, &ThresholdConfig::default()).unwrap();
        let counts = c.counts[&Subtype::H1N1];
        assert_eq!(counts.pairs, 6);
        assert_eq!(counts.similar + counts.variant, 3);
        assert_eq!(counts.unlabelled, 3);
        assert!(counts.is_consistent());
        assert!(c.pairs.iter().all(|p| p.a < p.b));
    }

    #[test]
    fn pairs_never_cross_subtypes() {
        let strains = vec![
            strain("A", Subtype::H1N1),
            strain("B", Subtype::H1N1),
            strain("C", Subtype::H5N1),
            strain("D", Subtype::H5N1),
            strain("E", Subtype::H5N1),
        ];
        let c = build_corpus(&strains, &HiTitreTable::new(5.0), &ThresholdConfig::default()).unwrap();
        assert_eq!(c.pairs.len(), 1 + 3);
        assert_eq!(c.counts[&Subtype::H5N1].sequences, 3);
    }

    #[test]
    fn cross_subtype_and_missing_entries_rejected() {
        let strains = vec![strain("A", Subtype::H1N1), strain("B", Subtype::H3N2)];
        let mut t = HiTitreTable::new(5.0);
        t.insert("A", "B", 40.0);
        assert!(matches!(
            build_corpus(&strains, &t, &ThresholdConfig::default()),
            Err(CorpusError::CrossSubtype { .. })
        ));
        let mut t = HiTitreTable::new(5.0);
        t.insert("A", "Z", 40.0);
        assert_eq!(
            build_corpus(&strains, &t, &ThresholdConfig::default()).unwrap_err(),
            CorpusError::MissingStrain("Z".into())
        );
    }

    #[test]
    fn per_subtype_threshold_override() {
        let ids = ["A", "B"];
        let strains: Vec<_> = ids.iter().map(|i| strain(i, Subtype::H9N2)).collect();
        // d = sqrt(160*160/(40*40)) = 4
        let table = full_table(&ids, |v, a| if v == a { 160.0 } else { 40.0 });
        let mut cfg = ThresholdConfig::default();
        cfg.per_subtype.insert(Subtype::H9N2, 8.0);
        let c = build_corpus(&strains, &table, &cfg).unwrap();
        assert_eq!(c.pairs[0].label, Label::Similar);
        cfg.per_subtype.insert(Subtype::H9N2, 0.5);
        assert!(build_corpus(&strains, &table, &cfg).is_err());
    }

    #[test]
    fn fasta_parsing() {
        let text = ">s1|H1N1\nMKA\nILV\n\n>s2|h3n2\nmkx\n";
        let s = parse_fasta(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].sequence, "MKAILV");
        assert_eq!(s[1].subtype, Subtype::H3N2);
        assert_eq!(s[1].sequence, "MKX");
        assert_eq!(parse_fasta(&write_fasta(&s)).unwrap(), s);

        assert!(matches!(parse_fasta(">s1|H7N9\nMK\n"), Err(CorpusError::Parse { line: 1, .. })));
        assert!(matches!(parse_fasta(">s1|H1N1\nMK1\n"), Err(CorpusError::Parse { line: 1, .. })));
        assert!(matches!(parse_fasta("MK\n"), Err(CorpusError::Parse { line: 1, .. })));
        assert!(matches!(parse_fasta(">s1|H1N1\n"), Err(CorpusError::Parse { .. })));
        assert_eq!(
            parse_fasta(">s1|H1N1\nMK\n>s1|H1N1\nMK\n").unwrap_err(),
            CorpusError::DuplicateStrain("s1".into())
        );
    }

    #[test]
    fn titre_parsing_censoring_and_merging() {
        let text = "virus_id,antiserum_id,titre\nA,A,640\nA,B,<10\nB,A,40\nB,A,160\n";
        let m = parse_titre_csv(text, DEFAULT_CENSORED_FLOOR).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[1].titre, 5.0);
        let (table, notes) = HiTitreTable::from_measurements(&m, DEFAULT_CENSORED_FLOOR);
        assert_eq!(table.len(), 3);
        assert!((table.get("B", "A").unwrap() - 80.0).abs() < 1e-9);
        assert_eq!(notes.len(), 2);
        assert!(notes.iter().any(|n| n.to_string().contains("geometric mean 80")));
        assert!(notes.iter().any(|n| n.to_string().contains("line 3")));

        assert!(matches!(
            parse_titre_csv("virus_id,antiserum_id,titre\nA,B,0\n", 5.0),
            Err(CorpusError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_titre_csv("virus_id,antiserum_id,titre\nA,B\n", 5.0),
            Err(CorpusError::Parse { line: 2, .. })
        ));
        assert!(parse_titre_csv("v,a,t\n", 5.0).is_err());
    }

    #[test]
    fn snapshot_round_trip_is_stable() {
        let strains: Vec<_> = ["A", "B", "C", "D"].iter().map(|i| strain(i, Subtype::H5N1)).collect();
        let table = full_table(&["A", "B", "C"], |v, a| if v == a { 320.0 } else { 33.0 });
        let c = build_corpus(&strains, &table, &ThresholdConfig::default()).unwrap();
        let text = c.to_csv();
        let back = Corpus::from_csv(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_csv(), text);
        assert!(text.contains("A,D,H5N1,,Unlabelled"));
    }
}
