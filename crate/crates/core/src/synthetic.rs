//! Seeded synthetic fixtures: feature-space datasets for the evaluation
//! harness and small raw corpora (sequences, titres, embeddings) for
//! end-to-end runs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{StrainRecord, Subtype};
use crate::eval::Dataset;
use crate::features::EmbeddingStore;
use crate::label::Class;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Shape of a two-moons dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoonsSpec {
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    /// Gaussian jitter on the two informative coordinates.
    pub noise: f64,
    /// Extra pure-noise coordinates.
    pub noise_dims: usize,
    pub noise_scale: f64,
    /// Fraction of Variant examples.
    pub variant_share: f64,
    pub seed: u64,
}

impl Default for MoonsSpec {
    fn default() -> Self {
        Self {
            n_labelled: 400,
            n_unlabelled: 800,
            noise: 0.15,
            noise_dims: 4,
            noise_scale: 0.5,
            variant_share: 0.5,
            seed: 0,
        }
    }
}

fn moon_point(class: Class, spec: &MoonsSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = rng.gen_range(0.0..PI);
    let (x, y) = match class {
        Class::Similar => (t.cos(), t.sin()),
        Class::Variant => (1.0 - t.cos(), 0.5 - t.sin()),
    };
    let mut v = vec![x + spec.noise * normal(rng), y + spec.noise * normal(rng)];
    v.extend((0..spec.noise_dims).map(|_| spec.noise_scale * normal(rng)));
    v
}

fn draw_class(spec: &MoonsSpec, rng: &mut ChaCha8Rng) -> Class {
    if rng.gen::<f64>() < spec.variant_share {
        Class::Variant
    } else {
        Class::Similar
    }
}

/// Two interleaved half-moons, one per class, so that the cluster
/// assumption holds. Subtypes are assigned round-robin.
pub fn two_moons(spec: &MoonsSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cols = 2 + spec.noise_dims;
    let mut x = Array2::zeros((spec.n_labelled, cols));
    let mut y = Vec::with_capacity(spec.n_labelled);
    for i in 0..spec.n_labelled {
        let c = draw_class(spec, &mut rng);
        x.row_mut(i).assign(&ndarray::Array1::from(moon_point(c, spec, &mut rng)));
        y.push(c);
    }
    let mut x_unlab = Array2::zeros((spec.n_unlabelled, cols));
    for i in 0..spec.n_unlabelled {
        let c = draw_class(spec, &mut rng);
        x_unlab.row_mut(i).assign(&ndarray::Array1::from(moon_point(c, spec, &mut rng)));
    }
    let subtype = |i: usize| Subtype::ALL[i % Subtype::ALL.len()];
    Dataset {
        embedding: "synthetic".into(),
        x,
        y,
        subtypes: (0..spec.n_labelled).map(subtype).collect(),
        ids: (0..spec.n_labelled).map(|i| format!("L{i:05}~M{i:05}")).collect(),
        x_unlab,
        unlab_subtypes: (0..spec.n_unlabelled).map(subtype).collect(),
        unlab_ids: (0..spec.n_unlabelled).map(|i| format!("U{i:05}~V{i:05}")).collect(),
    }
}

/// Shape of a two-Gaussian-cluster dataset whose class signal is spread
/// evenly over all coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClustersSpec {
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub dims: usize,
    /// Distance between the two cluster centres, in units of the
    /// per-coordinate standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl Default for ClustersSpec {
    fn default() -> Self {
        Self {
            n_labelled: 400,
            n_unlabelled: 800,
            dims: 20,
            separation: 3.5,
            seed: 0,
        }
    }
}

/// Two isotropic Gaussian clusters, one per class. Each coordinate carries
/// only `separation / sqrt(dims)` of the signal, so axis-aligned learners
/// need many examples while the clusters themselves stay well separated.
pub fn two_clusters(spec: &ClustersSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shift = spec.separation / 2.0 / (spec.dims as f64).sqrt();
    let draw = |n: usize, rng: &mut ChaCha8Rng| {
        let mut x = Array2::zeros((n, spec.dims));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = if rng.gen::<bool>() { Class::Variant } else { Class::Similar };
            let sign = c.sign();
            for j in 0..spec.dims {
                x[[i, j]] = sign * shift + normal(rng);
            }
            y.push(c);
        }
        (x, y)
    };
    let (x, y) = draw(spec.n_labelled, &mut rng);
    let (x_unlab, _) = draw(spec.n_unlabelled, &mut rng);
    let subtype = |i: usize| Subtype::ALL[i % Subtype::ALL.len()];
    Dataset {
        embedding: "clusters".into(),
        x,
        y,
        subtypes: (0..spec.n_labelled).map(subtype).collect(),
        ids: (0..spec.n_labelled).map(|i| format!("L{i:05}~M{i:05}")).collect(),
        x_unlab,
        unlab_subtypes: (0..spec.n_unlabelled).map(subtype).collect(),
        unlab_ids: (0..spec.n_unlabelled).map(|i| format!("U{i:05}~V{i:05}")).collect(),
    }
}

/// Two well-separated Gaussian blobs.
pub fn separable_blobs(n_labelled: usize, n_unlabelled: usize, dims: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |c: Class, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let centre = if c == Class::Variant { 3.0 } else { -3.0 };
        (0..dims).map(|_| centre + normal(rng)).collect()
    };
    let mut x = Array2::zeros((n_labelled, dims));
    let mut y = Vec::new();
    for i in 0..n_labelled {
        let c = if i % 2 == 0 { Class::Similar } else { Class::Variant };
        x.row_mut(i).assign(&ndarray::Array1::from(point(c, &mut rng)));
        y.push(c);
    }
    let mut x_unlab = Array2::zeros((n_unlabelled, dims));
    for i in 0..n_unlabelled {
        let c = if i % 2 == 0 { Class::Similar } else { Class::Variant };
        x_unlab.row_mut(i).assign(&ndarray::Array1::from(point(c, &mut rng)));
    }
    let subtype = |i: usize| Subtype::ALL[(i / 2) % Subtype::ALL.len()];
    Dataset {
        embedding: "blobs".into(),
        x,
        y,
        subtypes: (0..n_labelled).map(subtype).collect(),
        ids: (0..n_labelled).map(|i| format!("L{i:05}~M{i:05}")).collect(),
        x_unlab,
        unlab_subtypes: (0..n_unlabelled).map(subtype).collect(),
        unlab_ids: (0..n_unlabelled).map(|i| format!("U{i:05}~V{i:05}")).collect(),
    }
}

/// Inputs for an end-to-end run: strains, a titre CSV and one embedding
/// store per model name.
#[derive(Debug, Clone)]
pub struct RawFixture {
    pub strains: Vec<StrainRecord>,
    pub titres_csv: String,
    pub embeddings: Vec<EmbeddingStore>,
}

const RESIDUES: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

/// Strains fall into antigenic clusters per subtype. Pairs within a cluster
/// get high cross-titres (Similar), pairs across clusters low ones (Variant).
/// A share of pairs is left without cross-titres so the corpus has
/// unlabelled pairs; one duplicate and one censored reading are included.
pub fn raw_fixture(strains_per_subtype: usize, clusters: usize, seed: u64) -> RawFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq_len = 60;
    let models = [("protvec", 100usize), ("toy", 8)];
    let mut strains = Vec::new();
    let mut cluster_of = Vec::new();
    let mut stores: Vec<EmbeddingStore> = models
        .iter()
        .map(|(m, d)| EmbeddingStore::new(*m, *d).expect("valid model"))
        .collect();
    for subtype in Subtype::ALL {
        let bases: Vec<Vec<u8>> = (0..clusters)
            .map(|_| (0..seq_len).map(|_| *RESIDUES.choose(&mut rng).expect("alphabet")).collect())
            .collect();
        let centres: Vec<Vec<Vec<f64>>> = models
            .iter()
            .map(|(_, d)| (0..clusters).map(|_| (0..*d).map(|_| 2.0 * normal(&mut rng)).collect()).collect())
            .collect();
        for i in 0..strains_per_subtype {
            let c = i % clusters;
            let mut seq = bases[c].clone();
            for _ in 0..3 {
                let at = rng.gen_range(0..seq_len);
                seq[at] = *RESIDUES.choose(&mut rng).expect("alphabet");
            }
            let id = format!("{subtype}_{i:03}");
            strains.push(StrainRecord::new(id.clone(), subtype, String::from_utf8(seq).expect("ascii")).expect("valid strain"));
            cluster_of.push(c);
            for (m, store) in stores.iter_mut().enumerate() {
                let v: Vec<f64> = centres[m][c].iter().map(|x| x + 0.3 * normal(&mut rng)).collect();
                store.insert(id.clone(), v).expect("fresh strain");
            }
        }
    }
    let jitter = |rng: &mut ChaCha8Rng| 2f64.powf(0.5 * normal(rng));
    let mut csv = String::from("virus_id,antiserum_id,titre\n");
    for s in &strains {
        let _ = writeln!(csv, "{0},{0},{1:.0}", s.strain_id, 1280.0 * jitter(&mut rng));
    }
    let mut first_cross = true;
    for (i, a) in strains.iter().enumerate() {
        for (j, b) in strains.iter().enumerate().skip(i + 1) {
            if a.subtype != b.subtype || rng.gen::<f64>() < 0.3 {
                continue;
            }
            let base = if cluster_of[i] == cluster_of[j] { 640.0 } else { 40.0 };
            let (t1, t2) = (base * jitter(&mut rng), base * jitter(&mut rng));
            if first_cross {
                // a censored reading and a duplicated cell
                let _ = writeln!(csv, "{},{},<10", a.strain_id, b.strain_id);
                let _ = writeln!(csv, "{},{},<10", b.strain_id, a.strain_id);
                let _ = writeln!(csv, "{},{},{:.0}", b.strain_id, a.strain_id, (t2 / 64.0).max(10.0));
                first_cross = false;
                continue;
            }
            let _ = writeln!(csv, "{},{},{:.0}", a.strain_id, b.strain_id, t1.max(10.0));
            let _ = writeln!(csv, "{},{},{:.0}", b.strain_id, a.strain_id, t2.max(10.0));
        }
    }
    RawFixture {
        strains,
        titres_csv: csv,
        embeddings: stores,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, parse_titre_csv, HiTitreTable, ThresholdConfig, DEFAULT_CENSORED_FLOOR};

    #[test]
    fn moons_are_seeded() {
        let spec = MoonsSpec {
            n_labelled: 40,
            n_unlabelled: 10,
            ..MoonsSpec::default()
        };
        let a = two_moons(&spec);
        assert_eq!(a, two_moons(&spec));
        assert_eq!(a.x.dim(), (40, 6));
        assert_eq!(a.x_unlab.nrows(), 10);
        assert!(a.y.contains(&Class::Variant) && a.y.contains(&Class::Similar));
    }

    #[test]
    fn raw_fixture_builds_a_mixed_corpus() {
        let f = raw_fixture(8, 2, 3);
        assert_eq!(f.strains.len(), 32);
        let m = parse_titre_csv(&f.titres_csv, DEFAULT_CENSORED_FLOOR).unwrap();
        let (table, notes) = HiTitreTable::from_measurements(&m, DEFAULT_CENSORED_FLOOR);
        assert!(notes.len() >= 2);
        let corpus = build_corpus(&f.strains, &table, &ThresholdConfig::default()).unwrap();
        let c = &corpus.counts;
        assert!(c.iter().all(|(_, k)| k.is_consistent()));
        let total: usize = c.iter().map(|(_, k)| k.similar + k.variant).sum();
        assert!(total > 0 && corpus.unlabelled().count() > 0);
        assert!(c.iter().any(|(_, k)| k.similar > 0) && c.iter().any(|(_, k)| k.variant > 0));
    }
}
