//! Label spreading over a symmetrised kNN graph.
//!
//! `S = D^-1/2 W D^-1/2` where `W_ij = 1` when either endpoint is among the
//! other's `k` nearest neighbours. Scores follow `F <- a S F + (1 - a) Y`
//! starting from `F = Y`; labelled rows are not clamped.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::label::Class;

use super::{Result, SslError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self {
            Metric::Euclidean => u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
                for (a, b) in u.iter().zip(v.iter()) {
                    dot += a * b;
                    nu += a * a;
                    nv += b * b;
                }
                if nu == 0.0 || nv == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (nu.sqrt() * nv.sqrt())
                }
            }
        }
    }
}

/// Each row's neighbours in ascending (distance, index) order, self excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    /// Compute up to `k_max` neighbours per row. Reusable for any `k <= k_max`.
    pub fn compute(x: ArrayView2<f64>, k_max: usize, metric: Metric) -> Result<Self> {
        let n = x.nrows();
        if k_max == 0 || k_max >= n {
            return Err(SslError::TooFewRows { k: k_max, n });
        }
        let lists = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut cand: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (metric.distance(x.row(i), x.row(j)), j)).collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k_max < cand.len() {
                    cand.select_nth_unstable_by(k_max - 1, cmp);
                    cand.truncate(k_max);
                }
                cand.sort_by(cmp);
                cand.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        Ok(Self { lists })
    }

    pub fn k_max(&self) -> usize {
        self.lists.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Normalised adjacency using the first `k` neighbours of every row.
    pub fn graph(&self, k: usize) -> Result<KnnGraph> {
        let n = self.lists.len();
        if k == 0 || k > self.k_max() {
            return Err(SslError::TooFewRows { k, n });
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, list) in self.lists.iter().enumerate() {
            for &j in &list[..k] {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        let degree: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
        let rows = adj
            .iter()
            .enumerate()
            .map(|(i, a)| a.iter().map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt())).collect())
            .collect();
        Ok(KnnGraph { rows })
    }
}

/// Sparse symmetric normalised adjacency `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    rows: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut s = Array2::zeros((n, n));
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                s[[i, j]] = v;
            }
        }
        s
    }

    /// Build from a dense symmetric non-negative weight matrix with zero
    /// diagonal, normalising it to `D^-1/2 W D^-1/2`.
    pub fn from_weights(w: ArrayView2<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(SslError::InvalidSpec("weight matrix must be square".into()));
        }
        for i in 0..n {
            if w[[i, i]] != 0.0 {
                return Err(SslError::InvalidSpec(format!("non-zero self loop at node {i}")));
            }
            for j in 0..n {
                if w[[i, j]] < 0.0 || w[[i, j]] != w[[j, i]] {
                    return Err(SslError::InvalidSpec(format!("weights not symmetric non-negative at ({i}, {j})")));
                }
            }
        }
        let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
        if let Some(i) = degree.iter().position(|d| *d == 0.0) {
            return Err(SslError::InvalidSpec(format!("node {i} is isolated")));
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[[i, j]] != 0.0)
                    .map(|j| (j, w[[i, j]] / (degree[i] * degree[j]).sqrt()))
                    .collect()
            })
            .collect();
        Ok(KnnGraph { rows })
    }
}

/// kNN graph over the rows of `x`, symmetrised by union.
pub fn build_knn_graph(x: ArrayView2<f64>, n_neighbors: usize, metric: Metric) -> Result<KnnGraph> {
    NeighborLists::compute(x, n_neighbors, metric)?.graph(n_neighbors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpreadingSpec {
    pub n_neighbors: usize,
    pub alpha: f64,
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

pub const DEFAULT_TOL: f64 = 1e-3;

fn default_tol() -> f64 {
    DEFAULT_TOL
}

impl LabelSpreadingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(SslError::InvalidSpec(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.n_neighbors == 0 || self.max_iter == 0 {
            return Err(SslError::InvalidSpec("n_neighbors and max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SslError::InvalidSpec("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpreadOutcome {
    /// Final `[similar, variant]` scores per node.
    pub scores: Vec<[f64; 2]>,
    /// Argmax per node (ties to Variant); `None` when a row has no mass.
    pub labels: Vec<Option<Class>>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs change of the last iteration.
    pub last_delta: f64,
}

impl SpreadOutcome {
    /// Hard predictions, with undecidable rows resolved by the Variant tie-break.
    pub fn predictions(&self) -> Vec<Class> {
        self.labels.iter().map(|l| l.unwrap_or(Class::Variant)).collect()
    }

    pub fn undecidable(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Spread `seeds` (one entry per node) over `graph`.
pub fn label_spread(spec: &LabelSpreadingSpec, graph: &KnnGraph, seeds: &[Option<Class>]) -> Result<SpreadOutcome> {
    spec.validate()?;
    let n = graph.n();
    if seeds.len() != n {
        return Err(SslError::DimensionMismatch {
            expected: n,
            found: seeds.len(),
        });
    }
    for c in Class::ALL {
        if !seeds.contains(&Some(c)) {
            return Err(SslError::MissingClass(c));
        }
    }
    let y: Vec<[f64; 2]> = seeds
        .iter()
        .map(|s| match s {
            Some(c) => {
                let mut r = [0.0; 2];
                r[c.index()] = 1.0;
                r
            }
            None => [0.0; 2],
        })
        .collect();
    let mut f = y.clone();
    let mut next = vec![[0.0; 2]; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut last_delta = f64::INFINITY;
    while iterations < spec.max_iter {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut acc = [0.0; 2];
            for &(j, s) in graph.row(i) {
                acc[0] += s * f[j][0];
                acc[1] += s * f[j][1];
            }
            for c in 0..2 {
                let v = spec.alpha * acc[c] + (1.0 - spec.alpha) * y[i][c];
                delta = delta.max((v - f[i][c]).abs());
                next[i][c] = v;
            }
        }
        std::mem::swap(&mut f, &mut next);
        iterations += 1;
        last_delta = delta;
        if delta < spec.tol {
            converged = true;
            break;
        }
    }
    let labels = f
        .iter()
        .map(|r| (r[0] > 0.0 || r[1] > 0.0).then(|| Class::from_proba(*r)))
        .collect();
    Ok(SpreadOutcome {
        scores: f,
        labels,
        iterations,
        converged,
        last_delta,
    })
}
