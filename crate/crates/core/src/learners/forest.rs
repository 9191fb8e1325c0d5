//! Random forest of Gini-split CART trees.
//!
//! Each tree is grown on a bootstrap resample and considers `sqrt(p)`
//! randomly drawn features per split. Splits are compared exactly; the first
//! minimum wins, which means lowest feature index and then lowest threshold.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::label::Class;

use super::RfParams;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf(Class),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> Class {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(c) => return *c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub(crate) trees: Vec<DecisionTree>,
}

/// RNG for tree `tree`; one ChaCha stream per tree so results do not depend
/// on how trees are scheduled across threads.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn bootstrap(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Bootstrap draws of every tree, as used by [`RandomForest::fit`].
pub fn bootstrap_samples(seed: u64, n_estimators: usize, n: usize) -> Vec<Vec<usize>> {
    (0..n_estimators)
        .map(|t| bootstrap(&mut tree_rng(seed, t), n))
        .collect()
}

/// Number of trees for which each training row was out of bag.
pub fn out_of_bag_counts(seed: u64, n_estimators: usize, n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for bag in bootstrap_samples(seed, n_estimators, n) {
        let mut in_bag = vec![false; n];
        bag.iter().for_each(|&i| in_bag[i] = true);
        in_bag
            .iter()
            .zip(counts.iter_mut())
            .filter(|(b, _)| !**b)
            .for_each(|(_, c)| *c += 1);
    }
    counts
}

impl RandomForest {
    pub fn fit(params: &RfParams, seed: u64, x: ArrayView2<f64>, y: &[Class]) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let max_features = ((p as f64).sqrt().floor() as usize).clamp(1, p.max(1));
        let trees = (0..params.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(seed, t);
                let bag = bootstrap(&mut rng, n);
                let mut builder = TreeBuilder {
                    x,
                    y,
                    max_depth: params.max_depth,
                    max_features,
                    rng,
                    nodes: Vec::new(),
                };
                builder.grow(bag, 0);
                DecisionTree { nodes: builder.nodes }
            })
            .collect();
        Self { trees }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Fraction of trees voting `[Similar, Variant]`.
    pub fn vote_fractions(&self, row: &[f64]) -> [f64; 2] {
        let variant = self
            .trees
            .iter()
            .filter(|t| t.predict_row(row) == Class::Variant)
            .count();
        let n = self.trees.len() as f64;
        let pv = variant as f64 / n;
        [(self.trees.len() - variant) as f64 / n, pv]
    }
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [Class],
    max_depth: Option<usize>,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn class_counts(y: &[Class], idx: &[usize]) -> [usize; 2] {
    let mut c = [0usize; 2];
    idx.iter().for_each(|&i| c[y[i].index()] += 1);
    c
}

fn majority(c: [usize; 2]) -> Class {
    if c[0] > c[1] {
        Class::Similar
    } else {
        Class::Variant
    }
}

/// n * gini(node) for a node holding `c` samples per class.
fn weighted_gini(c: [usize; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (c[0] as f64, c[1] as f64);
    n - (a * a + b * b) / n
}

impl TreeBuilder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = class_counts(self.y, &idx);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(counts)));
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_reached = self.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_reached || idx.len() < 2 {
            return at;
        }
        let Some(split) = self.best_split(&idx) else {
            return at;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[[i, split.feature]] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        at
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Split> {
        let p = self.x.ncols();
        let mut candidates = sample(&mut self.rng, p, self.max_features).into_vec();
        candidates.sort_unstable();
        if let Some(s) = self.best_split_over(idx, &candidates) {
            return Some(s);
        }
        // No candidate separates the node: fall back to the remaining features.
        let rest: Vec<usize> = (0..p).filter(|f| candidates.binary_search(f).is_err()).collect();
        self.best_split_over(idx, &rest)
    }

    fn best_split_over(&self, idx: &[usize], features: &[usize]) -> Option<Split> {
        let total = class_counts(self.y, idx);
        let mut best: Option<Split> = None;
        let mut column: Vec<(f64, Class)> = Vec::with_capacity(idx.len());
        for &f in features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.x[[i, f]], self.y[i])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..column.len() - 1 {
                left[column[k].1.index()] += 1;
                let (v, next) = (column[k].0, column[k + 1].0);
                if v == next {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let score = weighted_gini(left) + weighted_gini(right);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn gini_of_pure_and_mixed_nodes() {
        assert_eq!(weighted_gini([4, 0]), 0.0);
        assert_eq!(weighted_gini([2, 2]), 2.0);
    }

    #[test]
    fn single_tree_fits_threshold_exactly() {
        let x = Array2::from_shape_vec((6, 1), vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        let y = [Class::Similar, Class::Similar, Class::Similar, Class::Variant, Class::Variant, Class::Variant];
        let idx: Vec<usize> = (0..6).collect();
        let b = TreeBuilder {
            x: x.view(),
            y: &y,
            max_depth: None,
            max_features: 1,
            rng: ChaCha8Rng::seed_from_u64(0),
            nodes: Vec::new(),
        };
        let s = b.best_split_over(&idx, &[0]).unwrap();
        assert_eq!(s.threshold, 6.0);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn constant_features_make_a_leaf() {
        let x = Array2::from_elem((4, 2), 1.0);
        let y = [Class::Similar, Class::Variant, Class::Similar, Class::Variant];
        let f = RandomForest::fit(&RfParams { n_estimators: 3, max_depth: None }, 1, x.view(), &y);
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn max_depth_is_respected() {
        let n = 64;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let y: Vec<Class> = (0..n).map(|i| if (i * 5) % 3 == 0 { Class::Variant } else { Class::Similar }).collect();
        let f = RandomForest::fit(&RfParams { n_estimators: 5, max_depth: Some(2) }, 3, x.view(), &y);
        assert!(f.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn oob_counts_match_bootstrap() {
        let bags = bootstrap_samples(9, 4, 10);
        let oob = out_of_bag_counts(9, 4, 10);
        for i in 0..10 {
            let expect = bags.iter().filter(|b| !b.contains(&i)).count();
            assert_eq!(oob[i], expect);
        }
    }
}
