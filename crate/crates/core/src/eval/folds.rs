//! Stratified fold plans and label-scarcity masks.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Subtype;
use crate::label::Class;

use super::{EvalError, Result};

pub const OUTER_K: usize = 5;
pub const INNER_K: usize = 4;

/// Fraction of each outer training fold that keeps its labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum SupervisionRatio {
    Quarter,
    Half,
    ThreeQuarters,
    Full,
}

impl SupervisionRatio {
    pub const ALL: [SupervisionRatio; 4] = [
        SupervisionRatio::Quarter,
        SupervisionRatio::Half,
        SupervisionRatio::ThreeQuarters,
        SupervisionRatio::Full,
    ];

    pub fn value(self) -> f64 {
        match self {
            SupervisionRatio::Quarter => 0.25,
            SupervisionRatio::Half => 0.5,
            SupervisionRatio::ThreeQuarters => 0.75,
            SupervisionRatio::Full => 1.0,
        }
    }

    pub fn percent(self) -> u32 {
        (self.value() * 100.0) as u32
    }
}

impl TryFrom<f64> for SupervisionRatio {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, Self::Error> {
        SupervisionRatio::ALL
            .into_iter()
            .find(|r| r.value() == v)
            .ok_or_else(|| format!("supervision ratio must be one of 0.25, 0.5, 0.75, 1.0; got {v}"))
    }
}

impl From<SupervisionRatio> for f64 {
    fn from(r: SupervisionRatio) -> f64 {
        r.value()
    }
}

impl fmt::Display for SupervisionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.percent())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub outer_k: usize,
    pub inner_k: usize,
    pub seed: u64,
    pub folds: Vec<Split>,
    /// False when some (class, subtype) cell was too small and folds were
    /// stratified by class alone.
    pub by_subtype: bool,
}

/// Deal `items` round-robin into `k` folds, stratum by stratum, continuing
/// the dealing position across strata so fold sizes stay within one.
fn deal<K: Ord>(items: &[usize], key: impl Fn(usize) -> K, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut strata: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for &i in items {
        strata.entry(key(i)).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut at = 0;
    for (_, mut members) in strata {
        members.shuffle(rng);
        for i in members {
            folds[at % k].push(i);
            at += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

fn splits_from(items: &[usize], folds: Vec<Vec<usize>>) -> Vec<Split> {
    folds
        .into_iter()
        .map(|test| {
            let mut in_test = vec![false; items.iter().max().map_or(0, |m| m + 1)];
            test.iter().for_each(|&i| in_test[i] = true);
            Split {
                train: items.iter().copied().filter(|&i| !in_test[i]).collect(),
                test,
            }
        })
        .collect()
}

/// Stratified k-fold over `items`, by (class, subtype) where every cell
/// holds at least `k` examples and by class otherwise. Returns the splits
/// and whether subtype stratification was used.
pub fn stratified_splits(
    items: &[usize],
    classes: &[Class],
    subtypes: &[Subtype],
    k: usize,
    seed: u64,
) -> Result<(Vec<Split>, bool)> {
    if k < 2 {
        return Err(EvalError::InvalidConfig(format!("fold count must be >= 2, got {k}")));
    }
    if items.len() < k {
        return Err(EvalError::TooFewExamples { needed: k, found: items.len() });
    }
    let mut cells: BTreeMap<(Class, Subtype), usize> = BTreeMap::new();
    for &i in items {
        *cells.entry((classes[i], subtypes[i])).or_default() += 1;
    }
    let by_subtype = cells.values().all(|&n| n >= k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = if by_subtype {
        deal(items, |i| (classes[i], subtypes[i]), k, &mut rng)
    } else {
        log::warn!("some (class, subtype) cell has fewer than {k} examples; stratifying by class only");
        deal(items, |i| classes[i], k, &mut rng)
    };
    Ok((splits_from(items, folds), by_subtype))
}

/// Outer fold plan over all labelled pairs.
pub fn make_folds(classes: &[Class], subtypes: &[Subtype], seed: u64) -> Result<FoldPlan> {
    make_folds_with(classes, subtypes, OUTER_K, INNER_K, seed)
}

pub fn make_folds_with(classes: &[Class], subtypes: &[Subtype], outer_k: usize, inner_k: usize, seed: u64) -> Result<FoldPlan> {
    if classes.len() != subtypes.len() {
        return Err(EvalError::LengthMismatch(classes.len(), subtypes.len()));
    }
    let items: Vec<usize> = (0..classes.len()).collect();
    let (folds, by_subtype) = stratified_splits(&items, classes, subtypes, outer_k, seed)?;
    Ok(FoldPlan {
        outer_k,
        inner_k,
        seed,
        folds,
        by_subtype,
    })
}

impl FoldPlan {
    /// Inner splits partitioning `items` (the labelled rows available for
    /// tuning inside one outer training fold).
    pub fn inner_splits(&self, items: &[usize], classes: &[Class], subtypes: &[Subtype], seed: u64) -> Result<Vec<Split>> {
        Ok(stratified_splits(items, classes, subtypes, self.inner_k, seed)?.0)
    }
}

/// Retained-labelled and pseudo-unlabelled (PUL) parts of one training fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub ratio: SupervisionRatio,
    pub retained: Vec<usize>,
    pub pul: Vec<usize>,
}

/// Keep `round(ratio * |train|)` labels, allocated across classes by largest
/// remainder with at least one per class, and mask the rest.
pub fn mask_labels(train: &[usize], classes: &[Class], ratio: SupervisionRatio, seed: u64) -> Result<MaskPlan> {
    if ratio == SupervisionRatio::Full {
        let mut retained = train.to_vec();
        retained.sort_unstable();
        return Ok(MaskPlan {
            ratio,
            retained,
            pul: Vec::new(),
        });
    }
    let target = (ratio.value() * train.len() as f64).round() as usize;
    let by_class: Vec<Vec<usize>> = Class::ALL
        .iter()
        .map(|c| train.iter().copied().filter(|&i| classes[i] == *c).collect())
        .collect();
    if by_class.iter().any(Vec::is_empty) || target < by_class.len() {
        return Err(EvalError::MaskImpossible {
            train: train.len(),
            retained: target,
        });
    }
    let exact: Vec<f64> = by_class
        .iter()
        .map(|m| ratio.value() * m.len() as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = target - quota.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    // every class keeps at least one label
    for c in 0..quota.len() {
        if quota[c] == 0 {
            let donor = (0..quota.len()).max_by_key(|&d| quota[d]).expect("two classes");
            quota[donor] -= 1;
            quota[c] = 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained = Vec::with_capacity(target);
    let mut pul = Vec::with_capacity(train.len() - target);
    for (members, q) in by_class.into_iter().zip(quota) {
        let mut members = members;
        members.shuffle(&mut rng);
        retained.extend_from_slice(&members[..q]);
        pul.extend_from_slice(&members[q..]);
    }
    retained.sort_unstable();
    pul.sort_unstable();
    Ok(MaskPlan { ratio, retained, pul })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(n_sim: usize, n_var: usize) -> Vec<Class> {
        let mut v = vec![Class::Similar; n_sim];
        v.extend(vec![Class::Variant; n_var]);
        v
    }

    #[test]
    fn sixty_forty_split_is_balanced() {
        let c = classes(60, 40);
        let s = vec![Subtype::H1N1; 100];
        let plan = make_folds(&c, &s, 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            let sim = f.test.iter().filter(|&&i| c[i] == Class::Similar).count();
            let var = f.test.len() - sim;
            assert!(sim.abs_diff(12) <= 1 && var.abs_diff(8) <= 1, "{sim}/{var}");
            assert_eq!(f.train.len() + f.test.len(), 100);
        }
        assert_eq!(make_folds(&c, &s, 3).unwrap(), plan);
        assert_ne!(make_folds(&c, &s, 4).unwrap(), plan);
    }

    #[test]
    fn small_cells_fall_back_to_class_stratification() {
        let c = classes(12, 12);
        let mut s = vec![Subtype::H3N2; 24];
        s[0] = Subtype::H9N2;
        let plan = make_folds(&c, &s, 1).unwrap();
        assert!(!plan.by_subtype);
        assert!(make_folds(&classes(2, 2), &[Subtype::H1N1; 4], 1).is_err());
    }

    #[test]
    fn masking_arithmetic() {
        let c = classes(50, 30);
        let train: Vec<usize> = (0..80).collect();
        let m = mask_labels(&train, &c, SupervisionRatio::Quarter, 1).unwrap();
        assert_eq!(m.retained.len(), 20);
        assert_eq!(m.pul.len(), 60);
        let kept_var = m.retained.iter().filter(|&&i| c[i] == Class::Variant).count();
        assert!(kept_var.abs_diff(8) <= 1);
        let full = mask_labels(&train, &c, SupervisionRatio::Full, 1).unwrap();
        assert!(full.pul.is_empty());
        assert_eq!(full.retained, train);
    }

    #[test]
    fn masking_keeps_rare_class() {
        let c = classes(30, 1);
        let train: Vec<usize> = (0..31).collect();
        let m = mask_labels(&train, &c, SupervisionRatio::Quarter, 9).unwrap();
        assert!(m.retained.contains(&30));
        assert_eq!(m.retained.len(), 8);
        let one_class = vec![Class::Similar; 10];
        assert!(mask_labels(&(0..10).collect::<Vec<_>>(), &one_class, SupervisionRatio::Half, 0).is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(SupervisionRatio::try_from(0.75).unwrap(), SupervisionRatio::ThreeQuarters);
        assert!(SupervisionRatio::try_from(0.3).is_err());
        assert_eq!(SupervisionRatio::Half.to_string(), "50%");
    }
}
