//! C-SVC with an RBF kernel, solved by SMO, with Platt-scaled probabilities.
//!
//! The dual is `min 1/2 a'Qa - e'a` subject to `y'a = 0`, `0 <= a_i <= C`,
//! where `Q_ij = y_i y_j k(x_i, x_j)`. Each step updates the pair made of the
//! maximal KKT violator `i` and the partner `j` giving the largest
//! second-order decrease of the objective. Iteration stops when the
//! violation gap `m(a) - M(a)` drops below the tolerance.

use std::collections::{HashMap, VecDeque};

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::label::Class;

const TAU: f64 = 1e-12;
/// Kernel-row cache budget, in f64 entries (256 MiB).
const CACHE_ENTRIES: usize = 32 * 1024 * 1024;

pub fn rbf(u: ArrayView1<f64>, v: ArrayView1<f64>, gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// Result of the dual optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// `m(a) - M(a)` at termination.
    pub kkt_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoSolution {
    /// `sum_i a_i y_i`, zero at any feasible point.
    pub fn dual_balance(&self, y: &[f64]) -> f64 {
        self.alpha.iter().zip(y).map(|(a, y)| a * y).sum()
    }
}

struct KernelCache<'a> {
    x: ArrayView2<'a, f64>,
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: ArrayView2<'a, f64>, gamma: f64) -> Self {
        let n = x.nrows().max(1);
        Self {
            x,
            gamma,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity: (CACHE_ENTRIES / n).max(2),
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.x.row(i);
            let row = self.x.rows().into_iter().map(|xj| rbf(xi, xj, self.gamma)).collect();
            self.rows.insert(i, row);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }

    /// Rows `i` and `j` together, both guaranteed resident.
    fn pair(&mut self, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let ri = self.row(i).to_vec();
        let rj = self.row(j).to_vec();
        (ri, rj)
    }
}

/// Solve the C-SVC dual. `y` holds +1/-1.
pub fn solve_smo(x: ArrayView2<f64>, y: &[f64], c: f64, gamma: f64, tol: f64) -> SmoSolution {
    let n = y.len();
    let max_iter = 10_000_000usize.max(100 * n);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = KernelCache::new(x, gamma);
    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;

    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    while iterations < max_iter {
        // i: maximal violator over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        if let Some(i) = i_sel {
            let ki = cache.row(i).to_vec();
            let mut best = f64::INFINITY;
            for t in 0..n {
                let yk = y[t] * ki[t];
                if y[t] > 0.0 {
                    if !lower(alpha[t]) {
                        let diff = gmax + grad[t];
                        gmax2 = gmax2.max(grad[t]);
                        if diff > 0.0 {
                            let quad = 2.0 - 2.0 * y[i] * yk;
                            let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= best {
                                best = obj;
                                j_sel = Some(t);
                            }
                        }
                    }
                } else if !upper(alpha[t]) {
                    let diff = gmax - grad[t];
                    gmax2 = gmax2.max(-grad[t]);
                    if diff > 0.0 {
                        let quad = 2.0 + 2.0 * y[i] * yk;
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            }
        }
        gap = gmax + gmax2;
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gap >= tol => (i, j),
            _ => {
                converged = true;
                break;
            }
        };
        iterations += 1;

        let (ki, kj) = cache.pair(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        // Q_ij = y_i y_j K_ij, Q_ii = Q_jj = 1 for the RBF kernel
        let q_ij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    SmoSolution {
        rho: compute_rho(&alpha, &grad, y, c),
        alpha,
        kkt_gap: gap,
        iterations,
        converged,
    }
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Trained RBF support vector classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub(crate) gamma: f64,
    pub(crate) support: Array2<f64>,
    /// `a_i y_i` per support vector.
    pub(crate) coef: Vec<f64>,
    pub(crate) rho: f64,
    pub(crate) platt_a: f64,
    pub(crate) platt_b: f64,
}

impl SvmModel {
    pub fn decision_value(&self, row: ArrayView1<f64>) -> f64 {
        self.support
            .rows()
            .into_iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, row, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    /// Platt probability of the Variant class for decision value `f`.
    pub fn platt(&self, f: f64) -> f64 {
        sigmoid_prob(self.platt_a, self.platt_b, f)
    }

    pub fn platt_params(&self) -> (f64, f64) {
        (self.platt_a, self.platt_b)
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }
}

/// Stable `1 / (1 + exp(a f + b))`.
pub fn sigmoid_prob(a: f64, b: f64, f: f64) -> f64 {
    let t = a * f + b;
    if t >= 0.0 {
        (-t).exp() / (1.0 + (-t).exp())
    } else {
        1.0 / (1.0 + t.exp())
    }
}

pub(crate) fn fit_raw(x: ArrayView2<f64>, y: &[Class], c: f64, gamma: f64, tol: f64) -> (SvmModel, SmoSolution) {
    let ys: Vec<f64> = y.iter().map(|c| c.sign()).collect();
    let sol = solve_smo(x, &ys, c, gamma, tol);
    let sv: Vec<usize> = (0..ys.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    let mut support = Array2::zeros((sv.len(), x.ncols()));
    for (r, &i) in sv.iter().enumerate() {
        support.row_mut(r).assign(&x.row(i));
    }
    let model = SvmModel {
        gamma,
        support,
        coef: sv.iter().map(|&i| sol.alpha[i] * ys[i]).collect(),
        rho: sol.rho,
        platt_a: 0.0,
        platt_b: 0.0,
    };
    (model, sol)
}

/// Fit Platt's sigmoid `P(Variant | f) = 1 / (1 + exp(A f + B))` by the
/// Newton method with backtracking of Lin, Lin and Weng.
pub fn fit_platt(dec: &[f64], y: &[Class]) -> (f64, f64) {
    let prior1 = y.iter().filter(|c| **c == Class::Variant).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|c| if *c == Class::Variant { hi } else { lo }).collect();
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);

    let fval_at = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(f, ti)| {
                let fapb = f * a + b;
                if fapb >= 0.0 {
                    ti * fapb + (1.0 + (-fapb).exp()).ln()
                } else {
                    (ti - 1.0) * fapb + (1.0 + fapb.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = fval_at(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (f, ti) in dec.iter().zip(&t) {
            let fapb = f * a + b;
            let (p, q) = if fapb >= 0.0 {
                let e = (-fapb).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fapb.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = fval_at(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_monotonicity() {
        assert_eq!(sigmoid_prob(-3.0, 0.0, 0.0), 0.5);
        let mut last = 0.0;
        for k in -50..=50 {
            let p = sigmoid_prob(-2.0, 0.3, k as f64 / 5.0);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn two_point_problem_has_closed_form() {
        // Two points, opposite labels: a_1 = a_2 and both are support vectors.
        let x = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let y = [-1.0, 1.0];
        let sol = solve_smo(x.view(), &y, 10.0, 1.0, 1e-3);
        assert!(sol.converged);
        assert!((sol.alpha[0] - sol.alpha[1]).abs() < 1e-12);
        // f(x) = a (k(x,1) - k(x,0)) - rho, symmetric margin: rho = 0 and
        // a (1 - e^-1) = 1.
        let expect = 1.0 / (1.0 - (-1.0f64).exp());
        assert!((sol.alpha[0] - expect).abs() < 1e-9, "{:?}", sol);
        assert!(sol.rho.abs() < 1e-9);
    }

    #[test]
    fn platt_recovers_orientation() {
        let dec: Vec<f64> = (-10..10).map(|k| k as f64 / 3.0).collect();
        let y: Vec<Class> = dec.iter().map(|d| if *d > 0.1 { Class::Variant } else { Class::Similar }).collect();
        let (a, _) = fit_platt(&dec, &y);
        assert!(a < 0.0);
    }
}
