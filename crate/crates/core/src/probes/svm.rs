//! Linear soft-margin SVM, one-vs-rest.
//!
//! Each binary problem minimizes `1/2 |w|^2 + C * sum hinge(1 - y (w.x + b))`
//! with an unregularized bias. The dual is solved by SMO with second-order
//! working-set selection on the linear Gram matrix; the stopping rule is the
//! primal-dual gap, with the bias re-optimized exactly for the primal value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

/// Standardizer fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population z-score per column. A constant column keeps scale 1 and is
    /// centred on its value, so it maps to exactly 0.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (m, s) = crate::stats::exact_mean_std(&col);
            mean[j] = m;
            if s > 0.0 && s.is_finite() {
                scale[j] = s;
            }
        }
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: u64,
    pub duality_gap: f64,
    pub gap_tolerance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub stats: SolverStats,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<String>,
    pub c: f64,
    pub models: Vec<BinarySvm>,
    /// All training rows were identical; every decision value is the class
    /// frequency and the prediction is the majority class.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal objective with the bias chosen optimally for the given scores
/// `s_i = w.x_i`, returned with that bias.
pub fn optimal_bias(scores: &[f64], y: &[f64]) -> (f64, f64) {
    let n_pos = y.iter().filter(|v| **v > 0.0).count();
    let mut breaks: Vec<f64> = scores.iter().zip(y).map(|(s, yi)| yi - s).collect();
    breaks.sort_by(f64::total_cmp);
    let b = match n_pos {
        0 => breaks[0] - 1.0,
        p if p == breaks.len() => breaks[p - 1] + 1.0,
        p => 0.5 * (breaks[p - 1] + breaks[p]),
    };
    (hinge_sum(scores, y, b), b)
}

pub fn hinge_sum(scores: &[f64], y: &[f64], b: f64) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, yi)| (1.0 - yi * (s + b)).max(0.0))
        .sum()
}

/// `1/2 |w|^2 + C * sum hinge` on the given rows.
pub fn primal_objective(w: &[f64], b: f64, x: &[&[f64]], y: &[f64], c: f64) -> f64 {
    let scores: Vec<f64> = x.iter().map(|r| dot(w, r)).collect();
    0.5 * dot(w, w) + c * hinge_sum(&scores, y, b)
}

/// Solves one binary problem with labels `y` in `{-1, +1}` on Gram matrix `k`.
pub fn train_binary(x: &[&[f64]], k: &[f64], y: &[f64], c: f64) -> BinarySvm {
    let n = y.len();
    let d = x.first().map_or(0, |r| r.len());
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let gap_tol = 1e-4 * c * n as f64;
    let max_iter = 100_000u64.saturating_mul(n as u64);
    let mut eps = 1e-3;
    let mut iterations = 0u64;

    let finish = |alpha: &[f64], iterations: u64| {
        let mut w = vec![0.0; d];
        for (i, a) in alpha.iter().enumerate() {
            if *a != 0.0 {
                for (wj, xj) in w.iter_mut().zip(x[i]) {
                    *wj += a * y[i] * xj;
                }
            }
        }
        let scores: Vec<f64> = x.iter().map(|r| dot(&w, r)).collect();
        let (h, b) = optimal_bias(&scores, y);
        let ww = dot(&w, &w);
        let gap = ww - alpha.iter().sum::<f64>() + c * h;
        (w, b, gap, iterations)
    };

    loop {
        while iterations < max_iter {
            // Maximal violating pair with second-order selection of j.
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..n {
                let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
                if up && -y[t] * grad[t] >= gmax {
                    gmax = -y[t] * grad[t];
                    i_sel = t;
                }
            }
            if i_sel == usize::MAX {
                break;
            }
            let i = i_sel;
            let mut gmax2 = f64::NEG_INFINITY;
            let mut j_sel = usize::MAX;
            let mut obj_min = f64::INFINITY;
            for t in 0..n {
                let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
                if !low {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let bgap = gmax + yg;
                if bgap > 0.0 {
                    let a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(bgap * bgap) / a;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
            if gmax + gmax2 < eps || j_sel == usize::MAX {
                break;
            }
            let j = j_sel;
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
                let quad = if quad > 0.0 { quad } else { TAU };
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
                let quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
                let quad = if quad > 0.0 { quad } else { TAU };
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
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }

        let (w, b, gap, iters) = finish(&alpha, iterations);
        let converged = gap <= gap_tol;
        if converged || iterations >= max_iter || eps < 1e-14 {
            return BinarySvm {
                w,
                b,
                stats: SolverStats {
                    iterations: iters,
                    duality_gap: gap,
                    gap_tolerance: gap_tol,
                    converged,
                },
            };
        }
        eps /= 10.0;
        // Fresh gradient to shed accumulated rounding before tightening.
        for t in 0..n {
            grad[t] = -1.0 + (0..n).map(|s| q(t, s) * alpha[s]).sum::<f64>();
        }
    }
}

pub fn gram(x: &[&[f64]]) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(x[i], x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// One-vs-rest training. `classes` fixes the class order; `y` indexes it.
pub fn svm_train(x: &[&[f64]], y: &[usize], classes: &[String], c: f64) -> Result<SvmModel> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("SVM C must be positive, got {c}")));
    }
    for (row, r) in x.iter().enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row, col });
        }
    }
    let mut present = vec![0usize; classes.len()];
    for &label in y {
        present[label] += 1;
    }
    if present.iter().filter(|n| **n > 0).count() < 2 {
        return Err(Error::SingleClass);
    }
    let d = x.first().map_or(0, |r| r.len());
    if x.iter().all(|r| *r == x[0]) {
        let n = y.len() as f64;
        let models = present
            .iter()
            .map(|&count| BinarySvm {
                w: vec![0.0; d],
                b: count as f64 / n,
                stats: SolverStats {
                    iterations: 0,
                    duality_gap: 0.0,
                    gap_tolerance: 0.0,
                    converged: true,
                },
            })
            .collect();
        return Ok(SvmModel {
            classes: classes.to_vec(),
            c,
            models,
            degenerate: true,
        });
    }
    let k = gram(x);
    let models = (0..classes.len())
        .map(|cls| {
            let yb: Vec<f64> = y.iter().map(|&l| if l == cls { 1.0 } else { -1.0 }).collect();
            train_binary(x, &k, &yb, c)
        })
        .collect();
    Ok(SvmModel {
        classes: classes.to_vec(),
        c,
        models,
        degenerate: false,
    })
}

impl SvmModel {
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        self.models.iter().map(|m| m.decision(x)).collect()
    }

    /// Argmax of the decision values; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.decision_values(x))
    }

    pub fn max_iterations(&self) -> u64 {
        self.models.iter().map(|m| m.stats.iterations).max().unwrap_or(0)
    }

    pub fn max_gap_ratio(&self) -> f64 {
        self.models
            .iter()
            .filter(|m| m.stats.gap_tolerance > 0.0)
            .map(|m| m.stats.duality_gap / m.stats.gap_tolerance)
            .fold(0.0, f64::max)
    }

    pub fn all_converged(&self) -> bool {
        self.models.iter().all(|m| m.stats.converged)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
