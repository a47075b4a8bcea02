//! Global PCA over pooled window snapshots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::window::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `components[k]` is the k-th unit axis, of length `n_features`.
    pub components: Vec<Vec<f64>>,
    /// Population variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Fits on all rows of all matrices. Zero total variance yields a model with
/// no components.
pub fn pca_fit(matrices: &[&FeatureMatrix]) -> Result<PcaModel> {
    let d = matrices.first().map_or(0, |m| m.n_cols);
    if let Some(m) = matrices.iter().find(|m| m.n_cols != d || m.layout != matrices[0].layout) {
        return Err(Error::LayoutMismatch(format!(
            "window {} s has {} features, expected {d}",
            m.window_start_s, m.n_cols
        )));
    }
    let n: usize = matrices.iter().map(|m| m.n_rows).sum();
    if n < 2 || d == 0 {
        return Err(Error::DegenerateSeries(format!(
            "PCA needs at least 2 rows and 1 feature, got {n} x {d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in matrices.iter().flat_map(|m| m.rows()) {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in matrices.iter().flat_map(|m| m.rows()) {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total_variance = cov.trace();
    if !(total_variance > 0.0) {
        return Ok(PcaModel {
            mean,
            components: Vec::new(),
            explained_variance: Vec::new(),
            total_variance: 0.0,
        });
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for k in order {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

/// `(x - mean) . components[k]` for `k < n_components`, one vector per row.
/// Components the model lacks project to 0.
pub fn pca_project(model: &PcaModel, features: &FeatureMatrix, n_components: usize) -> Result<Vec<Vec<f64>>> {
    if features.n_cols != model.n_features() {
        return Err(Error::LayoutMismatch(format!(
            "{} features, model has {}",
            features.n_cols,
            model.n_features()
        )));
    }
    Ok(features.rows().map(|r| project_row(model, r, n_components)).collect())
}

pub fn project_row(model: &PcaModel, row: &[f64], n_components: usize) -> Vec<f64> {
    (0..n_components)
        .map(|k| match model.components.get(k) {
            Some(axis) => row
                .iter()
                .zip(&model.mean)
                .zip(axis)
                .map(|((x, m), a)| (x - m) * a)
                .sum(),
            None => 0.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::window::FeatureSpan;
    use rand::Rng;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let n_cols = rows[0].len();
        FeatureMatrix {
            data: rows.concat(),
            n_rows: rows.len(),
            n_cols,
            trial_ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            labels: vec!["g".into(); rows.len()],
            window_start_s: 0.0,
            compensated: false,
            layout: (0..n_cols)
                .map(|k| FeatureSpan {
                    column: k as u8 + 1,
                    offset: k,
                    len: 1,
                })
                .collect(),
        }
    }

    /// Cyclic Jacobi rotations on a symmetric matrix; eigenpairs sorted by
    /// descending eigenvalue.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = a.len();
        let mut v: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        for _sweep in 0..100 {
            let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..d {
                for q in p + 1..d {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = c * vp - s * vq;
                        row[q] = s * vp + c * vq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
        let vals = order.iter().map(|&k| a[k][k]).collect();
        let vecs = order.iter().map(|&k| v.iter().map(|row| row[k]).collect()).collect();
        (vals, vecs)
    }

    fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n)
                    .collect()
            })
            .collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn line_has_single_component() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i), 2.0 * f64::from(i)]).collect();
        let m = pca_fit(&[&matrix(&rows)]).unwrap();
        assert!((m.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_cross() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let m = pca_fit(&[&matrix(&rows)]).unwrap();
        assert!((m.explained_variance[0] - m.explained_variance[1]).abs() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&m.components[i], &m.components[j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_data_is_rank_zero() {
        let rows = vec![vec![3.0, 1.0]; 4];
        let fm = matrix(&rows);
        let m = pca_fit(&[&fm]).unwrap();
        assert!(m.components.is_empty());
        assert_eq!(pca_project(&m, &fm, 2).unwrap(), vec![vec![0.0, 0.0]; 4]);
    }

    #[test]
    fn agrees_with_jacobi_oracle() {
        let mut rng = crate::rng::stream(5, &[]);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let m = pca_fit(&[&matrix(&rows)]).unwrap();
            let (vals, vecs) = jacobi_eigen(covariance(&rows));
            for k in 0..3 {
                assert!((m.explained_variance[k] - vals[k].max(0.0)).abs() < 1e-10);
                // Angle between one-dimensional subspaces.
                let cos = dot(&m.components[k], &vecs[k]).abs().min(1.0);
                assert!(cos.acos() < 1e-6, "component {k}: angle {}", cos.acos());
            }
        }
    }

    #[test]
    fn spectral_identities() {
        let mut rng = crate::rng::stream(9, &[]);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let (a, b) = rows.split_at(25);
        let (ma, mb) = (matrix(a), matrix(b));
        let m = pca_fit(&[&ma, &mb]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&m.components[i], &m.components[j]) - expect).abs() < 1e-8);
            }
            let pivot = m.components[i].iter().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { *x } else { acc });
            assert!(pivot > 0.0);
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let total: f64 = m.explained_variance.iter().sum();
        assert!((total - m.total_variance).abs() <= 1e-8 * m.total_variance);

        let proj: Vec<Vec<f64>> = [&ma, &mb].iter().flat_map(|f| pca_project(&m, f, 4).unwrap()).collect();
        let var1 = proj.iter().map(|p| p[0] * p[0]).sum::<f64>() / proj.len() as f64;
        assert!((var1 - m.explained_variance[0]).abs() < 1e-8);
        let d2 = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((d2(&rows[0], &rows[30]) - d2(&proj[0], &proj[30])).abs() < 1e-9);
        assert!(project_row(&m, &m.mean, 2).iter().all(|v| v.abs() < 1e-12));
    }
}
