//! Closed-form ridge regression with an unpenalized intercept.

use serde::{Deserialize, Serialize};

use super::linalg::cholesky_solve;
use super::metrics::r2_score;
use crate::error::{bail, Result};

/// 13 log-spaced penalties over `[1e-5, 1e3]`.
pub fn alpha_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-5.0 + 8.0 * k as f64 / 12.0)).collect()
}

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], d: usize) -> Result<Self> {
        if d == 0 || x.len() % d != 0 || x.is_empty() {
            bail!(Dimension, "cannot standardize {} values as rows of {d}", x.len());
        }
        let n = (x.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for row in x.chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.chunks(d) {
            var.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2));
        }
        let scale = var.into_iter().map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Ok(Self {
            mean,
            scale: scale.collect(),
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.chunks(d)
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    pub standardizer: Standardizer,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let d = self.coef.len();
        self.standardizer
            .apply(x)
            .chunks(d)
            .map(|row| row.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>() + self.intercept)
            .collect()
    }
}

/// Minimizes `‖X r + c − t‖² + α‖r‖²` on already transformed features.
pub fn ridge_solve(x: &[f64], t: &[f64], d: usize, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if d == 0 || x.len() != t.len() * d {
        bail!(Dimension, "ridge: {} feature values for {} targets of width {d}", x.len(), t.len());
    }
    if t.is_empty() {
        bail!(Data, "ridge: no training rows");
    }
    if !(alpha > 0.0) {
        bail!(Config, "ridge penalty must be positive, got {alpha}");
    }
    let p = d + 1;
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for (row, &y) in x.chunks(d).zip(t) {
        for i in 0..d {
            let xi = row[i];
            for j in 0..=i {
                a[i * p + j] += xi * row[j];
            }
            a[i * p + d] += xi;
            b[i] += xi * y;
        }
        b[d] += y;
    }
    a[d * p + d] = t.len() as f64;
    for i in 0..d {
        for j in 0..i {
            a[j * p + i] = a[i * p + j];
        }
        a[d * p + i] = a[i * p + d];
        a[i * p + i] += alpha;
    }
    let sol = cholesky_solve(&a, &b, p)?;
    Ok((sol[..d].to_vec(), sol[d]))
}

/// Fits every penalty of `grid` on the training rows and keeps the one with
/// the best validation R².
pub fn ridge_fit(
    x_train: &[f64],
    t_train: &[f64],
    x_val: &[f64],
    t_val: &[f64],
    d: usize,
    grid: &[f64],
    standardize: bool,
) -> Result<RidgeModel> {
    if grid.is_empty() {
        bail!(Config, "empty penalty grid");
    }
    let standardizer = if standardize {
        Standardizer::fit(x_train, d)?
    } else {
        Standardizer::identity(d)
    };
    let xs = standardizer.apply(x_train);
    let mut best: Option<(f64, RidgeModel)> = None;
    for &alpha in grid {
        let (coef, intercept) = ridge_solve(&xs, t_train, d, alpha)?;
        let model = RidgeModel {
            coef,
            intercept,
            alpha,
            standardizer: standardizer.clone(),
        };
        let score = if t_val.len() >= 2 {
            r2_score(&model.predict(x_val), t_val)?
        } else {
            f64::NAN
        };
        // NaN scores (constant validation targets) keep the first penalty
        let better = match &best {
            None => true,
            Some((s, _)) => score > *s || (s.is_nan() && !score.is_nan()),
        };
        if better {
            best = Some((score, model));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = alpha_grid();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 1e-5).abs() < 1e-18);
        assert!((g[12] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn orthonormal_design_is_near_ols() {
        // 4 rows, 2 orthonormal centered columns
        let x = [0.5, 0.5, 0.5, -0.5, -0.5, 0.5, -0.5, -0.5];
        let t = [3.0, 1.0, 2.0, 0.0];
        let (r, c) = ridge_solve(&x, &t, 2, 1e-5).unwrap();
        let xt: Vec<f64> = (0..2).map(|j| (0..4).map(|i| x[i * 2 + j] * t[i]).sum()).collect();
        assert!((r[0] - xt[0]).abs() < 1e-4 && (r[1] - xt[1]).abs() < 1e-4);
        assert!((c - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_targets() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0];
        let t = [2.0; 3];
        let m = ridge_fit(&x, &t, &x, &t, 2, &alpha_grid(), true).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() < 1e-9));
        assert!((m.intercept - 2.0).abs() < 1e-12);
    }
}
