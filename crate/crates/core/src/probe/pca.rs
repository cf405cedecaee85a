//! Linear and kernel PCA baselines.

use serde::{Deserialize, Serialize};

use super::linalg::jacobi_eigen;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Cosine,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Cosine => {
                let n = (dot(a, a) * dot(b, b)).sqrt();
                if n > 0.0 {
                    dot(a, b) / n
                } else {
                    0.0
                }
            }
            Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest training set used to fit the eigenproblem.
pub const MAX_FIT_ROWS: usize = 500;

/// Fitted projection onto the leading components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pca {
    /// Covariance eigenvectors (`d x dim`, row-major) around `mean`.
    Linear { mean: Vec<f64>, components: Vec<f64>, d: usize, dim: usize },
    /// Kernel eigenvectors scaled by `1/sqrt(λ)`, with the training rows and
    /// centering statistics needed for out-of-sample projection.
    Kernel {
        kernel: Kernel,
        train: Vec<f64>,
        d: usize,
        dim: usize,
        alphas: Vec<f64>,
        row_means: Vec<f64>,
        total_mean: f64,
    },
}

/// Strided subsample of at most `max` rows.
fn subsample(x: &[f64], d: usize, max: usize) -> Vec<f64> {
    let rows = x.len() / d;
    let stride = rows.div_ceil(max).max(1);
    (0..rows).step_by(stride).flat_map(|i| x[i * d..(i + 1) * d].iter().copied()).collect()
}

impl Pca {
    /// Fits `dim` components. Linear PCA with `d > MAX_FIT_ROWS` falls back
    /// to the equivalent linear-kernel form.
    pub fn fit(x: &[f64], d: usize, dim: usize, kernel: Kernel) -> Result<Self> {
        if d == 0 || x.len() % d != 0 || x.is_empty() {
            bail!(Dimension, "cannot fit PCA on {} values as rows of {d}", x.len());
        }
        let x = subsample(x, d, MAX_FIT_ROWS);
        let rows = x.len() / d;
        if dim == 0 || dim > rows {
            bail!(Config, "PCA dim {dim} must lie in 1..={rows} (training rows)");
        }
        if matches!(kernel, Kernel::Linear) && d <= MAX_FIT_ROWS {
            if dim > d {
                bail!(Config, "PCA dim {dim} exceeds feature dim {d}");
            }
            let mut mean = vec![0.0; d];
            for r in x.chunks(d) {
                mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / rows as f64);
            }
            let mut cov = vec![0.0; d * d];
            for r in x.chunks(d) {
                let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
                for i in 0..d {
                    for j in 0..=i {
                        cov[i * d + j] += c[i] * c[j];
                    }
                }
            }
            for i in 0..d {
                for j in 0..i {
                    cov[j * d + i] = cov[i * d + j];
                }
            }
            let e = jacobi_eigen(&cov, d)?;
            let mut components = vec![0.0; d * dim];
            for i in 0..d {
                for j in 0..dim {
                    components[i * dim + j] = e.vectors[i * d + j];
                }
            }
            return Ok(Pca::Linear { mean, components, d, dim });
        }
        Self::fit_kernel(x, d, dim, kernel)
    }

    fn fit_kernel(x: Vec<f64>, d: usize, dim: usize, kernel: Kernel) -> Result<Self> {
        let n = x.len() / d;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let row_means: Vec<f64> = k.chunks(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let total_mean = row_means.iter().sum::<f64>() / n as f64;
        let mut kc = k;
        for i in 0..n {
            for j in 0..n {
                kc[i * n + j] += total_mean - row_means[i] - row_means[j];
            }
        }
        let e = jacobi_eigen(&kc, n)?;
        let mut alphas = vec![0.0; n * dim];
        for j in 0..dim {
            let lam = e.values[j];
            let s = if lam > 1e-12 { 1.0 / lam.sqrt() } else { 0.0 };
            for i in 0..n {
                alphas[i * dim + j] = e.vectors[i * n + j] * s;
            }
        }
        Ok(Pca::Kernel {
            kernel,
            train: x,
            d,
            dim,
            alphas,
            row_means,
            total_mean,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Pca::Linear { dim, .. } | Pca::Kernel { dim, .. } => *dim,
        }
    }

    /// Projects rows of width `d` onto the components.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Pca::Linear { mean, components, d, dim } => {
                if x.len() % d != 0 {
                    bail!(Dimension, "PCA input is not a whole number of rows of {d}");
                }
                Ok(x.chunks(*d)
                    .flat_map(|r| {
                        let c: Vec<f64> = r.iter().zip(mean).map(|(v, m)| v - m).collect();
                        (0..*dim).map(move |j| (0..*d).map(|i| c[i] * components[i * dim + j]).sum::<f64>())
                    })
                    .collect())
            }
            Pca::Kernel {
                kernel,
                train,
                d,
                dim,
                alphas,
                row_means,
                total_mean,
            } => {
                if x.len() % d != 0 {
                    bail!(Dimension, "PCA input is not a whole number of rows of {d}");
                }
                let n = row_means.len();
                Ok(x.chunks(*d)
                    .flat_map(|r| {
                        let kx: Vec<f64> = train.chunks(*d).map(|t| kernel.eval(r, t)).collect();
                        let kmean = kx.iter().sum::<f64>() / n as f64;
                        let kc: Vec<f64> = kx.iter().zip(row_means).map(|(k, m)| k - m - kmean + total_mean).collect();
                        (0..*dim).map(move |j| (0..n).map(|i| kc[i] * alphas[i * dim + j]).sum::<f64>())
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_components() {
        // variance 9 on axis 1, 1 on axis 0, 0.01 on axis 2
        let mut x = Vec::new();
        for i in 0..40 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let t = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let u = if (i / 4) % 2 == 0 { 1.0 } else { -1.0 };
            x.extend([t * 1.0, s * 3.0, u * 0.1]);
        }
        let Pca::Linear { components, .. } = Pca::fit(&x, 3, 2, Kernel::Linear).unwrap() else {
            panic!("expected linear");
        };
        assert!((components[2].abs() - 1.0).abs() < 1e-12);
        assert!((components[1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn low_rank_distances_are_preserved() {
        // rank-2 data embedded in 4 dims
        let rows: Vec<[f64; 2]> = (0..30).map(|i| [(i as f64 * 0.7).sin(), (i as f64 * 0.3).cos() * 2.0]).collect();
        let embed = |p: &[f64; 2]| [p[0] + p[1], p[0] - p[1], 2.0 * p[0], 0.5 * p[1]];
        let x: Vec<f64> = rows.iter().flat_map(embed).collect();
        for kernel in [Kernel::Linear] {
            let pca = Pca::fit(&x, 4, 2, kernel).unwrap();
            let z = pca.transform(&x).unwrap();
            for i in 0..30 {
                for j in 0..30 {
                    let dx: f64 = (0..4).map(|k| (x[i * 4 + k] - x[j * 4 + k]).powi(2)).sum();
                    let dz: f64 = (0..2).map(|k| (z[i * 2 + k] - z[j * 2 + k]).powi(2)).sum();
                    assert!((dx - dz).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn linear_kernel_matches_covariance_form() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 13 % 17) as f64 - 8.0) / 4.0 + (i % 3) as f64).collect();
        let lin = Pca::fit(&x, 3, 2, Kernel::Linear).unwrap().transform(&x).unwrap();
        let ker = Pca::fit_kernel(x.clone(), 3, 2, Kernel::Linear).unwrap().transform(&x).unwrap();
        for j in 0..2 {
            let sign = (lin[j] * ker[j]).signum();
            for i in 0..20 {
                assert!((lin[i * 2 + j] - sign * ker[i * 2 + j]).abs() < 1e-8);
            }
        }
        assert!(Pca::fit(&x, 3, 21, Kernel::Cosine).is_err());
        let rbf = Pca::fit(&x, 3, 5, Kernel::Rbf { gamma: 1.0 / 3.0 }).unwrap();
        assert_eq!(rbf.transform(&x[..6]).unwrap().len(), 10);
    }
}
