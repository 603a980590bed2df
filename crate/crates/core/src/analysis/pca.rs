use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::from_minimal;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Scalings of `sqrt(lambda_i)` used for principal-component perturbations.
pub const PERTURB_SCALES: [f64; 4] = [3.0, 1.0, -1.0, -3.0];

/// Sample mean and the positive part of the sample-covariance eigendecomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Descending, all positive.
    pub eigenvalues: Vec<f64>,
    /// One unit vector per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
}

fn check_rows(samples: &[Vec<f64>]) -> Result<usize> {
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidArgument("samples must be non-empty and of equal dimension".into()));
    }
    Ok(d)
}

/// Unbiased sample covariance.
pub fn covariance(samples: &[Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = check_rows(samples)?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    Ok((mean, cov))
}

pub fn pca_fit(samples: &[Vec<f64>]) -> Result<PcaModel> {
    let (mean, cov) = covariance(samples)?;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if top <= 0.0 {
        return Err(Error::InvalidArgument("samples have no variance".into()));
    }
    let keep: Vec<usize> = order.into_iter().filter(|&k| eig.eigenvalues[k] > RANK_TOLERANCE * top).collect();
    Ok(PcaModel {
        mean,
        eigenvalues: keep.iter().map(|&k| eig.eigenvalues[k]).collect(),
        eigenvectors: keep.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect(),
    })
}

/// `100 * sum(lambda[..p]) / sum(lambda)`.
pub fn cpv(lambda: &[f64], p: usize) -> Result<f64> {
    if p == 0 || p > lambda.len() {
        return Err(Error::InvalidArgument(format!("p = {p} outside 1..={}", lambda.len())));
    }
    let total: f64 = lambda.iter().sum();
    Ok(100.0 * lambda[..p].iter().sum::<f64>() / total)
}

/// CPV for every `p` in `1..=r`.
pub fn cpv_curve(lambda: &[f64]) -> Vec<f64> {
    let total: f64 = lambda.iter().sum();
    let mut acc = 0.0;
    lambda
        .iter()
        .map(|l| {
            acc += l;
            100.0 * acc / total
        })
        .collect()
}

/// Area under a CPV curve as a percentage: the mean of its values.
pub fn curve_auc(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// `p,cpv` rows.
pub fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("p,cpv\n");
    for (i, v) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", i + 1);
    }
    s
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Layout {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `V^T (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self
            .eigenvectors
            .iter()
            .map(|v| v.iter().zip(x.iter().zip(&self.mean)).map(|(a, (b, m))| a * (b - m)).sum())
            .collect())
    }

    /// `mean + V z`.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.rank() {
            return Err(Error::Layout {
                expected: self.rank(),
                actual: z.len(),
            });
        }
        let mut x = self.mean.clone();
        for (v, &w) in self.eigenvectors.iter().zip(z) {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
        }
        Ok(x)
    }

    /// `V diag(lambda) V^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for (v, &l) in self.eigenvectors.iter().zip(&self.eigenvalues) {
            let v = DVector::from_column_slice(v);
            c += l * &v * v.transpose();
        }
        c
    }

    pub fn cpv(&self, p: usize) -> Result<f64> {
        cpv(&self.eigenvalues, p)
    }

    pub fn cpv_curve(&self) -> Vec<f64> {
        cpv_curve(&self.eigenvalues)
    }

    /// Fraction of another dataset's squared deviation from this mean captured by the first
    /// `p` components, for every `p`.
    pub fn cross_cpv(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_rows(samples)?;
        let mut per = vec![0.0; self.rank()];
        let mut total = 0.0;
        for s in samples {
            self.check_dim(s)?;
            total += s.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>();
            for (acc, z) in per.iter_mut().zip(self.project(s)?) {
                *acc += z * z;
            }
        }
        if total == 0.0 {
            return Err(Error::InvalidArgument("samples coincide with the model mean".into()));
        }
        let mut acc = 0.0;
        Ok(per
            .iter()
            .map(|v| {
                acc += v;
                100.0 * acc / total
            })
            .collect())
    }

    /// `mean + scale sqrt(lambda_i) v_i` in the minimal layout; `i` counts from 0.
    pub fn perturb(&self, i: usize, scale: f64) -> Result<Vec<f64>> {
        if i >= self.rank() {
            return Err(Error::InvalidArgument(format!("component {i} outside rank {}", self.rank())));
        }
        let w = scale * self.eigenvalues[i].sqrt();
        Ok(self.mean.iter().zip(&self.eigenvectors[i]).map(|(m, v)| m + w * v).collect())
    }

    /// Draws from `N(mean, V diag(lambda) V^T)` in the minimal layout.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let z: Vec<f64> = self
                    .eigenvalues
                    .iter()
                    .map(|l| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        l.sqrt() * e
                    })
                    .collect();
                self.reconstruct(&z).expect("rank-sized weights")
            })
            .collect()
    }

    /// [`PcaModel::perturb`] lifted to the full logit layout, with `eta = 1`.
    pub fn perturb_logits(&self, i: usize, scale: f64) -> Result<Vec<f64>> {
        from_minimal(&self.perturb(i, scale)?)
    }

    /// [`PcaModel::sample`] lifted to the full logit layout, with `eta = 1`.
    pub fn sample_logits(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.sample(count, seed).iter().map(|m| from_minimal(m)).collect()
    }
}
