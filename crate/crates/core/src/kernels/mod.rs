//! Markov kernels: row-stochastic matrices on finite alphabets and 1-D
//! additive-Gaussian kernels, with their Dobrushin coefficients.
//!
//! The Dobrushin coefficient of a kernel `K` is
//! `inf_{x, x'} sum_k min(K(x, A_k), K(x', A_k))` over partitions `{A_k}`. It
//! lies in `[0, 1]` and `1 - delta(K)` is a total variation contraction factor
//! for `K` acting on measures.

mod gaussian;
pub mod normal;

pub use gaussian::{
    apply_gaussian_kernel, DiscretizedKernel, Gaussian1DKernel, MeanFunction, Pushforward,
};

use crate::error::{Error, Result};
use crate::measures::{FiniteDistribution, FINITE_TOL, ROUNDING_TOL};

/// Row-stochastic `rows x cols` matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl StochasticMatrix {
    /// Builds from explicit rows. Row-sum defects up to [`FINITE_TOL`] are
    /// renormalised away; larger defects are rejected.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidKernel("matrix has no rows".into()));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::InvalidKernel("matrix has no columns".into()));
        }
        let mut entries = Vec::with_capacity(n * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidKernel(format!(
                    "row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            entries.extend(normalize_row(i, row)?);
        }
        Ok(Self {
            rows: n,
            cols: m,
            entries,
        })
    }

    /// Builds from a row-major buffer.
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::InvalidKernel(format!(
                "buffer of {} entries does not form a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Self::from_rows(entries.chunks(cols).map(<[f64]>::to_vec).collect())
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_rows(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Every row equal to `row`.
    pub fn constant_rows(n: usize, row: &FiniteDistribution) -> Result<Self> {
        Self::from_rows(vec![row.probs().to_vec(); n])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row_vectors(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.cols)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// Conditional law `K(i, .)` as a distribution.
    pub fn conditional(&self, i: usize) -> FiniteDistribution {
        FiniteDistribution::new(self.row(i).to_vec()).expect("rows are validated")
    }

    /// Dobrushin coefficient: the smallest row-pair overlap
    /// `sum_k min(K_ik, K_jk)`. A single-row matrix has coefficient 1.
    pub fn dobrushin(&self) -> f64 {
        let mut best = 1.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.rows {
                let overlap: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a.min(*b))
                    .sum();
                best = best.min(overlap);
            }
        }
        best.clamp(0.0, 1.0)
    }

    /// Pushforward `p^T K` of a distribution over the rows.
    pub fn apply(&self, p: &FiniteDistribution) -> Result<FiniteDistribution> {
        if p.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: p.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &w) in p.probs().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(self.row(i)) {
                *o += w * k;
            }
        }
        FiniteDistribution::from_weights(&out)
    }

    /// Checks the two-sided mixing sandwich `eps * lambda_j <= K_ij <= lambda_j / eps`.
    ///
    /// A finite kernel can only be mixing if every column is either entirely
    /// zero or entirely positive; `None` is returned otherwise. The reference
    /// measure is the column mean of `K`, so the returned `epsilon` is a lower
    /// bound on the best coefficient over all reference measures.
    pub fn mixing_coefficient(&self) -> Option<MixingCertificate> {
        let n = self.rows as f64;
        let mut reference = Vec::with_capacity(self.cols);
        for j in 0..self.cols {
            let positive = (0..self.rows).filter(|&i| self.entry(i, j) > 0.0).count();
            if positive != 0 && positive != self.rows {
                return None;
            }
            reference.push((0..self.rows).map(|i| self.entry(i, j)).sum::<f64>() / n);
        }
        let mut epsilon = 1.0f64;
        for j in (0..self.cols).filter(|&j| reference[j] > 0.0) {
            let lambda = reference[j];
            for i in 0..self.rows {
                let k = self.entry(i, j);
                epsilon = epsilon.min(k / lambda).min(lambda / k);
            }
        }
        Some(MixingCertificate { epsilon, reference })
    }
}

fn normalize_row(i: usize, row: Vec<f64>) -> Result<Vec<f64>> {
    if let Some((j, v)) = row
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidKernel(format!(
            "entry ({i}, {j}) is {v}, expected a finite non-negative value"
        )));
    }
    let total: f64 = row.iter().sum();
    let defect = (total - 1.0).abs();
    if defect > FINITE_TOL {
        return Err(Error::InvalidKernel(format!(
            "row {i} sums to {total} (defect {defect:.3e})"
        )));
    }
    Ok(if defect <= ROUNDING_TOL {
        row
    } else {
        row.into_iter().map(|v| v / total).collect()
    })
}

/// Witness that a finite kernel satisfies the mixing sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingCertificate {
    pub epsilon: f64,
    /// Reference measure (column means of the kernel).
    pub reference: Vec<f64>,
}

impl MixingCertificate {
    /// Re-verifies the sandwich inequality entrywise against `k`.
    pub fn verify(&self, k: &StochasticMatrix) -> bool {
        let eps = self.epsilon;
        (0..k.rows()).all(|i| {
            self.reference.iter().enumerate().all(|(j, &lambda)| {
                let v = k.entry(i, j);
                eps * lambda <= v * (1.0 + 1e-12) && v <= lambda / eps * (1.0 + 1e-12)
            })
        })
    }
}

/// Dobrushin coefficient of a finite kernel.
pub fn dobrushin_finite(k: &StochasticMatrix) -> f64 {
    k.dobrushin()
}

/// Pushforward of `p` through `k`.
pub fn apply_kernel(k: &StochasticMatrix, p: &FiniteDistribution) -> Result<FiniteDistribution> {
    k.apply(p)
}

pub fn mixing_coefficient(k: &StochasticMatrix) -> Option<MixingCertificate> {
    k.mixing_coefficient()
}
