//! Probability measures on finite alphabets and uniform 1-D grids.
//!
//! Total variation is the l1 convention throughout: `sum |p_i - q_i|`, which
//! equals the supremum of `|int f dp - int f dq|` over `|f| <= 1` and so lives
//! in `[0, 2]`.

use crate::error::{Error, Result};

/// Normalisation tolerance for finite probability vectors.
pub const FINITE_TOL: f64 = 1e-12;
/// Normalisation tolerance for grid densities (quadrature error accumulates).
pub const GRID_TOL: f64 = 1e-9;
/// Defects at or below this are rounding noise and are left untouched, so
/// that re-validating an already normalised vector is the identity.
pub const ROUNDING_TOL: f64 = 1e-14;

/// Probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    probs: Vec<f64>,
}

impl FiniteDistribution {
    /// Validates `probs`. A total-mass defect up to [`FINITE_TOL`] is removed by
    /// renormalising; anything larger is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}, expected a finite non-negative value"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > FINITE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, defect {:.3e} exceeds {FINITE_TOL:e}",
                (total - 1.0).abs()
            )));
        }
        let probs = if (total - 1.0).abs() <= ROUNDING_TOL {
            probs
        } else {
            probs.into_iter().map(|p| p / total).collect()
        };
        Ok(Self { probs })
    }

    /// Normalises an arbitrary non-negative weight vector with positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "weights have total {total}, cannot normalise"
            )));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn point_mass(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: index + 1,
            });
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution(
                "empty probability vector".into(),
            ));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Indices carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }
}

/// Uniform partition of `[lo, hi]` into `cells` equal cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDistribution(format!(
                "grid domain [{lo}, {hi}] is not a proper interval"
            )));
        }
        if cells < 2 {
            return Err(Error::InvalidDistribution(format!(
                "grid needs at least 2 cells, got {cells}"
            )));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.cell_width()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.cells).map(move |i| self.center(i))
    }

    /// Left and right edge of cell `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let h = self.cell_width();
        (self.lo + i as f64 * h, self.lo + (i + 1) as f64 * h)
    }

    /// Cell containing `x`, if `x` lies in `[lo, hi]`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(self.lo..=self.hi).contains(&x) {
            return None;
        }
        let i = ((x - self.lo) / self.cell_width()).floor() as usize;
        Some(i.min(self.cells - 1))
    }
}

/// Piecewise-constant density on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridDensity {
    /// Validates density heights on `grid`; renormalises within [`GRID_TOL`].
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells {
            return Err(Error::DimensionMismatch {
                expected: grid.cells,
                found: values.len(),
            });
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "density value {v} at cell {i}"
            )));
        }
        let h = grid.cell_width();
        let mass: f64 = values.iter().sum::<f64>() * h;
        if (mass - 1.0).abs() > GRID_TOL {
            return Err(Error::InvalidDistribution(format!(
                "grid density integrates to {mass}, defect {:.3e} exceeds {GRID_TOL:e}",
                (mass - 1.0).abs()
            )));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self { grid, values })
    }

    /// Density proportional to the cell masses `masses`.
    pub fn from_cell_masses(grid: GridSpec, masses: &[f64]) -> Result<Self> {
        let h = grid.cell_width();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "cell masses have total {total}"
            )));
        }
        Self::new(grid, masses.iter().map(|m| m / (total * h)).collect())
    }

    /// Samples a non-negative function at the cell centres and normalises.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let masses: Vec<f64> = grid.centers().map(f).collect();
        Self::from_cell_masses(grid, &masses)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Probability carried by each cell, as a finite distribution.
    pub fn cell_masses(&self) -> FiniteDistribution {
        let h = self.grid.cell_width();
        let masses: Vec<f64> = self.values.iter().map(|v| v * h).collect();
        FiniteDistribution::from_weights(&masses).expect("grid density has unit mass")
    }

    fn check_domain(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::DomainMismatch {
                lo_a: self.grid.lo,
                hi_a: self.grid.hi,
                cells_a: self.grid.cells,
                lo_b: other.grid.lo,
                hi_b: other.grid.hi,
                cells_b: other.grid.cells,
            });
        }
        Ok(())
    }
}

/// Non-negative measure with total mass in `[0, 1]`, such as an
/// un-normalised Bayes update.
#[derive(Debug, Clone, PartialEq)]
pub struct SubProbability {
    values: Vec<f64>,
    cell_width: f64,
    mass: f64,
}

impl SubProbability {
    /// Finite sub-probability with point weights `values`.
    pub fn finite(values: Vec<f64>) -> Result<Self> {
        Self::with_cell_width(values, 1.0)
    }

    /// Grid sub-probability with density heights `values` on cells of width `h`.
    pub fn with_cell_width(values: Vec<f64>, cell_width: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(
                "sub-probability entries must be finite and non-negative".into(),
            ));
        }
        let mass = values.iter().sum::<f64>() * cell_width;
        if mass > 1.0 + FINITE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "sub-probability mass {mass} exceeds 1"
            )));
        }
        Ok(Self {
            values,
            cell_width,
            mass: mass.min(1.0),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Normalised version as cell/point masses, or `None` for the zero measure.
    pub fn normalize(&self) -> Option<FiniteDistribution> {
        if self.mass <= 0.0 {
            return None;
        }
        let masses: Vec<f64> = self.values.iter().map(|v| v * self.cell_width).collect();
        FiniteDistribution::from_weights(&masses).ok()
    }
}

/// Measures that admit a total variation distance to one another.
pub trait TotalVariation {
    fn tv_distance(&self, other: &Self) -> Result<f64>;
}

impl TotalVariation for FiniteDistribution {
    fn tv_distance(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        Ok(l1(&self.probs, &other.probs))
    }
}

impl TotalVariation for GridDensity {
    fn tv_distance(&self, other: &Self) -> Result<f64> {
        self.check_domain(other)?;
        Ok(l1(&self.values, &other.values) * self.grid.cell_width())
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Total variation distance in the l1 convention, range `[0, 2]`.
pub fn tv_distance<M: TotalVariation>(p: &M, q: &M) -> Result<f64> {
    p.tv_distance(q)
}

/// Hilbert projective metric between finite distributions.
///
/// Finite vectors are comparable exactly when their supports coincide; the
/// metric is then `log(max p/q * max q/p)` over the support and `+inf`
/// otherwise.
pub fn hilbert_metric(p: &FiniteDistribution, q: &FiniteDistribution) -> f64 {
    if p.len() != q.len() {
        return f64::INFINITY;
    }
    if p.probs == q.probs {
        return 0.0;
    }
    let mut max_pq: f64 = 0.0;
    let mut max_qp: f64 = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        match (a > 0.0, b > 0.0) {
            (true, true) => {
                max_pq = max_pq.max(a / b);
                max_qp = max_qp.max(b / a);
            }
            (false, false) => {}
            _ => return f64::INFINITY,
        }
    }
    (max_pq * max_qp).ln()
}

/// `true` iff `q_i = 0` implies `p_i = 0` for every index.
pub fn is_absolutely_continuous(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<bool> {
    p.check_len(q)?;
    Ok(first_violation(p, q).is_none())
}

fn first_violation(p: &FiniteDistribution, q: &FiniteDistribution) -> Option<(usize, f64)> {
    p.probs
        .iter()
        .zip(&q.probs)
        .enumerate()
        .find(|(_, (a, b))| **a > 0.0 && **b == 0.0)
        .map(|(i, (a, _))| (i, *a))
}

/// Errors with the first index where `p` has mass and `q` does not.
pub fn require_absolutely_continuous(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
    p.check_len(q)?;
    match first_violation(p, q) {
        Some((index, mass)) => Err(Error::NotAbsolutelyContinuous { index, mass }),
        None => Ok(()),
    }
}

/// Density `dp/dq`, set to zero off the support of `q`.
pub fn radon_nikodym(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<Vec<f64>> {
    require_absolutely_continuous(p, q)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
        .collect())
}
