use super::normal::{normal_pdf, std_normal_interval};
use super::StochasticMatrix;
use crate::error::{Error, Result};
use crate::measures::{GridDensity, GridSpec};
use libm::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

/// Pushforward mass lost off the output grid above which we refuse to renormalise.
pub const TRUNCATION_LIMIT: f64 = 1e-3;

/// Bounded mean functions with an exact sup-norm bound.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanFunction {
    /// `clamp(a * x + b, -clip, clip)`.
    Affine { a: f64, b: f64, clip: f64 },
    /// `amplitude * sin(frequency * x + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `scale * tanh(gain * x)`.
    Tanh { scale: f64, gain: f64 },
    /// Piecewise-linear interpolation through `(xs[i], ys[i])`, constant outside.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

impl MeanFunction {
    /// Checks parameter sanity; a valid mean function evaluates to a finite
    /// value everywhere.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite, got {v}"))
            }
        };
        match self {
            MeanFunction::Affine { a, b, clip } => {
                finite("a", *a)?;
                finite("b", *b)?;
                finite("clip", *clip)?;
                if *clip < 0.0 {
                    return Err(format!("clip must be non-negative, got {clip}"));
                }
            }
            MeanFunction::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                finite("amplitude", *amplitude)?;
                finite("frequency", *frequency)?;
                finite("phase", *phase)?;
            }
            MeanFunction::Tanh { scale, gain } => {
                finite("scale", *scale)?;
                finite("gain", *gain)?;
            }
            MeanFunction::Table { xs, ys } => {
                if xs.is_empty() || xs.len() != ys.len() {
                    return Err(format!(
                        "table needs matching non-empty xs and ys, got {} and {}",
                        xs.len(),
                        ys.len()
                    ));
                }
                for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                    finite(&format!("xs[{i}]"), *x)?;
                    finite(&format!("ys[{i}]"), *y)?;
                }
                if xs.windows(2).any(|w| w[0] >= w[1]) {
                    return Err("table xs must be strictly increasing".into());
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            MeanFunction::Affine { a, b, clip } => (a * x + b).clamp(-clip, *clip),
            MeanFunction::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).sin(),
            MeanFunction::Tanh { scale, gain } => scale * (gain * x).tanh(),
            MeanFunction::Table { xs, ys } => {
                let last = xs.len() - 1;
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= xs[last] {
                    return ys[last];
                }
                let i = xs.partition_point(|&v| v <= x) - 1;
                let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + t * (ys[i + 1] - ys[i])
            }
        }
    }

    /// `sup_x |m(x)|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            MeanFunction::Affine { a, b, clip } => {
                if *a != 0.0 {
                    *clip
                } else {
                    b.abs().min(*clip)
                }
            }
            MeanFunction::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                if *frequency != 0.0 {
                    amplitude.abs()
                } else {
                    (amplitude * phase.sin()).abs()
                }
            }
            MeanFunction::Tanh { scale, gain } => {
                if *gain != 0.0 {
                    scale.abs()
                } else {
                    0.0
                }
            }
            MeanFunction::Table { ys, .. } => ys.iter().fold(0.0, |acc, y| acc.max(y.abs())),
        }
    }
}

/// Kernel `x -> N(m(x), sigma^2)` with `|m| <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian1DKernel {
    mean_fn: MeanFunction,
    sigma: f64,
    bound: f64,
}

impl Gaussian1DKernel {
    /// Uses the exact sup-norm of `mean_fn` as the bound.
    pub fn new(mean_fn: MeanFunction, sigma: f64) -> Result<Self> {
        mean_fn.validate().map_err(Error::InvalidKernel)?;
        let bound = mean_fn.sup_bound();
        Self::with_bound(mean_fn, sigma, bound)
    }

    /// Uses a caller-certified `bound`, spot-checked on a dense grid.
    pub fn with_bound(mean_fn: MeanFunction, sigma: f64, bound: f64) -> Result<Self> {
        mean_fn.validate().map_err(Error::InvalidKernel)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "bound must be non-negative and finite, got {bound}"
            )));
        }
        const SPOT_CHECKS: usize = 10_001;
        for i in 0..SPOT_CHECKS {
            let x = -100.0 + 200.0 * i as f64 / (SPOT_CHECKS - 1) as f64;
            let v = mean_fn.eval(x);
            if v.abs() > bound * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::InvalidKernel(format!(
                    "|m({x})| = {} exceeds the certified bound {bound}",
                    v.abs()
                )));
            }
        }
        Ok(Self {
            mean_fn,
            sigma,
            bound,
        })
    }

    pub fn mean_fn(&self) -> &MeanFunction {
        &self.mean_fn
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `sigma / bound`; infinite for a zero bound.
    pub fn noise_ratio(&self) -> f64 {
        self.sigma / self.bound
    }

    /// `2 * Phi(-bound / sigma)`: the overlap of `N(bound, sigma^2)` and
    /// `N(-bound, sigma^2)`, which is the least overlapping conditional pair.
    pub fn dobrushin_analytic(&self) -> f64 {
        erfc(self.bound / self.sigma * FRAC_1_SQRT_2)
    }

    /// Composite-trapezoid quadrature of `min(N(b, s^2), N(-b, s^2))` over
    /// `[-b - 8s, b + 8s]`. The interval count is rounded up to even so the
    /// kink at the origin falls on a node.
    pub fn dobrushin_overlap_numeric(&self, quad_points: usize) -> Result<f64> {
        if quad_points < 1000 {
            return Err(Error::Contract(format!(
                "overlap quadrature needs at least 1000 points, got {quad_points}"
            )));
        }
        let intervals = quad_points + quad_points % 2;
        let (b, s) = (self.bound, self.sigma);
        let (lo, hi) = (-b - 8.0 * s, b + 8.0 * s);
        let h = (hi - lo) / intervals as f64;
        let overlap = |x: f64| normal_pdf(x, b, s).min(normal_pdf(x, -b, s));
        let interior: f64 = (1..intervals).map(|i| overlap(lo + i as f64 * h)).sum();
        Ok(h * (interior + 0.5 * (overlap(lo) + overlap(hi))))
    }

    /// Cell-to-cell transition masses from the centres of `input` onto the
    /// cells of `output`.
    pub fn discretize(&self, input: &GridSpec, output: &GridSpec) -> Result<DiscretizedKernel> {
        let mut rows = Vec::with_capacity(input.cells);
        let mut row_defects = Vec::with_capacity(input.cells);
        for x in input.centers() {
            let masses = self.cell_masses(self.mean_fn.eval(x), output);
            let total: f64 = masses.iter().sum();
            let lost = 1.0 - total;
            if lost > TRUNCATION_LIMIT {
                return Err(Error::Truncation {
                    lost,
                    limit: TRUNCATION_LIMIT,
                });
            }
            row_defects.push(lost.max(0.0));
            rows.push(masses.into_iter().map(|v| v / total).collect());
        }
        Ok(DiscretizedKernel {
            input: *input,
            output: *output,
            matrix: StochasticMatrix::from_rows(rows)?,
            row_defects,
        })
    }

    fn cell_masses(&self, mean: f64, grid: &GridSpec) -> Vec<f64> {
        (0..grid.cells)
            .map(|j| {
                let (l, r) = grid.edges(j);
                std_normal_interval((l - mean) / self.sigma, (r - mean) / self.sigma)
            })
            .collect()
    }
}

/// A Gaussian kernel restricted to grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedKernel {
    pub input: GridSpec,
    pub output: GridSpec,
    /// Row `i` is the renormalised law of the next cell from the centre of cell `i`.
    pub matrix: StochasticMatrix,
    /// Per-row mass that fell outside the output grid before renormalising.
    pub row_defects: Vec<f64>,
}

impl DiscretizedKernel {
    pub fn max_row_defect(&self) -> f64 {
        self.row_defects.iter().fold(0.0, |a, b| a.max(*b))
    }
}

/// Result of pushing a grid density through a Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Pushforward {
    pub density: GridDensity,
    /// Mass lost off the output grid before renormalisation.
    pub mass_defect: f64,
}

/// Pushes `d` through `k` onto `out`. Each input cell's mass is transported
/// from its centre and integrated exactly over each output cell.
pub fn apply_gaussian_kernel(
    k: &Gaussian1DKernel,
    d: &GridDensity,
    out: &GridSpec,
) -> Result<Pushforward> {
    let h_in = d.grid().cell_width();
    let mut masses = vec![0.0; out.cells];
    for (x, &v) in d.grid().centers().zip(d.values()) {
        if v == 0.0 {
            continue;
        }
        let w = v * h_in;
        for (m, c) in masses.iter_mut().zip(k.cell_masses(k.mean_fn.eval(x), out)) {
            *m += w * c;
        }
    }
    let total: f64 = masses.iter().sum();
    let lost = 1.0 - total;
    if lost > TRUNCATION_LIMIT {
        return Err(Error::Truncation {
            lost,
            limit: TRUNCATION_LIMIT,
        });
    }
    Ok(Pushforward {
        density: GridDensity::from_cell_masses(*out, &masses)?,
        mass_defect: lost.max(0.0),
    })
}
