//! Closed-form stability quantities built from Dobrushin coefficients.
//!
//! For a transition kernel `T` and measurement kernel `Q` the filter satisfies
//!
//! ```text
//! E[ ||pi_{n+1} - pi'_{n+1}|| ] <= (1 - delta(T)) (2 - delta(Q)) E[ ||pi_n - pi'_n|| ]
//! ```
//!
//! so `alpha = (1 - delta(T))(2 - delta(Q)) < 1` certifies exponential
//! stability in expectation. The Bayes update alone can expand total variation
//! by up to `2 - delta(Q)` in expectation; [`expected_bayes_expansion`]
//! evaluates that expectation exactly for finite channels.
//!
//! Almost-sure pathwise merging is not checked anywhere in this crate: it
//! follows from `alpha < 1` only through a Borel-Cantelli argument that no
//! finite computation certifies.

use crate::error::{Error, Result};
use crate::filter::{
    bayes_update, normalizer, FilterModel, LikelihoodTable, Observation, NORMALIZER_FLOOR,
};
use crate::kernels::normal::std_normal_cdf;
use crate::kernels::StochasticMatrix;
use crate::measures::{require_absolutely_continuous, tv_distance, FiniteDistribution};
use libm::erf;
use std::f64::consts::FRAC_1_SQRT_2;

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{name} must lie in [0, 1], got {v}"
        )))
    }
}

/// `alpha = (1 - delta_t)(2 - delta_q)`.
pub fn contraction_coefficient(delta_t: f64, delta_q: f64) -> Result<f64> {
    unit_interval("delta(T)", delta_t)?;
    unit_interval("delta(Q)", delta_q)?;
    Ok((1.0 - delta_t) * (2.0 - delta_q))
}

/// Expected-TV bound at step `n` for priors at distance `tv0`:
/// `(2 - delta_q) * alpha^n * tv0`.
pub fn stability_envelope(n: u32, delta_t: f64, delta_q: f64, tv0: f64) -> Result<f64> {
    let alpha = contraction_coefficient(delta_t, delta_q)?;
    if !(0.0..=2.0).contains(&tv0) {
        return Err(Error::Contract(format!(
            "initial distance must lie in [0, 2], got {tv0}"
        )));
    }
    Ok((2.0 - delta_q) * alpha.powi(n as i32) * tv0)
}

/// Dobrushin coefficients of a model and the resulting verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub delta_t: f64,
    pub delta_q: f64,
    pub alpha: f64,
    pub stable: bool,
}

impl StabilityReport {
    pub fn new(delta_t: f64, delta_q: f64) -> Result<Self> {
        let alpha = contraction_coefficient(delta_t, delta_q)?;
        Ok(Self {
            delta_t,
            delta_q,
            alpha,
            stable: alpha < 1.0,
        })
    }

    pub fn envelope(&self, n: u32, tv0: f64) -> f64 {
        (2.0 - self.delta_q) * self.alpha.powi(n as i32) * tv0
    }
}

/// `sum_y N^mu(y) * ||psi(mu, y) - psi(nu, y)||` computed exactly over the
/// observation alphabet of `q`.
pub fn expected_bayes_expansion(
    mu: &FiniteDistribution,
    nu: &FiniteDistribution,
    q: &StochasticMatrix,
) -> Result<f64> {
    require_absolutely_continuous(mu, nu)?;
    let lik = LikelihoodTable::Finite(q.clone());
    let mut total = 0.0;
    for s in 0..q.cols() {
        let y = Observation::Symbol(s);
        let weight = normalizer(mu, y, &lik)?;
        if weight <= NORMALIZER_FLOOR {
            continue;
        }
        let (Some(a), Some(b)) = (
            bayes_update(mu, y, &lik)?.into_posterior(),
            bayes_update(nu, y, &lik)?.into_posterior(),
        ) else {
            return Err(Error::Contract(format!(
                "symbol {s} has positive probability under mu but a degenerate update"
            )));
        };
        total += weight * tv_distance(&a, &b)?;
    }
    Ok(total)
}

/// Smallest Dobrushin coefficient over a family of action kernels.
pub fn controlled_delta_tilde<'a>(
    kernels: impl IntoIterator<Item = &'a StochasticMatrix>,
) -> Result<f64> {
    kernels
        .into_iter()
        .map(StochasticMatrix::dobrushin)
        .reduce(f64::min)
        .ok_or_else(|| Error::Contract("no action kernels supplied".into()))
}

/// Multiplicative factor `(2 / (ln 3 eps^2)) ((1 - eps^2)/(1 + eps^2))^(m-1)`
/// of the Hilbert-metric bound for an `eps`-mixing un-normalised filter over
/// `m` steps.
pub fn hilbert_baseline_bound(epsilon: f64, m: u32) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Contract(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    if m == 0 {
        return Err(Error::Contract("step count must be at least 1".into()));
    }
    let e2 = epsilon * epsilon;
    Ok(2.0 / (3f64.ln() * e2) * ((1.0 - e2) / (1.0 + e2)).powi(m as i32 - 1))
}

/// `delta = 2 Phi(-1 / ratio)` for an additive-Gaussian kernel with
/// `ratio = sigma / bound`.
pub fn gaussian_dobrushin_from_ratio(ratio: f64) -> f64 {
    2.0 * std_normal_cdf(-1.0 / ratio)
}

/// Least measurement noise ratio `sigma_q / q` that makes `alpha < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementThreshold {
    /// `delta(T) > 1/2` already gives `alpha < 1` for every channel.
    NotRequired,
    Ratio(f64),
    /// No finite ratio suffices.
    Unbounded,
}

const RATIO_LO: f64 = 1e-6;
const RATIO_HI: f64 = 1e7;
const RATIO_RTOL: f64 = 1e-9;

/// Solves `2 Phi(-1/rq) = 2 - 1/(1 - delta_t)` for `rq` by bisection, where
/// `delta_t = 2 Phi(-1/rt)`.
///
/// The equation is rewritten as `erf(1 / (rq sqrt 2)) = delta_t / (1 - delta_t)`
/// so that the small right-hand sides met at low `rt` keep full precision.
pub fn min_measurement_ratio(rt: f64) -> Result<MeasurementThreshold> {
    if !(rt > 0.0 && rt.is_finite()) {
        return Err(Error::Contract(format!("ratio must be positive, got {rt}")));
    }
    let delta_t = gaussian_dobrushin_from_ratio(rt);
    if delta_t > 0.5 {
        return Ok(MeasurementThreshold::NotRequired);
    }
    let target = delta_t / (1.0 - delta_t);
    if target <= 0.0 {
        return Ok(MeasurementThreshold::Unbounded);
    }
    let excess = |rq: f64| erf(FRAC_1_SQRT_2 / rq) - target;
    let (mut lo, mut hi) = (RATIO_LO, RATIO_HI);
    if excess(hi) > 0.0 {
        return Ok(MeasurementThreshold::Unbounded);
    }
    if excess(lo) <= 0.0 {
        return Ok(MeasurementThreshold::Ratio(lo));
    }
    while hi / lo - 1.0 > RATIO_RTOL {
        let mid = (lo * hi).sqrt();
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MeasurementThreshold::Ratio(hi))
}

/// Transition noise ratios `sigma_t / t` tabulated by default.
pub const TABLE1_RATIOS: [f64; 13] = [
    1.5, 1.4, 1.3, 1.2, 1.1, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3,
];

/// One column of the threshold table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdColumn {
    pub transition_ratio: f64,
    pub threshold: MeasurementThreshold,
    pub delta_t: f64,
    /// `delta(Q)` at the threshold ratio; `None` when no threshold applies.
    pub delta_q: Option<f64>,
}

pub fn threshold_column(rt: f64) -> Result<ThresholdColumn> {
    let threshold = min_measurement_ratio(rt)?;
    let delta_q = match threshold {
        MeasurementThreshold::Ratio(rq) => Some(gaussian_dobrushin_from_ratio(rq)),
        MeasurementThreshold::Unbounded => Some(1.0),
        MeasurementThreshold::NotRequired => None,
    };
    Ok(ThresholdColumn {
        transition_ratio: rt,
        threshold,
        delta_t: gaussian_dobrushin_from_ratio(rt),
        delta_q,
    })
}

/// Exact `E^mu[ ||pi^mu_n - pi^nu_n|| ]` for `n = 0..=horizon`, by enumerating
/// every observation sequence of a finite model.
///
/// Cost grows as `symbols^(horizon + 1)`; intended for small models.
pub fn exact_expected_distances(
    model: &FilterModel,
    mu: &FiniteDistribution,
    nu: &FiniteDistribution,
    horizon: usize,
) -> Result<Vec<f64>> {
    require_absolutely_continuous(mu, nu)?;
    let LikelihoodTable::Finite(q) = &model.likelihood else {
        return Err(Error::Contract(
            "exact enumeration needs a finite observation alphabet".into(),
        ));
    };
    if mu.len() != model.states() {
        return Err(Error::DimensionMismatch {
            expected: model.states(),
            found: mu.len(),
        });
    }
    let mut sums = vec![0.0; horizon + 1];
    let mut walk = Enumeration {
        transition: &model.transition,
        q,
        horizon,
        sums: &mut sums,
    };
    walk.descend(0, mu.probs().to_vec(), nu.probs().to_vec())?;
    Ok(sums)
}

struct Enumeration<'a> {
    transition: &'a StochasticMatrix,
    q: &'a StochasticMatrix,
    horizon: usize,
    sums: &'a mut Vec<f64>,
}

impl Enumeration<'_> {
    /// `joint_mu` is `P^mu(X_{n-1} = x, y_0..y_{n-1})` (the prior at depth 0);
    /// `cond_nu` is any positive multiple of the nu-filter at the same depth.
    fn descend(&mut self, depth: usize, joint_mu: Vec<f64>, cond_nu: Vec<f64>) -> Result<()> {
        let (pred_mu, pred_nu) = if depth == 0 {
            (joint_mu, cond_nu)
        } else {
            (self.push(&joint_mu), self.push(&cond_nu))
        };
        for s in 0..self.q.cols() {
            let next_mu: Vec<f64> = pred_mu
                .iter()
                .enumerate()
                .map(|(x, p)| p * self.q.entry(x, s))
                .collect();
            let weight: f64 = next_mu.iter().sum();
            if weight <= 0.0 {
                continue;
            }
            let next_nu: Vec<f64> = pred_nu
                .iter()
                .enumerate()
                .map(|(x, p)| p * self.q.entry(x, s))
                .collect();
            let nu_mass: f64 = next_nu.iter().sum();
            if nu_mass <= 0.0 {
                return Err(Error::Contract(format!(
                    "observation path has positive probability under mu but not nu at step {depth}"
                )));
            }
            let tv: f64 = next_mu
                .iter()
                .zip(&next_nu)
                .map(|(a, b)| (a / weight - b / nu_mass).abs())
                .sum();
            self.sums[depth] += weight * tv;
            if depth < self.horizon {
                let nu_normalized = next_nu.iter().map(|v| v / nu_mass).collect();
                self.descend(depth + 1, next_mu, nu_normalized)?;
            }
        }
        Ok(())
    }

    fn push(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.transition.cols()];
        for (i, &w) in v.iter().enumerate() {
            for (o, k) in out.iter_mut().zip(self.transition.row(i)) {
                *o += w * k;
            }
        }
        out
    }
}
