//! Standard normal distribution helpers built on `erfc`.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `P(Z <= x)` for a standard normal `Z`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Density of `N(mean, sigma^2)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    std_normal_pdf((x - mean) / sigma) / sigma
}

/// `P(a <= Z <= b)`, evaluated on the tail nearer to the interval so that
/// intervals far in the upper tail keep their relative accuracy.
pub fn std_normal_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}
