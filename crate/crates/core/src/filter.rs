//! Bayesian filter recursion: prediction through the transition kernel
//! followed by a Bayes update with the observation likelihood.
//!
//! Filters are carried as probability vectors over states. For grid models
//! the states are grid cells and the vector holds cell masses; convert with
//! [`GridDensity::from_cell_masses`] when a density is needed.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernels::normal::normal_pdf;
use crate::kernels::{DiscretizedKernel, Gaussian1DKernel, StochasticMatrix};
use crate::measures::{FiniteDistribution, GridDensity, GridSpec, SubProbability};

/// Normalisers below this are treated as zero (underflow floor).
pub const NORMALIZER_FLOOR: f64 = 1e-300;

/// A single measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    /// Index into a finite observation alphabet.
    Symbol(usize),
    /// Real-valued measurement.
    Value(f64),
}

impl std::fmt::Display for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observation::Symbol(s) => write!(f, "symbol {s}"),
            Observation::Value(v) => write!(f, "value {v}"),
        }
    }
}

/// Observation likelihood `g(x, y)` with respect to a dominating measure.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodTable {
    /// Finite alphabet with counting measure, so `g(x, y) = Q[x][y]`.
    Finite(StochasticMatrix),
    /// `g(x, y)` is the `N(means[x], sigma^2)` density at `y` (Lebesgue measure).
    Gaussian { means: Vec<f64>, sigma: f64 },
}

impl LikelihoodTable {
    /// Gaussian observation kernel evaluated at the centres of `grid`.
    pub fn gaussian_on_grid(kernel: &Gaussian1DKernel, grid: &GridSpec) -> Self {
        LikelihoodTable::Gaussian {
            means: grid.centers().map(|x| kernel.mean_fn().eval(x)).collect(),
            sigma: kernel.sigma(),
        }
    }

    pub fn states(&self) -> usize {
        match self {
            LikelihoodTable::Finite(q) => q.rows(),
            LikelihoodTable::Gaussian { means, .. } => means.len(),
        }
    }

    /// `g(x, y)` for a single state.
    pub fn eval(&self, x: usize, y: Observation) -> Result<f64> {
        match (self, y) {
            (LikelihoodTable::Finite(q), Observation::Symbol(s)) if s < q.cols() => {
                Ok(q.entry(x, s))
            }
            (LikelihoodTable::Gaussian { means, sigma }, Observation::Value(v)) => {
                Ok(normal_pdf(v, means[x], *sigma))
            }
            _ => Err(Error::ObservationKind(y.to_string())),
        }
    }

    /// `g(., y)` over all states.
    pub fn column(&self, y: Observation) -> Result<Vec<f64>> {
        (0..self.states()).map(|x| self.eval(x, y)).collect()
    }
}

/// Transition kernel(s) plus observation likelihood: everything the filter
/// recursion needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub transition: StochasticMatrix,
    /// Per-action kernels for controlled models, keyed in lexicographic order.
    pub actions: BTreeMap<String, StochasticMatrix>,
    pub likelihood: LikelihoodTable,
    /// Per-state transition mass lost to grid truncation, for grid models.
    pub row_defects: Option<Vec<f64>>,
}

impl FilterModel {
    pub fn new(transition: StochasticMatrix, likelihood: LikelihoodTable) -> Result<Self> {
        Self::controlled(transition, BTreeMap::new(), likelihood)
    }

    pub fn controlled(
        transition: StochasticMatrix,
        actions: BTreeMap<String, StochasticMatrix>,
        likelihood: LikelihoodTable,
    ) -> Result<Self> {
        let n = likelihood.states();
        for k in std::iter::once(&transition).chain(actions.values()) {
            if k.rows() != n || k.cols() != n {
                return Err(Error::InvalidKernel(format!(
                    "transition kernel is {}x{}, expected {n}x{n} to match the likelihood",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        Ok(Self {
            transition,
            actions,
            likelihood,
            row_defects: None,
        })
    }

    /// Grid model from a discretised transition and a Gaussian observation kernel.
    pub fn gaussian_grid(
        transition: DiscretizedKernel,
        observation: &Gaussian1DKernel,
    ) -> Result<Self> {
        if transition.input != transition.output {
            return Err(Error::Contract(
                "filter grids must map a grid onto itself".into(),
            ));
        }
        let likelihood = LikelihoodTable::gaussian_on_grid(observation, &transition.input);
        let mut model = Self::new(transition.matrix, likelihood)?;
        model.row_defects = Some(transition.row_defects);
        Ok(model)
    }

    pub fn states(&self) -> usize {
        self.likelihood.states()
    }

    /// Kernel used under `action`; `None` selects the uncontrolled kernel.
    pub fn kernel(&self, action: Option<&str>) -> Result<&StochasticMatrix> {
        match action {
            None => Ok(&self.transition),
            Some(a) => self
                .actions
                .get(a)
                .ok_or_else(|| Error::UnknownAction(a.to_string())),
        }
    }
}

/// Outcome of a Bayes update.
#[derive(Debug, Clone, PartialEq)]
pub enum BayesOutcome {
    Posterior(FiniteDistribution),
    /// The observation has zero likelihood under the prior.
    DegenerateZero,
}

impl BayesOutcome {
    pub fn posterior(&self) -> Option<&FiniteDistribution> {
        match self {
            BayesOutcome::Posterior(p) => Some(p),
            BayesOutcome::DegenerateZero => None,
        }
    }

    pub fn into_posterior(self) -> Option<FiniteDistribution> {
        match self {
            BayesOutcome::Posterior(p) => Some(p),
            BayesOutcome::DegenerateZero => None,
        }
    }
}

fn check_states(pi: &FiniteDistribution, lik: &LikelihoodTable) -> Result<()> {
    if pi.len() != lik.states() {
        return Err(Error::DimensionMismatch {
            expected: lik.states(),
            found: pi.len(),
        });
    }
    Ok(())
}

/// `N^pi(y) = sum_x g(x, y) pi(x)`.
pub fn normalizer(pi: &FiniteDistribution, y: Observation, lik: &LikelihoodTable) -> Result<f64> {
    check_states(pi, lik)?;
    let g = lik.column(y)?;
    Ok(pi.probs().iter().zip(&g).map(|(p, g)| p * g).sum())
}

/// Bayes update `psi(pi, y)`.
pub fn bayes_update(
    pi: &FiniteDistribution,
    y: Observation,
    lik: &LikelihoodTable,
) -> Result<BayesOutcome> {
    check_states(pi, lik)?;
    let weighted: Vec<f64> = pi
        .probs()
        .iter()
        .zip(lik.column(y)?)
        .map(|(p, g)| p * g)
        .collect();
    let total: f64 = weighted.iter().sum();
    if !total.is_finite() || total <= NORMALIZER_FLOOR {
        return Ok(BayesOutcome::DegenerateZero);
    }
    Ok(BayesOutcome::Posterior(FiniteDistribution::from_weights(
        &weighted,
    )?))
}

/// The un-normalised update `g(., y) pi` for a finite likelihood, whose mass
/// is the normaliser.
pub fn unnormalized_update(
    pi: &FiniteDistribution,
    y: Observation,
    q: &StochasticMatrix,
) -> Result<SubProbability> {
    let lik = LikelihoodTable::Finite(q.clone());
    check_states(pi, &lik)?;
    SubProbability::finite(
        pi.probs()
            .iter()
            .zip(lik.column(y)?)
            .map(|(p, g)| p * g)
            .collect(),
    )
}

/// One filter step `phi(pi, y) = psi(T pi, y)`.
pub fn filter_update(
    pi: &FiniteDistribution,
    y: Observation,
    transition: &StochasticMatrix,
    lik: &LikelihoodTable,
) -> Result<BayesOutcome> {
    bayes_update(&transition.apply(pi)?, y, lik)
}

/// One filter step under control action `action`.
pub fn filter_update_controlled(
    pi: &FiniteDistribution,
    action: &str,
    y: Observation,
    kernels: &BTreeMap<String, StochasticMatrix>,
    lik: &LikelihoodTable,
) -> Result<BayesOutcome> {
    let t = kernels
        .get(action)
        .ok_or_else(|| Error::UnknownAction(action.to_string()))?;
    filter_update(pi, y, t, lik)
}

/// Filter sequence produced by [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    /// `steps[n]` is the filter at time `n`.
    pub steps: Vec<FiniteDistribution>,
    pub observations: Vec<Observation>,
    /// Step at which the normaliser vanished; the trajectory stops before it.
    pub degenerate_at: Option<usize>,
    /// Transition mass lost to grid truncation at each step (zero for finite models).
    pub mass_defects: Vec<f64>,
}

impl FilterTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.degenerate_at.is_none()
    }

    /// Steps as grid densities, for models whose states are the cells of `grid`.
    pub fn densities(&self, grid: GridSpec) -> Result<Vec<GridDensity>> {
        self.steps
            .iter()
            .map(|p| GridDensity::from_cell_masses(grid, p.probs()))
            .collect()
    }
}

/// Runs the filter from `prior` over `observations`.
///
/// Time 0 is the Bayes update of the prior by the first observation; each later
/// step applies the transition (selected by `policy[n]` when given) and then
/// the Bayes update.
pub fn run_filter(
    prior: &FiniteDistribution,
    observations: &[Observation],
    model: &FilterModel,
    policy: Option<&[String]>,
) -> Result<FilterTrajectory> {
    let Some((&first, rest)) = observations.split_first() else {
        return Err(Error::Contract(
            "at least one observation is required".into(),
        ));
    };
    if let Some(policy) = policy {
        if policy.len() != rest.len() {
            return Err(Error::Contract(format!(
                "policy has {} actions, expected {} (one per transition)",
                policy.len(),
                rest.len()
            )));
        }
    }
    let mut trajectory = FilterTrajectory {
        steps: Vec::with_capacity(observations.len()),
        observations: observations.to_vec(),
        degenerate_at: None,
        mass_defects: Vec::with_capacity(observations.len()),
    };
    let mut current = match bayes_update(prior, first, &model.likelihood)? {
        BayesOutcome::Posterior(p) => p,
        BayesOutcome::DegenerateZero => {
            trajectory.degenerate_at = Some(0);
            return Ok(trajectory);
        }
    };
    trajectory.steps.push(current.clone());
    trajectory.mass_defects.push(0.0);
    for (n, &y) in rest.iter().enumerate() {
        let kernel = model.kernel(policy.map(|p| p[n].as_str()))?;
        let defect = model.row_defects.as_ref().map_or(0.0, |d| {
            current.probs().iter().zip(d).map(|(p, d)| p * d).sum()
        });
        match filter_update(&current, y, kernel, &model.likelihood)? {
            BayesOutcome::Posterior(p) => current = p,
            BayesOutcome::DegenerateZero => {
                trajectory.degenerate_at = Some(n + 1);
                return Ok(trajectory);
            }
        }
        trajectory.steps.push(current.clone());
        trajectory.mass_defects.push(defect);
    }
    Ok(trajectory)
}
