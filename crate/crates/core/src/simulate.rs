//! Seeded Monte Carlo estimation of `E^mu[ ||pi^mu_n - pi^nu_n|| ]`.
//!
//! Each trial samples one state/observation path under the true prior `mu`
//! and runs two filters over that same observation path, one started at `mu`
//! and one at the false prior `nu`. Trial `t` draws from a ChaCha stream
//! seeded with `base_seed ^ t`, so results do not depend on how trials are
//! scheduled across threads; aggregation folds trials in index order.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{run_filter, FilterModel, LikelihoodTable, Observation};
use crate::measures::{require_absolutely_continuous, tv_distance, FiniteDistribution};
use crate::stability::StabilityReport;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;
/// Fraction of excluded trials above which an experiment is flagged.
pub const EXCLUSION_WARNING_FRACTION: f64 = 0.01;
/// A step ratio is reported only when the mean at its base step exceeds this
/// many CI half-widths.
pub const RATIO_NOISE_GUARD: f64 = 10.0;

/// Which state representation the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Finite,
    Grid,
}

/// A fully resolved dual-filter experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model_id: String,
    pub backend: Backend,
    pub model: FilterModel,
    /// Prior that generates the data.
    pub true_prior: FiniteDistribution,
    /// Prior assumed by the mis-initialised filter.
    pub false_prior: FiniteDistribution,
    pub horizon: usize,
    pub trials: usize,
    pub base_seed: u64,
    /// Coefficients used for the envelope column.
    pub report: StabilityReport,
    /// Control actions, one per transition, for controlled models.
    pub policy: Option<Vec<String>>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Contract("trials must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        if self.true_prior.len() != self.model.states() {
            return Err(Error::DimensionMismatch {
                expected: self.model.states(),
                found: self.true_prior.len(),
            });
        }
        require_absolutely_continuous(&self.true_prior, &self.false_prior)?;
        if let Some(policy) = &self.policy {
            if policy.len() != self.horizon {
                return Err(Error::Contract(format!(
                    "policy has {} actions, expected one per step ({})",
                    policy.len(),
                    self.horizon
                )));
            }
            for a in policy {
                self.model.kernel(Some(a))?;
            }
        }
        Ok(())
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed ^ trial as u64
    }
}

/// One sampled realisation of the hidden chain and its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub states: Vec<usize>,
    pub observations: Vec<Observation>,
}

fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Samples `n` steps of the joint chain: `X_0 ~ prior`, `Y_k ~ Q(. | X_k)`,
/// `X_{k+1} ~ T(. | X_k)`.
pub fn sample_trajectory(
    model: &FilterModel,
    prior: &FiniteDistribution,
    n: usize,
    seed: u64,
) -> Result<SampledPath> {
    sample_controlled(model, prior, n, seed, None)
}

/// As [`sample_trajectory`], with `policy[k]` selecting the kernel for the
/// transition out of step `k`.
pub fn sample_controlled(
    model: &FilterModel,
    prior: &FiniteDistribution,
    n: usize,
    seed: u64,
    policy: Option<&[String]>,
) -> Result<SampledPath> {
    if n == 0 {
        return Err(Error::Contract("path length must be at least 1".into()));
    }
    if prior.len() != model.states() {
        return Err(Error::DimensionMismatch {
            expected: model.states(),
            found: prior.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    let mut x = sample_index(&mut rng, prior.probs());
    for k in 0..n {
        states.push(x);
        let y = match &model.likelihood {
            LikelihoodTable::Finite(q) => Observation::Symbol(sample_index(&mut rng, q.row(x))),
            LikelihoodTable::Gaussian { means, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                Observation::Value(means[x] + sigma * z)
            }
        };
        observations.push(y);
        if k + 1 < n {
            let kernel = model.kernel(policy.map(|p| p[k].as_str()))?;
            x = sample_index(&mut rng, kernel.row(x));
        }
    }
    Ok(SampledPath {
        states,
        observations,
    })
}

/// Per-step summary of a dual-filter experiment. All vectors have length
/// `horizon + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityStats {
    pub mean_tv: Vec<f64>,
    pub std: Vec<f64>,
    pub ci95: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `mean_tv[n] / mean_tv[n - 1]` where the noise guard allows it.
    pub ratio: Vec<Option<f64>>,
    pub trials_used: usize,
    pub excluded: usize,
    /// More than [`EXCLUSION_WARNING_FRACTION`] of trials were excluded.
    pub warning: bool,
    pub alpha: f64,
}

impl StabilityStats {
    pub fn steps(&self) -> usize {
        self.mean_tv.len()
    }

    /// Whether the mean stays below `envelope + slack * ci95` at every step.
    pub fn within_envelope(&self, slack: f64) -> bool {
        self.mean_tv
            .iter()
            .zip(&self.envelope)
            .zip(&self.ci95)
            .all(|((m, e), c)| *m <= e + slack * c)
    }

    /// Writes the CSV artifact with columns
    /// `step,mean_tv,std,ci95,envelope,ratio,excluded`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> Vec<StatsRow> {
        (0..self.steps())
            .map(|n| StatsRow {
                step: n,
                mean_tv: self.mean_tv[n],
                std: self.std[n],
                ci95: self.ci95[n],
                envelope: self.envelope[n],
                ratio: self.ratio[n],
                excluded: self.excluded,
            })
            .collect()
    }
}

/// One CSV row of [`StabilityStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub step: usize,
    pub mean_tv: f64,
    pub std: f64,
    pub ci95: f64,
    pub envelope: f64,
    pub ratio: Option<f64>,
    pub excluded: usize,
}

/// Parses rows written by [`StabilityStats::write_csv`].
pub fn read_stats_csv<R: Read>(reader: R) -> csv::Result<Vec<StatsRow>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

enum TrialOutcome {
    Distances(Vec<f64>),
    Excluded,
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let steps = cfg.horizon + 1;
    let policy = cfg.policy.as_deref();
    let path = sample_controlled(
        &cfg.model,
        &cfg.true_prior,
        steps,
        cfg.trial_seed(trial),
        policy,
    )?;
    let observations = &path.observations;
    let truth = run_filter(&cfg.true_prior, observations, &cfg.model, policy)?;
    let wrong = run_filter(&cfg.false_prior, observations, &cfg.model, policy)?;
    if !truth.is_complete() || !wrong.is_complete() {
        return Ok(TrialOutcome::Excluded);
    }
    truth
        .steps
        .iter()
        .zip(&wrong.steps)
        .map(|(a, b)| tv_distance(a, b))
        .collect::<Result<Vec<_>>>()
        .map(TrialOutcome::Distances)
}

/// Runs the experiment on `threads` worker threads (0 picks the rayon default).
pub fn dual_filter_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<StabilityStats> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<TrialOutcome>> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, t))
            .collect()
    });

    let steps = cfg.horizon + 1;
    let mut sum = vec![0.0; steps];
    let mut sum_sq = vec![0.0; steps];
    let mut used = 0usize;
    let mut excluded = 0usize;
    for outcome in outcomes {
        match outcome? {
            TrialOutcome::Distances(d) => {
                used += 1;
                for (n, v) in d.into_iter().enumerate() {
                    sum[n] += v;
                    sum_sq[n] += v * v;
                }
            }
            TrialOutcome::Excluded => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::Contract(
            "every trial hit a degenerate filter step".into(),
        ));
    }
    let count = used as f64;
    let mean_tv: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean_tv)
        .map(|(sq, m)| {
            if used < 2 {
                0.0
            } else {
                ((sq - count * m * m) / (count - 1.0)).max(0.0).sqrt()
            }
        })
        .collect();
    let ci95: Vec<f64> = std.iter().map(|s| Z95 * s / count.sqrt()).collect();
    let tv0 = tv_distance(&cfg.true_prior, &cfg.false_prior)?;
    let envelope = (0..steps)
        .map(|n| cfg.report.envelope(n as u32, tv0))
        .collect();
    let mut stats = StabilityStats {
        mean_tv,
        std,
        ci95,
        envelope,
        ratio: vec![None; steps],
        trials_used: used,
        excluded,
        warning: excluded as f64 > EXCLUSION_WARNING_FRACTION * cfg.trials as f64,
        alpha: cfg.report.alpha,
    };
    for r in empirical_contraction(&stats) {
        stats.ratio[r.from_step + 1] = Some(r.ratio);
    }
    Ok(stats)
}

/// Ratio of consecutive mean distances, with a propagated CI half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRatio {
    pub from_step: usize,
    pub ratio: f64,
    pub ci95: f64,
}

/// `mean_tv[n + 1] / mean_tv[n]` for every step whose base mean clears the
/// noise guard `mean_tv[n] > 10 * ci95[n]`.
pub fn empirical_contraction(stats: &StabilityStats) -> Vec<StepRatio> {
    let (m, c) = (&stats.mean_tv, &stats.ci95);
    (0..m.len().saturating_sub(1))
        .filter(|&n| m[n] > RATIO_NOISE_GUARD * c[n])
        .map(|n| {
            let ratio = m[n + 1] / m[n];
            let base_rel = c[n] / m[n];
            let ci95 = if m[n + 1] > 0.0 {
                ratio * (base_rel.powi(2) + (c[n + 1] / m[n + 1]).powi(2)).sqrt()
            } else {
                c[n + 1] / m[n]
            };
            StepRatio {
                from_step: n,
                ratio,
                ci95,
            }
        })
        .collect()
}
