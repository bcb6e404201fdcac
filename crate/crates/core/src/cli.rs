//! Command-line front end.
//!
//! Every command returns a [`CommandResult`] instead of printing directly, so
//! the binary and the tests share one code path. Exit codes: 0 success,
//! 1 validation or contract failure, 2 I/O failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::kernels::StochasticMatrix;
use crate::measures::{tv_distance, FiniteDistribution};
use crate::modelio::{load_experiment, load_model, LoadError, ModelKind, PompModel};
use crate::simulate::{dual_filter_experiment, empirical_contraction};
use crate::stability::{
    expected_bayes_expansion, hilbert_baseline_bound, threshold_column, MeasurementThreshold,
    TABLE1_RATIOS,
};

/// Environment variable capping the number of simulation threads (0 = auto).
pub const THREADS_ENV: &str = "FILTERSTAB_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Envelope slack, in CI half-widths, used for the simulate verdict.
const ENVELOPE_SLACK: f64 = 4.0;

#[derive(Debug, Parser)]
#[command(
    name = "filterstab",
    version,
    about = "Filter stability analysis for partially observed Markov models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the command's CSV artifact to this path.
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Suppress tables on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Override the seed given in an experiment config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dobrushin coefficients, contraction coefficient and mixing check of a model.
    Analyze { model: PathBuf },
    /// Run a seeded dual-filter Monte Carlo experiment.
    Simulate { config: PathBuf },
    /// Minimum measurement noise ratios for the additive-Gaussian model.
    Table1 {
        /// Comma-separated transition noise ratios sigma_t / t.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Exact expected posterior distance for the three-state worked example.
    Example3,
    /// Check a model file and report every problem found.
    Validate { model: PathBuf },
}

/// Outcome of one command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub csv_paths: Vec<PathBuf>,
}

impl CommandResult {
    fn failure(exit_code: i32, message: impl Into<String>) -> Self {
        let mut stderr = message.into();
        if !stderr.ends_with('\n') {
            stderr.push('\n');
        }
        CommandResult {
            exit_code,
            stderr,
            ..Default::default()
        }
    }

    fn from_load_error(e: &LoadError) -> Self {
        let code = if e.is_io() { EXIT_IO } else { EXIT_INVALID };
        Self::failure(code, format!("error: {e}"))
    }
}

/// Output options shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub csv: Option<PathBuf>,
    pub quiet: bool,
}

impl Output {
    fn finish<R: Serialize>(&self, mut result: CommandResult, rows: &[R]) -> CommandResult {
        if let Some(path) = &self.csv {
            if let Err(e) = write_csv_atomic(path, rows) {
                return CommandResult::failure(
                    EXIT_IO,
                    format!("error: cannot write {}: {e}", path.display()),
                );
            }
            result.csv_paths.push(path.clone());
        }
        if self.quiet {
            result.stdout.clear();
        }
        result
    }
}

/// Writes `rows` to a temporary file next to `path` and renames it into place.
pub fn write_csv_atomic<R: Serialize>(path: &Path, rows: &[R]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = csv::Writer::from_writer(tmp.as_file_mut());
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Formats `x` with four significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let mut magnitude = x.abs().log10().floor() as i32;
    // Rounding can carry into a new leading digit (9.99996 -> 10.00).
    let rounded = format!("{:.3e}", x.abs());
    if let Some(exponent) = rounded.strip_prefix("1.000e") {
        magnitude = exponent.parse().unwrap_or(magnitude);
    }
    if !(-5..=9).contains(&magnitude) {
        return format!("{x:.3e}");
    }
    let decimals = (3 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Serialize)]
struct QuantityRow {
    quantity: String,
    value: f64,
}

fn q(rows: &mut Vec<QuantityRow>, quantity: impl Into<String>, value: f64) {
    rows.push(QuantityRow {
        quantity: quantity.into(),
        value,
    });
}

fn verdict(stable: bool) -> &'static str {
    if stable {
        "stable (alpha < 1)"
    } else {
        "not certified stable (alpha >= 1)"
    }
}

fn mixing_kernels(model: &PompModel) -> Vec<(String, &StochasticMatrix)> {
    match &model.kind {
        ModelKind::Finite(f) => std::iter::once(("T".to_string(), &f.transition))
            .chain(f.actions.iter().map(|(k, m)| (format!("action {k}"), m)))
            .collect(),
        ModelKind::Gaussian1d(_) => Vec::new(),
    }
}

pub fn cmd_analyze(model_path: &Path, out: &Output) -> CommandResult {
    let model = match load_model(model_path) {
        Ok(m) => m,
        Err(e) => return CommandResult::from_load_error(&e),
    };
    let c = model.coefficients();
    let report = c.report();
    let mut s = String::new();
    let mut rows = Vec::new();
    let kind = match &model.kind {
        ModelKind::Finite(f) => format!(
            "finite, {} states, {} symbols, {} actions",
            f.transition.rows(),
            f.observation.cols(),
            f.actions.len()
        ),
        ModelKind::Gaussian1d(g) => format!(
            "gaussian1d, sigma_t/t = {}, sigma_q/q = {}",
            sig4(g.transition.noise_ratio()),
            sig4(g.observation.noise_ratio())
        ),
    };
    let _ = writeln!(s, "model        {} ({kind})", model.name);
    let _ = writeln!(s, "delta(T)     {}", sig4(c.delta_t));
    q(&mut rows, "delta_t", c.delta_t);
    if let Some(tilde) = c.delta_tilde {
        for (action, d) in &c.per_action {
            let _ = writeln!(s, "  delta({action}) {}", sig4(*d));
            q(&mut rows, format!("delta_action[{action}]"), *d);
        }
        let _ = writeln!(s, "delta~(T)    {} (minimum over actions)", sig4(tilde));
        q(&mut rows, "delta_tilde", tilde);
        let _ = writeln!(s, "effective    {}", sig4(c.effective_delta_t()));
        q(&mut rows, "delta_t_effective", c.effective_delta_t());
    }
    let _ = writeln!(s, "delta(Q)     {}", sig4(c.delta_q));
    let _ = writeln!(s, "alpha        {}", sig4(report.alpha));
    let _ = writeln!(s, "verdict      {}", verdict(report.stable));
    q(&mut rows, "delta_q", c.delta_q);
    q(&mut rows, "alpha", report.alpha);
    q(&mut rows, "stable", if report.stable { 1.0 } else { 0.0 });

    let kernels = mixing_kernels(&model);
    if !kernels.is_empty() {
        let mut epsilon = Some(1.0f64);
        for (label, k) in &kernels {
            match k.mixing_coefficient() {
                Some(cert) => {
                    epsilon = epsilon.map(|e| e.min(cert.epsilon));
                }
                None => {
                    let _ = writeln!(s, "mixing       no ({label} has a column with both zero and positive entries)");
                    epsilon = None;
                    break;
                }
            }
        }
        if let Some(eps) = epsilon {
            let factor = hilbert_baseline_bound(eps, 1).expect("mixing epsilon lies in (0, 1]");
            let rate = (1.0 - eps * eps) / (1.0 + eps * eps);
            let _ = writeln!(s, "mixing       yes, epsilon = {}", sig4(eps));
            let _ = writeln!(
                s,
                "hilbert      factor {} x {}^(m-1) over m steps",
                sig4(factor),
                sig4(rate)
            );
            q(&mut rows, "mixing_epsilon", eps);
            q(&mut rows, "hilbert_factor", factor);
            q(&mut rows, "hilbert_rate", rate);
        }
    }
    out.finish(
        CommandResult {
            stdout: s,
            ..Default::default()
        },
        &rows,
    )
}

pub fn cmd_validate(model_path: &Path, out: &Output) -> CommandResult {
    match load_model(model_path) {
        Ok(m) => {
            let detail = match &m.kind {
                ModelKind::Finite(f) => format!(
                    "finite, {} states, {} symbols",
                    f.transition.rows(),
                    f.observation.cols()
                ),
                ModelKind::Gaussian1d(_) => "gaussian1d".to_string(),
            };
            let result = CommandResult {
                stdout: format!("ok: {} ({detail})\n", m.name),
                ..Default::default()
            };
            out.finish::<QuantityRow>(result, &[])
        }
        Err(e) => CommandResult::from_load_error(&e),
    }
}

/// Reads the thread count from [`THREADS_ENV`]; unset means automatic.
pub fn threads_from_env() -> Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(format!("{THREADS_ENV}: {e}")),
    }
}

pub fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    threads: usize,
    out: &Output,
) -> CommandResult {
    let mut cfg = match load_experiment(config_path) {
        Ok(c) => c,
        Err(e) => return CommandResult::from_load_error(&e),
    };
    if let Some(seed) = seed {
        cfg.base_seed = seed;
    }
    let stats = match dual_filter_experiment(&cfg, threads) {
        Ok(s) => s,
        Err(e) => return CommandResult::failure(EXIT_INVALID, format!("error: {e}")),
    };
    let last = stats.steps() - 1;
    let max_ratio = empirical_contraction(&stats)
        .iter()
        .map(|r| r.ratio)
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
    let within = stats.within_envelope(ENVELOPE_SLACK);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model        {} ({} backend)",
        cfg.model_id,
        backend_name(&cfg)
    );
    let _ = writeln!(
        s,
        "trials       {} used, {} excluded, horizon {}, seed {}",
        stats.trials_used, stats.excluded, cfg.horizon, cfg.base_seed
    );
    let _ = writeln!(s, "alpha        {}", sig4(stats.alpha));
    let _ = writeln!(s, "step      mean_tv      ci95  envelope     ratio");
    for row in stats.rows() {
        let _ = writeln!(
            s,
            "{:>4} {:>10} {:>9} {:>9} {:>9}",
            row.step,
            sig4(row.mean_tv),
            sig4(row.ci95),
            sig4(row.envelope),
            row.ratio.map_or_else(|| "-".to_string(), sig4)
        );
    }
    let _ = writeln!(
        s,
        "final mean TV {} (+/- {})",
        sig4(stats.mean_tv[last]),
        sig4(stats.ci95[last])
    );
    let _ = writeln!(
        s,
        "max ratio    {}",
        max_ratio.map_or_else(|| "-".to_string(), sig4)
    );
    let _ = writeln!(
        s,
        "envelope     {} (mean <= envelope + {ENVELOPE_SLACK} CI at every step)",
        if within { "satisfied" } else { "violated" }
    );
    let mut result = CommandResult {
        stdout: s,
        ..Default::default()
    };
    if stats.warning {
        result.stderr = format!(
            "warning: {} of {} trials excluded after a degenerate update\n",
            stats.excluded, cfg.trials
        );
    }
    out.finish(result, &stats.rows())
}

fn backend_name(cfg: &crate::simulate::ExperimentConfig) -> &'static str {
    match cfg.backend {
        crate::simulate::Backend::Finite => "finite",
        crate::simulate::Backend::Grid => "grid",
    }
}

#[derive(Serialize)]
struct Table1Row {
    transition_ratio: f64,
    status: &'static str,
    threshold: Option<f64>,
    delta_t: f64,
    delta_q: Option<f64>,
}

pub fn cmd_table1(ratios: Option<&[f64]>, out: &Output) -> CommandResult {
    let ratios = ratios.unwrap_or(&TABLE1_RATIOS);
    let mut columns = Vec::with_capacity(ratios.len());
    for &rt in ratios {
        match threshold_column(rt) {
            Ok(c) => columns.push(c),
            Err(e) => return CommandResult::failure(EXIT_INVALID, format!("error: {e}")),
        }
    }
    let rows: Vec<Table1Row> = columns
        .iter()
        .map(|c| {
            let (status, threshold) = match c.threshold {
                MeasurementThreshold::NotRequired => ("not_required", None),
                MeasurementThreshold::Ratio(r) => ("ratio", Some(r)),
                MeasurementThreshold::Unbounded => ("unbounded", Some(f64::INFINITY)),
            };
            Table1Row {
                transition_ratio: c.transition_ratio,
                status,
                threshold,
                delta_t: c.delta_t,
                delta_q: c.delta_q,
            }
        })
        .collect();
    let mut lines: [(String, Vec<String>); 4] = [
        ("sigma_t/t".into(), Vec::new()),
        ("sigma_q/q".into(), Vec::new()),
        ("delta(T)".into(), Vec::new()),
        ("delta(Q)".into(), Vec::new()),
    ];
    for c in &columns {
        lines[0].1.push(sig4(c.transition_ratio));
        lines[1].1.push(match c.threshold {
            MeasurementThreshold::NotRequired => "N/A".into(),
            MeasurementThreshold::Ratio(r) => sig4(r),
            MeasurementThreshold::Unbounded => "inf".into(),
        });
        lines[2].1.push(sig4(c.delta_t));
        lines[3]
            .1
            .push(c.delta_q.map_or_else(|| "N/A".into(), sig4));
    }
    let width = lines
        .iter()
        .flat_map(|(_, cells)| cells.iter().map(String::len))
        .max()
        .unwrap_or(0);
    let mut s = String::new();
    for (label, cells) in &lines {
        let _ = write!(s, "{label:<10}");
        for cell in cells {
            let _ = write!(s, " {cell:>width$}");
        }
        s.push('\n');
    }
    out.finish(
        CommandResult {
            stdout: s,
            ..Default::default()
        },
        &rows,
    )
}

/// Ratio of posterior to prior distance observed for the worked example.
const EXAMPLE3_OBSERVED_RATIO: f64 = 1.24;

pub fn cmd_example3(out: &Output) -> CommandResult {
    let q = StochasticMatrix::from_rows(vec![
        vec![0.1, 0.3, 0.6],
        vec![0.5, 0.3, 0.2],
        vec![0.9, 0.1, 0.0],
    ])
    .expect("example channel is stochastic");
    let mu = FiniteDistribution::new(vec![0.05, 0.65, 0.3]).expect("valid prior");
    let nu = FiniteDistribution::new(vec![0.2, 0.65, 0.15]).expect("valid prior");
    let prior_tv = tv_distance(&mu, &nu).expect("same dimension");
    let posterior_tv = expected_bayes_expansion(&mu, &nu, &q).expect("mu << nu");
    let delta_q = q.dobrushin();
    let bound = (2.0 - delta_q) * prior_tv;
    let mut s = String::new();
    let _ = writeln!(s, "prior TV                  {}", sig4(prior_tv));
    let _ = writeln!(s, "expected posterior TV     {}", sig4(posterior_tv));
    let _ = writeln!(s, "delta(Q)                  {}", sig4(delta_q));
    let _ = writeln!(s, "bound (2 - delta(Q)) TV   {}", sig4(bound));
    let _ = writeln!(
        s,
        "bound holds               {}",
        if posterior_tv <= bound { "yes" } else { "no" }
    );
    let _ = writeln!(
        s,
        "expansion ratio           {} (reported in the literature as {EXAMPLE3_OBSERVED_RATIO}, against the factor {})",
        sig4(posterior_tv / prior_tv),
        sig4(2.0 - delta_q)
    );
    let mut rows = Vec::new();
    q_rows(&mut rows, prior_tv, posterior_tv, delta_q, bound);
    out.finish(
        CommandResult {
            stdout: s,
            ..Default::default()
        },
        &rows,
    )
}

fn q_rows(rows: &mut Vec<QuantityRow>, prior_tv: f64, posterior_tv: f64, delta_q: f64, bound: f64) {
    q(rows, "prior_tv", prior_tv);
    q(rows, "expected_posterior_tv", posterior_tv);
    q(rows, "delta_q", delta_q);
    q(rows, "bound", bound);
    q(rows, "ratio", posterior_tv / prior_tv);
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                CommandResult::failure(EXIT_INVALID, text)
            } else {
                CommandResult {
                    stdout: text,
                    ..Default::default()
                }
            };
        }
    };
    let out = Output {
        csv: cli.csv.clone(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Analyze { model } => cmd_analyze(model, &out),
        Command::Validate { model } => cmd_validate(model, &out),
        Command::Simulate { config } => match threads_from_env() {
            Ok(threads) => cmd_simulate(config, cli.seed, threads, &out),
            Err(msg) => CommandResult::failure(EXIT_INVALID, format!("error: {msg}")),
        },
        Command::Table1 { ratios } => cmd_table1(ratios.as_deref(), &out),
        Command::Example3 => cmd_example3(&out),
    }
}
