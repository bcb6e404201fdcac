//! JSON model and experiment files.
//!
//! A model document carries `"version": 1`, a `name`, a `kind` of `"finite"`
//! or `"gaussian1d"`, and exactly one matching body:
//!
//! ```json
//! { "version": 1, "name": "two-state", "kind": "finite",
//!   "finite": { "transition": [[0.8, 0.2], [0.4, 0.6]],
//!               "observation": [[0.9, 0.1], [0.2, 0.8]],
//!               "actions": { "hold": [[1.0, 0.0], [0.0, 1.0]] } } }
//!
//! { "version": 1, "name": "sine-tanh", "kind": "gaussian1d",
//!   "gaussian1d": { "f": { "family": "sine", "amplitude": 1.0, "frequency": 1.0, "phase": 0.0 },
//!                   "sigma_t": 1.2,
//!                   "g": { "family": "tanh", "scale": 1.0, "gain": 1.0 },
//!                   "sigma_q": 1.5 } }
//! ```
//!
//! Validation collects every problem it finds; each [`Diagnostic`] names the
//! JSON pointer it concerns and a stable rule id.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::filter::{FilterModel, LikelihoodTable};
use crate::kernels::{Gaussian1DKernel, MeanFunction, StochasticMatrix};
use crate::measures::{FiniteDistribution, GridDensity, GridSpec, FINITE_TOL};
use crate::simulate::{Backend, ExperimentConfig};
use crate::stability::{controlled_delta_tilde, StabilityReport};

pub const FORMAT_VERSION: u64 = 1;

/// Validation rule ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Syntax,
    VersionMismatch,
    MissingField,
    WrongType,
    UnknownKind,
    EmptyMatrix,
    RaggedMatrix,
    NegativeEntry,
    RowStochasticViolation,
    DimensionMismatch,
    PositiveSigmaRequired,
    UnknownMeanFamily,
    InvalidMeanParameters,
    EmptyActionKey,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::Syntax => "syntax",
            Rule::VersionMismatch => "version_mismatch",
            Rule::MissingField => "missing_field",
            Rule::WrongType => "wrong_type",
            Rule::UnknownKind => "unknown_kind",
            Rule::EmptyMatrix => "empty_matrix",
            Rule::RaggedMatrix => "ragged_matrix",
            Rule::NegativeEntry => "negative_entry",
            Rule::RowStochasticViolation => "row_stochastic_violation",
            Rule::DimensionMismatch => "dimension_mismatch",
            Rule::PositiveSigmaRequired => "positive_sigma_required",
            Rule::UnknownMeanFamily => "unknown_mean_family",
            Rule::InvalidMeanParameters => "invalid_mean_parameters",
            Rule::EmptyActionKey => "empty_action_key",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// JSON pointer into the document (`""` for the root).
    pub path: String,
    pub rule: Rule,
    pub message: String,
    /// Size of the violation for numeric rules (e.g. a row-sum defect).
    pub defect: Option<f64>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "/"
        } else {
            &self.path
        };
        write!(f, "{path}: [{}] {}", self.rule, self.message)
    }
}

/// Non-empty list of validation findings.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn iter(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter()
    }

    pub fn has_rule(&self, rule: Rule) -> bool {
        self.0.iter().any(|d| d.rule == rule)
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostics {}

/// Finite model: transition `T` (n x n), channel `Q` (n x k) and optional
/// per-action transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteModel {
    pub transition: StochasticMatrix,
    pub observation: StochasticMatrix,
    pub actions: BTreeMap<String, StochasticMatrix>,
}

/// Additive-Gaussian model `x' = f(x) + N(0, sigma_t^2)`, `y = g(x) + N(0, sigma_q^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub transition: Gaussian1DKernel,
    pub observation: Gaussian1DKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Finite(FiniteModel),
    Gaussian1d(GaussianModel),
}

/// A partially observed Markov model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PompModel {
    pub name: String,
    pub kind: ModelKind,
}

/// Dobrushin coefficients of a model, with the per-action breakdown for
/// controlled models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub delta_t: f64,
    pub delta_q: f64,
    /// `(action, delta)` pairs in key order; empty for uncontrolled models.
    pub per_action: Vec<(String, f64)>,
    /// Minimum over the action kernels, when there are any.
    pub delta_tilde: Option<f64>,
}

impl ModelCoefficients {
    /// Transition coefficient that holds for every kernel the model can use.
    pub fn effective_delta_t(&self) -> f64 {
        self.delta_tilde
            .map_or(self.delta_t, |d| d.min(self.delta_t))
    }

    pub fn report(&self) -> StabilityReport {
        StabilityReport::new(self.effective_delta_t(), self.delta_q)
            .expect("Dobrushin coefficients lie in [0, 1]")
    }
}

impl PompModel {
    pub fn coefficients(&self) -> ModelCoefficients {
        match &self.kind {
            ModelKind::Finite(m) => {
                let per_action: Vec<(String, f64)> = m
                    .actions
                    .iter()
                    .map(|(k, t)| (k.clone(), t.dobrushin()))
                    .collect();
                ModelCoefficients {
                    delta_t: m.transition.dobrushin(),
                    delta_q: m.observation.dobrushin(),
                    delta_tilde: controlled_delta_tilde(m.actions.values()).ok(),
                    per_action,
                }
            }
            ModelKind::Gaussian1d(g) => ModelCoefficients {
                delta_t: g.transition.dobrushin_analytic(),
                delta_q: g.observation.dobrushin_analytic(),
                per_action: Vec::new(),
                delta_tilde: None,
            },
        }
    }

    /// Filter model over the model's own states (finite) or over the cells of
    /// `grid` (Gaussian).
    pub fn filter_model(&self, grid: Option<&GridSpec>) -> crate::Result<FilterModel> {
        match &self.kind {
            ModelKind::Finite(m) => {
                let model = FilterModel::controlled(
                    m.transition.clone(),
                    m.actions.clone(),
                    LikelihoodTable::Finite(m.observation.clone()),
                )?;
                if let Some(grid) = grid {
                    if grid.cells != model.states() {
                        return Err(Error::DimensionMismatch {
                            expected: model.states(),
                            found: grid.cells,
                        });
                    }
                }
                Ok(model)
            }
            ModelKind::Gaussian1d(g) => {
                let grid = grid.ok_or_else(|| {
                    Error::Contract("a gaussian1d model needs a grid to be filtered".into())
                })?;
                FilterModel::gaussian_grid(g.transition.discretize(grid, grid)?, &g.observation)
            }
        }
    }
}

struct Validator {
    diags: Vec<Diagnostic>,
}

fn pointer(parent: &str, key: impl fmt::Display) -> String {
    format!("{parent}/{key}")
}

impl Validator {
    fn report(&mut self, path: &str, rule: Rule, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            path: path.to_string(),
            rule,
            message: message.into(),
            defect: None,
        });
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        let obj = v.as_object();
        if obj.is_none() {
            self.report(path, Rule::WrongType, "expected an object");
        }
        obj
    }

    fn field<'v>(
        &mut self,
        obj: &'v Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Option<&'v Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.report(
                &pointer(path, key),
                Rule::MissingField,
                format!("missing field {key:?}"),
            );
        }
        v
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        let n = v.as_f64();
        if n.is_none() {
            self.report(path, Rule::WrongType, "expected a number");
        }
        n
    }

    fn number_field(&mut self, obj: &Map<String, Value>, key: &str, path: &str) -> Option<f64> {
        let v = self.field(obj, key, path)?;
        self.number(v, &pointer(path, key))
    }

    fn numbers(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.report(path, Rule::WrongType, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match self.number(item, &pointer(path, i)) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn matrix(&mut self, v: &Value, path: &str) -> Option<StochasticMatrix> {
        let Some(rows) = v.as_array() else {
            self.report(path, Rule::WrongType, "expected an array of rows");
            return None;
        };
        if rows.is_empty() {
            self.report(path, Rule::EmptyMatrix, "matrix has no rows");
            return None;
        }
        let before = self.diags.len();
        let parsed: Vec<Option<Vec<f64>>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.numbers(r, &pointer(path, i)))
            .collect();
        if self.diags.len() > before {
            return None;
        }
        let rows: Vec<Vec<f64>> = parsed.into_iter().flatten().collect();
        let width = rows[0].len();
        if width == 0 {
            self.report(&pointer(path, 0), Rule::EmptyMatrix, "row has no entries");
            return None;
        }
        for (i, row) in rows.iter().enumerate() {
            let row_path = pointer(path, i);
            if row.len() != width {
                self.report(
                    &row_path,
                    Rule::RaggedMatrix,
                    format!("row has {} entries, expected {width}", row.len()),
                );
                continue;
            }
            for (j, x) in row.iter().enumerate() {
                if !x.is_finite() || *x < 0.0 {
                    self.report(
                        &pointer(&row_path, j),
                        Rule::NegativeEntry,
                        format!("entry {x} must be finite and non-negative"),
                    );
                }
            }
            let total: f64 = row.iter().sum();
            let defect = (total - 1.0).abs();
            if defect > FINITE_TOL {
                self.diags.push(Diagnostic {
                    path: row_path,
                    rule: Rule::RowStochasticViolation,
                    message: format!("row {i} sums to {total}, defect {defect:.6}"),
                    defect: Some(defect),
                });
            }
        }
        if self.diags.len() > before {
            return None;
        }
        match StochasticMatrix::from_rows(rows) {
            Ok(m) => Some(m),
            Err(e) => {
                self.report(path, Rule::RowStochasticViolation, e.to_string());
                None
            }
        }
    }

    fn mean_function(&mut self, v: &Value, path: &str) -> Option<MeanFunction> {
        let obj = self.object(v, path)?;
        let family = self.field(obj, "family", path)?;
        let Some(family) = family.as_str() else {
            self.report(
                &pointer(path, "family"),
                Rule::WrongType,
                "expected a string",
            );
            return None;
        };
        let before = self.diags.len();
        let f = match family {
            "affine" => MeanFunction::Affine {
                a: self.number_field(obj, "a", path)?,
                b: self.number_field(obj, "b", path)?,
                clip: self.number_field(obj, "clip", path)?,
            },
            "sine" => MeanFunction::Sine {
                amplitude: self.number_field(obj, "amplitude", path)?,
                frequency: self.number_field(obj, "frequency", path)?,
                phase: self.number_field(obj, "phase", path)?,
            },
            "tanh" => MeanFunction::Tanh {
                scale: self.number_field(obj, "scale", path)?,
                gain: self.number_field(obj, "gain", path)?,
            },
            "table" => {
                let xs = self
                    .field(obj, "xs", path)
                    .and_then(|v| self.numbers(v, &pointer(path, "xs")));
                let ys = self
                    .field(obj, "ys", path)
                    .and_then(|v| self.numbers(v, &pointer(path, "ys")));
                MeanFunction::Table { xs: xs?, ys: ys? }
            }
            other => {
                self.report(
                    &pointer(path, "family"),
                    Rule::UnknownMeanFamily,
                    format!("unknown mean function family {other:?} (expected affine, sine, tanh or table)"),
                );
                return None;
            }
        };
        if self.diags.len() > before {
            return None;
        }
        if let Err(msg) = f.validate() {
            self.report(path, Rule::InvalidMeanParameters, msg);
            return None;
        }
        Some(f)
    }

    fn gaussian_kernel(
        &mut self,
        obj: &Map<String, Value>,
        mean_key: &str,
        sigma_key: &str,
        path: &str,
    ) -> Option<Gaussian1DKernel> {
        let mean = self
            .field(obj, mean_key, path)
            .and_then(|v| self.mean_function(v, &pointer(path, mean_key)));
        let sigma = self.number_field(obj, sigma_key, path);
        if let Some(s) = sigma {
            if !(s > 0.0 && s.is_finite()) {
                self.report(
                    &pointer(path, sigma_key),
                    Rule::PositiveSigmaRequired,
                    format!("{sigma_key} must be positive, got {s}"),
                );
                return None;
            }
        }
        match Gaussian1DKernel::new(mean?, sigma?) {
            Ok(k) => Some(k),
            Err(e) => {
                self.report(path, Rule::InvalidMeanParameters, e.to_string());
                None
            }
        }
    }

    fn finite_body(&mut self, v: &Value, path: &str) -> Option<FiniteModel> {
        let obj = self.object(v, path)?;
        let transition = self
            .field(obj, "transition", path)
            .and_then(|v| self.matrix(v, &pointer(path, "transition")));
        let observation = self
            .field(obj, "observation", path)
            .and_then(|v| self.matrix(v, &pointer(path, "observation")));
        let mut actions = BTreeMap::new();
        if let Some(a) = obj.get("actions") {
            let apath = pointer(path, "actions");
            if let Some(map) = self.object(a, &apath) {
                for (key, m) in map {
                    let kpath = pointer(&apath, key);
                    if key.is_empty() {
                        self.report(
                            &kpath,
                            Rule::EmptyActionKey,
                            "action keys must be non-empty",
                        );
                        continue;
                    }
                    if let Some(m) = self.matrix(m, &kpath) {
                        actions.insert(key.clone(), m);
                    }
                }
            }
        }
        let (transition, observation) = (transition?, observation?);
        let n = transition.rows();
        let mut ok = true;
        for (p, m) in std::iter::once((pointer(path, "transition"), &transition)).chain(
            actions
                .iter()
                .map(|(k, m)| (pointer(&pointer(path, "actions"), k), m)),
        ) {
            if m.rows() != n || m.cols() != n {
                self.report(
                    &p,
                    Rule::DimensionMismatch,
                    format!(
                        "transition kernels must be {n}x{n}, got {}x{}",
                        m.rows(),
                        m.cols()
                    ),
                );
                ok = false;
            }
        }
        if observation.rows() != n {
            self.report(
                &pointer(path, "observation"),
                Rule::DimensionMismatch,
                format!(
                    "observation matrix needs {n} rows (one per state), got {}",
                    observation.rows()
                ),
            );
            ok = false;
        }
        ok.then_some(FiniteModel {
            transition,
            observation,
            actions,
        })
    }

    fn gaussian_body(&mut self, v: &Value, path: &str) -> Option<GaussianModel> {
        let obj = self.object(v, path)?;
        let transition = self.gaussian_kernel(obj, "f", "sigma_t", path);
        let observation = self.gaussian_kernel(obj, "g", "sigma_q", path);
        Some(GaussianModel {
            transition: transition?,
            observation: observation?,
        })
    }

    fn model(&mut self, doc: &Value) -> Option<PompModel> {
        let root = self.object(doc, "")?;
        match root.get("version").map(Value::as_u64) {
            None => self.report("/version", Rule::MissingField, "missing field \"version\""),
            Some(Some(FORMAT_VERSION)) => {}
            Some(other) => self.report(
                "/version",
                Rule::VersionMismatch,
                format!(
                    "unsupported format version {}, expected {FORMAT_VERSION}",
                    other.map_or_else(|| root["version"].to_string(), |v| v.to_string())
                ),
            ),
        }
        let name = match self.field(root, "name", "") {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.report("/name", Rule::WrongType, "expected a string");
                None
            }
            None => None,
        };
        let kind = match self.field(root, "kind", "")?.as_str() {
            Some("finite") => {
                if root.contains_key("gaussian1d") {
                    self.report(
                        "/gaussian1d",
                        Rule::UnknownKind,
                        "a finite model must not carry a gaussian1d body",
                    );
                }
                let body = self.field(root, "finite", "")?;
                self.finite_body(body, "/finite").map(ModelKind::Finite)
            }
            Some("gaussian1d") => {
                if root.contains_key("finite") {
                    self.report(
                        "/finite",
                        Rule::UnknownKind,
                        "a gaussian1d model must not carry a finite body",
                    );
                }
                let body = self.field(root, "gaussian1d", "")?;
                self.gaussian_body(body, "/gaussian1d")
                    .map(ModelKind::Gaussian1d)
            }
            Some(other) => {
                self.report(
                    "/kind",
                    Rule::UnknownKind,
                    format!("unknown model kind {other:?}"),
                );
                None
            }
            None => {
                self.report("/kind", Rule::WrongType, "expected a string");
                None
            }
        };
        Some(PompModel {
            name: name?,
            kind: kind?,
        })
    }
}

/// Parses and validates a model document.
pub fn parse_model(text: &[u8]) -> Result<PompModel, Diagnostics> {
    let doc: Value = serde_json::from_slice(text).map_err(|e| {
        Diagnostics(vec![Diagnostic {
            path: String::new(),
            rule: Rule::Syntax,
            message: e.to_string(),
            defect: None,
        }])
    })?;
    let mut v = Validator { diags: Vec::new() };
    let model = v.model(&doc);
    match model {
        Some(m) if v.diags.is_empty() => Ok(m),
        _ => {
            if v.diags.is_empty() {
                v.report("", Rule::WrongType, "document is not a model");
            }
            Err(Diagnostics(v.diags))
        }
    }
}

fn matrix_json(m: &StochasticMatrix) -> Value {
    json!(m.row_vectors())
}

fn mean_json(f: &MeanFunction) -> Value {
    match f {
        MeanFunction::Affine { a, b, clip } => {
            json!({"family": "affine", "a": a, "b": b, "clip": clip})
        }
        MeanFunction::Sine {
            amplitude,
            frequency,
            phase,
        } => {
            json!({"family": "sine", "amplitude": amplitude, "frequency": frequency, "phase": phase})
        }
        MeanFunction::Tanh { scale, gain } => {
            json!({"family": "tanh", "scale": scale, "gain": gain})
        }
        MeanFunction::Table { xs, ys } => json!({"family": "table", "xs": xs, "ys": ys}),
    }
}

/// Canonical pretty-printed JSON: keys sorted, actions in lexicographic order,
/// reals in shortest round-trip decimal form.
pub fn serialize_model(m: &PompModel) -> String {
    let body = match &m.kind {
        ModelKind::Finite(f) => {
            let mut finite = json!({
                "transition": matrix_json(&f.transition),
                "observation": matrix_json(&f.observation),
            });
            if !f.actions.is_empty() {
                let actions: Map<String, Value> = f
                    .actions
                    .iter()
                    .map(|(k, t)| (k.clone(), matrix_json(t)))
                    .collect();
                finite["actions"] = Value::Object(actions);
            }
            ("finite", finite)
        }
        ModelKind::Gaussian1d(g) => (
            "gaussian1d",
            json!({
                "f": mean_json(g.transition.mean_fn()),
                "sigma_t": g.transition.sigma(),
                "g": mean_json(g.observation.mean_fn()),
                "sigma_q": g.observation.sigma(),
            }),
        ),
    };
    let mut doc = json!({
        "version": FORMAT_VERSION,
        "name": m.name,
        "kind": body.0,
    });
    doc[body.0] = body.1;
    let mut out = serde_json::to_string_pretty(&doc).expect("model JSON is always serialisable");
    out.push('\n');
    out
}

/// Prior given either as explicit weights over states/cells or as a shape
/// evaluated on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Weights(Vec<f64>),
    Shape(PriorShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorShape {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFileSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

/// Experiment configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub version: u64,
    /// Model file path, relative to the config file's directory.
    pub model: PathBuf,
    pub mu: PriorSpec,
    pub nu: PriorSpec,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridFileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<String>>,
}

fn default_backend() -> Backend {
    Backend::Finite
}

/// Why an experiment could not be loaded.
#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid model {path}:\n{diagnostics}")]
    Model {
        path: PathBuf,
        diagnostics: Diagnostics,
    },
    #[error("invalid experiment config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid experiment: {0}")]
    Contract(#[from] Error),
}

impl LoadError {
    pub fn is_io(&self) -> bool {
        matches!(self, LoadError::Io { .. })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, LoadError> {
    std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a model file.
pub fn load_model(path: &Path) -> Result<PompModel, LoadError> {
    parse_model(&read(path)?).map_err(|diagnostics| LoadError::Model {
        path: path.to_path_buf(),
        diagnostics,
    })
}

impl PriorSpec {
    fn resolve(&self, states: usize, grid: Option<&GridSpec>) -> crate::Result<FiniteDistribution> {
        match (self, grid) {
            (PriorSpec::Weights(w), _) => {
                if w.len() != states {
                    return Err(Error::DimensionMismatch {
                        expected: states,
                        found: w.len(),
                    });
                }
                FiniteDistribution::new(w.clone())
            }
            (PriorSpec::Shape(shape), Some(grid)) => {
                let density = match *shape {
                    PriorShape::Normal { mean, sd } => {
                        if sd.is_nan() || sd <= 0.0 {
                            return Err(Error::InvalidDistribution(format!(
                                "normal prior needs sd > 0, got {sd}"
                            )));
                        }
                        GridDensity::from_fn(*grid, |x| {
                            crate::kernels::normal::normal_pdf(x, mean, sd)
                        })?
                    }
                    PriorShape::Uniform { lo, hi } => {
                        GridDensity::from_fn(
                            *grid,
                            |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
                        )?
                    }
                };
                Ok(density.cell_masses())
            }
            (PriorSpec::Shape(_), None) => Err(Error::Contract(
                "shaped priors need the grid backend; give explicit weights instead".into(),
            )),
        }
    }
}

impl ExperimentFile {
    pub fn parse(text: &[u8], path: &Path) -> Result<Self, LoadError> {
        let file: Self = serde_json::from_slice(text).map_err(|e| LoadError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.version != FORMAT_VERSION {
            return Err(LoadError::Config {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported format version {}, expected {FORMAT_VERSION}",
                    file.version
                ),
            });
        }
        Ok(file)
    }

    /// Loads the referenced model and builds the runnable experiment.
    pub fn resolve(&self, base_dir: &Path) -> Result<ExperimentConfig, LoadError> {
        let model_path = base_dir.join(&self.model);
        let pomp = load_model(&model_path)?;
        let grid = match (self.backend, self.grid) {
            (Backend::Finite, _) => None,
            (Backend::Grid, Some(g)) => Some(GridSpec::new(g.lo, g.hi, g.cells)?),
            (Backend::Grid, None) => {
                return Err(LoadError::Config {
                    path: base_dir.to_path_buf(),
                    message: "the grid backend needs a \"grid\" entry".into(),
                })
            }
        };
        if matches!(pomp.kind, ModelKind::Gaussian1d(_)) && grid.is_none() {
            return Err(LoadError::Contract(Error::Contract(
                "gaussian1d models run on the grid backend".into(),
            )));
        }
        let model = pomp.filter_model(grid.as_ref())?;
        let states = model.states();
        let true_prior = self.mu.resolve(states, grid.as_ref())?;
        let false_prior = self.nu.resolve(states, grid.as_ref())?;
        Ok(ExperimentConfig {
            model_id: pomp.name.clone(),
            backend: self.backend,
            report: pomp.coefficients().report(),
            model,
            true_prior,
            false_prior,
            horizon: self.horizon,
            trials: self.trials,
            base_seed: self.seed,
            policy: self.policy.clone(),
        })
    }
}

/// Reads an experiment config and everything it references.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, LoadError> {
    let file = ExperimentFile::parse(&read(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = file.resolve(base)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FINITE: &str = r#"{
        "version": 1, "name": "ex", "kind": "finite",
        "finite": {
            "transition": [[0, 0.3333333333333333, 0.6666666666666666], [0.5, 0.5, 0], [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]],
            "observation": [[0.1, 0.3, 0.6], [0.5, 0.3, 0.2], [0.9, 0.1, 0]],
            "actions": {"zeta": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "alpha": [[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]]}
        }
    }"#;

    const GAUSSIAN: &str = r#"{
        "version": 1, "name": "g", "kind": "gaussian1d",
        "gaussian1d": {
            "f": {"family": "sine", "amplitude": 1.0, "frequency": 1.0, "phase": 0.0},
            "sigma_t": 1.2,
            "g": {"family": "table", "xs": [-1, 0, 1], "ys": [-1, 0.5, 1]},
            "sigma_q": 1.5
        }
    }"#;

    #[test]
    fn parses_finite_model() {
        let m = parse_model(FINITE.as_bytes()).unwrap();
        let ModelKind::Finite(f) = &m.kind else {
            panic!()
        };
        assert_eq!(f.observation.entry(2, 0), 0.9);
        assert_eq!(f.actions.keys().collect::<Vec<_>>(), ["alpha", "zeta"]);
        let c = m.coefficients();
        assert!((c.delta_t - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.delta_q - 0.2).abs() < 1e-15);
        assert_eq!(c.delta_tilde, Some(0.0));
        assert_eq!(
            c.per_action,
            vec![("alpha".to_string(), 1.0), ("zeta".to_string(), 0.0)]
        );
    }

    #[test]
    fn round_trips() {
        for doc in [FINITE, GAUSSIAN] {
            let m = parse_model(doc.as_bytes()).unwrap();
            let text = serialize_model(&m);
            let again = parse_model(text.as_bytes()).unwrap();
            assert_eq!(m, again);
            assert_eq!(text, serialize_model(&again));
        }
        let text = serialize_model(&parse_model(FINITE.as_bytes()).unwrap());
        assert!(text.find("\"alpha\"").unwrap() < text.find("\"zeta\"").unwrap());
    }

    fn rules(doc: &str) -> Vec<(String, &'static str)> {
        parse_model(doc.as_bytes())
            .unwrap_err()
            .iter()
            .map(|d| (d.path.clone(), d.rule.id()))
            .collect()
    }

    #[test]
    fn row_sum_violation_reports_defect() {
        let doc = r#"{"version": 1, "name": "bad", "kind": "finite",
            "finite": {"transition": [[0.5, 0.5], [0.49, 0.5]], "observation": [[1, 0], [0, 1]]}}"#;
        let diags = parse_model(doc.as_bytes()).unwrap_err();
        assert_eq!(diags.0.len(), 1);
        let d = &diags.0[0];
        assert_eq!(d.rule, Rule::RowStochasticViolation);
        assert_eq!(d.path, "/finite/transition/1");
        assert!((d.defect.unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn validation_rules_fire() {
        assert_eq!(rules("{not json")[0].1, "syntax");
        assert_eq!(
            rules(&FINITE.replace("\"version\": 1", "\"version\": 2")),
            vec![("/version".to_string(), "version_mismatch")]
        );
        assert_eq!(
            rules(&GAUSSIAN.replace("\"sigma_t\": 1.2", "\"sigma_t\": 0")),
            vec![("/gaussian1d/sigma_t".to_string(), "positive_sigma_required")]
        );
        assert_eq!(
            rules(&GAUSSIAN.replace("\"sine\"", "\"cubic\"")),
            vec![("/gaussian1d/f/family".to_string(), "unknown_mean_family")]
        );
        assert_eq!(
            rules(&GAUSSIAN.replace("[-1, 0, 1]", "[1, 0, -1]")),
            vec![("/gaussian1d/g".to_string(), "invalid_mean_parameters")]
        );
        assert_eq!(
            rules(&FINITE.replace("\"zeta\"", "\"\"")),
            vec![("/finite/actions/".to_string(), "empty_action_key")]
        );
        assert_eq!(
            rules(&FINITE.replace("\"finite\",", "\"quantum\",")),
            vec![("/kind".to_string(), "unknown_kind")]
        );
        assert_eq!(
            rules(&FINITE.replace("[0.9, 0.1, 0]", "[0.9, 0.2, -0.1]")),
            vec![("/finite/observation/2/2".to_string(), "negative_entry")]
        );
        assert_eq!(
            rules(&FINITE.replace("[0.9, 0.1, 0]]", "[0.9, 0.1]]")),
            vec![("/finite/observation/2".to_string(), "ragged_matrix")]
        );
        assert_eq!(
            rules(
                r#"{"version": 1, "name": "x", "kind": "finite",
                "finite": {"transition": [[1, 0], [0, 1]], "observation": [[1]]}}"#
            ),
            vec![("/finite/observation".to_string(), "dimension_mismatch")]
        );
        assert_eq!(
            rules(
                r#"{"version": 1, "kind": "finite", "finite": {"transition": [[1]], "observation": []}}"#
            ),
            vec![
                ("/name".to_string(), "missing_field"),
                ("/finite/observation".to_string(), "empty_matrix")
            ]
        );
        assert_eq!(
            rules(
                r#"{"version": 1, "name": "x", "kind": "finite", "finite": {"transition": "I", "observation": [[1]]}}"#
            ),
            vec![("/finite/transition".to_string(), "wrong_type")]
        );
    }

    #[test]
    fn gaussian_coefficients() {
        let m = parse_model(GAUSSIAN.as_bytes()).unwrap();
        let c = m.coefficients();
        assert!((c.delta_t - 0.4047).abs() < 1e-4);
        assert!((c.delta_q - 0.5050).abs() < 1e-4);
        assert!(m.filter_model(None).is_err());
        let grid = GridSpec::new(-9.0, 9.0, 100).unwrap();
        assert_eq!(m.filter_model(Some(&grid)).unwrap().states(), 100);
    }

    #[test]
    fn experiment_file_shapes() {
        let text = br#"{"version": 1, "model": "m.json", "mu": {"normal": {"mean": 1, "sd": 0.5}},
            "nu": [0.5, 0.5], "horizon": 3, "trials": 10, "seed": 4, "backend": "grid",
            "grid": {"lo": -1, "hi": 1, "cells": 2}}"#;
        let f = ExperimentFile::parse(text, Path::new("c.json")).unwrap();
        assert_eq!(
            f.mu,
            PriorSpec::Shape(PriorShape::Normal { mean: 1.0, sd: 0.5 })
        );
        assert_eq!(f.nu, PriorSpec::Weights(vec![0.5, 0.5]));
        assert!(ExperimentFile::parse(br#"{"version": 1}"#, Path::new("c.json")).is_err());
    }
}
