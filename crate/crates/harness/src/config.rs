//! Experiment configuration files.
//!
//! Configs are TOML. Parsing is strict: unknown keys are errors and every
//! default is written back into the parsed value, so [`emit`] produces a
//! self-contained "resolved" config that parses to the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use zofl::oracle::{make_circle_problem, make_thermal_problem};
use zofl::theory::{circle_constants, RegularityConstants};
use zofl::{
    Algorithm, BlackBoxProblem, ConstraintKind, EstimatorConfig, GainMatrix, GradientMode, Matrix, NonconvexQp,
    RunConfig, ScheduleKind, StepSchedule, ThermalModel, Vector, RNG_ALGORITHM,
};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub plots: bool,
    /// Generator behind every seed; only the built-in one is accepted.
    #[serde(default = "default_rng")]
    pub rng: String,
    /// Starting point; defaults per problem (QP: 0, thermal: k = b = 0,
    /// circle: (1.2, 0)).
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub problem: ProblemSpec,
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub bounds: Option<BoundsSpec>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

fn default_rng() -> String {
    RNG_ALGORITHM.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `min ½‖x‖² + cᵀx  s.t. ½‖x‖² + aᵀx + b = 0`.
    Qp {
        #[serde(default = "default_qp_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_qp_offset")]
        b: f64,
    },
    Thermal(ThermalSpec),
    Circle,
}

fn default_qp_n() -> usize {
    20
}

fn default_qp_offset() -> f64 {
    NonconvexQp::DEFAULT_OFFSET
}

/// Thermal model with row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSpec {
    #[serde(default = "thermal_default_a")]
    pub a: Vec<Vec<f64>>,
    #[serde(default = "thermal_default_b")]
    pub b: Vec<Vec<f64>>,
    #[serde(default = "thermal_default_d")]
    pub d: Vec<f64>,
    #[serde(default = "thermal_default_horizon")]
    pub horizon: usize,
    #[serde(default = "thermal_default_x_set")]
    pub x_set: f64,
    #[serde(default = "thermal_default_comfort")]
    pub comfort_budget: f64,
    #[serde(default = "thermal_default_x_init")]
    pub x_init: Vec<f64>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn thermal_default_a() -> Vec<Vec<f64>> {
    rows(&ThermalModel::default_instance().a)
}
fn thermal_default_b() -> Vec<Vec<f64>> {
    rows(&ThermalModel::default_instance().b)
}
fn thermal_default_d() -> Vec<f64> {
    ThermalModel::default_instance().d.iter().copied().collect()
}
fn thermal_default_horizon() -> usize {
    ThermalModel::default_instance().horizon
}
fn thermal_default_x_set() -> f64 {
    ThermalModel::default_instance().x_set
}
fn thermal_default_comfort() -> f64 {
    ThermalModel::default_instance().comfort_budget
}
fn thermal_default_x_init() -> Vec<f64> {
    ThermalModel::default_instance().x_init.iter().copied().collect()
}

impl Default for ThermalSpec {
    fn default() -> Self {
        ThermalSpec {
            a: thermal_default_a(),
            b: thermal_default_b(),
            d: thermal_default_d(),
            horizon: thermal_default_horizon(),
            x_set: thermal_default_x_set(),
            comfort_budget: thermal_default_comfort(),
            x_init: thermal_default_x_init(),
        }
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{name}: rows have different lengths"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ThermalSpec {
    pub fn model(&self) -> Result<ThermalModel, String> {
        Ok(ThermalModel {
            a: matrix_from_rows("a", &self.a)?,
            b: matrix_from_rows("b", &self.b)?,
            d: Vector::from_vec(self.d.clone()),
            horizon: self.horizon,
            x_set: self.x_set,
            comfort_budget: self.comfort_budget,
            x_init: Vector::from_vec(self.x_init.clone()),
        })
    }
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Qp { .. } => "qp",
            ProblemSpec::Thermal(_) => "thermal",
            ProblemSpec::Circle => "circle",
        }
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            ProblemSpec::Qp { .. } | ProblemSpec::Circle => ConstraintKind::Equality,
            ProblemSpec::Thermal(_) => ConstraintKind::Inequality,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Qp { n, .. } => *n,
            ProblemSpec::Thermal(t) => 2 * t.x_init.len(),
            ProblemSpec::Circle => 2,
        }
    }

    pub fn num_constraints(&self) -> usize {
        1
    }

    pub fn default_x0(&self) -> Vec<f64> {
        match self {
            ProblemSpec::Circle => vec![1.2, 0.0],
            _ => vec![0.0; self.dim()],
        }
    }

    /// A fresh problem instance with its own call counters.
    pub fn build(&self) -> Result<BlackBoxProblem, HarnessError> {
        match self {
            ProblemSpec::Qp { n, seed, b } => Ok(NonconvexQp::with_offset(*n, *seed, *b).problem()),
            ProblemSpec::Thermal(spec) => {
                let model = spec.model().map_err(|m| HarnessError::malformed("problem", m))?;
                make_thermal_problem(model).map_err(|e| HarnessError::malformed("problem", e.to_string()))
            }
            ProblemSpec::Circle => Ok(make_circle_problem()),
        }
    }

    /// Regularity constants, when known in closed form.
    pub fn known_constants(&self) -> Option<RegularityConstants> {
        match self {
            ProblemSpec::Circle => Some(circle_constants()),
            _ => None,
        }
    }
}

/// `K = k·I` from a scalar, or an explicit symmetric positive-definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Scalar(1.0)
    }
}

impl GainSpec {
    pub fn build(&self, m: usize) -> Result<GainMatrix, String> {
        match self {
            GainSpec::Scalar(k) => GainMatrix::scaled_identity(m, *k).map_err(|e| e.to_string()),
            GainSpec::Matrix(rows) => {
                let k = matrix_from_rows("gain", rows)?;
                GainMatrix::new(k).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    pub eta: f64,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::Constant
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    /// Name used for output files and plot legends; defaults to the
    /// algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    pub horizon: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_radius")]
    pub r1: f64,
    #[serde(default = "default_radius")]
    pub r2: f64,
    #[serde(default)]
    pub gain: GainSpec,
    pub schedule: ScheduleSpec,
    /// Dual ascent step (`zogda` only); defaults to the primal step.
    #[serde(default)]
    pub dual_step: Option<f64>,
    #[serde(default)]
    pub gradient_mode: GradientMode,
}

fn default_batch() -> usize {
    20
}

fn default_radius() -> f64 {
    1e-4
}

impl RunSpec {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or_else(|| self.algorithm.as_str())
    }

    pub fn run_config(&self, m: usize, seed: u64) -> Result<RunConfig, String> {
        let estimator = EstimatorConfig::new(self.batch_size, self.r1, self.r2).map_err(|e| e.to_string())?;
        let gain = self.gain.build(m)?;
        let schedule = StepSchedule { kind: self.schedule.kind, eta: self.schedule.eta };
        let mut cfg = RunConfig::new(self.algorithm, self.horizon, estimator, gain, schedule, seed)
            .with_gradient_mode(self.gradient_mode);
        cfg.dual_step = self.dual_step;
        Ok(cfg)
    }
}

/// Theory bound settings. Without `constants` the problem's closed-form
/// constants are used; problems without them are reported as not evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub delta: f64,
    #[serde(default)]
    pub constants: Option<RegularityConstants>,
}

impl ExperimentConfig {
    pub fn x0(&self) -> Vector {
        Vector::from_vec(self.x0.clone().unwrap_or_else(|| self.problem.default_x0()))
    }

    /// Fills in every problem-dependent default.
    fn resolve(&mut self) {
        if self.x0.is_none() {
            self.x0 = Some(self.problem.default_x0());
        }
        for run in &mut self.runs {
            if run.label.is_none() {
                run.label = Some(run.algorithm.as_str().to_string());
            }
            if run.algorithm == Algorithm::Zogda && run.dual_step.is_none() {
                run.dual_step = Some(run.schedule.eta);
            }
        }
        if let Some(bounds) = &mut self.bounds {
            if bounds.constants.is_none() {
                bounds.constants = self.problem.known_constants();
            }
        }
    }

    /// Semantic checks, run after resolution.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.rng != RNG_ALGORITHM {
            return Err(HarnessError::malformed(
                "rng",
                format!("unsupported generator `{}`, expected `{RNG_ALGORITHM}`", self.rng),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::malformed("seeds", "at least one seed is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(HarnessError::malformed("seeds", format!("seed {s} is repeated")));
            }
        }
        if self.runs.is_empty() {
            return Err(HarnessError::malformed("runs", "at least one run is required"));
        }
        if let ProblemSpec::Thermal(spec) = &self.problem {
            spec.model()
                .and_then(|m| m.validate().map_err(|e| e.to_string()))
                .map_err(|m| HarnessError::malformed("problem", m))?;
        }
        if let ProblemSpec::Qp { n: 0, .. } = self.problem {
            return Err(HarnessError::malformed("problem.n", "must be positive"));
        }
        let n = self.problem.dim();
        let m = self.problem.num_constraints();
        let x0 = self.x0();
        if x0.len() != n {
            return Err(HarnessError::malformed("x0", format!("has length {}, expected {n}", x0.len())));
        }
        let problem = self.problem.build()?;
        let mut labels = std::collections::BTreeSet::new();
        for (i, run) in self.runs.iter().enumerate() {
            let field = |f: &str| format!("runs[{i}].{f}");
            if !labels.insert(run.label()) {
                return Err(HarnessError::malformed(field("label"), format!("label `{}` is repeated", run.label())));
            }
            if !run
                .label()
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            {
                return Err(HarnessError::malformed(field("label"), "use only letters, digits, '-', '_' and '.'"));
            }
            if !run.algorithm.supports(self.problem.kind()) {
                return Err(HarnessError::malformed(
                    field("algorithm"),
                    format!(
                        "{} does not handle {} constraints of problem `{}`",
                        run.algorithm,
                        self.problem.kind(),
                        self.problem.name()
                    ),
                ));
            }
            let cfg = run.run_config(m, 0).map_err(|e| HarnessError::malformed(field("gain"), e))?;
            zofl::algorithm::validate(&problem, &x0, &cfg).map_err(|e| HarnessError::malformed(format!("runs[{i}]"), e.to_string()))?;
        }
        if let Some(b) = &self.bounds {
            if !(b.delta > 0.0 && b.delta < 1.0) {
                return Err(HarnessError::malformed("bounds.delta", "must lie in (0, 1)"));
            }
            if let Some(c) = &b.constants {
                c.validate().map_err(|e| HarnessError::malformed("bounds.constants", e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Parses, resolves and validates a config given as text.
pub fn parse_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::MalformedConfig {
        field: "toml".into(),
        message: e.to_string(),
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_str(&text).map_err(|e| match e {
        HarnessError::MalformedConfig { field, message } => HarnessError::MalformedConfig {
            field,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// The resolved config as TOML.
pub fn emit(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("experiment configs always serialize")
}
