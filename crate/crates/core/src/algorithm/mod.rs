//! Iteration loops.
//!
//! All first-order-style methods share the primal update
//! `x_{t+1} = x_t − η_t (g + Jᵀλ_t)`, where `g`, `J` are gradient and
//! Jacobian estimates (or the analytic ones) and the multiplier `λ_t` is
//! chosen so that the constraint values follow `h_{t+1} ≈ (I − η_t K) h_t`.
//! The methods differ in how `λ_t` is computed:
//!
//! | algorithm       | multiplier system                                   |
//! |-----------------|-----------------------------------------------------|
//! | `ZoflEq`        | `G_h λ = −(G_f − K h)` with JVP probes `G_f`, `G_h` |
//! | `ZoflIneq`      | complementarity version of the above                |
//! | `ZoflMidpoint`  | `ZoflEq` re-evaluated at the half step              |
//! | `ZoBaseline`    | `J̃J̃ᵀ λ = −(J̃∇̃f − K h)` (no probes)                 |
//! | `FoFl`          | analytic `J Jᵀ λ = −(J∇f − K h)`                     |
//! | `Zogda`         | dual ascent `λ ← λ + α h`                           |

mod record;
mod steps;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::EstimatorConfig;
use crate::multiplier::GainMatrix;
use crate::oracle::{BlackBoxProblem, ConstraintKind};
use crate::{seeded_rng, Vector};

pub use record::{RunRecord, RunRow, RunStatus};
pub use steps::{
    step_fo_fl, step_zo_baseline, step_zofl_eq, step_zofl_ineq, step_zofl_midpoint, step_zogda,
    StepDiagnostics, StepError, StepOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ZoflEq,
    ZoflIneq,
    ZoflMidpoint,
    ZoBaseline,
    FoFl,
    Zogda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::ZoflEq,
        Algorithm::ZoflIneq,
        Algorithm::ZoflMidpoint,
        Algorithm::ZoBaseline,
        Algorithm::FoFl,
        Algorithm::Zogda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::ZoflEq => "zofl-eq",
            Algorithm::ZoflIneq => "zofl-ineq",
            Algorithm::ZoflMidpoint => "zofl-midpoint",
            Algorithm::ZoBaseline => "zo-baseline",
            Algorithm::FoFl => "fo-fl",
            Algorithm::Zogda => "zogda",
        }
    }

    pub fn supports(self, kind: ConstraintKind) -> bool {
        match self {
            Algorithm::ZoflEq | Algorithm::ZoflMidpoint => kind == ConstraintKind::Equality,
            Algorithm::ZoflIneq => kind == ConstraintKind::Inequality,
            Algorithm::ZoBaseline | Algorithm::FoFl | Algorithm::Zogda => true,
        }
    }

    /// Whether the method feeds `K h` back through a multiplier solve.
    pub fn uses_gain(self) -> bool {
        self != Algorithm::Zogda
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    /// `η_t = η / √(t+1)`
    DiminishingSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub eta: f64,
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Self {
        StepSchedule { kind: ScheduleKind::Constant, eta }
    }

    pub fn diminishing(eta: f64) -> Self {
        StepSchedule { kind: ScheduleKind::DiminishingSqrt, eta }
    }

    pub fn step_size(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.eta,
            ScheduleKind::DiminishingSqrt => self.eta / ((t + 1) as f64).sqrt(),
        }
    }
}

/// Where first-order information comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Two-point estimates and JVP probes built from value queries.
    #[default]
    ZerothOrder,
    /// Analytic `∇f`, `J_h` and exact products; needs a problem that exposes
    /// analytic gradients. Used to check methods against the exact-oracle
    /// reduction.
    Analytic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Number of steps `T_G`.
    pub horizon: usize,
    pub estimator: EstimatorConfig,
    pub gain: GainMatrix,
    pub schedule: StepSchedule,
    pub seed: u64,
    /// Dual ascent step for `Zogda`; defaults to the base primal step.
    pub dual_step: Option<f64>,
    pub gradient_mode: GradientMode,
}

impl RunConfig {
    pub fn new(
        algorithm: Algorithm,
        horizon: usize,
        estimator: EstimatorConfig,
        gain: GainMatrix,
        schedule: StepSchedule,
        seed: u64,
    ) -> Self {
        RunConfig {
            algorithm,
            horizon,
            estimator,
            gain,
            schedule,
            seed,
            dual_step: None,
            gradient_mode: GradientMode::ZerothOrder,
        }
    }

    pub fn with_gradient_mode(mut self, mode: GradientMode) -> Self {
        self.gradient_mode = mode;
        self
    }

    pub fn with_dual_step(mut self, step: f64) -> Self {
        self.dual_step = Some(step);
        self
    }

    pub fn dual_step(&self) -> f64 {
        self.dual_step.unwrap_or(self.schedule.eta)
    }
}

/// Configuration problems detected before the first step.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgorithmError {
    #[error("{algorithm} does not handle {kind} constraints")]
    IncompatibleKind { algorithm: Algorithm, kind: ConstraintKind },
    #[error("step size {eta} violates the stability condition 0 < η·λ_min(K) < 1 (λ_min(K) = {lambda_min})")]
    Unstable { eta: f64, lambda_min: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem `{0}` has no analytic gradients")]
    UnsupportedReference(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Checks a configuration against a problem without running it.
pub fn validate(problem: &BlackBoxProblem, x0: &Vector, cfg: &RunConfig) -> Result<(), AlgorithmError> {
    let kind = problem.kind();
    if !cfg.algorithm.supports(kind) {
        return Err(AlgorithmError::IncompatibleKind { algorithm: cfg.algorithm, kind });
    }
    if x0.len() != problem.dim() {
        return Err(AlgorithmError::DimensionMismatch(format!(
            "x0 has length {}, problem dimension is {}",
            x0.len(),
            problem.dim()
        )));
    }
    if cfg.gain.dim() != problem.num_constraints() {
        return Err(AlgorithmError::DimensionMismatch(format!(
            "gain is {0}x{0}, problem has {1} constraints",
            cfg.gain.dim(),
            problem.num_constraints()
        )));
    }
    cfg.estimator
        .validate()
        .map_err(|e| AlgorithmError::InvalidConfig(e.to_string()))?;
    let eta = cfg.schedule.eta;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(AlgorithmError::InvalidConfig(format!("base step {eta} must be positive")));
    }
    if cfg.algorithm.uses_gain() && eta * cfg.gain.lambda_min() >= 1.0 {
        return Err(AlgorithmError::Unstable { eta, lambda_min: cfg.gain.lambda_min() });
    }
    if cfg.algorithm == Algorithm::Zogda && !(cfg.dual_step() >= 0.0 && cfg.dual_step().is_finite()) {
        return Err(AlgorithmError::InvalidConfig("dual step must be non-negative".into()));
    }
    let needs_gradients = cfg.algorithm == Algorithm::FoFl || cfg.gradient_mode == GradientMode::Analytic;
    if needs_gradients && !problem.has_analytic_gradients() {
        return Err(AlgorithmError::UnsupportedReference(problem.name().to_string()));
    }
    Ok(())
}

fn row(problem: &BlackBoxProblem, x: &Vector, t: usize, lambda_norm: f64, eta: f64, base: crate::EvalCounts) -> RunRow {
    let calls = problem.counts() - base;
    RunRow {
        t,
        x_norm: x.norm(),
        objective: problem.observe_objective(x),
        violation: problem.observe_violation(x),
        lambda_norm,
        eta,
        objective_calls: calls.objective,
        constraint_calls: calls.constraints,
    }
}

/// Runs `cfg.horizon` steps of the selected method from `x0`.
///
/// The direction generator is seeded from `cfg.seed`, so a fixed problem and
/// configuration always reproduce the same record. Step failures end the run
/// early with an abort status; the rows up to that point are kept.
pub fn run(problem: &BlackBoxProblem, x0: &Vector, cfg: &RunConfig) -> Result<RunRecord, AlgorithmError> {
    validate(problem, x0, cfg)?;
    let mut rng = seeded_rng(cfg.seed);
    let base = problem.counts();
    let mut x = x0.clone();
    let mut dual = Vector::zeros(problem.num_constraints());
    let mut rows = Vec::with_capacity(cfg.horizon + 1);
    rows.push(row(problem, &x, 0, 0.0, 0.0, base));
    let mut status = RunStatus::Completed;
    let mut abort_reason = None;
    let mut retries = 0;

    for t in 0..cfg.horizon {
        let outcome = match cfg.algorithm {
            Algorithm::ZoflEq => step_zofl_eq(problem, &x, t, cfg, &mut rng),
            Algorithm::ZoflIneq => step_zofl_ineq(problem, &x, t, cfg, &mut rng),
            Algorithm::ZoflMidpoint => step_zofl_midpoint(problem, &x, t, cfg, &mut rng),
            Algorithm::ZoBaseline => step_zo_baseline(problem, &x, t, cfg, &mut rng),
            Algorithm::FoFl => step_fo_fl(problem, &x, t, cfg),
            Algorithm::Zogda => step_zogda(problem, &x, &dual, t, cfg, &mut rng),
        };
        match outcome {
            Ok(step) => {
                retries += step.diagnostics.retries;
                // For the primal-dual method the reported multiplier is the one
                // used in the primal step; the updated dual carries forward.
                let lambda_norm = step.multiplier.norm();
                if let Some(next_dual) = step.next_dual {
                    dual = next_dual;
                }
                x = step.next;
                rows.push(row(problem, &x, t + 1, lambda_norm, step.diagnostics.eta, base));
            }
            Err(err) => {
                status = err.status();
                abort_reason = Some(err.to_string());
                break;
            }
        }
    }

    Ok(RunRecord {
        algorithm: cfg.algorithm,
        problem: problem.name().to_string(),
        kind: problem.kind(),
        estimator: cfg.estimator,
        schedule: cfg.schedule,
        horizon: cfg.horizon,
        seed: cfg.seed,
        rows,
        status,
        abort_reason,
        retries,
        final_point: x,
    })
}
