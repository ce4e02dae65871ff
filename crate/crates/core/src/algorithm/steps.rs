//! Single iterations of each method.
//!
//! Every ZO step queries `h(x_t)` once (counted) and then builds its
//! first-order information either from a fresh direction batch or, in
//! [`GradientMode::Analytic`], from the problem's analytic gradients with
//! exact products `G_f = J∇f`, `G_h = J J̃ᵀ`.

use rand::Rng;
use thiserror::Error;

use super::{GradientMode, RunConfig, RunStatus};
use crate::estimator::{
    build_probe_matrices, estimate_gradients, sample_sphere, DirectionBatch, EstimatorError,
};
use crate::multiplier::{solve_complementarity, solve_equality, MultiplierError, MultiplierSolution};
use crate::oracle::{BlackBoxProblem, ConstraintKind};
use crate::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("multiplier solve failed at step {t}: {source}")]
    Multiplier { t: usize, source: MultiplierError },
    #[error("estimation failed at step {t}: {source}")]
    Estimator { t: usize, source: EstimatorError },
    #[error("non-finite {what} at step {t}")]
    NonFinite { t: usize, what: &'static str },
}

impl StepError {
    pub fn status(&self) -> RunStatus {
        match self {
            StepError::Multiplier { .. } => RunStatus::SingularAbort,
            StepError::Estimator { .. } | StepError::NonFinite { .. } => RunStatus::NonFiniteAbort,
        }
    }

    fn retryable(&self) -> bool {
        matches!(
            self,
            StepError::Multiplier {
                source: MultiplierError::SingularProbeMatrix | MultiplierError::NoComplementarySolution,
                ..
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub eta: f64,
    /// Direction batches redrawn after a failed multiplier solve (0 or 1).
    pub retries: usize,
    pub residual: f64,
    pub active_set: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: Vector,
    /// The multiplier used in the primal update.
    pub multiplier: Vector,
    /// Updated dual variable; only the primal-dual method sets this.
    pub next_dual: Option<Vector>,
    pub diagnostics: StepDiagnostics,
}

struct Linearization {
    grad_f: Vector,
    jac_h: Matrix,
    batch: Option<DirectionBatch>,
}

impl Linearization {
    fn direction(&self, lambda: &Vector) -> Vector {
        &self.grad_f + self.jac_h.tr_mul(lambda)
    }
}

fn all_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> bool {
    values.all(|v| v.is_finite())
}

fn constraints_at(problem: &BlackBoxProblem, x: &Vector, t: usize) -> Result<Vector, StepError> {
    let h = problem.constraints(x);
    if all_finite(h.iter()) {
        Ok(h)
    } else {
        Err(StepError::NonFinite { t, what: "constraint value" })
    }
}

fn draw_batch<R: Rng + ?Sized>(problem: &BlackBoxProblem, cfg: &RunConfig, rng: &mut R) -> Option<DirectionBatch> {
    match cfg.gradient_mode {
        GradientMode::ZerothOrder => Some(sample_sphere(problem.dim(), cfg.estimator.batch_size, rng)),
        GradientMode::Analytic => None,
    }
}

fn linearize(
    problem: &BlackBoxProblem,
    x: &Vector,
    cfg: &RunConfig,
    batch: Option<DirectionBatch>,
    t: usize,
) -> Result<Linearization, StepError> {
    match batch {
        Some(batch) => {
            let est = estimate_gradients(problem, x, &cfg.estimator, batch)
                .map_err(|source| StepError::Estimator { t, source })?;
            Ok(Linearization { grad_f: est.grad_f, jac_h: est.jac_h, batch: Some(est.batch) })
        }
        None => {
            let grad_f = problem.gradient(x).expect("analytic mode is validated before the run");
            let jac_h = problem.jacobian(x).expect("analytic mode is validated before the run");
            if !all_finite(grad_f.iter()) || !all_finite(jac_h.iter()) {
                return Err(StepError::NonFinite { t, what: "analytic gradient" });
            }
            Ok(Linearization { grad_f, jac_h, batch: None })
        }
    }
}

/// `(G_f, G_h)` at `x` for the given linearization.
fn probes(
    problem: &BlackBoxProblem,
    x: &Vector,
    lin: Linearization,
    cfg: &RunConfig,
    t: usize,
) -> Result<(Vector, Matrix, Linearization), StepError> {
    match lin.batch {
        Some(batch) => {
            let est = crate::estimator::GradientEstimate { grad_f: lin.grad_f, jac_h: lin.jac_h, batch };
            let p = build_probe_matrices(problem, x, &est, cfg.estimator.r2)
                .map_err(|source| StepError::Estimator { t, source })?;
            let lin = Linearization { grad_f: est.grad_f, jac_h: est.jac_h, batch: Some(est.batch) };
            Ok((p.g_f, p.g_h, lin))
        }
        None => {
            let j = problem.jacobian(x).expect("analytic mode is validated before the run");
            let g_f = &j * &lin.grad_f;
            let g_h = &j * lin.jac_h.transpose();
            Ok((g_f, g_h, lin))
        }
    }
}

fn solve(
    kind: ConstraintKind,
    g_h: &Matrix,
    g_f: &Vector,
    cfg: &RunConfig,
    h: &Vector,
    t: usize,
) -> Result<MultiplierSolution, StepError> {
    let out = match kind {
        ConstraintKind::Equality => solve_equality(g_h, g_f, &cfg.gain, h),
        ConstraintKind::Inequality => solve_complementarity(g_h, g_f, &cfg.gain, h),
    };
    out.map_err(|source| StepError::Multiplier { t, source })
}

fn primal_update(x: &Vector, eta: f64, direction: &Vector, t: usize) -> Result<Vector, StepError> {
    let next = x - direction * eta;
    if all_finite(next.iter()) {
        Ok(next)
    } else {
        Err(StepError::NonFinite { t, what: "iterate" })
    }
}

/// Runs `attempt` and, in zeroth-order mode, once more after a failed
/// multiplier solve.
fn with_retry<F>(cfg: &RunConfig, mut attempt: F) -> Result<StepOutcome, StepError>
where
    F: FnMut() -> Result<StepOutcome, StepError>,
{
    match attempt() {
        Err(e) if e.retryable() && cfg.gradient_mode == GradientMode::ZerothOrder => {
            let mut out = attempt()?;
            out.diagnostics.retries = 1;
            Ok(out)
        }
        other => other,
    }
}

fn feedback_step<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
    kind: ConstraintKind,
) -> Result<StepOutcome, StepError> {
    let eta = cfg.schedule.step_size(t);
    let h = constraints_at(problem, x, t)?;
    with_retry(cfg, || {
        let lin = linearize(problem, x, cfg, draw_batch(problem, cfg, rng), t)?;
        let (g_f, g_h, lin) = probes(problem, x, lin, cfg, t)?;
        let sol = solve(kind, &g_h, &g_f, cfg, &h, t)?;
        let next = primal_update(x, eta, &lin.direction(&sol.lambda), t)?;
        Ok(StepOutcome {
            next,
            multiplier: sol.lambda,
            next_dual: None,
            diagnostics: StepDiagnostics { eta, retries: 0, residual: sol.residual, active_set: sol.active_set },
        })
    })
}

/// One ZOFL step for equality constraints.
pub fn step_zofl_eq<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<StepOutcome, StepError> {
    feedback_step(problem, x, t, cfg, rng, ConstraintKind::Equality)
}

/// One ZOFL step for inequality constraints (complementarity multiplier).
pub fn step_zofl_ineq<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<StepOutcome, StepError> {
    feedback_step(problem, x, t, cfg, rng, ConstraintKind::Inequality)
}

/// One midpoint ZOFL step.
///
/// A half step along the ZOFL direction gives `x_mid`; gradients and probes
/// are recomputed there with the same directions, the multiplier is solved
/// against `K h(x_t)`, and the full step is taken from `x_t`.
pub fn step_zofl_midpoint<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<StepOutcome, StepError> {
    let eta = cfg.schedule.step_size(t);
    let kind = ConstraintKind::Equality;
    let h = constraints_at(problem, x, t)?;
    with_retry(cfg, || {
        let batch = draw_batch(problem, cfg, rng);
        let lin = linearize(problem, x, cfg, batch.clone(), t)?;
        let (g_f, g_h, lin) = probes(problem, x, lin, cfg, t)?;
        let sol = solve(kind, &g_h, &g_f, cfg, &h, t)?;
        let x_mid = primal_update(x, 0.5 * eta, &lin.direction(&sol.lambda), t)?;

        let lin_mid = linearize(problem, &x_mid, cfg, batch, t)?;
        let (g_f, g_h, lin_mid) = probes(problem, &x_mid, lin_mid, cfg, t)?;
        let sol = solve(kind, &g_h, &g_f, cfg, &h, t)?;
        let next = primal_update(x, eta, &lin_mid.direction(&sol.lambda), t)?;
        Ok(StepOutcome {
            next,
            multiplier: sol.lambda,
            next_dual: None,
            diagnostics: StepDiagnostics { eta, retries: 0, residual: sol.residual, active_set: sol.active_set },
        })
    })
}

/// One step of the plain ZO method: the multiplier comes from the estimated
/// Jacobian alone, `J̃J̃ᵀ λ = −(J̃∇̃f − K h)`. On inequality problems the same
/// system is solved in complementarity form.
pub fn step_zo_baseline<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<StepOutcome, StepError> {
    let eta = cfg.schedule.step_size(t);
    let h = constraints_at(problem, x, t)?;
    with_retry(cfg, || {
        let lin = linearize(problem, x, cfg, draw_batch(problem, cfg, rng), t)?;
        let g_f = &lin.jac_h * &lin.grad_f;
        let g_h = &lin.jac_h * lin.jac_h.transpose();
        let sol = solve(problem.kind(), &g_h, &g_f, cfg, &h, t)?;
        let next = primal_update(x, eta, &lin.direction(&sol.lambda), t)?;
        Ok(StepOutcome {
            next,
            multiplier: sol.lambda,
            next_dual: None,
            diagnostics: StepDiagnostics { eta, retries: 0, residual: sol.residual, active_set: sol.active_set },
        })
    })
}

/// One exact-gradient feedback-linearization step.
pub fn step_fo_fl(problem: &BlackBoxProblem, x: &Vector, t: usize, cfg: &RunConfig) -> Result<StepOutcome, StepError> {
    let eta = cfg.schedule.step_size(t);
    let h = constraints_at(problem, x, t)?;
    let lin = linearize(problem, x, cfg, None, t)?;
    let g_f = &lin.jac_h * &lin.grad_f;
    let g_h = &lin.jac_h * lin.jac_h.transpose();
    let sol = solve(problem.kind(), &g_h, &g_f, cfg, &h, t)?;
    let next = primal_update(x, eta, &lin.direction(&sol.lambda), t)?;
    Ok(StepOutcome {
        next,
        multiplier: sol.lambda,
        next_dual: None,
        diagnostics: StepDiagnostics { eta, retries: 0, residual: sol.residual, active_set: sol.active_set },
    })
}

/// One primal-dual step: descent on the estimated Lagrangian in `x`, ascent
/// `λ ← λ + α h(x_t)` in the dual (projected onto `λ ≥ 0` for inequalities).
pub fn step_zogda<R: Rng + ?Sized>(
    problem: &BlackBoxProblem,
    x: &Vector,
    dual: &Vector,
    t: usize,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<StepOutcome, StepError> {
    let eta = cfg.schedule.step_size(t);
    let h = constraints_at(problem, x, t)?;
    let lin = linearize(problem, x, cfg, draw_batch(problem, cfg, rng), t)?;
    let next = primal_update(x, eta, &lin.direction(dual), t)?;
    let mut next_dual = dual + &h * cfg.dual_step();
    if problem.kind() == ConstraintKind::Inequality {
        next_dual.apply(|v| *v = v.max(0.0));
    }
    if !all_finite(next_dual.iter()) {
        return Err(StepError::NonFinite { t, what: "dual variable" });
    }
    Ok(StepOutcome {
        next,
        multiplier: dual.clone(),
        next_dual: Some(next_dual),
        diagnostics: StepDiagnostics { eta, retries: 0, residual: 0.0, active_set: Vec::new() },
    })
}
