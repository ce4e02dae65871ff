//! Black-box problem abstraction and the built-in problems.
//!
//! A [`BlackBoxProblem`] exposes an objective `f: Rⁿ → R` and a constraint map
//! `h: Rⁿ → Rᵐ` through value queries only. Every counted query bumps one of
//! two monotone counters so that runs can report their oracle budget. Test
//! fixtures may additionally carry analytic gradients, which are used only by
//! reference methods and by tests.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{seeded_rng, Matrix, Vector};

type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("thermal rollout produced a non-finite state at step {step}")]
    NonFiniteRollout { step: usize },
    #[error("invalid thermal model: {0}")]
    InvalidModel(String),
}

/// Whether the constraint map encodes `h(x) = 0` or `h(x) ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

impl ConstraintKind {
    /// `‖h‖` for equality constraints, `‖[h]₊‖` for inequality constraints.
    pub fn violation(self, h: &Vector) -> f64 {
        match self {
            ConstraintKind::Equality => h.norm(),
            ConstraintKind::Inequality => h.map(|v| v.max(0.0)).norm(),
        }
    }

    pub fn norm_label(self) -> &'static str {
        match self {
            ConstraintKind::Equality => "||h(x)||",
            ConstraintKind::Inequality => "||[h(x)]+||",
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Equality => f.write_str("equality"),
            ConstraintKind::Inequality => f.write_str("inequality"),
        }
    }
}

/// Snapshot of the oracle counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub objective: u64,
    pub constraints: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.objective + self.constraints
    }
}

impl std::ops::Sub for EvalCounts {
    type Output = EvalCounts;

    fn sub(self, rhs: EvalCounts) -> EvalCounts {
        EvalCounts {
            objective: self.objective - rhs.objective,
            constraints: self.constraints - rhs.constraints,
        }
    }
}

#[derive(Clone)]
struct AnalyticGradients {
    gradient: VectorFn,
    jacobian: MatrixFn,
}

/// Evaluation-only access to `f` and `h`.
///
/// Problems are immutable apart from their counters. A run owns its problem
/// instance; use [`BlackBoxProblem::fresh_instance`] to hand independent runs
/// their own copy with zeroed counters.
pub struct BlackBoxProblem {
    name: String,
    n: usize,
    m: usize,
    kind: ConstraintKind,
    objective: ScalarFn,
    constraints: VectorFn,
    analytic: Option<AnalyticGradients>,
    objective_calls: AtomicU64,
    constraint_calls: AtomicU64,
}

impl fmt::Debug for BlackBoxProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("kind", &self.kind)
            .field("analytic_gradients", &self.analytic.is_some())
            .field("counts", &self.counts())
            .finish()
    }
}

impl BlackBoxProblem {
    pub fn new<F, H>(
        name: impl Into<String>,
        n: usize,
        m: usize,
        kind: ConstraintKind,
        objective: F,
        constraints: H,
    ) -> Self
    where
        F: Fn(&Vector) -> f64 + Send + Sync + 'static,
        H: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        assert!(n >= 1 && m >= 1, "problem dimensions must be positive");
        BlackBoxProblem {
            name: name.into(),
            n,
            m,
            kind,
            objective: Arc::new(objective),
            constraints: Arc::new(constraints),
            analytic: None,
            objective_calls: AtomicU64::new(0),
            constraint_calls: AtomicU64::new(0),
        }
    }

    /// Attaches `∇f` and `J_h`. Only reference methods and tests read them.
    pub fn with_analytic_gradients<G, J>(mut self, gradient: G, jacobian: J) -> Self
    where
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
        J: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.analytic = Some(AnalyticGradients {
            gradient: Arc::new(gradient),
            jacobian: Arc::new(jacobian),
        });
        self
    }

    /// Same oracles, zeroed counters.
    pub fn fresh_instance(&self) -> Self {
        BlackBoxProblem {
            name: self.name.clone(),
            n: self.n,
            m: self.m,
            kind: self.kind,
            objective: Arc::clone(&self.objective),
            constraints: Arc::clone(&self.constraints),
            analytic: self.analytic.clone(),
            objective_calls: AtomicU64::new(0),
            constraint_calls: AtomicU64::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    /// Counted objective query.
    pub fn objective(&self, x: &Vector) -> f64 {
        self.objective_calls.fetch_add(1, Ordering::Relaxed);
        (self.objective)(x)
    }

    /// Counted constraint query; one call returns all `m` values.
    pub fn constraints(&self, x: &Vector) -> Vector {
        self.constraint_calls.fetch_add(1, Ordering::Relaxed);
        self.eval_constraints(x)
    }

    /// Uncounted objective value, for monitoring trajectories.
    pub fn observe_objective(&self, x: &Vector) -> f64 {
        (self.objective)(x)
    }

    /// Uncounted constraint values, for monitoring trajectories.
    pub fn observe_constraints(&self, x: &Vector) -> Vector {
        self.eval_constraints(x)
    }

    /// Uncounted violation of the problem's constraint kind at `x`.
    pub fn observe_violation(&self, x: &Vector) -> f64 {
        self.kind.violation(&self.eval_constraints(x))
    }

    fn eval_constraints(&self, x: &Vector) -> Vector {
        let h = (self.constraints)(x);
        assert_eq!(
            h.len(),
            self.m,
            "constraint oracle of `{}` returned {} values, expected {}",
            self.name,
            h.len(),
            self.m
        );
        h
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.analytic.is_some()
    }

    pub fn gradient(&self, x: &Vector) -> Option<Vector> {
        self.analytic.as_ref().map(|a| (a.gradient)(x))
    }

    pub fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.analytic.as_ref().map(|a| (a.jacobian)(x))
    }

    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            objective: self.objective_calls.load(Ordering::Relaxed),
            constraints: self.constraint_calls.load(Ordering::Relaxed),
        }
    }
}

/// Nonconvex QP `min ½xᵀx + cᵀx  s.t. ½xᵀx + aᵀx + b = 0` with Gaussian `a`, `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonconvexQp {
    pub a: Vector,
    pub c: Vector,
    pub b: f64,
}

impl NonconvexQp {
    pub const DEFAULT_OFFSET: f64 = 20.0;

    /// Draws `a` then `c` (each `n` i.i.d. standard normals) from the seeded
    /// generator, with offset `b = 20`.
    pub fn generate(n: usize, seed: u64) -> Self {
        Self::with_offset(n, seed, Self::DEFAULT_OFFSET)
    }

    pub fn with_offset(n: usize, seed: u64, b: f64) -> Self {
        assert!(n >= 1, "QP dimension must be positive");
        let mut rng = seeded_rng(seed);
        let a = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let c = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        NonconvexQp { a, c, b }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Whether `{h = 0}` is nonempty: `min h = b − ½‖a‖² ≤ 0`.
    pub fn is_feasible(&self) -> bool {
        self.b - 0.5 * self.a.norm_squared() <= 0.0
    }

    pub fn problem(&self) -> BlackBoxProblem {
        let n = self.dim();
        let (a, c, b) = (self.a.clone(), self.c.clone(), self.b);
        let (a2, c2) = (a.clone(), c.clone());
        BlackBoxProblem::new(
            "qp",
            n,
            1,
            ConstraintKind::Equality,
            move |x| 0.5 * x.norm_squared() + c.dot(x),
            move |x| Vector::from_element(1, 0.5 * x.norm_squared() + a.dot(x) + b),
        )
        .with_analytic_gradients(
            move |x| x + &c2,
            move |x| Matrix::from_row_slice(1, x.len(), (x + &a2).as_slice()),
        )
    }
}

pub fn make_nonconvex_qp(n: usize, seed: u64) -> BlackBoxProblem {
    NonconvexQp::generate(n, seed).problem()
}

/// Linear RC thermal model `x_{t+1} = A x_t + B u_t + d` for `n` buildings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub a: Matrix,
    pub b: Matrix,
    pub d: Vector,
    pub horizon: usize,
    pub x_set: f64,
    pub comfort_budget: f64,
    pub x_init: Vector,
}

/// Aggregates of one closed-loop rollout under `u_{i,t} = k_i x_{i,t} + b_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    /// `(1/T) Σ_t (1/n) Σ_i u_{i,t}²`
    pub mean_power: f64,
    /// `(1/T) Σ_t (1/n) Σ_i max(x_{i,t} − x_set, 0)²`
    pub mean_excess: f64,
}

impl ThermalModel {
    /// Ten weakly coupled buildings on a ring, 48 steps, starting at 25 °C.
    pub fn default_instance() -> Self {
        let n = 10;
        let ring = Matrix::from_fn(n, n, |i, j| {
            if j == (i + 1) % n || i == (j + 1) % n {
                1.0
            } else {
                0.0
            }
        });
        ThermalModel {
            a: Matrix::identity(n, n) * 0.9 + ring * 0.02,
            b: Matrix::identity(n, n) * 0.05,
            d: Vector::from_element(n, 0.5),
            horizon: 48,
            x_set: 22.0,
            comfort_budget: 1.5,
            x_init: Vector::from_element(n, 25.0),
        }
    }

    pub fn buildings(&self) -> usize {
        self.x_init.len()
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let n = self.buildings();
        if n == 0 {
            return Err(OracleError::InvalidModel("no buildings".into()));
        }
        if self.a.shape() != (n, n) || self.b.shape() != (n, n) || self.d.len() != n {
            return Err(OracleError::InvalidModel(format!(
                "expected A, B of shape {n}x{n} and d of length {n}"
            )));
        }
        if self.horizon == 0 {
            return Err(OracleError::InvalidModel("horizon must be positive".into()));
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.d.iter()).chain(self.x_init.iter())
            .all(|v| v.is_finite())
            && self.x_set.is_finite()
            && self.comfort_budget.is_finite();
        if !finite {
            return Err(OracleError::InvalidModel("non-finite model entry".into()));
        }
        Ok(())
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Simulates `horizon` steps with the decision `(k₁..k_n, b₁..b_n)`.
    pub fn rollout(&self, decision: &Vector) -> Result<Rollout, OracleError> {
        let n = self.buildings();
        assert_eq!(decision.len(), 2 * n, "thermal decision must have length 2n");
        let gains = decision.rows(0, n);
        let offsets = decision.rows(n, n);
        let mut state = self.x_init.clone();
        let mut next = Vector::zeros(n);
        let mut power = 0.0;
        let mut excess = 0.0;
        for step in 0..self.horizon {
            let input = gains.component_mul(&state) + offsets;
            power += input.norm_squared() / n as f64;
            excess += state.iter().map(|&x| (x - self.x_set).max(0.0).powi(2)).sum::<f64>() / n as f64;
            next.copy_from(&self.d);
            next.gemv(1.0, &self.a, &state, 1.0);
            next.gemv(1.0, &self.b, &input, 1.0);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(OracleError::NonFiniteRollout { step: step + 1 });
            }
            std::mem::swap(&mut state, &mut next);
        }
        let horizon = self.horizon as f64;
        Ok(Rollout {
            mean_power: power / horizon,
            mean_excess: excess / horizon,
        })
    }
}

/// Thermal-control benchmark as an inequality-constrained black box over
/// `(k, b) ∈ R²ⁿ` with the single comfort constraint `mean_excess − c ≤ 0`.
///
/// Rollouts that blow up surface as NaN oracle values, which the estimators
/// reject.
pub fn make_thermal_problem(model: ThermalModel) -> Result<BlackBoxProblem, OracleError> {
    model.validate()?;
    let n = model.buildings();
    let model = Arc::new(model);
    let for_constraint = Arc::clone(&model);
    Ok(BlackBoxProblem::new(
        "thermal",
        2 * n,
        1,
        ConstraintKind::Inequality,
        move |z| model.rollout(z).map_or(f64::NAN, |r| r.mean_power),
        move |z| {
            let value = for_constraint
                .rollout(z)
                .map_or(f64::NAN, |r| r.mean_excess - for_constraint.comfort_budget);
            Vector::from_element(1, value)
        },
    ))
}

/// `f(x) = x₁ + x₂`, `h(x) = ‖x‖² − 1`: a fixture whose regularity constants
/// on the annulus `0.5 ≤ ‖x‖ ≤ 2` are known in closed form
/// (`L_f = √2`, `L̄_h = 4`, `L̲_h = 1`, `M = 2`, `R = 0`, `H = 3`).
pub fn make_circle_problem() -> BlackBoxProblem {
    BlackBoxProblem::new(
        "circle",
        2,
        1,
        ConstraintKind::Equality,
        |x| x[0] + x[1],
        |x| Vector::from_element(1, x.norm_squared() - 1.0),
    )
    .with_analytic_gradients(
        |_| Vector::from_element(2, 1.0),
        |x| Matrix::from_row_slice(1, x.len(), (x * 2.0).as_slice()),
    )
}
