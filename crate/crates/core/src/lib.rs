//! Zeroth-order feedback linearization (ZOFL) for constrained optimization
//! with black-box objectives and constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`oracle`]: the evaluation-only problem abstraction plus the built-in
//!   nonconvex QP, thermal-control and circle problems.
//! * [`estimator`]: sphere sampling, two-point gradient/Jacobian estimates
//!   and Jacobian–vector-product probes.
//! * [`multiplier`]: the multiplier solves: a linear solve for equality
//!   constraints and an exact complementarity solve for inequalities.
//! * [`algorithm`]: the iteration loops (ZOFL equality/inequality/midpoint,
//!   the ZO baseline, the first-order reference and a primal–dual baseline).
//! * [`theory`]: closed-form constraint-violation bounds and the
//!   preconditions under which they hold.
//!
//! Every random quantity is drawn from a [`ChaCha20Rng`] seeded through
//! [`seeded_rng`], so runs are reproducible across platforms.

pub mod algorithm;
pub mod estimator;
pub mod multiplier;
pub mod oracle;
pub mod theory;

use rand::SeedableRng;
pub use rand_chacha::ChaCha20Rng;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

/// Identifier of the generator behind [`seeded_rng`], echoed into run outputs.
pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.9/seed_from_u64";

/// The one generator used for problem instances and direction sampling.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub use algorithm::{
    run, Algorithm, GradientMode, RunConfig, RunRecord, RunRow, RunStatus, StepSchedule, ScheduleKind,
};
pub use estimator::{DirectionBatch, EstimatorConfig, GradientEstimate};
pub use multiplier::{GainMatrix, MultiplierSolution};
pub use oracle::{BlackBoxProblem, ConstraintKind, EvalCounts, NonconvexQp, ThermalModel};

#[cfg(test)]
#[macro_export]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}
