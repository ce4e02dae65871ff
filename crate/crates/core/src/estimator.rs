//! Two-point zeroth-order estimators.
//!
//! Directions `u_i` are uniform on the unit sphere. For a batch of size `T_B`
//! the gradient and Jacobian estimates are
//!
//! ```text
//! ∇̃f(x) = (n/T_B) Σ_i (f(x + r₁u_i) − f(x − r₁u_i)) / (2r₁) · u_i
//! J̃_h(x) = (n/T_B) Σ_i (h(x + r₁u_i) − h(x − r₁u_i)) / (2r₁) · u_iᵀ
//! ```
//!
//! and Jacobian–vector products are central differences of `h` along a
//! normalized direction, rescaled by the direction's norm.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::BlackBoxProblem;
use crate::{Matrix, Vector};

/// Probe directions with norm at or below this are treated as zero.
pub const ZERO_DIRECTION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite {oracle} value while probing")]
    NonFiniteEvaluation { oracle: &'static str },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
}

/// Batch size `T_B` and probe radii `r₁` (gradients) and `r₂` (JVPs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub batch_size: usize,
    pub r1: f64,
    pub r2: f64,
}

impl EstimatorConfig {
    pub fn new(batch_size: usize, r1: f64, r2: f64) -> Result<Self, EstimatorError> {
        let cfg = EstimatorConfig { batch_size, r1, r2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.batch_size == 0 {
            return Err(EstimatorError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.r1 > 0.0 && self.r1.is_finite()) || !(self.r2 > 0.0 && self.r2.is_finite()) {
            return Err(EstimatorError::InvalidConfig("probe radii must be positive and finite".into()));
        }
        Ok(())
    }
}

/// The unit directions `u_1..u_{T_B}` of one estimation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionBatch {
    directions: Vec<Vector>,
}

impl DirectionBatch {
    /// Wraps caller-supplied directions, normalizing each one.
    ///
    /// Panics on an empty batch or a zero direction.
    pub fn from_directions(directions: Vec<Vector>) -> Self {
        assert!(!directions.is_empty(), "direction batch must be non-empty");
        let directions = directions
            .into_iter()
            .map(|u| {
                let norm = u.norm();
                assert!(norm > ZERO_DIRECTION_THRESHOLD, "zero probe direction");
                u / norm
            })
            .collect();
        DirectionBatch { directions }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.directions.iter()
    }
}

/// Draws `count` i.i.d. directions uniformly from the unit sphere in `Rⁿ` by
/// normalizing standard-normal vectors.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> DirectionBatch {
    assert!(n >= 1 && count >= 1, "sample_sphere needs n ≥ 1 and count ≥ 1");
    let directions = (0..count)
        .map(|_| loop {
            let g = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut *rng)));
            let norm = g.norm();
            if norm > ZERO_DIRECTION_THRESHOLD {
                break g / norm;
            }
        })
        .collect();
    DirectionBatch { directions }
}

/// `∇̃f(x)`, `J̃_h(x)` and the batch they were built from.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grad_f: Vector,
    pub jac_h: Matrix,
    pub batch: DirectionBatch,
}

impl GradientEstimate {
    /// `∇̃h_i(x)`, the transpose of row `i` of `J̃_h`.
    pub fn constraint_gradient(&self, i: usize) -> Vector {
        self.jac_h.row(i).transpose()
    }
}

/// Approximations of `J_h(x)∇̃f(x)` and `J_h(x)J̃_h(x)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeMatrices {
    pub g_f: Vector,
    pub g_h: Matrix,
}

fn check_finite_scalar(v: f64, oracle: &'static str) -> Result<f64, EstimatorError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EstimatorError::NonFiniteEvaluation { oracle })
    }
}

fn check_finite_vector(v: Vector, oracle: &'static str) -> Result<Vector, EstimatorError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(EstimatorError::NonFiniteEvaluation { oracle })
    }
}

/// Two-point estimates of `∇f` and `J_h` at `x` along `batch`.
///
/// Makes exactly `2·T_B` objective calls and `2·T_B` constraint calls; the
/// objective and constraints are probed at the same points.
pub fn estimate_gradients(
    problem: &BlackBoxProblem,
    x: &Vector,
    cfg: &EstimatorConfig,
    batch: DirectionBatch,
) -> Result<GradientEstimate, EstimatorError> {
    let n = problem.dim();
    let m = problem.num_constraints();
    assert_eq!(batch.dim(), n, "direction dimension does not match the problem");
    assert_eq!(x.len(), n, "point dimension does not match the problem");

    let r = cfg.r1;
    let mut grad_f = Vector::zeros(n);
    let mut jac_h = Matrix::zeros(m, n);
    for u in batch.iter() {
        let plus = x + u * r;
        let minus = x - u * r;
        let f_diff = check_finite_scalar(problem.objective(&plus), "objective")?
            - check_finite_scalar(problem.objective(&minus), "objective")?;
        let h_diff = check_finite_vector(problem.constraints(&plus), "constraint")?
            - check_finite_vector(problem.constraints(&minus), "constraint")?;
        grad_f.axpy(f_diff / (2.0 * r), u, 1.0);
        jac_h.ger(1.0 / (2.0 * r), &h_diff, u, 1.0);
    }
    let scale = n as f64 / batch.len() as f64;
    grad_f *= scale;
    jac_h *= scale;
    Ok(GradientEstimate { grad_f, jac_h, batch })
}

/// Central-difference estimate of `J_h(x)·v` with radius `r2`.
///
/// Directions with `‖v‖ ≤ 1e-12` return zero without querying the oracle;
/// otherwise exactly two constraint calls are made.
pub fn estimate_jvp(
    problem: &BlackBoxProblem,
    x: &Vector,
    v: &Vector,
    r2: f64,
) -> Result<Vector, EstimatorError> {
    let norm = v.norm();
    if norm <= ZERO_DIRECTION_THRESHOLD {
        return Ok(Vector::zeros(problem.num_constraints()));
    }
    let step = v * (r2 / norm);
    let plus = check_finite_vector(problem.constraints(&(x + &step)), "constraint")?;
    let minus = check_finite_vector(problem.constraints(&(x - &step)), "constraint")?;
    Ok((plus - minus) * (norm / (2.0 * r2)))
}

/// `G_f` probes along `∇̃f`; column `i` of `G_h` probes along `∇̃h_i`.
///
/// Uses at most `2(m+1)` constraint calls (fewer when a probe direction
/// vanishes).
pub fn build_probe_matrices(
    problem: &BlackBoxProblem,
    x: &Vector,
    est: &GradientEstimate,
    r2: f64,
) -> Result<ProbeMatrices, EstimatorError> {
    let m = problem.num_constraints();
    let g_f = estimate_jvp(problem, x, &est.grad_f, r2)?;
    let mut g_h = Matrix::zeros(m, m);
    for i in 0..m {
        let column = estimate_jvp(problem, x, &est.constraint_gradient(i), r2)?;
        g_h.set_column(i, &column);
    }
    Ok(ProbeMatrices { g_f, g_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{make_circle_problem, ConstraintKind};
    use crate::{assert_close, seeded_rng};

    fn vec(v: &[f64]) -> Vector {
        Vector::from_row_slice(v)
    }

    fn affine_problem() -> (BlackBoxProblem, Matrix, Vector) {
        let a = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
        let b = vec(&[0.7, -1.1]);
        let (a2, b2) = (a.clone(), b.clone());
        let p = BlackBoxProblem::new(
            "affine",
            3,
            2,
            ConstraintKind::Equality,
            |x| 2.0 * x[0] - x[1] + 0.25 * x[2] + 3.0,
            move |x| &a2 * x - &b2,
        );
        (p, a, b)
    }

    fn half_norm_squared(n: usize) -> BlackBoxProblem {
        BlackBoxProblem::new(
            "half-norm",
            n,
            1,
            ConstraintKind::Equality,
            |x| 0.5 * x.norm_squared(),
            |x| Vector::from_element(1, 0.5 * x.norm_squared()),
        )
    }

    #[test]
    fn sphere_in_one_dimension_is_plus_minus_one() {
        let batch = sample_sphere(1, 50, &mut seeded_rng(1));
        assert!(batch.iter().all(|u| u[0] == 1.0 || u[0] == -1.0));
    }

    #[test]
    fn sphere_directions_are_unit_and_isotropic() {
        let batch = sample_sphere(3, 1000, &mut seeded_rng(42));
        let mut second_moment = Matrix::zeros(3, 3);
        for u in batch.iter() {
            assert!((u.norm() - 1.0).abs() < 1e-12);
            second_moment += u * u.transpose();
        }
        second_moment /= 1000.0;
        let target = Matrix::identity(3, 3) / 3.0;
        assert!((second_moment - target).abs().max() < 0.05);
    }

    #[test]
    fn sphere_sampling_is_deterministic() {
        let a = sample_sphere(5, 20, &mut seeded_rng(9));
        let b = sample_sphere(5, 20, &mut seeded_rng(9));
        assert_eq!(a, b);
    }

    #[test]
    fn constant_objective_has_zero_gradient_estimate() {
        let p = BlackBoxProblem::new("const", 4, 1, ConstraintKind::Equality, |_| 3.5, |x| Vector::from_element(1, x[0]));
        let cfg = EstimatorConfig::new(7, 0.3, 0.1).unwrap();
        let est = estimate_gradients(&p, &Vector::zeros(4), &cfg, sample_sphere(4, 7, &mut seeded_rng(0))).unwrap();
        assert_eq!(est.grad_f, Vector::zeros(4));
    }

    #[test]
    fn single_direction_on_half_norm() {
        let p = half_norm_squared(2);
        let batch = DirectionBatch::from_directions(vec![vec(&[1.0, 0.0])]);
        for r in [1e-3, 0.5, 2.0] {
            let cfg = EstimatorConfig::new(1, r, r).unwrap();
            let est = estimate_gradients(&p, &vec(&[1.0, 0.0]), &cfg, batch.clone()).unwrap();
            assert_close!(est.grad_f[0], 2.0, 1e-12);
            assert_close!(est.grad_f[1], 0.0, 1e-15);
        }
    }

    #[test]
    fn affine_jacobian_estimate_is_exact_for_the_batch() {
        let (p, a, _) = affine_problem();
        let batch = sample_sphere(3, 5, &mut seeded_rng(3));
        let mut expected = Matrix::zeros(2, 3);
        for u in batch.iter() {
            expected += (&a * u) * u.transpose();
        }
        expected *= 3.0 / 5.0;
        let x = vec(&[0.2, -1.0, 4.0]);
        for r in [1e-1, 1e-3, 1e-6] {
            let cfg = EstimatorConfig::new(5, r, r).unwrap();
            let est = estimate_gradients(&p, &x, &cfg, batch.clone()).unwrap();
            assert!((&est.jac_h - &expected).abs().max() < 1e-9, "radius {r}");
        }
    }

    #[test]
    fn estimate_gradients_call_accounting() {
        let p = make_circle_problem();
        let cfg = EstimatorConfig::new(13, 1e-3, 1e-3).unwrap();
        let est = estimate_gradients(&p, &vec(&[0.5, 0.5]), &cfg, sample_sphere(2, 13, &mut seeded_rng(0))).unwrap();
        assert_eq!(p.counts().objective, 26);
        assert_eq!(p.counts().constraints, 26);
        let before = p.counts();
        build_probe_matrices(&p, &vec(&[0.5, 0.5]), &est, 1e-3).unwrap();
        let delta = p.counts() - before;
        assert_eq!(delta.objective, 0);
        assert_eq!(delta.constraints, 2 * (1 + 1));
    }

    #[test]
    fn jvp_of_affine_map_is_exact() {
        let (p, a, _) = affine_problem();
        let x = vec(&[1.0, 2.0, 3.0]);
        let v = vec(&[0.3, -0.7, 2.0]);
        for r in [1e-1, 1e-3, 1e-6] {
            let jvp = estimate_jvp(&p, &x, &v, r).unwrap();
            assert!((jvp - &a * &v).norm() < 1e-8);
        }
    }

    #[test]
    fn jvp_of_quadratic_is_exact() {
        let p = half_norm_squared(2);
        let jvp = estimate_jvp(&p, &vec(&[3.0, 4.0]), &vec(&[1.0, 1.0]), 0.25).unwrap();
        assert_close!(jvp[0], 7.0, 1e-12);
    }

    #[test]
    fn jvp_along_zero_makes_no_calls() {
        let p = half_norm_squared(2);
        let jvp = estimate_jvp(&p, &vec(&[3.0, 4.0]), &Vector::zeros(2), 1e-3).unwrap();
        assert_eq!(jvp, Vector::zeros(1));
        assert_eq!(p.counts().constraints, 0);
    }

    #[test]
    fn probe_matrices_on_affine_map() {
        let (p, a, _) = affine_problem();
        let x = vec(&[0.1, 0.2, 0.3]);
        let cfg = EstimatorConfig::new(4, 1e-2, 1e-2).unwrap();
        let est = estimate_gradients(&p, &x, &cfg, sample_sphere(3, 4, &mut seeded_rng(5))).unwrap();
        let probes = build_probe_matrices(&p, &x, &est, 1e-2).unwrap();
        let expected = &a * est.jac_h.transpose();
        assert!((probes.g_h - expected).abs().max() < 1e-9);
        assert!((probes.g_f - &a * &est.grad_f).norm() < 1e-9);
    }

    #[test]
    fn probe_matrices_with_exact_gradients_on_circle() {
        let p = make_circle_problem();
        let x = vec(&[1.0, 0.0]);
        let est = GradientEstimate {
            grad_f: p.gradient(&x).unwrap(),
            jac_h: p.jacobian(&x).unwrap(),
            batch: DirectionBatch::from_directions(vec![vec(&[1.0, 0.0])]),
        };
        let probes = build_probe_matrices(&p, &x, &est, 1e-3).unwrap();
        assert_close!(probes.g_f[0], 2.0, 1e-10);
        assert_close!(probes.g_h[(0, 0)], 4.0, 1e-10);
    }

    #[test]
    fn vanishing_constraint_gradient_gives_zero_probe_column() {
        let p = make_circle_problem();
        let x = vec(&[1.0, 0.0]);
        let est = GradientEstimate {
            grad_f: vec(&[1.0, 1.0]),
            jac_h: Matrix::zeros(1, 2),
            batch: DirectionBatch::from_directions(vec![vec(&[0.0, 1.0])]),
        };
        let probes = build_probe_matrices(&p, &x, &est, 1e-3).unwrap();
        assert_eq!(probes.g_h, Matrix::zeros(1, 1));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let p = BlackBoxProblem::new("nan", 2, 1, ConstraintKind::Equality, |_| f64::NAN, |x| Vector::from_element(1, x[0]));
        let cfg = EstimatorConfig::new(2, 1e-3, 1e-3).unwrap();
        let err = estimate_gradients(&p, &Vector::zeros(2), &cfg, sample_sphere(2, 2, &mut seeded_rng(0))).unwrap_err();
        assert_eq!(err, EstimatorError::NonFiniteEvaluation { oracle: "objective" });
    }

    #[test]
    fn invalid_configs() {
        assert!(EstimatorConfig::new(0, 1e-3, 1e-3).is_err());
        assert!(EstimatorConfig::new(1, 0.0, 1e-3).is_err());
        assert!(EstimatorConfig::new(1, 1e-3, f64::INFINITY).is_err());
    }
}
