//! Closed-form constraint-violation bounds.
//!
//! With regularity constants for `f` and `h` on a compact set, a batch size
//! and probe radii above the thresholds of [`min_batch_size`] and
//! [`radius_caps`], and a stable step, the violation of a ZOFL run obeys (with
//! probability at least `1 − δ`)
//!
//! ```text
//! ‖y_t‖ ≤ Π(1 − η_s λ)‖y_0‖ + C₂ r₂² Σ Π(1 − η_τ λ) η_s + C₁ Σ Π(1 − η_τ λ) η_s²
//! ```
//!
//! where `y = h` (equality) or `y = [h]₊` (inequality) and `λ = λ_min(K)`.
//! This module evaluates that bound, its closed forms and preconditions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{Algorithm, RunRecord, ScheduleKind, StepSchedule};
use crate::estimator::sample_sphere;
use crate::multiplier::GainMatrix;
use crate::oracle::ConstraintKind;
use crate::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid regularity constants: {0}")]
    InvalidConstants(String),
    #[error("invalid bound parameters: {0}")]
    InvalidParameters(String),
    #[error("bound not claimed, precondition unsatisfied: {}", .0.join("; "))]
    PreconditionUnsatisfied(Vec<String>),
}

/// Bounds on `f`, `h` and their derivatives over the working set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConstants {
    /// `‖∇f‖ ≤ L_f`
    pub l_f: f64,
    /// `‖h‖ ≤ H`
    pub h_bound: f64,
    /// `‖J_h‖ ≤ L̄_h`
    pub lbar_h: f64,
    /// `σ_min(J_h) ≥ L̲_h > 0`
    pub lund_h: f64,
    /// `‖D²h‖_diag ≤ M`
    pub m_bound: f64,
    /// `‖D³h‖_diag ≤ R`
    pub r_bound: f64,
    pub domain_note: String,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let all = [self.l_f, self.h_bound, self.lbar_h, self.lund_h, self.m_bound, self.r_bound];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TheoryError::InvalidConstants("constants must be finite and non-negative".into()));
        }
        if self.lund_h <= 0.0 {
            return Err(TheoryError::InvalidConstants("L̲_h must be positive".into()));
        }
        if self.lund_h > self.lbar_h {
            return Err(TheoryError::InvalidConstants(format!(
                "L̲_h = {} exceeds L̄_h = {}",
                self.lund_h, self.lbar_h
            )));
        }
        Ok(())
    }

    /// `L̄_h / L̲_h`
    pub fn condition_ratio(&self) -> f64 {
        self.lbar_h / self.lund_h
    }
}

/// Constants for `f = x₁ + x₂`, `h = ‖x‖² − 1` on the annulus
/// `0.5 ≤ ‖x‖ ≤ 2`.
pub fn circle_constants() -> RegularityConstants {
    RegularityConstants {
        l_f: std::f64::consts::SQRT_2,
        h_bound: 3.0,
        lbar_h: 4.0,
        lund_h: 1.0,
        m_bound: 2.0,
        r_bound: 0.0,
        domain_note: "annulus 0.5 <= |x| <= 2".into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundParameters {
    pub consts: RegularityConstants,
    pub gain: GainMatrix,
    pub n: usize,
    pub m: usize,
    pub kind: ConstraintKind,
    pub delta: f64,
    pub horizon: usize,
    pub schedule: StepSchedule,
    pub r2: f64,
    /// `‖h(x₀)‖` or `‖[h(x₀)]₊‖`.
    pub h0_norm: f64,
}

impl BoundParameters {
    pub fn validate(&self) -> Result<(), TheoryError> {
        self.consts.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(TheoryError::InvalidParameters(format!("δ = {} is not in (0, 1)", self.delta)));
        }
        if self.n == 0 || self.m == 0 {
            return Err(TheoryError::InvalidParameters("n and m must be positive".into()));
        }
        if self.gain.dim() != self.m {
            return Err(TheoryError::InvalidParameters(format!(
                "gain is {0}x{0} but m = {1}",
                self.gain.dim(),
                self.m
            )));
        }
        if !(self.r2 >= 0.0 && self.h0_norm >= 0.0) {
            return Err(TheoryError::InvalidParameters("r₂ and ‖h(x₀)‖ must be non-negative".into()));
        }
        Ok(())
    }

    fn lambda_min(&self) -> f64 {
        self.gain.lambda_min()
    }

    /// Whether `0 < η_0 λ_min(K) < 1`; later steps are no larger.
    pub fn is_stable(&self) -> bool {
        let a = self.schedule.step_size(0) * self.lambda_min();
        a > 0.0 && a < 1.0
    }

    pub fn constants(&self) -> (f64, f64) {
        match self.kind {
            ConstraintKind::Equality => constants_eq(self),
            ConstraintKind::Inequality => constants_ineq(self),
        }
    }
}

fn c1(p: &BoundParameters) -> f64 {
    let c = &p.consts;
    let n = p.n as f64;
    let k = p.gain.operator_norm();
    c.m_bound * (n * c.l_f + 64.0 * n * c.lbar_h * (n * c.l_f * c.lbar_h + k * c.h_bound) / c.lund_h.powi(2))
}

/// `(C₁, C₂)` for equality constraints.
pub fn constants_eq(p: &BoundParameters) -> (f64, f64) {
    let c = &p.consts;
    let n = p.n as f64;
    let k = p.gain.operator_norm();
    let c2 = n * c.r_bound * (c.l_f + 64.0 * c.lbar_h * (n * c.l_f * c.lbar_h + k * c.h_bound) / c.lund_h.powi(2));
    (c1(p), c2)
}

/// `(C₁, C₂)` for inequality constraints.
pub fn constants_ineq(p: &BoundParameters) -> (f64, f64) {
    let c = &p.consts;
    let n = p.n as f64;
    let k = p.gain.operator_norm();
    let c2 = n * n
        * c.lbar_h.powi(2)
        * c.r_bound
        * (4096.0 * n * c.lbar_h * (c.l_f * c.lbar_h + k * c.h_bound) / c.lund_h.powi(4)
            + 64.0 * c.l_f / c.lund_h.powi(2));
    (c1(p), c2)
}

/// The inequality `C₂` as it appears in the multiplier-error lemma, where the
/// `‖K‖H` term is absent from the first summand. Reported alongside
/// [`constants_ineq`] for comparison only.
pub fn c2_ineq_lemma_variant(p: &BoundParameters) -> f64 {
    let c = &p.consts;
    let n = p.n as f64;
    n * n
        * c.lbar_h.powi(2)
        * c.r_bound
        * (4096.0 * n * c.l_f * c.lbar_h.powi(2) / c.lund_h.powi(4) + 64.0 * c.l_f / c.lund_h.powi(2))
}

/// Closed-form bound at iteration `t`.
///
/// Constant steps: `(1 − ηλ)ᵗ‖y₀‖ + C₂r₂²/λ + C₁η/λ`.
/// Diminishing steps `η/√(t+1)`:
/// `e^{−ηλ(√t − 1)}‖y₀‖ + 2eC₂r₂²/λ + C₁η e^{2 − η√t}/λ + 2eC₁η/(λ√(t+1))`.
pub fn violation_bound(p: &BoundParameters, t: usize) -> f64 {
    let (c1, c2) = p.constants();
    let lam = p.lambda_min();
    let eta = p.schedule.eta;
    let r2sq = p.r2 * p.r2;
    let tf = t as f64;
    match p.schedule.kind {
        ScheduleKind::Constant => (1.0 - eta * lam).powf(tf) * p.h0_norm + c2 * r2sq / lam + c1 * eta / lam,
        ScheduleKind::DiminishingSqrt => {
            let e = std::f64::consts::E;
            (-eta * lam * (tf.sqrt() - 1.0)).exp() * p.h0_norm
                + 2.0 * e * c2 * r2sq / lam
                + c1 * eta * (2.0 - eta * tf.sqrt()).exp() / lam
                + 2.0 * e * c1 * eta / (lam * (tf + 1.0).sqrt())
        }
    }
}

/// Asymptotic floor of the constant-step bound.
pub fn violation_floor(p: &BoundParameters) -> f64 {
    let (c1, c2) = p.constants();
    let lam = p.lambda_min();
    match p.schedule.kind {
        ScheduleKind::Constant => c2 * p.r2 * p.r2 / lam + c1 * p.schedule.eta / lam,
        ScheduleKind::DiminishingSqrt => 2.0 * std::f64::consts::E * c2 * p.r2 * p.r2 / lam,
    }
}

/// The bound before summation, `b_0 = ‖y₀‖`,
/// `b_{t+1} = (1 − η_t λ) b_t + η_t C₂ r₂² + C₁ η_t²`, for `t = 0..=horizon`.
pub fn recursive_bound(p: &BoundParameters, horizon: usize) -> Vec<f64> {
    let (c1, c2) = p.constants();
    let lam = p.lambda_min();
    let mut out = Vec::with_capacity(horizon + 1);
    let mut b = p.h0_norm;
    out.push(b);
    for t in 0..horizon {
        let eta = p.schedule.step_size(t);
        b = (1.0 - eta * lam) * b + eta * c2 * p.r2 * p.r2 + c1 * eta * eta;
        out.push(b);
    }
    out
}

/// Smallest batch size meeting
/// `T_B ≥ 32(m log(192 n L̄_h²/L̲_h²) + log(T_G/δ))`.
pub fn min_batch_size(m: usize, n: usize, lbar_h: f64, lund_h: f64, horizon: usize, delta: f64) -> usize {
    let ratio = (lbar_h / lund_h).powi(2);
    let v = 32.0 * (m as f64 * (192.0 * n as f64 * ratio).ln() + (horizon as f64 / delta).ln());
    v.ceil().max(1.0) as usize
}

/// Upper limits `(r₁, r₂)` on the probe radii; infinite when `R = 0`.
pub fn radius_caps(consts: &RegularityConstants, n: usize) -> (f64, f64) {
    let (lund, lbar, r) = (consts.lund_h, consts.lbar_h, consts.r_bound);
    if r == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let r1 = lund / (8.0 * (2.0 * lbar * r).sqrt());
    let r2 = lund / (8.0 * (2.0 * n as f64 * lbar * r).sqrt());
    (r1, r2)
}

/// `κ(AAᵀ) = λ_max / λ_min`.
pub fn gram_condition_number(a: &Matrix) -> f64 {
    let eig = (a * a.transpose()).symmetric_eigenvalues();
    eig.max() / eig.min()
}

/// Sample count `N ≥ 32(m log(192 n κ(AAᵀ)) + log(1/δ))` after which the
/// sampled Gram matrix keeps `λ_min ≥ λ_min(AAᵀ)/32` with probability
/// `1 − δ`.
pub fn lemma_batch_size(a: &Matrix, delta: f64) -> usize {
    let (m, n) = a.shape();
    let kappa = gram_condition_number(a);
    let v = 32.0 * (m as f64 * (192.0 * n as f64 * kappa).ln() + (1.0 / delta).ln());
    v.ceil().max(1.0) as usize
}

/// Fraction of `trials` in which `λ_min((n/N) Σ A u uᵀ Aᵀ) ≥ σ_min(A)²/32`
/// for `N` fresh sphere directions.
pub fn empirical_min_eig_check<R: Rng + ?Sized>(a: &Matrix, samples: usize, trials: usize, rng: &mut R) -> f64 {
    assert!(samples >= 1, "need at least one sample");
    if trials == 0 {
        return 0.0;
    }
    let (m, n) = a.shape();
    let threshold = (a * a.transpose()).symmetric_eigenvalues().min() / 32.0;
    let scale = n as f64 / samples as f64;
    let mut passed = 0usize;
    for _ in 0..trials {
        let batch = sample_sphere(n, samples, rng);
        let mut gram = Matrix::zeros(m, m);
        for u in batch.iter() {
            let au = a * u;
            gram.ger(scale, &au, &au, 1.0);
        }
        if gram.symmetric_eigenvalues().min() >= threshold {
            passed += 1;
        }
    }
    passed as f64 / trials as f64
}

/// Per-iteration comparison of a run against [`violation_bound`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    /// `‖h‖` or `‖[h]₊‖`.
    pub norm: &'static str,
    pub c1: f64,
    pub c2: f64,
    /// The alternative inequality `C₂` (inequality problems only).
    pub c2_lemma_variant: Option<f64>,
    pub floor: f64,
    pub required_batch_size: usize,
    pub rows_checked: usize,
    /// First iteration whose recorded violation exceeds the bound.
    pub first_violation: Option<usize>,
    /// Largest `recorded / bound` over the run.
    pub max_ratio: f64,
}

impl BoundReport {
    pub fn all_within(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Reasons the bound's hypotheses fail for `record` (empty when they hold).
pub fn precondition_failures(record: &RunRecord, p: &BoundParameters) -> Vec<String> {
    let mut reasons = Vec::new();
    if !p.is_stable() {
        reasons.push(format!(
            "η₀λ_min(K) = {} is outside (0, 1)",
            p.schedule.step_size(0) * p.lambda_min()
        ));
    }
    if record.schedule != p.schedule {
        reasons.push("run schedule differs from the bound's schedule".into());
    }
    if record.kind != p.kind {
        reasons.push("run constraint kind differs from the bound's".into());
    }
    if record.horizon > p.horizon {
        reasons.push(format!("run horizon {} exceeds the bound's T_G = {}", record.horizon, p.horizon));
    }
    if record.algorithm == Algorithm::FoFl {
        // Exact gradients: no sampling, so no batch or radius condition.
        return reasons;
    }
    let required = min_batch_size(p.m, p.n, p.consts.lbar_h, p.consts.lund_h, p.horizon, p.delta);
    if record.estimator.batch_size < required {
        reasons.push(format!("T_B = {} is below the required {}", record.estimator.batch_size, required));
    }
    let (cap1, cap2) = radius_caps(&p.consts, p.n);
    if record.estimator.r1 > cap1 {
        reasons.push(format!("r₁ = {} exceeds the cap {}", record.estimator.r1, cap1));
    }
    if record.estimator.r2 > cap2 {
        reasons.push(format!("r₂ = {} exceeds the cap {}", record.estimator.r2, cap2));
    }
    if record.estimator.r2 > p.r2 {
        reasons.push(format!("run r₂ = {} exceeds the bound's r₂ = {}", record.estimator.r2, p.r2));
    }
    reasons
}

/// Compares every recorded violation with the bound.
pub fn check_run_against_bound(record: &RunRecord, p: &BoundParameters) -> Result<BoundReport, TheoryError> {
    p.validate()?;
    let reasons = precondition_failures(record, p);
    if !reasons.is_empty() {
        return Err(TheoryError::PreconditionUnsatisfied(reasons));
    }
    Ok(compare_rows(record.violations(), p))
}

/// Bound comparison without the precondition check.
pub fn compare_rows(violations: impl IntoIterator<Item = f64>, p: &BoundParameters) -> BoundReport {
    let (c1, c2) = p.constants();
    let mut first_violation = None;
    let mut max_ratio = 0.0f64;
    let mut rows_checked = 0;
    for (t, v) in violations.into_iter().enumerate() {
        let bound = violation_bound(p, t);
        rows_checked += 1;
        // NaN violations count as exceeding the bound.
        if v.is_nan() || v > bound {
            first_violation.get_or_insert(t);
        }
        max_ratio = max_ratio.max(if v.is_nan() { f64::INFINITY } else { v / bound });
    }
    BoundReport {
        norm: p.kind.norm_label(),
        c1,
        c2,
        c2_lemma_variant: (p.kind == ConstraintKind::Inequality).then(|| c2_ineq_lemma_variant(p)),
        floor: violation_floor(p),
        required_batch_size: min_batch_size(p.m, p.n, p.consts.lbar_h, p.consts.lund_h, p.horizon, p.delta),
        rows_checked,
        first_violation,
        max_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::algorithm::{run, RunConfig, GradientMode};
    use crate::estimator::EstimatorConfig;
    use crate::oracle::make_circle_problem;
    use crate::{assert_close, seeded_rng, Vector};
    use proptest::prelude::*;

    fn circle_params(schedule: StepSchedule) -> BoundParameters {
        BoundParameters {
            consts: circle_constants(),
            gain: GainMatrix::scaled_identity(1, 1.0).unwrap(),
            n: 2,
            m: 1,
            kind: ConstraintKind::Equality,
            delta: 0.1,
            horizon: 500,
            schedule,
            r2: 1e-3,
            h0_norm: 0.44,
        }
    }

    fn unit_params() -> BoundParameters {
        BoundParameters {
            consts: RegularityConstants {
                l_f: 1.0,
                h_bound: 1.0,
                lbar_h: 1.0,
                lund_h: 1.0,
                m_bound: 1.0,
                r_bound: 1.0,
                domain_note: String::new(),
            },
            gain: GainMatrix::scaled_identity(1, 1.0).unwrap(),
            n: 1,
            m: 1,
            kind: ConstraintKind::Inequality,
            delta: 0.1,
            horizon: 10,
            schedule: StepSchedule::constant(0.1),
            r2: 1e-3,
            h0_norm: 1.0,
        }
    }

    #[test]
    fn circle_constants_by_substitution() {
        let p = circle_params(StepSchedule::constant(0.01));
        let (c1, c2) = constants_eq(&p);
        let s2 = std::f64::consts::SQRT_2;
        assert_close!(c1, 2.0 * (2.0 * s2 + 512.0 * (8.0 * s2 + 3.0)), 1e-9);
        assert_eq!(c2, 0.0);
    }

    #[test]
    fn zero_curvature_zeroes_constants() {
        let mut p = circle_params(StepSchedule::constant(0.01));
        p.consts.m_bound = 0.0;
        assert_eq!(constants_eq(&p), (0.0, 0.0));
        assert_eq!(constants_ineq(&p), (0.0, 0.0));
    }

    #[test]
    fn unit_inequality_constants() {
        let p = unit_params();
        let (c1_ineq, c2) = constants_ineq(&p);
        assert_close!(c2, 8256.0, 1e-9);
        assert_eq!(c1_ineq, constants_eq(&p).0);
        assert_close!(c1_ineq, 1.0 + 64.0 * 2.0, 1e-12);
        // Without ‖K‖H the first summand halves.
        assert_close!(c2_ineq_lemma_variant(&p), 4096.0 + 64.0, 1e-9);
    }

    #[test]
    fn constant_step_bound_endpoints() {
        let p = circle_params(StepSchedule::constant(0.01));
        let (c1, _) = constants_eq(&p);
        assert_close!(violation_bound(&p, 0), 0.44 + c1 * 0.01, 1e-12);
        let floor = violation_floor(&p);
        assert_close!(violation_bound(&p, 100_000), floor, 1e-12);
    }

    #[test]
    fn circle_bound_at_500_and_monotone() {
        let p = circle_params(StepSchedule::constant(0.01));
        let b500 = violation_bound(&p, 500);
        let (c1, _) = constants_eq(&p);
        let expected = 0.99f64.powi(500) * 0.44 + c1 * 0.01;
        assert_close!(b500, expected, 1e-9);
        assert!(violation_bound(&p, 501) <= b500);
    }

    #[test]
    fn constant_bound_is_nonincreasing_above_floor() {
        let mut p = circle_params(StepSchedule::constant(0.01));
        p.h0_norm = 1e3;
        let mut prev = violation_bound(&p, 0);
        for t in 1..2000 {
            let b = violation_bound(&p, t);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn min_batch_size_example() {
        assert_eq!(min_batch_size(1, 100, 4.0, 1.0, 1000, 0.01), 773);
        assert!(min_batch_size(1, 100, 4.0, 1.0, 1000, 0.001) > 773);
    }

    #[test]
    fn radius_caps_are_unbounded_without_third_derivative() {
        let (r1, r2) = radius_caps(&circle_constants(), 2);
        assert!(r1.is_infinite() && r2.is_infinite());
        let mut c = circle_constants();
        c.r_bound = 2.0;
        let (r1, r2) = radius_caps(&c, 2);
        assert_close!(r1, 1.0 / (8.0 * 16f64.sqrt()), 1e-15);
        assert_close!(r2, 1.0 / (8.0 * 32f64.sqrt()), 1e-15);
    }

    #[test]
    fn eigen_check_sanity_cases() {
        let mut rng = seeded_rng(0);
        let eye = Matrix::identity(3, 3);
        assert_eq!(empirical_min_eig_check(&eye, 2000, 20, &mut rng), 1.0);
        let a = Matrix::from_fn(2, 5, |i, j| (i + 2 * j) as f64 * 0.3 + if i == j { 1.0 } else { 0.0 });
        assert_eq!(empirical_min_eig_check(&a, 1, 20, &mut rng), 0.0);
    }

    #[test]
    fn eigen_check_passes_at_lemma_batch_size() {
        let mut rng = seeded_rng(11);
        let a = Matrix::from_fn(2, 10, |_, _| rng.random::<f64>() - 0.5);
        let n = lemma_batch_size(&a, 0.1);
        assert!(empirical_min_eig_check(&a, n, 200, &mut rng) >= 0.9);
    }

    #[test]
    fn first_order_circle_run_is_within_bound() {
        let p = circle_params(StepSchedule::constant(0.01));
        let cfg = RunConfig::new(
            Algorithm::FoFl,
            500,
            EstimatorConfig::new(1, 1e-3, 1e-3).unwrap(),
            p.gain.clone(),
            p.schedule,
            0,
        )
        .with_gradient_mode(GradientMode::Analytic);
        let rec = run(&make_circle_problem(), &Vector::from_vec(vec![1.2, 0.0]), &cfg).unwrap();
        let report = check_run_against_bound(&rec, &p).unwrap();
        assert!(report.all_within());
        assert_eq!(report.rows_checked, 501);
        assert_eq!(report.norm, "||h(x)||");
    }

    #[test]
    fn detector_reports_first_excess() {
        let p = circle_params(StepSchedule::constant(0.01));
        let mut v: Vec<f64> = (0..10).map(|t| violation_bound(&p, t) * 0.5).collect();
        v[3] = violation_bound(&p, 3) * 1.01;
        v[7] = f64::NAN;
        let report = compare_rows(v, &p);
        assert_eq!(report.first_violation, Some(3));
    }

    #[test]
    fn small_batch_is_refused() {
        let p = circle_params(StepSchedule::constant(0.01));
        let cfg = RunConfig::new(
            Algorithm::ZoflEq,
            5,
            EstimatorConfig::new(4, 1e-3, 1e-3).unwrap(),
            p.gain.clone(),
            p.schedule,
            0,
        );
        let rec = run(&make_circle_problem(), &Vector::from_vec(vec![1.2, 0.0]), &cfg).unwrap();
        assert!(matches!(
            check_run_against_bound(&rec, &p),
            Err(TheoryError::PreconditionUnsatisfied(_))
        ));
    }

    #[test]
    fn diminishing_bound_dominates_the_recursion() {
        let cases = [(0.01, 1.0, 0.44, 1e-3), (0.5, 1.0, 2.0, 1e-2), (0.1, 3.0, 5.0, 1e-1), (0.9, 1.0, 0.1, 0.0)];
        for (eta, k, h0, r2) in cases {
            let mut p = circle_params(StepSchedule::diminishing(eta));
            p.gain = GainMatrix::scaled_identity(1, k).unwrap();
            p.h0_norm = h0;
            p.r2 = r2;
            p.consts.r_bound = 0.5;
            p.horizon = 10_000;
            let rec = recursive_bound(&p, 10_000);
            for (t, b) in rec.iter().enumerate() {
                let closed = violation_bound(&p, t);
                assert!(closed >= b * (1.0 - 1e-12), "eta {eta} k {k} t {t}: {closed} < {b}");
            }
        }
    }

    #[test]
    fn constant_bound_dominates_the_recursion() {
        let p = circle_params(StepSchedule::constant(0.05));
        for (t, b) in recursive_bound(&p, 3000).iter().enumerate() {
            assert!(violation_bound(&p, t) >= b * (1.0 - 1e-12));
        }
    }

    fn perturbed(p: &BoundParameters, field: usize, factor: f64) -> BoundParameters {
        let mut q = p.clone();
        let c = &mut q.consts;
        match field {
            0 => c.l_f *= factor,
            1 => c.h_bound *= factor,
            2 => c.m_bound *= factor,
            3 => c.r_bound *= factor,
            4 => q.n = ((q.n as f64) * factor).ceil() as usize,
            _ => c.lund_h = (c.lund_h * factor).min(c.lbar_h),
        }
        q
    }

    proptest! {
        #[test]
        fn constants_are_monotone(
            l_f in 0.0..5.0f64, h in 0.0..5.0f64, lund in 0.1..2.0f64, extra in 0.0..3.0f64,
            m_b in 0.0..5.0f64, r_b in 0.0..5.0f64, n in 1usize..20, k in 0.1..3.0f64,
            field in 0usize..6, factor in 1.0..2.0f64,
        ) {
            let p = BoundParameters {
                consts: RegularityConstants {
                    l_f, h_bound: h, lbar_h: lund + extra, lund_h: lund, m_bound: m_b, r_bound: r_b,
                    domain_note: String::new(),
                },
                gain: GainMatrix::scaled_identity(1, k).unwrap(),
                n, m: 1, kind: ConstraintKind::Equality, delta: 0.1, horizon: 10,
                schedule: StepSchedule::constant(0.01), r2: 1e-3, h0_norm: 1.0,
            };
            let q = perturbed(&p, field, factor);
            for f in [constants_eq, constants_ineq] {
                let (a1, a2) = f(&p);
                let (b1, b2) = f(&q);
                let tol = 1e-12 * (1.0 + a1.abs() + a2.abs());
                if field == 5 {
                    // Raising L̲_h can only shrink the constants.
                    prop_assert!(b1 <= a1 + tol && b2 <= a2 + tol);
                } else {
                    prop_assert!(b1 >= a1 - tol && b2 >= a2 - tol);
                }
            }
        }
    }
}
