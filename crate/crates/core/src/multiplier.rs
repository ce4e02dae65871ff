//! Multiplier solves for the feedback-linearizing input.
//!
//! Equality constraints: `G_h λ = −(G_f − K h)`.
//!
//! Inequality constraints: find `(λ, s)` with
//! `G_h λ + G_f = K h + s`, `λ ≥ 0`, `s ≥ 0`, `λᵀs = 0`. `G_h` need not be
//! symmetric, so the system is solved exactly by enumerating active sets,
//! which is cheap for the small constraint counts this crate targets.

use itertools::Itertools;
use thiserror::Error;

use crate::{Matrix, Vector};

/// Relative threshold on `σ_min/σ_max` below which a matrix counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;
/// Feasibility slack accepted on `λ` and `s` in the active-set search.
pub const COMPLEMENTARITY_TOLERANCE: f64 = 1e-10;
/// Largest `m` the active-set enumeration accepts.
pub const MAX_ACTIVE_SET_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiplierError {
    #[error("probe matrix is numerically singular")]
    SingularProbeMatrix,
    #[error("no active set yields a complementary solution")]
    NoComplementarySolution,
    #[error("{m} constraints exceed the active-set enumeration limit of {MAX_ACTIVE_SET_DIM}")]
    TooManyConstraints { m: usize },
    #[error("gain matrix must be symmetric positive definite: {0}")]
    InvalidGain(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Symmetric positive-definite gain `K` on the constraint residual.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    k: Matrix,
    lambda_min: f64,
    operator_norm: f64,
}

impl GainMatrix {
    pub fn new(k: Matrix) -> Result<Self, MultiplierError> {
        if !k.is_square() || k.nrows() == 0 {
            return Err(MultiplierError::InvalidGain("not a non-empty square matrix".into()));
        }
        if !k.iter().all(|v| v.is_finite()) {
            return Err(MultiplierError::InvalidGain("non-finite entry".into()));
        }
        let asymmetry = (&k - k.transpose()).abs().max();
        if asymmetry > 1e-12 * (1.0 + k.abs().max()) {
            return Err(MultiplierError::InvalidGain("not symmetric".into()));
        }
        let eig = k.clone().symmetric_eigen();
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= 0.0 {
            return Err(MultiplierError::InvalidGain(format!("smallest eigenvalue {lambda_min}")));
        }
        let operator_norm = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        Ok(GainMatrix { k, lambda_min, operator_norm })
    }

    /// `k·I` of size `m`.
    pub fn scaled_identity(m: usize, k: f64) -> Result<Self, MultiplierError> {
        Self::new(Matrix::identity(m, m) * k)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Spectral norm `‖K‖₂`.
    pub fn operator_norm(&self) -> f64 {
        self.operator_norm
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.k * v
    }
}

/// Multiplier `λ`, slack `s` (zero for equalities), the active set and the
/// larger of the linear-system and complementarity residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierSolution {
    pub lambda: Vector,
    pub slack: Vector,
    /// Zero-based indices of constraints with a free multiplier.
    pub active_set: Vec<usize>,
    pub residual: f64,
}

fn is_singular(a: &Matrix) -> bool {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    max == 0.0 || !min.is_finite() || min <= SINGULAR_TOLERANCE * max
}

fn check_dims(g_h: &Matrix, g_f: &Vector, k: &GainMatrix, h_val: &Vector) -> Result<usize, MultiplierError> {
    let m = g_f.len();
    if g_h.shape() != (m, m) || k.dim() != m || h_val.len() != m {
        return Err(MultiplierError::DimensionMismatch(format!(
            "G_h {:?}, G_f {}, K {}, h {}",
            g_h.shape(),
            m,
            k.dim(),
            h_val.len()
        )));
    }
    Ok(m)
}

/// Solves `G_h λ = −(G_f − K h)`.
pub fn solve_equality(
    g_h: &Matrix,
    g_f: &Vector,
    k: &GainMatrix,
    h_val: &Vector,
) -> Result<MultiplierSolution, MultiplierError> {
    let m = check_dims(g_h, g_f, k, h_val)?;
    if is_singular(g_h) {
        return Err(MultiplierError::SingularProbeMatrix);
    }
    let rhs = -(g_f - k.apply(h_val));
    let lu = g_h.clone().lu();
    let mut lambda = lu.solve(&rhs).ok_or(MultiplierError::SingularProbeMatrix)?;
    // One round of iterative refinement.
    let r = &rhs - g_h * &lambda;
    if let Some(correction) = lu.solve(&r) {
        lambda += correction;
    }
    let residual = (g_h * &lambda - &rhs).norm();
    Ok(MultiplierSolution {
        lambda,
        slack: Vector::zeros(m),
        active_set: (0..m).collect(),
        residual,
    })
}

/// Solves `G_h λ + G_f = K h + s`, `λ, s ≥ 0`, `λᵀs = 0`.
pub fn solve_complementarity(
    g_h: &Matrix,
    g_f: &Vector,
    k: &GainMatrix,
    h_val: &Vector,
) -> Result<MultiplierSolution, MultiplierError> {
    check_dims(g_h, g_f, k, h_val)?;
    let q = g_f - k.apply(h_val);
    solve_lcp(g_h, &q)
}

/// Finds `λ ≥ 0` with `s = Mλ + q ≥ 0` and `λᵀs = 0`.
///
/// Active sets are tried by increasing cardinality, lexicographically within
/// a cardinality; the first feasible one wins. Entries within
/// [`COMPLEMENTARITY_TOLERANCE`] below zero are clamped to zero.
pub fn solve_lcp(mat: &Matrix, q: &Vector) -> Result<MultiplierSolution, MultiplierError> {
    let m = q.len();
    if mat.shape() != (m, m) {
        return Err(MultiplierError::DimensionMismatch(format!("M {:?}, q {}", mat.shape(), m)));
    }
    if m > MAX_ACTIVE_SET_DIM {
        return Err(MultiplierError::TooManyConstraints { m });
    }
    let eps = COMPLEMENTARITY_TOLERANCE;
    let mut solvable_subsets = 0usize;
    for size in 0..=m {
        for subset in (0..m).combinations(size) {
            let mut lambda = Vector::zeros(m);
            if size > 0 {
                let block = mat.select_rows(&subset).select_columns(&subset);
                if is_singular(&block) {
                    continue;
                }
                solvable_subsets += 1;
                let rhs = -Vector::from_iterator(size, subset.iter().map(|&i| q[i]));
                let Some(sub_lambda) = block.lu().solve(&rhs) else {
                    continue;
                };
                for (&i, &v) in subset.iter().zip(sub_lambda.iter()) {
                    lambda[i] = v;
                }
            }
            let slack = mat * &lambda + q;
            if lambda.iter().all(|&v| v >= -eps) && slack.iter().all(|&v| v >= -eps) {
                let mut lambda = lambda.map(|v| v.max(0.0));
                let mut slack = slack.map(|v| v.max(0.0));
                for &i in &subset {
                    slack[i] = 0.0;
                }
                for i in (0..m).filter(|i| !subset.contains(i)) {
                    lambda[i] = 0.0;
                }
                let system = (mat * &lambda + q - &slack).amax();
                let residual = system.max(lambda.dot(&slack).abs());
                return Ok(MultiplierSolution {
                    lambda,
                    slack,
                    active_set: subset,
                    residual,
                });
            }
        }
    }
    if m > 0 && solvable_subsets == 0 {
        Err(MultiplierError::SingularProbeMatrix)
    } else {
        Err(MultiplierError::NoComplementarySolution)
    }
}
