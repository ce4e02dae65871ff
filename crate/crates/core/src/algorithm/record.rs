use serde::{Deserialize, Serialize};

use super::{Algorithm, StepSchedule};
use crate::estimator::EstimatorConfig;
use crate::oracle::ConstraintKind;
use crate::Vector;

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    SingularAbort,
    NonFiniteAbort,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::SingularAbort => "singular-abort",
            RunStatus::NonFiniteAbort => "non-finite-abort",
        }
    }
}

/// State after `t` steps.
///
/// `lambda_norm` and `eta` describe the step that produced `x_t`; both are
/// zero on the initial row. Call counts are cumulative from the start of the
/// run and exclude the uncounted monitoring evaluations used to fill the row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: usize,
    pub x_norm: f64,
    pub objective: f64,
    pub violation: f64,
    pub lambda_norm: f64,
    pub eta: f64,
    pub objective_calls: u64,
    pub constraint_calls: u64,
}

/// Trajectory of one run plus the settings needed to check it against the
/// theoretical bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub problem: String,
    pub kind: ConstraintKind,
    pub estimator: EstimatorConfig,
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub status: RunStatus,
    pub abort_reason: Option<String>,
    /// Direction batches redrawn after a singular multiplier solve.
    pub retries: usize,
    pub final_point: Vector,
}

impl RunRecord {
    pub fn last(&self) -> &RunRow {
        self.rows.last().expect("a run record always holds the initial row")
    }

    pub fn initial_violation(&self) -> f64 {
        self.rows[0].violation
    }

    pub fn final_violation(&self) -> f64 {
        self.last().violation
    }

    pub fn final_objective(&self) -> f64 {
        self.last().objective
    }

    pub fn violations(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.violation)
    }

    /// Mean violation over the last `count` rows (all rows if fewer).
    pub fn tail_mean_violation(&self, count: usize) -> f64 {
        let start = self.rows.len().saturating_sub(count);
        let tail = &self.rows[start..];
        tail.iter().map(|r| r.violation).sum::<f64>() / tail.len() as f64
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}
