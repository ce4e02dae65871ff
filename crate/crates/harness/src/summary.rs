//! Per-label statistics across seeds.

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::execute::{bound_summary_text, status_counts, BoundSummary, RunOutput};

/// Linear-interpolation quantile (the usual "type 7" rule) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Quartiles {
            q1: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q3: quantile(values, 0.75)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelSummary {
    pub label: String,
    pub algorithm: String,
    pub runs: usize,
    pub completed: usize,
    pub singular_aborts: usize,
    pub non_finite_aborts: usize,
    /// Over completed runs only; absent when none completed.
    pub final_objective: Option<Quartiles>,
    pub final_violation: Option<Quartiles>,
    pub initial_violation: Option<f64>,
    pub objective_calls: u64,
    pub constraint_calls: u64,
    pub retries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryReport {
    pub name: String,
    pub problem: String,
    pub violation_norm: String,
    pub seeds: Vec<u64>,
    pub labels: Vec<LabelSummary>,
    pub total_objective_calls: u64,
    pub total_constraint_calls: u64,
    pub bounds: Option<BoundSummary>,
}

impl SummaryReport {
    pub fn label(&self, label: &str) -> Option<&LabelSummary> {
        self.labels.iter().find(|l| l.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summaries serialize") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "experiment {} on problem {} ({} runs x {} seeds)\nviolation norm: {}\n\n",
            self.name,
            self.problem,
            self.labels.len(),
            self.seeds.len(),
            self.violation_norm
        );
        let fmt_q = |q: &Option<Quartiles>| match q {
            Some(q) => format!("{:.6e} [{:.6e}, {:.6e}]", q.median, q.q1, q.q3),
            None => "n/a".to_string(),
        };
        for l in &self.labels {
            s.push_str(&format!("{} ({})\n", l.label, l.algorithm));
            s.push_str(&format!(
                "  completed {}/{} (singular aborts {}, non-finite aborts {}, retries {})\n",
                l.completed, l.runs, l.singular_aborts, l.non_finite_aborts, l.retries
            ));
            s.push_str(&format!("  final objective  median [q1, q3]: {}\n", fmt_q(&l.final_objective)));
            s.push_str(&format!("  final violation  median [q1, q3]: {}\n", fmt_q(&l.final_violation)));
            s.push_str(&format!(
                "  oracle calls: objective {}, constraints {}\n",
                l.objective_calls, l.constraint_calls
            ));
        }
        s.push_str(&format!(
            "\ntotal oracle calls: objective {}, constraints {}\n",
            self.total_objective_calls, self.total_constraint_calls
        ));
        if let Some(b) = &self.bounds {
            s.push('\n');
            s.push_str(&bound_summary_text(b));
        }
        s
    }
}

pub fn summarize(cfg: &ExperimentConfig, outputs: &[RunOutput], bounds: Option<BoundSummary>) -> SummaryReport {
    let labels: Vec<LabelSummary> = cfg
        .runs
        .iter()
        .map(|spec| {
            let mine: Vec<&RunOutput> = outputs.iter().filter(|o| o.label == spec.label()).collect();
            let counts = status_counts(mine.iter().map(|o| &o.record));
            let done: Vec<&RunOutput> = mine.iter().copied().filter(|o| o.record.is_completed()).collect();
            let finals = |f: fn(&RunOutput) -> f64| done.iter().map(|o| f(o)).collect::<Vec<f64>>();
            LabelSummary {
                label: spec.label().to_string(),
                algorithm: spec.algorithm.as_str().to_string(),
                runs: mine.len(),
                completed: counts[0].1,
                singular_aborts: counts[1].1,
                non_finite_aborts: counts[2].1,
                final_objective: Quartiles::of(&finals(|o| o.record.final_objective())),
                final_violation: Quartiles::of(&finals(|o| o.record.final_violation())),
                initial_violation: mine.first().map(|o| o.record.initial_violation()),
                objective_calls: mine.iter().map(|o| o.record.last().objective_calls).sum(),
                constraint_calls: mine.iter().map(|o| o.record.last().constraint_calls).sum(),
                retries: mine.iter().map(|o| o.record.retries).sum(),
            }
        })
        .collect();
    SummaryReport {
        name: cfg.name.clone(),
        problem: cfg.problem.name().to_string(),
        violation_norm: cfg.problem.kind().norm_label().to_string(),
        seeds: cfg.seeds.clone(),
        total_objective_calls: labels.iter().map(|l| l.objective_calls).sum(),
        total_constraint_calls: labels.iter().map(|l| l.constraint_calls).sum(),
        labels,
        bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[3.0], 0.25), Some(3.0));
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), Some(2.5));
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    }
}
