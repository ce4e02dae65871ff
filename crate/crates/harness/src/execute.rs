//! Running an experiment and writing its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use zofl::theory::{check_run_against_bound, BoundParameters, BoundReport, TheoryError};
use zofl::{RunRecord, RunStatus, StepSchedule};

use crate::config::{emit, ExperimentConfig, RunSpec};
use crate::plot::{render_chart, Series};
use crate::summary::{summarize, SummaryReport};
use crate::HarnessError;

/// Header of every trajectory CSV.
pub const CSV_HEADER: [&str; 7] = ["t", "f", "violation", "lambda_norm", "eta", "obj_calls", "cons_calls"];

/// One finished `(run, seed)` pair.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub label: String,
    pub seed: u64,
    pub record: RunRecord,
}

#[derive(Clone, Debug, Default)]
pub struct ExecuteOptions {
    /// Overrides `output_dir` from the config.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the rayon default.
    pub jobs: Option<usize>,
    /// Forces plots off regardless of the config.
    pub no_plots: bool,
}

/// Bound comparison for one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundOutcome {
    pub label: String,
    pub seed: u64,
    /// Set when the comparison was made.
    pub report: Option<BoundReport>,
    /// Set when the bound's hypotheses do not hold or it cannot be evaluated.
    pub precondition_unsatisfied: Option<String>,
}

impl BoundOutcome {
    pub fn within_bound(&self) -> bool {
        self.report.as_ref().is_some_and(BoundReport::all_within)
    }
}

/// All bound comparisons of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundSummary {
    pub evaluated: bool,
    /// Why nothing was evaluated, if so.
    pub note: Option<String>,
    pub delta: f64,
    pub outcomes: Vec<BoundOutcome>,
    /// Per label: fraction of seeds whose whole trajectory stayed within the
    /// bound.
    pub fraction_within: Vec<(String, f64)>,
}

fn file_stem(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}")
}

/// Executes every `(run, seed)` pair. Results come back in config order
/// (runs outer, seeds inner) regardless of scheduling.
pub fn run_all(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<RunOutput>, HarnessError> {
    let pairs: Vec<(&RunSpec, u64)> = cfg
        .runs
        .iter()
        .flat_map(|r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let x0 = cfg.x0();
    let m = cfg.problem.num_constraints();
    let work = || {
        pairs
            .par_iter()
            .map(|&(spec, seed)| {
                let problem = cfg.problem.build()?;
                let run_cfg = spec
                    .run_config(m, seed)
                    .map_err(|e| HarnessError::malformed(spec.label(), e))?;
                let record = zofl::run(&problem, &x0, &run_cfg)
                    .map_err(|e| HarnessError::malformed(spec.label(), e.to_string()))?;
                Ok(RunOutput { label: spec.label().to_string(), seed, record })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    };
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, record: &RunRecord) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| HarnessError::Csv(path.to_path_buf(), e.to_string()))?;
    let err = |e: csv::Error| HarnessError::Csv(path.to_path_buf(), e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &record.rows {
        w.write_record([
            r.t.to_string(),
            format_float(r.objective),
            format_float(r.violation),
            format_float(r.lambda_norm),
            format_float(r.eta),
            r.objective_calls.to_string(),
            r.constraint_calls.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Compares every run with the theory bound, if the config asks for it.
pub fn check_bounds(cfg: &ExperimentConfig, outputs: &[RunOutput]) -> Option<BoundSummary> {
    let spec = cfg.bounds.as_ref()?;
    let Some(consts) = spec.constants.clone() else {
        return Some(BoundSummary {
            evaluated: false,
            note: Some(format!("bound not evaluated: no regularity constants for problem `{}`", cfg.problem.name())),
            delta: spec.delta,
            outcomes: Vec::new(),
            fraction_within: Vec::new(),
        });
    };
    let m = cfg.problem.num_constraints();
    let mut outcomes = Vec::new();
    for out in outputs {
        let run_spec = cfg.runs.iter().find(|r| r.label() == out.label).expect("output labels come from the config");
        let gain = run_spec.gain.build(m).expect("validated config");
        let params = BoundParameters {
            consts: consts.clone(),
            gain,
            n: cfg.problem.dim(),
            m,
            kind: cfg.problem.kind(),
            delta: spec.delta,
            horizon: run_spec.horizon,
            schedule: StepSchedule { kind: run_spec.schedule.kind, eta: run_spec.schedule.eta },
            r2: run_spec.r2,
            h0_norm: out.record.initial_violation(),
        };
        let (report, precondition_unsatisfied) = if !out.record.is_completed() {
            (None, Some(format!("run aborted: {}", out.record.status.as_str())))
        } else {
            match check_run_against_bound(&out.record, &params) {
                Ok(r) => (Some(r), None),
                Err(e @ TheoryError::PreconditionUnsatisfied(_)) => (None, Some(e.to_string())),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        outcomes.push(BoundOutcome { label: out.label.clone(), seed: out.seed, report, precondition_unsatisfied });
    }
    let fraction_within = cfg
        .runs
        .iter()
        .map(|r| {
            let mine: Vec<_> = outcomes.iter().filter(|o| o.label == r.label()).collect();
            let within = mine.iter().filter(|o| o.within_bound()).count();
            (r.label().to_string(), within as f64 / mine.len().max(1) as f64)
        })
        .collect();
    Some(BoundSummary { evaluated: true, note: None, delta: spec.delta, outcomes, fraction_within })
}

pub fn bound_summary_text(b: &BoundSummary) -> String {
    let mut s = String::new();
    if let Some(note) = &b.note {
        s.push_str(note);
        s.push('\n');
        return s;
    }
    s.push_str(&format!("theory bound check (delta = {})\n", b.delta));
    for o in &b.outcomes {
        match (&o.report, &o.precondition_unsatisfied) {
            (Some(r), _) => s.push_str(&format!(
                "  {} seed {}: {} (norm {}, max ratio {:.3e}, C1 {:.6e}, C2 {:.6e})\n",
                o.label,
                o.seed,
                match r.first_violation {
                    None => "all within bound".to_string(),
                    Some(t) => format!("first exceeds bound at t = {t}"),
                },
                r.norm,
                r.max_ratio,
                r.c1,
                r.c2
            )),
            (None, Some(why)) => s.push_str(&format!("  {} seed {}: {}\n", o.label, o.seed, why)),
            (None, None) => {}
        }
    }
    for (label, frac) in &b.fraction_within {
        s.push_str(&format!("  {label}: fraction of seeds within bound = {frac:.4}\n"));
    }
    s
}

/// Median trajectory across seeds for each label.
fn median_series(cfg: &ExperimentConfig, outputs: &[RunOutput], pick: fn(&zofl::RunRow) -> f64) -> Vec<Series> {
    cfg.runs
        .iter()
        .map(|spec| {
            let records: Vec<&RunRecord> =
                outputs.iter().filter(|o| o.label == spec.label()).map(|o| &o.record).collect();
            let len = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
            let points = (0..len)
                .filter_map(|t| {
                    let values: Vec<f64> =
                        records.iter().filter_map(|r| r.rows.get(t)).map(pick).filter(|v| v.is_finite()).collect();
                    crate::summary::quantile(&values, 0.5).map(|v| (t as f64, v))
                })
                .collect();
            Series { label: spec.label().to_string(), points }
        })
        .collect()
}

/// Writes CSVs, the resolved config, the summary and (optionally) plots.
pub fn execute(cfg: &ExperimentConfig, opts: &ExecuteOptions) -> Result<SummaryReport, HarnessError> {
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e))?;
    let outputs = run_all(cfg, opts.jobs)?;

    for out in &outputs {
        let path = out_dir.join(format!("{}.csv", file_stem(&out.label, out.seed)));
        write_csv(&path, &out.record)?;
    }
    let resolved = out_dir.join("resolved_config.toml");
    fs::write(&resolved, emit(cfg)).map_err(|e| HarnessError::io(&resolved, e))?;

    let bounds = check_bounds(cfg, &outputs);
    let summary = summarize(cfg, &outputs, bounds);
    let text_path = out_dir.join("summary.txt");
    fs::write(&text_path, summary.to_text()).map_err(|e| HarnessError::io(&text_path, e))?;
    let json_path = out_dir.join("summary.json");
    fs::write(&json_path, summary.to_json()).map_err(|e| HarnessError::io(&json_path, e))?;

    if cfg.plots && !opts.no_plots {
        let objective = median_series(cfg, &outputs, |r| r.objective);
        let svg = render_chart(&format!("{}: objective", cfg.name), "f(x_t)", &objective, false);
        let p = out_dir.join("objective.svg");
        fs::write(&p, svg).map_err(|e| HarnessError::io(&p, e))?;
        let violation = median_series(cfg, &outputs, |r| r.violation);
        let label = cfg.problem.kind().norm_label();
        let svg = render_chart(&format!("{}: constraint violation", cfg.name), label, &violation, true);
        let p = out_dir.join("violation.svg");
        fs::write(&p, svg).map_err(|e| HarnessError::io(&p, e))?;
    }
    Ok(summary)
}

/// Runs the experiment and writes only the bound report.
pub fn execute_bound_check(cfg: &ExperimentConfig, opts: &ExecuteOptions) -> Result<BoundSummary, HarnessError> {
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e))?;
    let summary = match &cfg.bounds {
        None => BoundSummary {
            evaluated: false,
            note: Some("bound not evaluated: config has no [bounds] section".into()),
            delta: f64::NAN,
            outcomes: Vec::new(),
            fraction_within: Vec::new(),
        },
        Some(b) if b.constants.is_none() => check_bounds(cfg, &[]).expect("bounds present"),
        Some(_) => {
            let outputs = run_all(cfg, opts.jobs)?;
            check_bounds(cfg, &outputs).expect("bounds present")
        }
    };
    let text_path = out_dir.join("bound_report.txt");
    fs::write(&text_path, bound_summary_text(&summary)).map_err(|e| HarnessError::io(&text_path, e))?;
    let json_path = out_dir.join("bound_report.json");
    let json = serde_json::to_string_pretty(&summary).expect("bound summaries serialize");
    fs::write(&json_path, json + "\n").map_err(|e| HarnessError::io(&json_path, e))?;
    Ok(summary)
}

/// Run status counts in a fixed order.
pub fn status_counts<'a>(records: impl Iterator<Item = &'a RunRecord>) -> [(RunStatus, usize); 3] {
    let mut counts = [(RunStatus::Completed, 0), (RunStatus::SingularAbort, 0), (RunStatus::NonFiniteAbort, 0)];
    for r in records {
        for c in counts.iter_mut() {
            if c.0 == r.status {
                c.1 += 1;
            }
        }
    }
    counts
}
