//! End-to-end run: seed, continuation, reports and artifacts.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::Scenario;
use super::export::{
    self, bounds_rows, geometry_rows, InputLimits, TimeMapRow, TimeRow, ARCLENGTH_FILE, BOUNDS_FILE, GEOMETRY_FILE,
    LOG_FILE, SUMMARY_FILE, TIMEMAP_FILE, TIME_FILE,
};
use super::timemap::{arc_samples, build_time_map, to_time_domain, Sample, DEFAULT_DT};
use crate::corridor::QuadConstraint;
use crate::dynamics::{NU, NX};
use crate::flatness::{initial_trajectory, Initialization};
use crate::problem::{constraint_names, QuadrotorProblem};
use crate::pronto::{continuation, ContinuationOutcome, IterationRecord, LevelSummary, Termination, Trajectory};

/// Margin below which a constraint counts as active in the report.
pub const ACTIVITY_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Init,
    Solve,
    Export,
    Plot,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Init => "init",
            Stage::Solve => "solve",
            Stage::Export => "export",
            Stage::Plot => "plot",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError { stage, message: message.to_string() }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

#[derive(Debug, Clone)]
pub struct Solution {
    pub initial: Initialization,
    /// Elapsed time of the seed trajectory.
    pub initial_time: f64,
    pub outcome: ContinuationOutcome<NX, NU>,
    pub records: Vec<IterationRecord>,
    pub runtime_s: f64,
}

impl Solution {
    pub fn trajectory(&self) -> &Trajectory<NX, NU> {
        &self.outcome.trajectory
    }
}

/// Seeds the problem and runs the barrier continuation.
pub fn solve(scenario: &Scenario) -> Result<Solution, PipelineError> {
    let start = Instant::now();
    let problem = &scenario.problem;
    let initial = initial_trajectory(problem, &scenario.init, &scenario.settings.weights)
        .map_err(|e| PipelineError::new(Stage::Init, e))?;
    let initial_time = problem.elapsed_time(initial.trajectory.curve()).map_err(|e| PipelineError::new(Stage::Init, e))?;
    let mut records = Vec::new();
    let outcome = continuation(
        problem,
        problem,
        initial.trajectory.clone(),
        scenario.initial_params,
        &scenario.schedule,
        &scenario.settings,
        &mut |r| records.push(r.clone()),
    )
    .map_err(|e| PipelineError::new(Stage::Solve, e))?;
    Ok(Solution { initial, initial_time, outcome, records, runtime_s: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
    /// Radial constraints have a single boundary.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveInterval {
    pub start: f64,
    pub end: f64,
    pub side: Side,
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub name: String,
    /// Smallest `-c_j` over the stage nodes.
    pub min_margin: f64,
    pub s_at_min: f64,
    /// Fractions of stage nodes active on each side.
    pub lower_fraction: f64,
    pub upper_fraction: f64,
    pub active: Vec<ActiveInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    #[serde(flatten)]
    pub level: LevelSummary,
    /// `-max_violation`, the smallest normalized margin over all constraints.
    pub min_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub value: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    /// `completed`, or the failing level and error.
    pub status: String,
    pub completed: bool,
    /// Maneuver time `T`, s.
    pub maneuver_time: f64,
    /// Trapezoidal integral of the time density over the solution.
    pub cost_integral: f64,
    pub initial_time: f64,
    pub initial_margin: f64,
    pub peak_tangential_speed: Peak,
    pub final_state: [f64; NX],
    pub initial_state: [f64; NX],
    pub box_center: Option<[f64; NX]>,
    /// Euclidean distance of the final state to the box center.
    pub closure_to_center: Option<f64>,
    /// Euclidean distance of the final state to the seed initial state.
    pub closure_to_initial: f64,
    pub final_box_margin: Option<f64>,
    pub min_margin: f64,
    pub levels: Vec<LevelReport>,
    pub constraints: Vec<ConstraintReport>,
    pub limits: InputLimits,
    pub iterations: usize,
    pub runtime_s: f64,
}

fn side_of(c: &QuadConstraint, z: &[f64]) -> Side {
    let [(j, a, b), (_, a2, _)] = c.terms;
    if a2 != 0.0 {
        Side::Boundary
    } else if a * z[j] + b >= 0.0 {
        Side::Upper
    } else {
        Side::Lower
    }
}

pub fn input_limits(problem: &QuadrotorProblem) -> InputLimits {
    let b = &problem.bounds;
    InputLimits { p_max: b.p_max, q_max: b.q_max, r_max: b.r_max, f_min: b.f_min, f_max: b.f_max }
}

/// Per-constraint margins and activity intervals of a trajectory.
pub fn constraint_reports(problem: &QuadrotorProblem, trajectory: &Trajectory<NX, NU>) -> Vec<ConstraintReport> {
    let curve = trajectory.curve();
    let n = problem.path.n_steps();
    let names = constraint_names(&problem.corridor);
    let mut reports: Vec<ConstraintReport> = names
        .iter()
        .map(|name| ConstraintReport {
            name: name.to_string(),
            min_margin: f64::INFINITY,
            s_at_min: 0.0,
            lower_fraction: 0.0,
            upper_fraction: 0.0,
            active: Vec::new(),
        })
        .collect();
    let mut open: Vec<Option<ActiveInterval>> = vec![None; names.len()];
    for k in 0..n {
        let s = problem.path.node_s(k);
        let z = crate::corridor::stack(&curve.x[k], &curve.u[k]);
        let set = problem.constraints(k);
        for (j, c) in set.as_slice().iter().enumerate() {
            let margin = -c.value(&z);
            let report = &mut reports[j];
            if margin < report.min_margin {
                report.min_margin = margin;
                report.s_at_min = s;
            }
            let active = margin < ACTIVITY_THRESHOLD;
            let side = side_of(c, &z);
            if active {
                match side {
                    Side::Upper => report.upper_fraction += 1.0,
                    _ => report.lower_fraction += 1.0,
                }
            }
            let slot = &mut open[j];
            match slot {
                Some(iv) if active && iv.side == side => {
                    iv.end = s;
                    iv.min_margin = iv.min_margin.min(margin);
                }
                _ => {
                    if let Some(iv) = slot.take() {
                        report.active.push(iv);
                    }
                    if active {
                        *slot = Some(ActiveInterval { start: s, end: s, side, min_margin: margin });
                    }
                }
            }
        }
    }
    for (report, slot) in reports.iter_mut().zip(open) {
        if let Some(iv) = slot {
            report.active.push(iv);
        }
        report.lower_fraction /= n as f64;
        report.upper_fraction /= n as f64;
    }
    reports
}

fn array(x: &crate::dynamics::StateVec) -> [f64; NX] {
    std::array::from_fn(|i| x[i])
}

pub fn summarize(scenario: &Scenario, solution: &Solution) -> Result<Summary, PipelineError> {
    let problem = &scenario.problem;
    let path = &problem.path;
    let trajectory = solution.trajectory();
    let curve = trajectory.curve();
    let n = path.n_steps();
    let tmap = build_time_map(curve, path).map_err(|e| PipelineError::new(Stage::Export, e))?;
    let cost_integral = problem.elapsed_time(curve).map_err(|e| PipelineError::new(Stage::Export, e))?;
    let mut peak = Peak { value: f64::NEG_INFINITY, s: 0.0 };
    for k in 0..=n {
        let x = &curve.x[k];
        let v = nalgebra::Vector3::new(x[2], x[3], x[4]);
        let tv = path.node_frame(k).t.dot(&v);
        if tv > peak.value {
            peak = Peak { value: tv, s: path.node_s(k) };
        }
    }
    let x_n = curve.x[n];
    let center = problem.final_box.as_ref().map(|b| b.center());
    let final_box_margin = problem
        .final_box
        .as_ref()
        .map(|b| -b.constraints().iter().map(|c| c.value(x_n.as_slice())).fold(f64::NEG_INFINITY, f64::max));
    let status = match &solution.outcome.termination {
        Termination::Completed => "completed".to_string(),
        Termination::Failed { level, error } => format!("failed at level {level}: {error}"),
    };
    Ok(Summary {
        name: scenario.name().to_string(),
        completed: matches!(solution.outcome.termination, Termination::Completed),
        status,
        maneuver_time: tmap.total(),
        cost_integral,
        initial_time: solution.initial_time,
        initial_margin: solution.initial.margin,
        peak_tangential_speed: peak,
        final_state: array(&x_n),
        initial_state: array(&scenario.initial_state),
        box_center: center.as_ref().map(array),
        closure_to_center: center.map(|c| (x_n - c).norm()),
        closure_to_initial: (x_n - scenario.initial_state).norm(),
        final_box_margin,
        min_margin: -solution.outcome.evaluation.max_violation,
        levels: solution
            .outcome
            .levels
            .iter()
            .map(|l| LevelReport { level: l.clone(), min_margin: -l.max_violation })
            .collect(),
        constraints: constraint_reports(problem, trajectory),
        limits: input_limits(problem),
        iterations: solution.records.len(),
        runtime_s: solution.runtime_s,
    })
}

/// JSON-lines log: one `iteration` line per Newton step, then one `level`
/// line per continuation level.
pub fn log_lines(solution: &Solution) -> Vec<serde_json::Value> {
    let tagged = |kind: &str, value: serde_json::Value| {
        let mut map = serde_json::Map::new();
        map.insert("kind".into(), json!(kind));
        if let serde_json::Value::Object(fields) = value {
            map.extend(fields);
        }
        serde_json::Value::Object(map)
    };
    let mut lines = vec![tagged(
        "init",
        json!({ "margin": solution.initial.margin, "elapsed_time": solution.initial_time }),
    )];
    lines.extend(solution.records.iter().map(|r| tagged("iteration", serde_json::to_value(r).unwrap_or_default())));
    lines.extend(solution.outcome.levels.iter().map(|l| tagged("level", serde_json::to_value(l).unwrap_or_default())));
    lines
}

/// Writes every artifact of a run into `dir`.
pub fn write_artifacts(
    scenario: &Scenario,
    solution: &Solution,
    summary: &Summary,
    dir: &Path,
) -> Result<(), PipelineError> {
    let err = |e: export::ExportError| PipelineError::new(Stage::Export, e);
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Export, format!("{}: {e}", dir.display())))?;
    let problem = &scenario.problem;
    let curve = solution.trajectory().curve();
    let tmap = build_time_map(curve, &problem.path).map_err(|e| PipelineError::new(Stage::Export, e))?;
    let samples = arc_samples(curve, &tmap, &problem.path);
    let timed = to_time_domain(&samples, DEFAULT_DT).map_err(|e| PipelineError::new(Stage::Export, e))?;
    export::write_csv(&dir.join(ARCLENGTH_FILE), &samples).map_err(err)?;
    let time_rows: Vec<TimeRow> = timed.iter().map(TimeRow::from).collect();
    export::write_csv(&dir.join(TIME_FILE), &time_rows).map_err(err)?;
    let map_rows: Vec<TimeMapRow> = tmap.s.iter().zip(&tmap.t).map(|(s, t)| TimeMapRow { s: *s, t: *t }).collect();
    export::write_csv(&dir.join(TIMEMAP_FILE), &map_rows).map_err(err)?;
    export::write_csv(&dir.join(GEOMETRY_FILE), &geometry_rows(problem)).map_err(err)?;
    export::write_csv(&dir.join(BOUNDS_FILE), &bounds_rows(problem)).map_err(err)?;
    export::write_jsonl(&dir.join(LOG_FILE), &log_lines(solution)).map_err(err)?;
    export::write_json(&dir.join(SUMMARY_FILE), summary).map_err(err)?;
    Ok(())
}

/// Solves a scenario and writes its artifacts. When the continuation stops on
/// an error the best iterate is still written and the error is returned.
pub fn run(scenario: &Scenario, dir: &Path) -> Result<Summary, PipelineError> {
    let solution = solve(scenario)?;
    let summary = summarize(scenario, &solution)?;
    write_artifacts(scenario, &solution, &summary, dir)?;
    if let Termination::Failed { level, error } = &solution.outcome.termination {
        return Err(PipelineError::new(
            Stage::Solve,
            format!("level {level}: {error}; best iterate written to {}", dir.display()),
        ));
    }
    Ok(summary)
}

/// Reads the arc-length trajectory of a run directory.
pub fn read_arclength(dir: &Path) -> Result<Vec<Sample>, export::ExportError> {
    export::read_csv(&dir.join(ARCLENGTH_FILE))
}

pub fn read_summary(dir: &Path) -> Result<Summary, export::ExportError> {
    export::read_json(&dir.join(SUMMARY_FILE))
}

/// Per-figure CSVs from a run directory.
pub fn plotdata(dir: &Path) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    let summary = read_summary(dir).map_err(|e| PipelineError::new(Stage::Plot, e))?;
    export::plotdata(dir, &summary.limits).map_err(|e| PipelineError::new(Stage::Plot, e))
}
