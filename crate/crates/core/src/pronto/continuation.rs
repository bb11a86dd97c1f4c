//! Barrier continuation: Newton solves at geometrically decreasing barrier
//! parameters, each warm-started from the previous level.

use serde::{Deserialize, Serialize};

use super::newton::{newton_solve, IterationRecord, NewtonSettings, NewtonStatus};
use super::{Dynamics, Evaluation, Objective, SolverError, Trajectory};
use crate::cost::{BarrierParams, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub params: BarrierParams,
    pub iterations: usize,
    pub status: String,
    pub cost: f64,
    pub max_violation: f64,
    pub report: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// All scheduled levels ran.
    Completed,
    /// A level hit a hard error; the outcome holds the best earlier iterate.
    Failed { level: usize, error: SolverError },
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome<const NX: usize, const NU: usize> {
    pub trajectory: Trajectory<NX, NU>,
    pub evaluation: Evaluation,
    pub params: BarrierParams,
    pub levels: Vec<LevelSummary>,
    pub termination: Termination,
}

/// Runs the continuation until the parameters reach their floors or the
/// schedule's level cap.
///
/// Iteration caps and line-search stalls move on to the next level. A hard
/// error stops the continuation and returns the latest strictly feasible
/// iterate, or the latest iterate if none was feasible.
pub fn continuation<const NX: usize, const NU: usize, D, O>(
    dynamics: &D,
    objective: &O,
    start: Trajectory<NX, NU>,
    initial: BarrierParams,
    schedule: &Schedule,
    settings: &NewtonSettings<NX, NU>,
    log: &mut dyn FnMut(&IterationRecord),
) -> Result<ContinuationOutcome<NX, NU>, SolverError>
where
    D: Dynamics<NX, NU>,
    O: Objective<NX, NU>,
{
    schedule.validate().map_err(|e| SolverError::Settings(e.to_string()))?;
    initial.validate().map_err(|e| SolverError::Settings(e.to_string()))?;
    settings.validate()?;

    let mut params = initial;
    let mut current = start;
    let mut best: Option<(Trajectory<NX, NU>, Evaluation, BarrierParams)> = None;
    let mut levels = Vec::new();
    let mut termination = Termination::Completed;

    for level in 0..schedule.max_outer {
        let out = newton_solve(dynamics, objective, current.clone(), &params, settings, level, log)?;
        let status = match &out.status {
            NewtonStatus::Converged => "converged".to_string(),
            NewtonStatus::IterationCap => "iteration_cap".to_string(),
            NewtonStatus::LineSearchStall => "line_search_stall".to_string(),
            NewtonStatus::Failed(e) => format!("failed: {e}"),
        };
        levels.push(LevelSummary {
            level,
            params,
            iterations: out.iterations,
            status,
            cost: out.evaluation.cost,
            max_violation: out.evaluation.max_violation,
            report: objective.report(&out.trajectory),
        });
        if let NewtonStatus::Failed(error) = out.status {
            termination = Termination::Failed { level, error };
            if best.is_none() {
                best = Some((out.trajectory, out.evaluation, params));
            }
            break;
        }
        current = out.trajectory;
        let keep = match &best {
            Some((_, e, _)) => out.evaluation.strictly_feasible() || !e.strictly_feasible(),
            None => true,
        };
        if keep {
            best = Some((current.clone(), out.evaluation, params));
        }
        if params.at_floor(schedule) {
            break;
        }
        params = params.decreased(schedule);
    }

    let (trajectory, evaluation, params) = best.expect("at least one level runs");
    Ok(ContinuationOutcome { trajectory, evaluation, params, levels, termination })
}
