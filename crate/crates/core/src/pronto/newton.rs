//! Newton iterations with Armijo backtracking on the projected cost, for
//! fixed barrier parameters.

use serde::{Deserialize, Serialize};

use super::descent::search_direction;
use super::integrate::trajectory_defect;
use super::regulator::{design_gains, project, RegulatorWeights};
use super::{evaluate, Dynamics, Evaluation, Objective, SolverError, Trajectory};
use crate::cost::{BarrierParams, HessianMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings<const NX: usize, const NU: usize> {
    /// Stop when `|Dg . zeta| < tol (1 + |g|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease fraction.
    pub armijo: f64,
    pub backtrack: f64,
    pub gamma_min: f64,
    pub mode: HessianMode,
    pub weights: RegulatorWeights<NX, NU>,
    /// When set, each iteration caps `nu` (and `nu_f` once the final set is
    /// reached) at this fraction of the current iterate's margin, so that
    /// every constraint stays on the logarithmic branch of the barrier.
    pub margin_fraction: Option<f64>,
}

impl<const NX: usize, const NU: usize> Default for NewtonSettings<NX, NU> {
    fn default() -> Self {
        NewtonSettings {
            tol: 1e-6,
            max_iter: 50,
            armijo: 0.4,
            backtrack: 0.5,
            gamma_min: 1e-6,
            mode: HessianMode::Exact,
            weights: RegulatorWeights::default(),
            margin_fraction: Some(0.5),
        }
    }
}

impl<const NX: usize, const NU: usize> NewtonSettings<NX, NU> {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Settings(m.to_string()));
        if !(self.tol > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_iter == 0 {
            return bad("need at least one Newton iteration");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return bad("Armijo fraction must lie in (0, 0.5)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < 1.0) {
            return bad("minimum step must lie in (0, 1)");
        }
        if let Some(f) = self.margin_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad("margin fraction must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Barrier parameters for an iteration starting at `eval`.
    pub fn effective_params(&self, params: &BarrierParams, eval: &Evaluation) -> BarrierParams {
        let Some(f) = self.margin_fraction else { return *params };
        let cap = |nu: f64, violation: f64| if violation < 0.0 { nu.min(-f * violation) } else { nu };
        BarrierParams { nu: cap(params.nu, eval.path_violation), nu_f: cap(params.nu_f, eval.final_violation), ..*params }
    }
}

/// One accepted (or final) Newton iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    /// Parameters in effect for this iteration, after the margin cap.
    pub params: BarrierParams,
    /// Cost of the iterate the step started from, under `params`.
    pub start_cost: f64,
    /// Cost after the step, under `params`.
    pub cost: f64,
    /// Objective-specific report, e.g. elapsed time.
    pub report: Option<f64>,
    pub slope: f64,
    /// Accepted step length; zero when no step was taken.
    pub gamma: f64,
    pub max_violation: f64,
    pub riccati_residual: f64,
    /// Largest relative RK4 defect between adjacent nodes after the step.
    pub defect: f64,
    pub gauss_newton: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NewtonStatus {
    Converged,
    IterationCap,
    LineSearchStall,
    Failed(SolverError),
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<const NX: usize, const NU: usize> {
    pub trajectory: Trajectory<NX, NU>,
    /// Evaluation under the nominal (uncapped) parameters.
    pub evaluation: Evaluation,
    pub status: NewtonStatus,
    pub iterations: usize,
}

/// Runs Newton iterations from a trajectory until the directional derivative
/// is small, the iteration cap is hit, or the line search stalls.
///
/// Once the iterate is strictly feasible, trial points that are not strictly
/// feasible are rejected. Errors after the first evaluation are reported as
/// [`NewtonStatus::Failed`] together with the last accepted iterate.
pub fn newton_solve<const NX: usize, const NU: usize, D, O>(
    dynamics: &D,
    objective: &O,
    start: Trajectory<NX, NU>,
    params: &BarrierParams,
    settings: &NewtonSettings<NX, NU>,
    level: usize,
    log: &mut dyn FnMut(&IterationRecord),
) -> Result<NewtonOutcome<NX, NU>, SolverError>
where
    D: Dynamics<NX, NU>,
    O: Objective<NX, NU>,
{
    settings.validate()?;
    let mut trajectory = start;
    let mut nominal = evaluate(objective, &trajectory, params)?;
    let finish = |trajectory: Trajectory<NX, NU>, nominal: Evaluation, status, iterations| {
        Ok(NewtonOutcome { trajectory, evaluation: nominal, status, iterations })
    };

    for iteration in 0..settings.max_iter {
        let working = settings.effective_params(params, &nominal);
        let eval = if working == *params { nominal } else { evaluate(objective, &trajectory, &working)? };
        let step = (|| {
            let gains = design_gains(dynamics, &trajectory, &settings.weights)?;
            let dir = search_direction(dynamics, objective, &trajectory, &gains, &working, settings.mode)?;
            Ok::<_, SolverError>((gains, dir))
        })();
        let (gains, dir) = match step {
            Ok(v) => v,
            Err(e) => return finish(trajectory, nominal, NewtonStatus::Failed(e), iteration),
        };
        let mut record = |traj: &Trajectory<NX, NU>, after: &Evaluation, gamma: f64| {
            log(&IterationRecord {
                level,
                iteration,
                params: working,
                start_cost: eval.cost,
                cost: after.cost,
                report: objective.report(traj),
                slope: dir.slope,
                gamma,
                max_violation: after.max_violation,
                riccati_residual: gains.residual,
                defect: trajectory_defect(dynamics, traj).unwrap_or(f64::INFINITY),
                gauss_newton: dir.gauss_newton,
            })
        };
        if dir.slope.abs() < settings.tol * (1.0 + eval.cost.abs()) {
            record(&trajectory, &eval, 0.0);
            return finish(trajectory, nominal, NewtonStatus::Converged, iteration);
        }

        let must_stay_feasible = eval.strictly_feasible();
        let mut gamma = 1.0;
        let accepted = loop {
            let trial = project(dynamics, &trajectory.step(&dir.curve, gamma), &gains)
                .and_then(|t| evaluate(objective, &t, &working).map(|e| (t, e)));
            if let Ok((t, e)) = trial {
                let decrease = e.cost <= eval.cost + settings.armijo * gamma * dir.slope;
                let feasible = !must_stay_feasible || e.strictly_feasible();
                if decrease && feasible && e.cost.is_finite() {
                    break Some((t, e));
                }
            }
            gamma *= settings.backtrack;
            if gamma < settings.gamma_min {
                break None;
            }
        };
        match accepted {
            Some((t, e)) => {
                record(&t, &e, gamma);
                trajectory = t;
                nominal = if working == *params { e } else { evaluate(objective, &trajectory, params)? };
            }
            None => {
                record(&trajectory, &eval, 0.0);
                return finish(trajectory, nominal, NewtonStatus::LineSearchStall, iteration + 1);
            }
        }
    }
    finish(trajectory, nominal, NewtonStatus::IterationCap, settings.max_iter)
}
