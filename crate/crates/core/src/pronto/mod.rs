//! Projection-operator Newton method for discrete-time optimal control over
//! a fixed grid.
//!
//! The solver works on curves `(x_0..x_N, u_0..u_{N-1})`. A curve is mapped
//! to a trajectory of the RK4-discretized dynamics by the projection operator
//! `u_k = uc_k + K_k (xc_k - x_k)`, whose gains come from a continuous
//! Riccati sweep along the current iterate. Search directions solve a
//! discrete LQ subproblem built from the projected cost's second-order model.
//!
//! The solver is generic over the state and input dimensions so it can be
//! exercised on small synthetic problems with closed-form answers.

mod continuation;
mod descent;
mod integrate;
mod newton;
mod regulator;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{BarrierParams, HessianMode};
use crate::dynamics::DynamicsError;

pub use continuation::{continuation, ContinuationOutcome, LevelSummary, Termination};
pub use descent::{search_direction, Direction};
pub use integrate::{discrete_jacobians, rk4_step, simulate, trajectory_defect};
pub use newton::{newton_solve, IterationRecord, NewtonOutcome, NewtonSettings, NewtonStatus};
pub use regulator::{design_gains, project, Gains, RegulatorWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("model evaluation failed at node {node}: {source}")]
    Model { node: usize, source: ModelError },
    #[error("projection left the valid region at node {node}: {source}")]
    Projection { node: usize, source: ModelError },
    #[error("Riccati gain design diverged at node {node} (|P| = {norm:e})")]
    RiccatiBlowUp { node: usize, norm: f64 },
    #[error("LQ subproblem is not convex at node {node} even with the Gauss-Newton model")]
    NotConvex { node: usize },
    #[error("curve has {got} nodes but the grid has {expected}")]
    Shape { got: usize, expected: usize },
    #[error("invalid solver settings: {0}")]
    Settings(String),
}

/// Discretized dynamics on a grid of `n_steps` intervals of width
/// `step_size`.
///
/// Fields are queried by half-step station `j`: interval `k` uses stations
/// `2k` (left node), `2k + 1` (midpoint) and `2k + 2` (right node).
pub trait Dynamics<const NX: usize, const NU: usize>: Sync {
    fn n_steps(&self) -> usize;

    fn step_size(&self) -> f64;

    fn field(&self, station: usize, x: &SVector<f64, NX>, u: &SVector<f64, NU>) -> Result<SVector<f64, NX>, ModelError>;

    /// Field with its state and input Jacobians.
    fn jacobian(
        &self,
        station: usize,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
    ) -> Result<(SVector<f64, NX>, SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>), ModelError>;

    /// Hessian of `lambda . f` as `(H_xx, H_xu, H_uu)`.
    ///
    /// Defaults to central differences of the Jacobian.
    fn hessian_contract(
        &self,
        station: usize,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
        lambda: &SVector<f64, NX>,
    ) -> Result<(SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>, SMatrix<f64, NU, NU>), ModelError> {
        let mut hxx = SMatrix::<f64, NX, NX>::zeros();
        let mut hux = SMatrix::<f64, NU, NX>::zeros();
        let mut huu = SMatrix::<f64, NU, NU>::zeros();
        let contract = |x: &SVector<f64, NX>, u: &SVector<f64, NU>| -> Result<_, ModelError> {
            let (_, a, b) = self.jacobian(station, x, u)?;
            Ok((a.transpose() * lambda, b.transpose() * lambda))
        };
        for i in 0..NX {
            let h = 1e-5 * x[i].abs().max(1.0);
            let (mut xp, mut xm) = (*x, *x);
            xp[i] += h;
            xm[i] -= h;
            let (gxp, gup) = contract(&xp, u)?;
            let (gxm, gum) = contract(&xm, u)?;
            hxx.set_column(i, &((gxp - gxm) / (2.0 * h)));
            hux.set_column(i, &((gup - gum) / (2.0 * h)));
        }
        for i in 0..NU {
            let h = 1e-5 * u[i].abs().max(1.0);
            let (mut up, mut um) = (*u, *u);
            up[i] += h;
            um[i] -= h;
            let (_, gup) = contract(x, &up)?;
            let (_, gum) = contract(x, &um)?;
            huu.set_column(i, &((gup - gum) / (2.0 * h)));
        }
        let hxx = (hxx + hxx.transpose()) * 0.5;
        let huu = (huu + huu.transpose()) * 0.5;
        Ok((hxx, hux.transpose(), huu))
    }

    /// Validity of a state at grid node `node`, checked during projection.
    fn check_state(&self, _node: usize, _x: &SVector<f64, NX>) -> Result<(), ModelError> {
        Ok(())
    }
}

/// Second-order model of one stage cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageQuadratic<const NX: usize, const NU: usize> {
    pub value: f64,
    pub qx: SVector<f64, NX>,
    pub qu: SVector<f64, NU>,
    pub qxx: SMatrix<f64, NX, NX>,
    pub qxu: SMatrix<f64, NX, NU>,
    pub quu: SMatrix<f64, NU, NU>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalQuadratic<const NX: usize> {
    pub value: f64,
    pub qx: SVector<f64, NX>,
    pub qxx: SMatrix<f64, NX, NX>,
}

/// Discrete objective `sum_k l_k(x_k, u_k) + m(x_N)` with barrier
/// parameters, plus the constraint values used to screen trial points.
pub trait Objective<const NX: usize, const NU: usize>: Sync {
    fn stage(&self, k: usize, x: &SVector<f64, NX>, u: &SVector<f64, NU>, params: &BarrierParams) -> Result<f64, ModelError>;

    fn stage_quadratic(
        &self,
        k: usize,
        x: &SVector<f64, NX>,
        u: &SVector<f64, NU>,
        params: &BarrierParams,
        mode: HessianMode,
    ) -> Result<StageQuadratic<NX, NU>, ModelError>;

    fn terminal(&self, x: &SVector<f64, NX>, params: &BarrierParams) -> Result<f64, ModelError>;

    fn terminal_quadratic(
        &self,
        x: &SVector<f64, NX>,
        params: &BarrierParams,
        mode: HessianMode,
    ) -> Result<TerminalQuadratic<NX>, ModelError>;

    /// Largest constraint value at stage `k`; negative means strictly
    /// feasible.
    fn stage_violation(&self, _k: usize, _x: &SVector<f64, NX>, _u: &SVector<f64, NU>) -> f64 {
        f64::NEG_INFINITY
    }

    /// Largest value of the path constraints still active at the final
    /// node, weighted with `(eps, nu)`.
    fn terminal_violation(&self, _x: &SVector<f64, NX>) -> f64 {
        f64::NEG_INFINITY
    }

    /// Largest value of the final-set constraints, weighted with
    /// `(eps_f, nu_f)`.
    fn final_violation(&self, _x: &SVector<f64, NX>) -> f64 {
        f64::NEG_INFINITY
    }

    /// Physical quantity reported alongside the cost, e.g. elapsed time.
    fn report(&self, _curve: &Curve<NX, NU>) -> Option<f64> {
        None
    }
}

/// State-input curve on the grid: `x` has `N + 1` entries, `u` has `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<const NX: usize, const NU: usize> {
    pub x: Vec<SVector<f64, NX>>,
    pub u: Vec<SVector<f64, NU>>,
}

impl<const NX: usize, const NU: usize> Curve<NX, NU> {
    pub fn new(x: Vec<SVector<f64, NX>>, u: Vec<SVector<f64, NU>>) -> Result<Self, SolverError> {
        if x.len() != u.len() + 1 {
            return Err(SolverError::Shape { got: x.len(), expected: u.len() + 1 });
        }
        Ok(Curve { x, u })
    }

    pub fn n_steps(&self) -> usize {
        self.u.len()
    }

    pub fn check_grid(&self, n_steps: usize) -> Result<(), SolverError> {
        if self.u.len() != n_steps || self.x.len() != n_steps + 1 {
            return Err(SolverError::Shape { got: self.x.len(), expected: n_steps + 1 });
        }
        Ok(())
    }

    /// `self + gamma * direction`.
    pub fn step(&self, direction: &Curve<NX, NU>, gamma: f64) -> Self {
        Curve {
            x: self.x.iter().zip(&direction.x).map(|(a, b)| a + b * gamma).collect(),
            u: self.u.iter().zip(&direction.u).map(|(a, b)| a + b * gamma).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let dx = self.x.iter().zip(&other.x).map(|(a, b)| (a - b).abs().max()).fold(0.0, f64::max);
        let du = self.u.iter().zip(&other.u).map(|(a, b)| (a - b).abs().max()).fold(0.0, f64::max);
        dx.max(du)
    }
}

/// A curve that satisfies the discretized dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const NX: usize, const NU: usize>(Curve<NX, NU>);

impl<const NX: usize, const NU: usize> Trajectory<NX, NU> {
    pub fn curve(&self) -> &Curve<NX, NU> {
        &self.0
    }

    pub fn into_curve(self) -> Curve<NX, NU> {
        self.0
    }

    pub(crate) fn from_projected(curve: Curve<NX, NU>) -> Self {
        Trajectory(curve)
    }
}

impl<const NX: usize, const NU: usize> std::ops::Deref for Trajectory<NX, NU> {
    type Target = Curve<NX, NU>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Cost and feasibility of a trajectory under given barrier parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cost: f64,
    /// Largest constraint value over all stages and the terminal set.
    pub max_violation: f64,
    /// Largest path constraint value, stages and final node.
    pub path_violation: f64,
    /// Largest final-set constraint value.
    pub final_violation: f64,
}

impl Evaluation {
    pub fn strictly_feasible(&self) -> bool {
        self.max_violation < 0.0
    }
}

/// Total cost and worst constraint values. Stages are evaluated in parallel
/// and summed in grid order.
pub fn evaluate<const NX: usize, const NU: usize, O: Objective<NX, NU>>(
    objective: &O,
    curve: &Curve<NX, NU>,
    params: &BarrierParams,
) -> Result<Evaluation, SolverError> {
    use rayon::prelude::*;
    let n = curve.n_steps();
    let stages = (0..n)
        .into_par_iter()
        .map(|k| {
            let c = objective
                .stage(k, &curve.x[k], &curve.u[k], params)
                .map_err(|source| SolverError::Model { node: k, source })?;
            Ok((c, objective.stage_violation(k, &curve.x[k], &curve.u[k])))
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    let terminal = objective
        .terminal(&curve.x[n], params)
        .map_err(|source| SolverError::Model { node: n, source })?;
    let cost = stages.iter().map(|s| s.0).sum::<f64>() + terminal;
    let path_violation =
        stages.iter().map(|s| s.1).fold(objective.terminal_violation(&curve.x[n]), f64::max);
    let final_violation = objective.final_violation(&curve.x[n]);
    Ok(Evaluation { cost, max_violation: path_violation.max(final_violation), path_violation, final_violation })
}
