//! The minimum-time problem in transverse coordinates, bound to the generic
//! solver.
//!
//! Discrete objective on the grid `s_k = k ds`:
//! `sum_k ds (c_k rho_k + eps sum_j beta_nu(-c_j)) + ds/2 rho_N
//!  + ds eps sum_j beta_nu(-c_j(x_N)) + eps_f sum_i beta_nu_f(-c_f_i)`,
//! with trapezoidal weights `c_0 = 1/2`, `c_k = 1` otherwise. The time
//! density terms therefore sum to the trapezoidal elapsed time.

use thiserror::Error;

use crate::corridor::{stage_constraints, ConstraintSet, CorridorError, CorridorSpec, FinalBox, InputStateBounds};
use crate::cost::{self, BarrierParams, HessianMode};
use crate::dynamics::{self, InputVec, StateVec, VehicleParams, NU, NX};
use crate::framepath::FramePath;
use crate::pronto::{Curve, Dynamics, ModelError, Objective, StageQuadratic, TerminalQuadratic};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Corridor(#[from] CorridorError),
    #[error("grid mismatch: {0}")]
    Grid(String),
}

/// Names of the stage constraints in evaluation order.
pub fn constraint_names(corridor: &CorridorSpec) -> Vec<&'static str> {
    let mut names = vec!["p", "q", "r", "F", "phi", "theta", "psi"];
    match corridor {
        CorridorSpec::Circular { .. } => names.push("corridor"),
        CorridorSpec::Rectangular { .. } => names.extend(["w1", "w2"]),
    }
    names
}

#[derive(Debug, Clone)]
pub struct QuadrotorProblem {
    pub path: FramePath,
    pub vehicle: VehicleParams,
    pub bounds: InputStateBounds,
    pub corridor: CorridorSpec,
    pub final_box: Option<FinalBox>,
}

impl QuadrotorProblem {
    pub fn new(
        path: FramePath,
        vehicle: VehicleParams,
        bounds: InputStateBounds,
        corridor: CorridorSpec,
        final_box: Option<FinalBox>,
        min_clearance: f64,
    ) -> Result<Self, ProblemError> {
        bounds.validate(path.n_steps())?;
        corridor.validate(&path, min_clearance)?;
        if let Some(b) = &final_box {
            b.validate()?;
        }
        Ok(QuadrotorProblem { path, vehicle, bounds, corridor, final_box })
    }

    pub fn constraints(&self, node: usize) -> ConstraintSet {
        stage_constraints(&self.bounds, &self.corridor, node)
    }

    /// Stage constraint values at node `k`.
    pub fn stage_values(&self, k: usize, x: &StateVec, u: &InputVec) -> Vec<f64> {
        let z = crate::corridor::stack(x, u);
        self.constraints(k).as_slice().iter().map(|c| c.value(&z)).collect()
    }

    /// Trapezoidal integral of the time density, i.e. the elapsed time.
    pub fn elapsed_time(&self, curve: &Curve<NX, NU>) -> Result<f64, ModelError> {
        let n = self.path.n_steps();
        let ds = self.path.ds();
        let mut total = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * ds * cost::running_cost(&curve.x[k], self.path.node_frame(k))?;
        }
        Ok(total)
    }

    fn time_weight(&self, k: usize) -> f64 {
        if k == 0 {
            0.5 * self.path.ds()
        } else {
            self.path.ds()
        }
    }
}

impl Dynamics<NX, NU> for QuadrotorProblem {
    fn n_steps(&self) -> usize {
        self.path.n_steps()
    }

    fn step_size(&self) -> f64 {
        self.path.ds()
    }

    fn field(&self, station: usize, x: &StateVec, u: &InputVec) -> Result<StateVec, ModelError> {
        Ok(dynamics::transverse_field(x, u, self.path.station_frame(station), &self.vehicle)?)
    }

    fn jacobian(
        &self,
        station: usize,
        x: &StateVec,
        u: &InputVec,
    ) -> Result<(StateVec, dynamics::StateMat, dynamics::InputMat), ModelError> {
        Ok(dynamics::linearize_transverse(x, u, self.path.station_frame(station), &self.vehicle)?)
    }

    fn check_state(&self, node: usize, x: &StateVec) -> Result<(), ModelError> {
        dynamics::transverse_margins(x, self.path.node_frame(node))?;
        Ok(())
    }
}

impl Objective<NX, NU> for QuadrotorProblem {
    fn stage(&self, k: usize, x: &StateVec, u: &InputVec, params: &BarrierParams) -> Result<f64, ModelError> {
        let z = crate::corridor::stack(x, u);
        let rho = cost::running_cost(x, self.path.node_frame(k))?;
        let barrier = cost::barrier_sum(self.constraints(k).as_slice(), &z, params.eps, params.nu);
        Ok(self.time_weight(k) * rho + self.path.ds() * barrier)
    }

    fn stage_quadratic(
        &self,
        k: usize,
        x: &StateVec,
        u: &InputVec,
        params: &BarrierParams,
        mode: HessianMode,
    ) -> Result<StageQuadratic<NX, NU>, ModelError> {
        let q = cost::stage_derivatives(
            x,
            u,
            self.path.node_frame(k),
            self.constraints(k).as_slice(),
            params,
            mode,
            self.time_weight(k),
            self.path.ds(),
        )?;
        Ok(StageQuadratic {
            value: q.value,
            qx: q.grad.fixed_rows::<NX>(0).into_owned(),
            qu: q.grad.fixed_rows::<NU>(NX).into_owned(),
            qxx: q.hess.fixed_view::<NX, NX>(0, 0).into_owned(),
            qxu: q.hess.fixed_view::<NX, NU>(0, NX).into_owned(),
            quu: q.hess.fixed_view::<NU, NU>(NX, NX).into_owned(),
        })
    }

    fn terminal(&self, x: &StateVec, params: &BarrierParams) -> Result<f64, ModelError> {
        let n = self.path.n_steps();
        let ds = self.path.ds();
        let mut total = 0.5 * ds * cost::running_cost(x, self.path.node_frame(n))?;
        total += ds * cost::barrier_sum(self.constraints(n).state_only(), x.as_slice(), params.eps, params.nu);
        if let Some(b) = &self.final_box {
            total += cost::terminal_cost(x, &b.constraints(), params);
        }
        Ok(total)
    }

    fn terminal_quadratic(&self, x: &StateVec, params: &BarrierParams, mode: HessianMode) -> Result<TerminalQuadratic<NX>, ModelError> {
        let n = self.path.n_steps();
        let ds = self.path.ds();
        let (rho, g, h) = cost::running_cost_derivatives(x, self.path.node_frame(n), mode)?;
        let mut q = cost::barrier_quadratic::<NX>(self.constraints(n).state_only(), x.as_slice(), params.eps, params.nu).scaled(ds);
        q.value += 0.5 * ds * rho;
        q.grad += g * (0.5 * ds);
        q.hess += h * (0.5 * ds);
        if let Some(b) = &self.final_box {
            q.add(&cost::terminal_derivatives(x, &b.constraints(), params));
        }
        Ok(TerminalQuadratic { value: q.value, qx: q.grad, qxx: q.hess })
    }

    fn stage_violation(&self, k: usize, x: &StateVec, u: &InputVec) -> f64 {
        self.stage_values(k, x, u).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn terminal_violation(&self, x: &StateVec) -> f64 {
        let n = self.path.n_steps();
        self.constraints(n).state_only().iter().map(|c| c.value(x.as_slice())).fold(f64::NEG_INFINITY, f64::max)
    }

    fn final_violation(&self, x: &StateVec) -> f64 {
        match &self.final_box {
            Some(b) => b.constraints().iter().map(|c| c.value(x.as_slice())).fold(f64::NEG_INFINITY, f64::max),
            None => f64::NEG_INFINITY,
        }
    }

    fn report(&self, curve: &Curve<NX, NU>) -> Option<f64> {
        self.elapsed_time(curve).ok()
    }
}
