//! Newton search direction from the LQ model of the projected cost.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use super::integrate::discrete_jacobians;
use super::regulator::Gains;
use super::{Curve, Dynamics, Objective, SolverError, StageQuadratic, TerminalQuadratic, Trajectory};
use crate::cost::{BarrierParams, HessianMode};

/// Diagonal shift added to the Gauss-Newton model.
pub const GAUSS_NEWTON_SHIFT: f64 = 1e-6;

/// Input-Hessian shifts tried on the exact model: zero, then
/// `EXACT_SHIFT_START * 10^j` for `j < EXACT_SHIFTS`.
pub const EXACT_SHIFT_START: f64 = 1e-9;
pub const EXACT_SHIFTS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Direction<const NX: usize, const NU: usize> {
    /// Tangent trajectory `(z, v)` with `z_0 = 0`.
    pub curve: Curve<NX, NU>,
    /// Directional derivative `Dg(xi) . zeta`.
    pub slope: f64,
    pub gauss_newton: bool,
}

struct Node<const NX: usize, const NU: usize> {
    a: SMatrix<f64, NX, NX>,
    b: SMatrix<f64, NX, NU>,
    stage: StageQuadratic<NX, NU>,
}

/// Solves the LQ subproblem at a trajectory.
///
/// The exact second-order model is tried first, with increasing input-Hessian
/// shifts until its input Hessian is positive definite and the result is a
/// descent direction. The exact model carries the curvature of the
/// projection; without it the iterates creep into active constraints. If no
/// shift works, the Gauss-Newton model shifted by [`GAUSS_NEWTON_SHIFT`] is
/// used instead.
pub fn search_direction<const NX: usize, const NU: usize, D, O>(
    dynamics: &D,
    objective: &O,
    trajectory: &Trajectory<NX, NU>,
    gains: &Gains<NX, NU>,
    params: &BarrierParams,
    mode: HessianMode,
) -> Result<Direction<NX, NU>, SolverError>
where
    D: Dynamics<NX, NU>,
    O: Objective<NX, NU>,
{
    let n = dynamics.n_steps();
    trajectory.check_grid(n)?;
    let nodes = linearize(dynamics, objective, trajectory, params, mode)?;
    let terminal = objective
        .terminal_quadratic(&trajectory.x[n], params, mode)
        .map_err(|source| SolverError::Model { node: n, source })?;

    if mode == HessianMode::Exact {
        let lambda = costate(&nodes, &terminal, gains);
        let curvature = dynamics_curvature(dynamics, trajectory, &lambda)?;
        for shift in std::iter::once(0.0).chain((0..EXACT_SHIFTS).map(|j| EXACT_SHIFT_START * 10f64.powi(j as i32))) {
            let exact: Vec<StageQuadratic<NX, NU>> = nodes
                .iter()
                .zip(&curvature)
                .map(|(node, (hxx, hxu, huu))| StageQuadratic {
                    qxx: node.stage.qxx + hxx,
                    qxu: node.stage.qxu + hxu,
                    quu: node.stage.quu + huu + SMatrix::<f64, NU, NU>::identity() * shift,
                    ..node.stage
                })
                .collect();
            if let Some(dir) = solve_lq(&nodes, &exact, &terminal) {
                if dir.slope < 0.0 {
                    return Ok(dir);
                }
            }
        }
    }

    let gn_nodes = if mode == HessianMode::GaussNewton {
        nodes
    } else {
        linearize(dynamics, objective, trajectory, params, HessianMode::GaussNewton)?
    };
    let gn_terminal = objective
        .terminal_quadratic(&trajectory.x[n], params, HessianMode::GaussNewton)
        .map_err(|source| SolverError::Model { node: n, source })?;
    let shifted: Vec<StageQuadratic<NX, NU>> = gn_nodes
        .iter()
        .map(|node| StageQuadratic {
            qxx: node.stage.qxx + SMatrix::<f64, NX, NX>::identity() * GAUSS_NEWTON_SHIFT,
            quu: node.stage.quu + SMatrix::<f64, NU, NU>::identity() * GAUSS_NEWTON_SHIFT,
            ..node.stage
        })
        .collect();
    let terminal_shifted = TerminalQuadratic {
        qxx: gn_terminal.qxx + SMatrix::<f64, NX, NX>::identity() * GAUSS_NEWTON_SHIFT,
        ..gn_terminal
    };
    let mut dir = solve_lq(&gn_nodes, &shifted, &terminal_shifted).ok_or(SolverError::NotConvex { node: n })?;
    dir.gauss_newton = true;
    Ok(dir)
}

fn linearize<const NX: usize, const NU: usize, D, O>(
    dynamics: &D,
    objective: &O,
    trajectory: &Trajectory<NX, NU>,
    params: &BarrierParams,
    mode: HessianMode,
) -> Result<Vec<Node<NX, NU>>, SolverError>
where
    D: Dynamics<NX, NU>,
    O: Objective<NX, NU>,
{
    (0..dynamics.n_steps())
        .into_par_iter()
        .map(|k| {
            let (x, u) = (&trajectory.x[k], &trajectory.u[k]);
            let (_, a, b) = discrete_jacobians(dynamics, k, x, u).map_err(|source| SolverError::Model { node: k, source })?;
            let stage =
                objective.stage_quadratic(k, x, u, params, mode).map_err(|source| SolverError::Model { node: k, source })?;
            Ok(Node { a, b, stage })
        })
        .collect()
}

/// Closed-loop costate of the projected cost:
/// `lambda_N = q_N`, `lambda_k = (A_k - B_k K_k)' lambda_{k+1} + q_k - K_k' r_k`.
fn costate<const NX: usize, const NU: usize>(
    nodes: &[Node<NX, NU>],
    terminal: &TerminalQuadratic<NX>,
    gains: &Gains<NX, NU>,
) -> Vec<SVector<f64, NX>> {
    let n = nodes.len();
    let mut lambda = vec![SVector::<f64, NX>::zeros(); n + 1];
    lambda[n] = terminal.qx;
    for k in (0..n).rev() {
        let node = &nodes[k];
        let closed = node.a - node.b * gains.k[k];
        lambda[k] = closed.transpose() * lambda[k + 1] + node.stage.qx - gains.k[k].transpose() * node.stage.qu;
    }
    lambda
}

/// `ds * sum_i lambda_{k+1,i} Hess f_i(x_k, u_k)` at every stage.
#[allow(clippy::type_complexity)]
fn dynamics_curvature<const NX: usize, const NU: usize, D: Dynamics<NX, NU>>(
    dynamics: &D,
    trajectory: &Trajectory<NX, NU>,
    lambda: &[SVector<f64, NX>],
) -> Result<Vec<(SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>, SMatrix<f64, NU, NU>)>, SolverError> {
    let h = dynamics.step_size();
    (0..dynamics.n_steps())
        .into_par_iter()
        .map(|k| {
            let (hxx, hxu, huu) = dynamics
                .hessian_contract(2 * k, &trajectory.x[k], &trajectory.u[k], &lambda[k + 1])
                .map_err(|source| SolverError::Model { node: k, source })?;
            Ok((hxx * h, hxu * h, huu * h))
        })
        .collect()
}

/// Backward Riccati sweep with affine terms and forward rollout; `None` if
/// an input Hessian is not positive definite.
fn solve_lq<const NX: usize, const NU: usize>(
    nodes: &[Node<NX, NU>],
    stages: &[StageQuadratic<NX, NU>],
    terminal: &TerminalQuadratic<NX>,
) -> Option<Direction<NX, NU>> {
    let n = nodes.len();
    let mut feedback = vec![SMatrix::<f64, NU, NX>::zeros(); n];
    let mut feedforward = vec![SVector::<f64, NU>::zeros(); n];
    let mut s_mat = terminal.qxx;
    let mut s_vec = terminal.qx;
    for k in (0..n).rev() {
        let Node { a, b, .. } = &nodes[k];
        let st = &stages[k];
        let sa = s_mat * a;
        let sb = s_mat * b;
        let qxx = st.qxx + a.transpose() * sa;
        let qux = st.qxu.transpose() + b.transpose() * sa;
        let quu = st.quu + b.transpose() * sb;
        let gx = st.qx + a.transpose() * s_vec;
        let gu = st.qu + b.transpose() * s_vec;
        let chol = ((quu + quu.transpose()) * 0.5).cholesky()?;
        let kf = -chol.solve(&qux);
        let kff = -chol.solve(&gu);
        let next = qxx + qux.transpose() * kf;
        s_mat = (next + next.transpose()) * 0.5;
        s_vec = gx + qux.transpose() * kff;
        feedback[k] = kf;
        feedforward[k] = kff;
    }

    let mut z = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n);
    z.push(SVector::<f64, NX>::zeros());
    let mut slope = 0.0;
    for k in 0..n {
        let vk = feedback[k] * z[k] + feedforward[k];
        slope += stages[k].qx.dot(&z[k]) + stages[k].qu.dot(&vk);
        z.push(nodes[k].a * z[k] + nodes[k].b * vk);
        v.push(vk);
    }
    slope += terminal.qx.dot(&z[n]);
    if !slope.is_finite() {
        return None;
    }
    Some(Direction { curve: Curve { x: z, u: v }, slope, gauss_newton: false })
}
