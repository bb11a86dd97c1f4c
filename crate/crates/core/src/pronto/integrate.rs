//! RK4 discretization over one grid interval and its exact Jacobians.

use nalgebra::{SMatrix, SVector};

use super::{Curve, Dynamics, ModelError, SolverError, Trajectory};

/// `x_{k+1}` from `x_k` with input `u` held over interval `k`.
pub fn rk4_step<const NX: usize, const NU: usize, D: Dynamics<NX, NU> + ?Sized>(
    dynamics: &D,
    k: usize,
    x: &SVector<f64, NX>,
    u: &SVector<f64, NU>,
) -> Result<SVector<f64, NX>, ModelError> {
    let h = dynamics.step_size();
    let k1 = dynamics.field(2 * k, x, u)?;
    let k2 = dynamics.field(2 * k + 1, &(x + k1 * (0.5 * h)), u)?;
    let k3 = dynamics.field(2 * k + 1, &(x + k2 * (0.5 * h)), u)?;
    let k4 = dynamics.field(2 * k + 2, &(x + k3 * h), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// RK4 step with its Jacobians `(A_k, B_k)` obtained by chaining the stage
/// Jacobians.
#[allow(clippy::type_complexity)]
pub fn discrete_jacobians<const NX: usize, const NU: usize, D: Dynamics<NX, NU> + ?Sized>(
    dynamics: &D,
    k: usize,
    x: &SVector<f64, NX>,
    u: &SVector<f64, NU>,
) -> Result<(SVector<f64, NX>, SMatrix<f64, NX, NX>, SMatrix<f64, NX, NU>), ModelError> {
    let h = dynamics.step_size();
    let eye = SMatrix::<f64, NX, NX>::identity();
    let (k1, a1, b1) = dynamics.jacobian(2 * k, x, u)?;
    let dx1 = a1;
    let du1 = b1;

    let (k2, a2, b2) = dynamics.jacobian(2 * k + 1, &(x + k1 * (0.5 * h)), u)?;
    let dx2 = a2 * (eye + dx1 * (0.5 * h));
    let du2 = a2 * du1 * (0.5 * h) + b2;

    let (k3, a3, b3) = dynamics.jacobian(2 * k + 1, &(x + k2 * (0.5 * h)), u)?;
    let dx3 = a3 * (eye + dx2 * (0.5 * h));
    let du3 = a3 * du2 * (0.5 * h) + b3;

    let (k4, a4, b4) = dynamics.jacobian(2 * k + 2, &(x + k3 * h), u)?;
    let dx4 = a4 * (eye + dx3 * h);
    let du4 = a4 * du3 * h + b4;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let a = eye + (dx1 + dx2 * 2.0 + dx3 * 2.0 + dx4) * (h / 6.0);
    let b = (du1 + du2 * 2.0 + du3 * 2.0 + du4) * (h / 6.0);
    Ok((next, a, b))
}

/// Open-loop simulation from `x0` under the given inputs.
pub fn simulate<const NX: usize, const NU: usize, D: Dynamics<NX, NU> + ?Sized>(
    dynamics: &D,
    x0: SVector<f64, NX>,
    inputs: &[SVector<f64, NU>],
) -> Result<Trajectory<NX, NU>, SolverError> {
    let mut x = Vec::with_capacity(inputs.len() + 1);
    x.push(x0);
    dynamics.check_state(0, &x0).map_err(|source| SolverError::Projection { node: 0, source })?;
    for (k, u) in inputs.iter().enumerate() {
        let next = rk4_step(dynamics, k, &x[k], u).map_err(|source| SolverError::Projection { node: k, source })?;
        dynamics.check_state(k + 1, &next).map_err(|source| SolverError::Projection { node: k + 1, source })?;
        x.push(next);
    }
    Ok(Trajectory::from_projected(Curve { x, u: inputs.to_vec() }))
}

/// Largest RK4 defect `|x_{k+1} - RK4(x_k, u_k)| / max(1, |x_{k+1}|)` of a
/// curve; zero for an exactly projected trajectory.
pub fn trajectory_defect<const NX: usize, const NU: usize, D: Dynamics<NX, NU> + ?Sized>(
    dynamics: &D,
    curve: &Curve<NX, NU>,
) -> Result<f64, SolverError> {
    use rayon::prelude::*;
    curve.check_grid(dynamics.n_steps())?;
    let defects = (0..curve.n_steps())
        .into_par_iter()
        .map(|k| {
            let next = rk4_step(dynamics, k, &curve.x[k], &curve.u[k]).map_err(|source| SolverError::Model { node: k, source })?;
            Ok((next - curve.x[k + 1]).norm() / curve.x[k + 1].norm().max(1.0))
        })
        .collect::<Result<Vec<f64>, SolverError>>()?;
    Ok(defects.into_iter().fold(0.0, f64::max))
}
