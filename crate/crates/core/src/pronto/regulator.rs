//! Feedback gains along a trajectory and the projection operator they
//! define.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use super::integrate::rk4_step;
use super::{Curve, Dynamics, SolverError, Trajectory};

/// Norm beyond which the Riccati solution is treated as divergent.
const RICCATI_CAP: f64 = 1e12;

/// Largest `h |dRHS/dP|` per RK4 substep.
const RK4_STABLE_STEP: f64 = 0.5;

const MAX_SUBSTEPS: usize = 4096;

/// Weights of the regulator used to build the projection gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorWeights<const NX: usize, const NU: usize> {
    pub q: SMatrix<f64, NX, NX>,
    pub r: SMatrix<f64, NU, NU>,
    pub p_final: SMatrix<f64, NX, NX>,
}

impl<const NX: usize, const NU: usize> Default for RegulatorWeights<NX, NU> {
    fn default() -> Self {
        RegulatorWeights { q: SMatrix::identity(), r: SMatrix::identity(), p_final: SMatrix::identity() }
    }
}

impl<const NX: usize, const NU: usize> RegulatorWeights<NX, NU> {
    pub fn diagonal(q: [f64; NX], r: [f64; NU], p_final: [f64; NX]) -> Self {
        RegulatorWeights {
            q: SMatrix::from_diagonal(&SVector::from(q)),
            r: SMatrix::from_diagonal(&SVector::from(r)),
            p_final: SMatrix::from_diagonal(&SVector::from(p_final)),
        }
    }
}

/// Time-varying feedback `K_k` with the Riccati solution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains<const NX: usize, const NU: usize> {
    pub k: Vec<SMatrix<f64, NU, NX>>,
    pub p: Vec<SMatrix<f64, NX, NX>>,
    /// Largest per-substep Simpson consistency defect of the Riccati
    /// solution, per unit arc length and relative to `max(1, |P|)`.
    pub residual: f64,
}

#[derive(Clone, Copy)]
struct Linearization<const NX: usize, const NU: usize> {
    a: SMatrix<f64, NX, NX>,
    b: SMatrix<f64, NX, NU>,
}

/// Quadratic interpolation of the linearization through the left node,
/// midpoint and right node of an interval, `tau` in `[0, 1]`.
fn interpolate<const NX: usize, const NU: usize>(
    left: &Linearization<NX, NU>,
    mid: &Linearization<NX, NU>,
    right: &Linearization<NX, NU>,
    tau: f64,
) -> Linearization<NX, NU> {
    let c0 = 2.0 * (tau - 0.5) * (tau - 1.0);
    let cm = -4.0 * tau * (tau - 1.0);
    let c1 = 2.0 * tau * (tau - 0.5);
    Linearization { a: left.a * c0 + mid.a * cm + right.a * c1, b: left.b * c0 + mid.b * cm + right.b * c1 }
}

/// Solves `-P' = A'P + PA - P B R^-1 B' P + Q` backward from
/// `P(L) = p_final` with RK4 and returns `K = R^-1 B' P` at every node.
pub fn design_gains<const NX: usize, const NU: usize, D: Dynamics<NX, NU>>(
    dynamics: &D,
    curve: &Curve<NX, NU>,
    weights: &RegulatorWeights<NX, NU>,
) -> Result<Gains<NX, NU>, SolverError> {
    let n = dynamics.n_steps();
    curve.check_grid(n)?;
    let h = dynamics.step_size();
    let r_inv = weights
        .r
        .cholesky()
        .ok_or_else(|| SolverError::Settings("regulator input weight must be positive definite".into()))?
        .inverse();

    let lin: Vec<[Linearization<NX, NU>; 3]> = (0..n)
        .into_par_iter()
        .map(|k| {
            let at = |station: usize, x: &SVector<f64, NX>| {
                dynamics
                    .jacobian(station, x, &curve.u[k])
                    .map(|(_, a, b)| Linearization { a, b })
                    .map_err(|source| SolverError::Model { node: k, source })
            };
            let mid = (curve.x[k] + curve.x[k + 1]) * 0.5;
            Ok([at(2 * k, &curve.x[k])?, at(2 * k + 1, &mid)?, at(2 * k + 2, &curve.x[k + 1])?])
        })
        .collect::<Result<_, SolverError>>()?;

    let rhs = |p: &SMatrix<f64, NX, NX>, l: &Linearization<NX, NU>| -> SMatrix<f64, NX, NX> {
        let pb = p * l.b;
        l.a.transpose() * p + p * l.a - pb * r_inv * pb.transpose() + weights.q
    };

    let mut p_nodes = vec![SMatrix::<f64, NX, NX>::zeros(); n + 1];
    p_nodes[n] = weights.p_final;
    let mut residual: f64 = 0.0;
    for k in (0..n).rev() {
        let [left, mid, right] = &lin[k];
        let p1 = p_nodes[k + 1];
        // Substeps keep h |dRHS/dP| inside the RK4 stability region; the
        // quadratic term is stiff while P relaxes from a large P(L).
        let stiffness = 2.0 * (right.a.norm() + (p1 * right.b).norm() * (r_inv * right.b.transpose()).norm());
        let m = ((h * stiffness / RK4_STABLE_STEP).ceil() as usize).clamp(1, MAX_SUBSTEPS);
        let sub = h / m as f64;
        let mut p = p1;
        for j in (0..m).rev() {
            // Local coordinate in [0, 1] across the interval, right to left.
            let tau1 = (j + 1) as f64 / m as f64;
            let tau_mid = (j as f64 + 0.5) / m as f64;
            let tau0 = j as f64 / m as f64;
            let (l1, lm, l0) = (interpolate(left, mid, right, tau1), interpolate(left, mid, right, tau_mid), interpolate(left, mid, right, tau0));
            let f1 = rhs(&p, &l1);
            let f2 = rhs(&(p + f1 * (0.5 * sub)), &lm);
            let f3 = rhs(&(p + f2 * (0.5 * sub)), &lm);
            let f4 = rhs(&(p + f3 * sub), &l0);
            let next = p + (f1 + f2 * 2.0 + f3 * 2.0 + f4) * (sub / 6.0);
            let next = (next + next.transpose()) * 0.5;
            // Hermite midpoint from the end slopes, then Simpson over the
            // substep.
            let g0 = rhs(&next, &l0);
            let p_mid = (next + p) * 0.5 + (f1 - g0) * (sub / 8.0);
            let simpson = (g0 + rhs(&p_mid, &lm) * 4.0 + f1) * (sub / 6.0);
            let scale = next.norm().max(1.0);
            residual = residual.max((next - p - simpson).norm() / (sub * scale));
            p = next;
        }
        let p0 = p;
        let norm = p0.norm();
        if !norm.is_finite() || norm > RICCATI_CAP {
            return Err(SolverError::RiccatiBlowUp { node: k, norm });
        }
        p_nodes[k] = p0;
    }

    let k_gains = (0..n).map(|k| r_inv * lin[k][0].b.transpose() * p_nodes[k]).collect();
    Ok(Gains { k: k_gains, p: p_nodes, residual })
}

/// Maps a curve to a trajectory: `u_k = uc_k + K_k (xc_k - x_k)`,
/// `x_{k+1} = RK4(x_k, u_k)`, starting from the curve's initial state.
pub fn project<const NX: usize, const NU: usize, D: Dynamics<NX, NU>>(
    dynamics: &D,
    curve: &Curve<NX, NU>,
    gains: &Gains<NX, NU>,
) -> Result<Trajectory<NX, NU>, SolverError> {
    let n = dynamics.n_steps();
    curve.check_grid(n)?;
    let mut x = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    x.push(curve.x[0]);
    dynamics.check_state(0, &curve.x[0]).map_err(|source| SolverError::Projection { node: 0, source })?;
    for k in 0..n {
        let uk = curve.u[k] + gains.k[k] * (curve.x[k] - x[k]);
        let next = rk4_step(dynamics, k, &x[k], &uk).map_err(|source| SolverError::Projection { node: k, source })?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SolverError::Projection {
                node: k + 1,
                source: super::ModelError::Other("non-finite state".into()),
            });
        }
        dynamics.check_state(k + 1, &next).map_err(|source| SolverError::Projection { node: k + 1, source })?;
        u.push(uk);
        x.push(next);
    }
    Ok(Trajectory::from_projected(Curve { x, u }))
}
