//! Arc-length time density, the relaxed log barrier, and the
//! barrier-augmented stage and terminal costs with their derivatives.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::{stack, QuadConstraint};
use crate::dynamics::{self, DynamicsError, InputVec, StateVec, NX, NZ};
use crate::framepath::FrenetFrame;

pub type ZVec = SVector<f64, NZ>;
pub type ZMat = SMatrix<f64, NZ, NZ>;
pub type XVec = SVector<f64, NX>;
pub type XMat = SMatrix<f64, NX, NX>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("barrier parameters must be positive: {0:?}")]
    InvalidParams(BarrierParams),
    #[error("invalid continuation schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Relaxed log barrier `beta_l(x)`: `-log x` above `l`, a quadratic
/// extension below that matches value, slope and curvature at `x = l`.
pub fn beta(x: f64, l: f64) -> f64 {
    if x > l {
        -x.ln()
    } else {
        -l.ln() + 0.5 * (((x - 2.0 * l) / l).powi(2) - 1.0)
    }
}

/// `(beta, beta', beta'')` at `x`.
pub fn beta_derivatives(x: f64, l: f64) -> (f64, f64, f64) {
    if x > l {
        (-x.ln(), -1.0 / x, 1.0 / (x * x))
    } else {
        let y = (x - 2.0 * l) / l;
        (-l.ln() + 0.5 * (y * y - 1.0), y / l, 1.0 / (l * l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierParams {
    pub eps: f64,
    pub nu: f64,
    pub eps_f: f64,
    pub nu_f: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        BarrierParams { eps: 1.0, nu: 1.0, eps_f: 1.0, nu_f: 1.0 }
    }
}

impl BarrierParams {
    pub fn validate(&self) -> Result<(), CostError> {
        if [self.eps, self.nu, self.eps_f, self.nu_f].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(CostError::InvalidParams(*self))
        }
    }

    /// Parameters for the next continuation level.
    pub fn decreased(&self, schedule: &Schedule) -> Self {
        BarrierParams {
            eps: (self.eps * schedule.factor).max(schedule.eps_floor),
            nu: (self.nu * schedule.factor).max(schedule.nu_floor),
            eps_f: (self.eps_f * schedule.factor).max(schedule.eps_floor),
            nu_f: (self.nu_f * schedule.factor).max(schedule.nu_floor),
        }
    }

    pub fn at_floor(&self, schedule: &Schedule) -> bool {
        self.eps <= schedule.eps_floor
            && self.nu <= schedule.nu_floor
            && self.eps_f <= schedule.eps_floor
            && self.nu_f <= schedule.nu_floor
    }
}

/// Continuation schedule for the barrier parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub factor: f64,
    pub eps_floor: f64,
    pub nu_floor: f64,
    pub max_outer: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { factor: 0.2, eps_floor: 1e-4, nu_floor: 1e-4, max_outer: 8 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(CostError::InvalidSchedule(format!("factor {} must lie in (0, 1)", self.factor)));
        }
        if !(self.eps_floor > 0.0 && self.nu_floor > 0.0) {
            return Err(CostError::InvalidSchedule("floors must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(CostError::InvalidSchedule("need at least one outer iteration".into()));
        }
        Ok(())
    }
}

/// Selects the stage Hessian model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    Exact,
    /// Drops the indefinite `w1`-`v` coupling of the time density, leaving a
    /// positive semidefinite model.
    GaussNewton,
}

/// Time per unit arc length, `(1 - k w1) / (t . v)`.
pub fn running_cost(x: &StateVec, frame: &FrenetFrame) -> Result<f64, DynamicsError> {
    dynamics::dilation(x, frame)
}

/// Time density with gradient and Hessian over the state.
pub fn running_cost_derivatives(
    x: &StateVec,
    frame: &FrenetFrame,
    mode: HessianMode,
) -> Result<(f64, XVec, XMat), DynamicsError> {
    let (sigma, lever) = dynamics::transverse_margins(x, frame)?;
    let rho = lever / sigma;
    let mut g = XVec::zeros();
    g[0] = -frame.k / sigma;
    g.fixed_rows_mut::<3>(2).copy_from(&(frame.t * (-rho / sigma)));
    let mut h = XMat::zeros();
    h.fixed_view_mut::<3, 3>(2, 2).copy_from(&(frame.t * frame.t.transpose() * (2.0 * rho / (sigma * sigma))));
    if mode == HessianMode::Exact {
        let cross = frame.t * (frame.k / (sigma * sigma));
        h.fixed_view_mut::<1, 3>(0, 2).copy_from(&cross.transpose());
        h.fixed_view_mut::<3, 1>(2, 0).copy_from(&cross);
    }
    Ok((rho, g, h))
}

/// Value, gradient and Hessian of a cost over `z` (or over the state only
/// for terminal costs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic<const N: usize> {
    pub value: f64,
    pub grad: SVector<f64, N>,
    pub hess: SMatrix<f64, N, N>,
}

impl<const N: usize> Quadratic<N> {
    pub fn zero() -> Self {
        Quadratic { value: 0.0, grad: SVector::zeros(), hess: SMatrix::zeros() }
    }

    pub fn scaled(&self, w: f64) -> Self {
        Quadratic { value: self.value * w, grad: self.grad * w, hess: self.hess * w }
    }

    pub fn add(&mut self, other: &Self) {
        self.value += other.value;
        self.grad += other.grad;
        self.hess += other.hess;
    }
}

/// `eps * sum_j beta_nu(-c_j(z))` over the given constraints.
pub fn barrier_sum(constraints: &[QuadConstraint], z: &[f64], eps: f64, nu: f64) -> f64 {
    eps * constraints.iter().map(|c| beta(-c.value(z), nu)).sum::<f64>()
}

/// Barrier sum with derivatives, accumulated into a quadratic over `N`
/// leading entries of `z`.
pub fn barrier_quadratic<const N: usize>(constraints: &[QuadConstraint], z: &[f64], eps: f64, nu: f64) -> Quadratic<N> {
    let mut q = Quadratic::<N>::zero();
    for c in constraints {
        let (b, d1, d2) = beta_derivatives(-c.value(z), nu);
        q.value += eps * b;
        let grad = c.gradient(z);
        // d/dz beta(-c) = -beta' grad c; d2 = beta'' grad grad^T - beta' hess c.
        for &(i, gi) in &grad {
            if gi != 0.0 {
                q.grad[i] -= eps * d1 * gi;
                for &(j, gj) in &grad {
                    q.hess[(i, j)] += eps * d2 * gi * gj;
                }
            }
        }
        for (i, hi) in c.hessian() {
            q.hess[(i, i)] -= eps * d1 * hi;
        }
    }
    q
}

/// `rho + eps * sum_j beta_nu(-c_j)` at one node.
pub fn augmented_stage_cost(
    x: &StateVec,
    u: &InputVec,
    frame: &FrenetFrame,
    constraints: &[QuadConstraint],
    params: &BarrierParams,
) -> Result<f64, DynamicsError> {
    let z = stack(x, u);
    Ok(running_cost(x, frame)? + barrier_sum(constraints, &z, params.eps, params.nu))
}

/// Gradient and Hessian of the augmented stage cost over `z = [x; u]`,
/// with the running-cost and barrier parts weighted separately.
pub fn stage_derivatives(
    x: &StateVec,
    u: &InputVec,
    frame: &FrenetFrame,
    constraints: &[QuadConstraint],
    params: &BarrierParams,
    mode: HessianMode,
    time_weight: f64,
    barrier_weight: f64,
) -> Result<Quadratic<NZ>, DynamicsError> {
    let z = stack(x, u);
    let (rho, g, h) = running_cost_derivatives(x, frame, mode)?;
    let mut q = barrier_quadratic::<NZ>(constraints, &z, params.eps, params.nu).scaled(barrier_weight);
    q.value += time_weight * rho;
    let mut grad = q.grad.fixed_rows_mut::<NX>(0);
    grad += g * time_weight;
    let mut hess = q.hess.fixed_view_mut::<NX, NX>(0, 0);
    hess += h * time_weight;
    Ok(q)
}

/// `eps_f * sum_i beta_nu_f(-c_f_i(x))`.
pub fn terminal_cost(x: &StateVec, constraints: &[QuadConstraint], params: &BarrierParams) -> f64 {
    barrier_sum(constraints, x.as_slice(), params.eps_f, params.nu_f)
}

pub fn terminal_derivatives(x: &StateVec, constraints: &[QuadConstraint], params: &BarrierParams) -> Quadratic<NX> {
    barrier_quadratic::<NX>(constraints, x.as_slice(), params.eps_f, params.nu_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{stage_constraints, BoundProfile, CorridorSpec, FinalBox, InputStateBounds};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn frame(k: f64) -> FrenetFrame {
        let r = Rotation3::from_euler_angles(0.2, 0.4, -0.9).into_inner();
        FrenetFrame { t: r.column(0).into(), n: r.column(1).into(), b: r.column(2).into(), k, tau: 0.1 }
    }

    fn bounds() -> (InputStateBounds, CorridorSpec) {
        let n = 4;
        (
            InputStateBounds {
                p_max: 1.0,
                q_max: 1.5,
                r_max: 0.7,
                f_min: 0.15,
                f_max: 0.5,
                phi_max: BoundProfile::constant(1e-3, n, 0.9),
                theta_max: BoundProfile::constant(1e-3, n, 0.8),
                psi_max: BoundProfile::constant(1e-3, n, 1.2),
            },
            CorridorSpec::Rectangular {
                w1_min: BoundProfile::constant(1e-3, n, -0.5),
                w1_max: BoundProfile::constant(1e-3, n, 0.4),
                w2_min: BoundProfile::constant(1e-3, n, -0.3),
                w2_max: BoundProfile::constant(1e-3, n, 0.6),
            },
        )
    }

    #[test]
    fn barrier_values() {
        assert_eq!(beta(1.0, 0.1), 0.0);
        assert_relative_eq!(beta(0.25, 0.5), 0.5f64.ln().abs() + 0.625, epsilon = 1e-15);
        assert_relative_eq!(beta(0.25, 0.5), 1.31815, epsilon = 1e-5);
        let l = 0.3;
        let (above, d_above, dd_above) = beta_derivatives(l + 1e-13, l);
        let (below, d_below, dd_below) = beta_derivatives(l, l);
        assert_relative_eq!(above, below, epsilon = 1e-12);
        assert_relative_eq!(d_above, d_below, epsilon = 1e-11);
        assert_relative_eq!(dd_above, dd_below, epsilon = 1e-10);
        assert_relative_eq!(below, -l.ln());
        assert_relative_eq!(d_below, -1.0 / l);
        let nu: f64 = 0.05;
        assert_relative_eq!(beta(0.0, nu), -nu.ln() + 1.5, epsilon = 1e-14);
    }

    #[test]
    fn running_cost_integrates_to_time() {
        // Straight and circular paths travelled at constant tangential speed.
        let v = 1.6;
        let length = 5.0;
        for k in [0.0, 0.7] {
            let fr = FrenetFrame { t: Vector3::x(), n: Vector3::y(), b: Vector3::z(), k, tau: 0.0 };
            let x = StateVec::from_column_slice(&[0.0, 0.0, v, 0.0, 0.0, 0.0, 0.0, 0.0]);
            let n = 1000;
            let total: f64 = (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * running_cost(&x, &fr).unwrap() * length / n as f64
                })
                .sum();
            assert_relative_eq!(total, length / v, epsilon = 1e-12);
        }
    }

    #[test]
    fn interior_constraints_leave_running_cost() {
        let (b, c) = bounds();
        let set = stage_constraints(&b, &c, 0);
        let fr = frame(0.3);
        let x = StateVec::from_column_slice(&[-0.05, 0.15, 1.2, 0.1, -0.1, 0.0, 0.0, 0.0]);
        let u = InputVec::new(0.0, 0.0, 0.0, 0.325);
        let params = BarrierParams { eps: 0.3, nu: 0.5, eps_f: 1.0, nu_f: 1.0 };
        let v = fr.t * 1.2 + fr.n * 0.1;
        let x = StateVec::from_column_slice(&[x[0], x[1], v.x, v.y, v.z, 0.0, 0.0, 0.0]);
        let rho = running_cost(&x, &fr).unwrap();
        // At box centers every constraint is -1 and beta_nu(1) = 0.
        assert_relative_eq!(augmented_stage_cost(&x, &u, &fr, set.as_slice(), &params).unwrap(), rho, epsilon = 1e-12);
    }

    #[test]
    fn log_branch_hessian_spot_check() {
        // Single constraint c = (z / 2)^2 - 1 at z = 1: -log(-c) has
        // Hessian (c'^2) / c^2 - c'' / c.
        let c = QuadConstraint::symmetric(0, 2.0);
        let z = [1.0];
        let q = barrier_quadratic::<1>(&[c], &z, 1.0, 1e-3);
        let cv = 0.25 - 1.0;
        let dc = 0.5;
        let ddc = 0.5;
        assert_relative_eq!(q.value, -(-cv as f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(q.grad[0], -dc / cv, epsilon = 1e-15);
        assert_relative_eq!(q.hess[(0, 0)], dc * dc / (cv * cv) - ddc / cv, epsilon = 1e-14);
    }

    #[test]
    fn terminal_cost_at_center_and_bound() {
        let center = StateVec::from_column_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let fbox = FinalBox::around(&center, &[0.1; NX]);
        let params = BarrierParams { eps: 1.0, nu: 0.2, eps_f: 0.5, nu_f: 0.2 };
        let cons = fbox.constraints();
        assert_relative_eq!(terminal_cost(&center, &cons, &params), 0.0, epsilon = 1e-14);
        let mut edge = center;
        edge[3] = 0.1;
        assert_relative_eq!(terminal_cost(&edge, &cons, &params), 0.5 * beta(0.0, 0.2), epsilon = 1e-12);
    }

    fn fd_gradient<const N: usize>(f: impl Fn(&SVector<f64, N>) -> f64, z: &SVector<f64, N>) -> SVector<f64, N> {
        let h = 1e-6;
        SVector::<f64, N>::from_fn(|i, _| {
            let mut zp = *z;
            zp[i] += h;
            let mut zm = *z;
            zm[i] -= h;
            (f(&zp) - f(&zm)) / (2.0 * h)
        })
    }

    fn assert_close(a: f64, b: f64, what: &str) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-2), "{what}: analytic {a} vs numeric {b}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn barrier_is_convex_decreasing(x in -5.0..5.0f64, l in 0.01..2.0f64, h in 1e-3..0.1f64) {
            let (_, d1, d2) = beta_derivatives(x, l);
            prop_assert!(d1 < 0.0 && d2 > 0.0);
            let second = beta(x + h, l) - 2.0 * beta(x, l) + beta(x - h, l);
            prop_assert!(second >= -1e-12);
            prop_assert!(beta(x + h, l) < beta(x, l));
        }

        #[test]
        fn augmented_cost_tends_to_running_cost(eps in 1e-9..1e-6f64) {
            let (b, c) = bounds();
            let set = stage_constraints(&b, &c, 1);
            let fr = frame(0.3);
            let v = fr.t * 1.1;
            let x = StateVec::from_column_slice(&[0.1, 0.2, v.x, v.y, v.z, 0.2, -0.1, 0.3]);
            let u = InputVec::new(0.2, -0.3, 0.1, 0.3);
            let params = BarrierParams { eps, nu: 1e-3, eps_f: 1.0, nu_f: 1.0 };
            let total = augmented_stage_cost(&x, &u, &fr, set.as_slice(), &params).unwrap();
            prop_assert!((total - running_cost(&x, &fr).unwrap()).abs() < 1e-4);
        }

        #[test]
        fn stage_derivatives_match_differences(
            w1 in -0.45..0.35f64, w2 in -0.25..0.55f64,
            vt in 0.5..2.5f64, vn in -0.5..0.5f64,
            roll in -0.8..0.8f64, pitch in -0.7..0.7f64, yaw in -1.1..1.1f64,
            p in -1.2..1.2f64, q in -1.4..1.4f64, r in -0.9..0.9f64, thrust in 0.1..0.55f64,
            nu in 0.01..1.0f64, k in -1.0..1.0f64,
        ) {
            let (b, c) = bounds();
            let set = stage_constraints(&b, &c, 2);
            let fr = frame(k);
            let v = fr.t * vt + fr.n * vn;
            let x = StateVec::from_column_slice(&[w1, w2, v.x, v.y, v.z, roll, pitch, yaw]);
            let u = InputVec::new(p, q, r, thrust);
            let params = BarrierParams { eps: 0.7, nu, eps_f: 1.0, nu_f: 1.0 };
            let quad = stage_derivatives(&x, &u, &fr, set.as_slice(), &params, HessianMode::Exact, 1.3, 0.6).unwrap();
            let f = |z: &ZVec| {
                let x = z.fixed_rows::<NX>(0).into_owned();
                let u = z.fixed_rows::<4>(NX).into_owned();
                let zs = stack(&x, &u);
                1.3 * running_cost(&x, &fr).unwrap() + 0.6 * barrier_sum(set.as_slice(), &zs, params.eps, params.nu)
            };
            let z = ZVec::from_iterator(x.iter().chain(u.iter()).copied());
            let g = fd_gradient(f, &z);
            for i in 0..NZ {
                assert_close(quad.grad[i], g[i], &format!("grad {i}"));
            }
            for j in 0..NZ {
                let gj = |zz: &ZVec| {
                    let xx = zz.fixed_rows::<NX>(0).into_owned();
                    let uu = zz.fixed_rows::<4>(NX).into_owned();
                    stage_derivatives(&xx, &uu, &fr, set.as_slice(), &params, HessianMode::Exact, 1.3, 0.6).unwrap().grad[j]
                };
                let col = fd_gradient(gj, &z);
                for i in 0..NZ {
                    assert_close(quad.hess[(j, i)], col[i], &format!("hess ({j},{i})"));
                }
            }
            let gn = stage_derivatives(&x, &u, &fr, set.as_slice(), &params, HessianMode::GaussNewton, 1.3, 0.6).unwrap();
            prop_assert!(gn.hess.symmetric_eigenvalues().min() > -1e-9);
        }

        #[test]
        fn terminal_gradient_matches_differences(
            a in -0.2..0.2f64, b in -0.2..0.2f64, nu_f in 0.01..1.0f64,
        ) {
            let center = StateVec::from_column_slice(&[0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.3]);
            let fbox = FinalBox::around(&center, &[0.15; NX]);
            let cons = fbox.constraints();
            let params = BarrierParams { eps: 1.0, nu: 1.0, eps_f: 0.4, nu_f };
            let x = center + StateVec::from_fn(|i, _| if i % 2 == 0 { a } else { b });
            let q = terminal_derivatives(&x, &cons, &params);
            let g = fd_gradient(|y: &StateVec| terminal_cost(y, &cons, &params), &x);
            for i in 0..NX {
                assert_close(q.grad[i], g[i], &format!("terminal grad {i}"));
            }
        }
    }
}
