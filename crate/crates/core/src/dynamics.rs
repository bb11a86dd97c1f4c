//! Vectored-thrust vehicle model in the time domain and in transverse
//! coordinates, with analytic Jacobians.
//!
//! Transverse state layout (`SVector<f64, 8>`): `[w1, w2, v1, v2, v3, phi,
//! theta, psi]`. Input layout (`SVector<f64, 4>`): `[p, q, r, F]`. The z axis
//! points down, so thrust at level attitude pushes along `-e3`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::framepath::FrenetFrame;

pub const NX: usize = 8;
pub const NU: usize = 4;
pub const NZ: usize = NX + NU;

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;
pub type StateMat = SMatrix<f64, NX, NX>;
pub type InputMat = SMatrix<f64, NX, NU>;

/// Closest allowed approach of the pitch angle to `pi / 2`.
pub const PITCH_MARGIN: f64 = 0.05;

pub const E3: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

pub mod idx {
    pub const W1: usize = 0;
    pub const W2: usize = 1;
    pub const V: usize = 2;
    pub const PHI: usize = 5;
    pub const THETA: usize = 6;
    pub const PSI: usize = 7;
    pub const P: usize = 0;
    pub const Q: usize = 1;
    pub const R: usize = 2;
    pub const F: usize = 3;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("pitch {theta} rad is within {PITCH_MARGIN} rad of the Euler-angle singularity")]
    PitchSingularity { theta: f64 },
    #[error("tangential speed t.v = {value} m/s must be positive")]
    NonPositiveTangentialSpeed { value: f64 },
    #[error("1 - k w1 = {value} must be positive (state beyond the curvature center)")]
    BeyondCurvatureCenter { value: f64 },
    #[error("non-finite state or input")]
    NonFinite,
    #[error("invalid vehicle parameters: m = {m}, g = {g}")]
    InvalidParams { m: f64, g: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Mass, kg.
    pub m: f64,
    /// Gravity, m/s^2.
    pub g: f64,
}

impl VehicleParams {
    pub fn new(m: f64, g: f64) -> Result<Self, DynamicsError> {
        if !(m > 0.0 && g > 0.0 && m.is_finite() && g.is_finite()) {
            return Err(DynamicsError::InvalidParams { m, g });
        }
        Ok(VehicleParams { m, g })
    }

    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub phi: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransverseState {
    pub w1: f64,
    pub w2: f64,
    pub v: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl TransverseState {
    pub fn to_vector(&self) -> StateVec {
        StateVec::from_column_slice(&[
            self.w1, self.w2, self.v.x, self.v.y, self.v.z, self.phi.x, self.phi.y, self.phi.z,
        ])
    }

    pub fn from_vector(x: &StateVec) -> Self {
        TransverseState {
            w1: x[0],
            w2: x[1],
            v: Vector3::new(x[2], x[3], x[4]),
            phi: Vector3::new(x[5], x[6], x[7]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputU {
    /// Body rates `(p, q, r)`, rad/s.
    pub omega: Vector3<f64>,
    /// Thrust, N.
    pub f: f64,
}

impl InputU {
    pub fn to_vector(&self) -> InputVec {
        InputVec::new(self.omega.x, self.omega.y, self.omega.z, self.f)
    }

    pub fn from_vector(u: &InputVec) -> Self {
        InputU { omega: Vector3::new(u[0], u[1], u[2]), f: u[3] }
    }
}

fn velocity(x: &StateVec) -> Vector3<f64> {
    Vector3::new(x[2], x[3], x[4])
}

fn angles(x: &StateVec) -> Vector3<f64> {
    Vector3::new(x[5], x[6], x[7])
}

/// `Rz(psi) Ry(theta) Rx(phi)`.
pub fn rotation_matrix(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = phi.x.sin_cos();
    let (st, ct) = phi.y.sin_cos();
    let (sp, cp) = phi.z.sin_cos();
    Matrix3::new(
        cp * ct,
        cp * st * sf - sp * cf,
        cp * st * cf + sp * sf,
        sp * ct,
        sp * st * sf + cp * cf,
        sp * st * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

/// `R(Phi) e3` and its partial derivatives with respect to `(phi, theta, psi)`
/// as columns.
fn thrust_axis(phi: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let (sf, cf) = phi.x.sin_cos();
    let (st, ct) = phi.y.sin_cos();
    let (sp, cp) = phi.z.sin_cos();
    let axis = Vector3::new(cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf);
    let d_phi = Vector3::new(-cp * st * sf + sp * cf, -sp * st * sf - cp * cf, -ct * sf);
    let d_theta = Vector3::new(cp * ct * cf, sp * ct * cf, -st * cf);
    let d_psi = Vector3::new(-sp * st * cf + cp * sf, cp * st * cf + sp * sf, 0.0);
    (axis, Matrix3::from_columns(&[d_phi, d_theta, d_psi]))
}

fn check_pitch(theta: f64) -> Result<(), DynamicsError> {
    if !theta.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - PITCH_MARGIN {
        return Err(DynamicsError::PitchSingularity { theta });
    }
    Ok(())
}

/// `J(Phi)` with `Phi_dot = J(Phi) omega`.
pub fn euler_rate_matrix(phi: &Vector3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    check_pitch(phi.y)?;
    let (sf, cf) = phi.x.sin_cos();
    let (st, ct) = phi.y.sin_cos();
    let tt = st / ct;
    Ok(Matrix3::new(1.0, sf * tt, cf * tt, 0.0, cf, -sf, 0.0, sf / ct, cf / ct))
}

/// `J(Phi)^-1`, mapping Euler-angle rates to body rates.
pub fn euler_rate_inverse(phi: &Vector3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    check_pitch(phi.y)?;
    let (sf, cf) = phi.x.sin_cos();
    let (st, ct) = phi.y.sin_cos();
    Ok(Matrix3::new(1.0, 0.0, -st, 0.0, cf, sf * ct, 0.0, -sf, cf * ct))
}

/// `J(Phi) omega` and its partial derivatives with respect to `Phi`.
fn euler_rates_with_jacobian(
    phi: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> Result<(Vector3<f64>, Matrix3<f64>, Matrix3<f64>), DynamicsError> {
    let j = euler_rate_matrix(phi)?;
    let (sf, cf) = phi.x.sin_cos();
    let (st, ct) = phi.y.sin_cos();
    let (_, q, r) = (omega.x, omega.y, omega.z);
    let tt = st / ct;
    let a = sf * q + cf * r;
    let b = cf * q - sf * r;
    let d_phi = Vector3::new(b * tt, -a, b / ct);
    let d_theta = Vector3::new(a / (ct * ct), 0.0, a * st / (ct * ct));
    let jac = Matrix3::from_columns(&[d_phi, d_theta, Vector3::zeros()]);
    Ok((j * omega, j, jac))
}

/// Time-domain vector field: `p' = v`, `v' = g e3 - (F/m) R e3`,
/// `Phi' = J omega`.
pub fn time_domain_field(x: &TimeState, u: &InputU, params: &VehicleParams) -> Result<TimeState, DynamicsError> {
    let j = euler_rate_matrix(&x.phi)?;
    let accel = E3 * params.g - rotation_matrix(&x.phi) * E3 * (u.f / params.m);
    Ok(TimeState { p: x.v, v: accel, phi: j * u.omega })
}

/// One RK4 step of the time-domain model with input held constant.
pub fn time_domain_rk4(x: &TimeState, u: &InputU, params: &VehicleParams, dt: f64) -> Result<TimeState, DynamicsError> {
    let add = |a: &TimeState, k: &TimeState, h: f64| TimeState { p: a.p + k.p * h, v: a.v + k.v * h, phi: a.phi + k.phi * h };
    let k1 = time_domain_field(x, u, params)?;
    let k2 = time_domain_field(&add(x, &k1, 0.5 * dt), u, params)?;
    let k3 = time_domain_field(&add(x, &k2, 0.5 * dt), u, params)?;
    let k4 = time_domain_field(&add(x, &k3, dt), u, params)?;
    Ok(TimeState {
        p: x.p + (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * (dt / 6.0),
        v: x.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * (dt / 6.0),
        phi: x.phi + (k1.phi + k2.phi * 2.0 + k3.phi * 2.0 + k4.phi) * (dt / 6.0),
    })
}

/// Tangential speed `t.v` and `1 - k w1`, checked against the transverse
/// coordinate invariants.
pub fn transverse_margins(x: &StateVec, frame: &FrenetFrame) -> Result<(f64, f64), DynamicsError> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    check_pitch(x[idx::THETA])?;
    let sigma = frame.t.dot(&velocity(x));
    if sigma <= 0.0 {
        return Err(DynamicsError::NonPositiveTangentialSpeed { value: sigma });
    }
    let lever = 1.0 - frame.k * x[idx::W1];
    if lever <= 0.0 {
        return Err(DynamicsError::BeyondCurvatureCenter { value: lever });
    }
    Ok((sigma, lever))
}

/// Time per unit arc length, `(1 - k w1) / (t . v)`.
pub fn dilation(x: &StateVec, frame: &FrenetFrame) -> Result<f64, DynamicsError> {
    let (sigma, lever) = transverse_margins(x, frame)?;
    Ok(lever / sigma)
}

/// Arc-length derivative of the transverse state.
pub fn transverse_field(
    x: &StateVec,
    u: &InputVec,
    frame: &FrenetFrame,
    params: &VehicleParams,
) -> Result<StateVec, DynamicsError> {
    if !u.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    let eta = dilation(x, frame)?;
    let v = velocity(x);
    let phi = angles(x);
    let j = euler_rate_matrix(&phi)?;
    let accel = E3 * params.g - rotation_matrix(&phi) * E3 * (u[idx::F] / params.m);
    let rates = j * Vector3::new(u[0], u[1], u[2]);
    let mut out = StateVec::zeros();
    out[0] = frame.n.dot(&v) * eta + frame.tau * x[1];
    out[1] = frame.b.dot(&v) * eta - frame.tau * x[0];
    out.fixed_rows_mut::<3>(2).copy_from(&(accel * eta));
    out.fixed_rows_mut::<3>(5).copy_from(&(rates * eta));
    Ok(out)
}

/// Field and its Jacobians `(A, B)` with respect to state and input.
pub fn linearize_transverse(
    x: &StateVec,
    u: &InputVec,
    frame: &FrenetFrame,
    params: &VehicleParams,
) -> Result<(StateVec, StateMat, InputMat), DynamicsError> {
    if !u.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite);
    }
    let (sigma, lever) = transverse_margins(x, frame)?;
    let eta = lever / sigma;
    let v = velocity(x);
    let phi = angles(x);
    let omega = Vector3::new(u[0], u[1], u[2]);
    let f_over_m = u[idx::F] / params.m;

    let d_eta_w1 = -frame.k / sigma;
    let d_eta_v = frame.t * (-eta / sigma);

    let (axis, d_axis) = thrust_axis(&phi);
    let accel = E3 * params.g - axis * f_over_m;
    let (rates, j, d_rates) = euler_rates_with_jacobian(&phi, &omega)?;
    let nv = frame.n.dot(&v);
    let bv = frame.b.dot(&v);

    let mut f = StateVec::zeros();
    f[0] = nv * eta + frame.tau * x[1];
    f[1] = bv * eta - frame.tau * x[0];
    f.fixed_rows_mut::<3>(2).copy_from(&(accel * eta));
    f.fixed_rows_mut::<3>(5).copy_from(&(rates * eta));

    let mut a = StateMat::zeros();
    a[(0, 0)] = nv * d_eta_w1;
    a[(0, 1)] = frame.tau;
    a.fixed_view_mut::<1, 3>(0, 2).copy_from(&(frame.n * eta + d_eta_v * nv).transpose());
    a[(1, 0)] = bv * d_eta_w1 - frame.tau;
    a.fixed_view_mut::<1, 3>(1, 2).copy_from(&(frame.b * eta + d_eta_v * bv).transpose());

    a.fixed_view_mut::<3, 1>(2, 0).copy_from(&(accel * d_eta_w1));
    a.fixed_view_mut::<3, 3>(2, 2).copy_from(&(accel * d_eta_v.transpose()));
    a.fixed_view_mut::<3, 3>(2, 5).copy_from(&(d_axis * (-f_over_m * eta)));

    a.fixed_view_mut::<3, 1>(5, 0).copy_from(&(rates * d_eta_w1));
    a.fixed_view_mut::<3, 3>(5, 2).copy_from(&(rates * d_eta_v.transpose()));
    a.fixed_view_mut::<3, 3>(5, 5).copy_from(&(d_rates * eta));

    let mut b = InputMat::zeros();
    b.fixed_view_mut::<3, 1>(2, 3).copy_from(&(axis * (-eta / params.m)));
    b.fixed_view_mut::<3, 3>(5, 0).copy_from(&(j * eta));

    Ok((f, a, b))
}

/// Body rates and thrust reproducing a given time-domain motion: used to
/// check that an input is consistent with observed `Phi_dot`.
pub fn body_rates_from_euler_rates(phi: &Vector3<f64>, phi_dot: &Vector3<f64>) -> Result<Vector3<f64>, DynamicsError> {
    Ok(euler_rate_inverse(phi)? * phi_dot)
}
