//! Strictly feasible initial trajectories from the differential flatness of
//! the translational dynamics.
//!
//! Position, velocity, acceleration and jerk of the center of mass together
//! with yaw and yaw rate determine the attitude, body rates and thrust. The
//! seed flies along the frame path (`w = 0`) at a prescribed speed.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, InputU, InputVec, StateVec, TimeState, TransverseState, VehicleParams, E3, NU, NX};
use crate::problem::{constraint_names, QuadrotorProblem};
use crate::pronto::{design_gains, project, Curve, RegulatorWeights, SolverError, Trajectory};

/// Thrust accelerations below this are treated as free fall.
const FREE_FALL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("free fall: thrust direction undefined (|g e3 - a| = {0:e})")]
    FreeFall(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid initialization profile: {0}")]
    InvalidProfile(String),
    #[error("initial trajectory violates constraint {constraint} at s = {s:.4} m (value {value:.3e})")]
    Infeasible { constraint: String, s: f64, value: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Scalar profile over the arc-length grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridProfile {
    Constant { value: f64 },
    /// One sample per grid node.
    Samples { values: Vec<f64> },
    /// `height (sigma((s - start) / width) - sigma((s - end) / width))`
    /// with the logistic `sigma`.
    Bump { height: f64, start: f64, end: f64, width: f64 },
}

impl GridProfile {
    pub fn zero() -> Self {
        GridProfile::Constant { value: 0.0 }
    }

    /// The profile multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            GridProfile::Constant { value } => GridProfile::Constant { value: value * factor },
            GridProfile::Samples { values } => GridProfile::Samples { values: values.iter().map(|v| v * factor).collect() },
            GridProfile::Bump { height, start, end, width } => {
                GridProfile::Bump { height: height * factor, start: *start, end: *end, width: *width }
            }
        }
    }

    /// Value at grid node `i`, arc length `s`.
    pub fn value(&self, i: usize, s: f64) -> f64 {
        match self {
            GridProfile::Constant { value } => *value,
            GridProfile::Samples { values } => values[i],
            GridProfile::Bump { height, start, end, width } => {
                let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
                height * (sig((s - start) / width) - sig((s - end) / width))
            }
        }
    }

    fn validate(&self, n_steps: usize, what: &str, positive: bool) -> Result<(), InitError> {
        let ok = |v: f64| v.is_finite() && (!positive || v > 0.0);
        match self {
            GridProfile::Constant { value } if ok(*value) => Ok(()),
            GridProfile::Samples { values } if values.len() == n_steps + 1 && values.iter().all(|v| ok(*v)) => Ok(()),
            GridProfile::Bump { height, start, end, width }
                if !positive && [*height, *start, *end].iter().all(|v| v.is_finite()) && *width > 0.0 && end > start =>
            {
                Ok(())
            }
            GridProfile::Constant { value } => Err(InitError::InvalidProfile(format!("{what} = {value}"))),
            GridProfile::Samples { values } => Err(InitError::InvalidProfile(format!(
                "{what} needs {} finite{} samples, got {}",
                n_steps + 1,
                if positive { " positive" } else { "" },
                values.len()
            ))),
            GridProfile::Bump { .. } => Err(InitError::InvalidProfile(format!(
                "{what}: bump needs finite height, start < end, positive width{}",
                if positive { " and cannot describe a speed" } else { "" }
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// Speed along the seed curve, m/s.
    pub speed: GridProfile,
    /// Yaw, rad.
    #[serde(default = "GridProfile::zero")]
    pub yaw: GridProfile,
    /// Transverse offsets of the seed from the frame path, m.
    #[serde(default = "GridProfile::zero")]
    pub w1: GridProfile,
    #[serde(default = "GridProfile::zero")]
    pub w2: GridProfile,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { speed: GridProfile::Constant { value: 0.5 }, yaw: GridProfile::zero(), w1: GridProfile::zero(), w2: GridProfile::zero() }
    }
}

impl InitSpec {
    pub fn validate(&self, n_steps: usize) -> Result<(), InitError> {
        self.speed.validate(n_steps, "speed", true)?;
        self.yaw.validate(n_steps, "yaw", false)?;
        self.w1.validate(n_steps, "w1", false)?;
        self.w2.validate(n_steps, "w2", false)
    }
}

/// Attitude, body rates and thrust producing the given motion of the center
/// of mass with the given yaw.
pub fn flat_outputs_to_state_input(
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    acc: &Vector3<f64>,
    jerk: &Vector3<f64>,
    yaw: f64,
    yaw_rate: f64,
    params: &VehicleParams,
) -> Result<(TimeState, InputU), InitError> {
    // v' = g e3 - (F/m) R e3, so R e3 is the unit vector along g e3 - a.
    let thrust = E3 * params.g - acc;
    let norm = thrust.norm();
    if norm < FREE_FALL_TOLERANCE {
        return Err(InitError::FreeFall(norm));
    }
    let z = thrust / norm;
    let z_dot = (Matrix3::identity() - z * z.transpose()) * (-jerk) / norm;

    // Undo the yaw: Rz(-psi) R e3 = (s_theta c_phi, -s_phi, c_theta c_phi).
    let unyaw = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -yaw);
    let e = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let zp = unyaw * z;
    let zp_dot = unyaw * (z_dot - e * z * yaw_rate);
    let (a, b, c) = (zp.x, zp.y, zp.z);
    let h = (a * a + c * c).sqrt();
    let theta = a.atan2(c);
    let phi = (-b).atan2(h);
    let theta_dot = (c * zp_dot.x - a * zp_dot.z) / (h * h);
    let h_dot = (a * zp_dot.x + c * zp_dot.z) / h;
    let phi_dot = (-h * zp_dot.y + b * h_dot) / (b * b + h * h);

    let angles = Vector3::new(phi, theta, yaw);
    let omega = dynamics::body_rates_from_euler_rates(&angles, &Vector3::new(phi_dot, theta_dot, yaw_rate))?;
    Ok((TimeState { p: *pos, v: *vel, phi: angles }, InputU { omega, f: params.m * norm }))
}

/// Derivative along the grid by central differences, second-order one-sided
/// at the ends.
fn grid_derivative(values: &[Vector3<f64>], ds: f64) -> Vec<Vector3<f64>> {
    let n = values.len() - 1;
    (0..=n)
        .map(|i| match i {
            0 => (values[1] * 4.0 - values[0] * 3.0 - values[2]) / (2.0 * ds),
            i if i == n => (values[n] * 3.0 - values[n - 1] * 4.0 + values[n - 2]) / (2.0 * ds),
            i => (values[i + 1] - values[i - 1]) / (2.0 * ds),
        })
        .collect()
}

/// Flatness-based state-input curve along the frame path shifted by the
/// transverse offsets, before projection.
pub fn flatness_curve(problem: &QuadrotorProblem, spec: &InitSpec) -> Result<Curve<NX, NU>, InitError> {
    let path = &problem.path;
    let n = path.n_steps();
    spec.validate(n)?;
    if n < 2 {
        return Err(InitError::InvalidProfile("need at least two grid intervals".into()));
    }
    let ds = path.ds();
    let at = |p: &GridProfile| -> Vec<f64> { (0..=n).map(|i| p.value(i, path.node_s(i))).collect() };
    let (speed, yaw, w1, w2) = (at(&spec.speed), at(&spec.yaw), at(&spec.w1), at(&spec.w2));
    let pos: Vec<Vector3<f64>> = (0..=n)
        .map(|i| {
            let f = path.node_frame(i);
            path.node_point(i) + f.n * w1[i] + f.b * w2[i]
        })
        .collect();

    // d/dt = sigma d/ds with sigma = speed / |dP/ds|.
    let tangent = grid_derivative(&pos, ds);
    let sigma: Vec<f64> = tangent.iter().zip(&speed).map(|(t, v)| v / t.norm()).collect();
    let vel: Vec<Vector3<f64>> = tangent.iter().zip(&sigma).map(|(t, g)| t * *g).collect();
    let acc: Vec<Vector3<f64>> = grid_derivative(&vel, ds).iter().zip(&sigma).map(|(d, g)| d * *g).collect();
    let jerk: Vec<Vector3<f64>> = grid_derivative(&acc, ds).iter().zip(&sigma).map(|(d, g)| d * *g).collect();
    let yaw_vec: Vec<Vector3<f64>> = yaw.iter().map(|y| Vector3::new(*y, 0.0, 0.0)).collect();
    let yaw_rate: Vec<f64> = grid_derivative(&yaw_vec, ds).iter().zip(&sigma).map(|(d, g)| d.x * g).collect();

    let mut xs = Vec::with_capacity(n + 1);
    let mut us = Vec::with_capacity(n);
    for i in 0..=n {
        let (state, input) = flat_outputs_to_state_input(&pos[i], &vel[i], &acc[i], &jerk[i], yaw[i], yaw_rate[i], &problem.vehicle)?;
        xs.push(TransverseState { w1: w1[i], w2: w2[i], v: state.v, phi: state.phi }.to_vector());
        if i < n {
            us.push(input.to_vector());
        }
    }
    Ok(Curve::new(xs, us)?)
}

/// A projected initial trajectory with its interior margin.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub trajectory: Trajectory<NX, NU>,
    /// Smallest distance `-c_j` over all stage constraints.
    pub margin: f64,
}

/// Projects an arbitrary state-input curve onto the trajectory manifold and
/// checks that the result is strictly interior to the stage constraints.
pub fn project_curve(
    problem: &QuadrotorProblem,
    curve: &Curve<NX, NU>,
    weights: &RegulatorWeights<NX, NU>,
) -> Result<Initialization, InitError> {
    let gains = design_gains(problem, curve, weights)?;
    let trajectory = project(problem, curve, &gains)?;
    let names = constraint_names(&problem.corridor);
    let mut margin = f64::INFINITY;
    for k in 0..=trajectory.n_steps() {
        // The terminal node carries the state constraints only.
        let u: InputVec = if k < trajectory.n_steps() { trajectory.u[k] } else { trajectory.u[k - 1] };
        let values = problem.stage_values(k, &trajectory.x[k], &u);
        let first = if k < trajectory.n_steps() { 0 } else { crate::corridor::FIRST_STATE_CONSTRAINT };
        for (j, &value) in values.iter().enumerate().skip(first) {
            if !(value < 0.0) {
                return Err(InitError::Infeasible { constraint: names[j].to_string(), s: problem.path.node_s(k), value });
            }
            margin = margin.min(-value);
        }
    }
    Ok(Initialization { trajectory, margin })
}

/// Flight along the (offset) frame path at the prescribed speed and yaw, projected
/// with gains designed on the flatness curve itself.
pub fn initial_trajectory(
    problem: &QuadrotorProblem,
    spec: &InitSpec,
    weights: &RegulatorWeights<NX, NU>,
) -> Result<Initialization, InitError> {
    let curve = flatness_curve(problem, spec)?;
    project_curve(problem, &curve, weights)
}

/// Transverse initial condition of a flatness seed: on the path, flying
/// along the tangent.
pub fn seed_initial_state(problem: &QuadrotorProblem, spec: &InitSpec) -> Result<StateVec, InitError> {
    Ok(flatness_curve(problem, spec)?.x[0])
}
