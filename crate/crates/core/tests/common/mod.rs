//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mintime_core::app::export::TimeRow;
use mintime_core::app::pipeline::{self, Summary};
use mintime_core::app::{load_scenario, Scenario};
use mintime_core::corridor::{BoundProfile, CorridorSpec, InputStateBounds};
use mintime_core::dynamics::{time_domain_field, InputU, InputVec, StateVec, TimeState, VehicleParams};
use mintime_core::framepath::{build_planar_path, CurvatureProfile, FramePath};
use mintime_core::problem::QuadrotorProblem;
use nalgebra::Vector3;
use ode_solvers::{Dopri5, SVector as OdeVector, System};

pub const M: f64 = 0.0325;
pub const G: f64 = 9.81;

pub fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    load_scenario(scenario_file(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Solves a shipped scenario into a fresh directory.
pub fn solve_shipped(name: &str) -> (tempfile::TempDir, Result<Summary, pipeline::PipelineError>) {
    let dir = tempfile::tempdir().unwrap();
    let result = pipeline::run(&load(name), dir.path());
    (dir, result)
}

pub fn vehicle() -> VehicleParams {
    VehicleParams::new(M, G).unwrap()
}

/// Bounds with every angle limited to `tilt` and symmetric rate limits.
pub fn uniform_bounds(n: usize, ds: f64, rate: f64, f_min: f64, f_max: f64, tilt: f64) -> InputStateBounds {
    let c = BoundProfile::constant(ds, n, tilt);
    InputStateBounds {
        p_max: rate,
        q_max: rate,
        r_max: rate,
        f_min,
        f_max,
        phi_max: c.clone(),
        theta_max: c.clone(),
        psi_max: c,
    }
}

/// Straight path along `x` with a circular corridor of radius `r_obs`.
pub fn straight_problem(length: f64, ds: f64, r_obs: f64, bounds: impl FnOnce(usize) -> InputStateBounds) -> QuadrotorProblem {
    let path: FramePath =
        build_planar_path(&CurvatureProfile::zero(), Vector3::z(), Vector3::zeros(), Vector3::x(), length, ds).unwrap();
    let n = path.n_steps();
    let corridor = CorridorSpec::Circular { r_obs: BoundProfile::constant(ds, n, r_obs) };
    QuadrotorProblem::new(path, vehicle(), bounds(n), corridor, None, 1e-3).unwrap()
}

/// Level cruise at `speed` along `x` with hover thrust.
pub fn cruise(speed: f64) -> (StateVec, InputVec) {
    let mut x = StateVec::zeros();
    x[2] = speed;
    (x, InputVec::new(0.0, 0.0, 0.0, M * G))
}

type TimeVec = OdeVector<f64, 9>;

/// Time-domain model with inputs interpolated linearly over `[t0, t1]`.
struct Segment {
    t0: f64,
    t1: f64,
    u0: InputVec,
    u1: InputVec,
    params: VehicleParams,
}

impl System<f64, TimeVec> for Segment {
    fn system(&self, t: f64, y: &TimeVec, dy: &mut TimeVec) {
        let a = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        let u = self.u0 + (self.u1 - self.u0) * a;
        let x = TimeState {
            p: Vector3::new(y[0], y[1], y[2]),
            v: Vector3::new(y[3], y[4], y[5]),
            phi: Vector3::new(y[6], y[7], y[8]),
        };
        let f = time_domain_field(&x, &InputU::from_vector(&u), &self.params).expect("time-domain field");
        for i in 0..3 {
            dy[i] = f.p[i];
            dy[3 + i] = f.v[i];
            dy[6 + i] = f.phi[i];
        }
    }
}

fn input(r: &TimeRow) -> InputVec {
    InputVec::new(r.p, r.q, r.r, r.f)
}

/// Integrates the time-domain model from the first exported row with the
/// exported inputs interpolated linearly between samples and returns the
/// largest position error against the exported positions.
pub fn resimulation_error(rows: &[TimeRow], params: VehicleParams) -> f64 {
    let first = &rows[0];
    let mut y = TimeVec::from_column_slice(&[
        first.px, first.py, first.pz, first.v1, first.v2, first.v3, first.phi, first.theta, first.psi,
    ]);
    let mut worst: f64 = 0.0;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let seg = Segment { t0: a.t, t1: b.t, u0: input(a), u1: input(b), params };
        let mut solver = Dopri5::new(seg, a.t, b.t, b.t - a.t, y, 1e-11, 1e-13);
        solver.integrate().expect("adaptive integration");
        y = *solver.y_out().last().unwrap();
        let err = (Vector3::new(y[0], y[1], y[2]) - Vector3::new(b.px, b.py, b.pz)).norm();
        worst = worst.max(err);
    }
    worst
}
