//! Arc length to time, `t(s) = int_0^s (1 - k w1) / (t . v) ds`, and
//! resampling of a solution on a uniform time grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{dilation, NU, NX};
use crate::framepath::FramePath;
use crate::pronto::Curve;

/// Default time step of exported time-domain trajectories, s.
pub const DEFAULT_DT: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum TimeMapError {
    #[error("time density is not positive at s = {s}: {reason}")]
    NonPositive { s: f64, reason: String },
    #[error("curve has {got} nodes, the path {expected}")]
    Grid { got: usize, expected: usize },
    #[error("time step {0} must be positive")]
    Step(f64),
}

/// Node-wise samples `(s_k, t_k)`; strictly increasing, `t_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMap {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

impl TimeMap {
    /// Maneuver time `T = t(L)`.
    pub fn total(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Index `k` with `t_k <= t < t_{k+1}`, clamped to the last interval.
    pub fn interval_at_time(&self, t: f64) -> usize {
        self.t.partition_point(|tk| *tk <= t).clamp(1, self.t.len() - 1) - 1
    }
}

/// Trapezoidal quadrature of the time density over the path grid.
pub fn build_time_map(curve: &Curve<NX, NU>, path: &FramePath) -> Result<TimeMap, TimeMapError> {
    let n = path.n_steps();
    if curve.x.len() != n + 1 {
        return Err(TimeMapError::Grid { got: curve.x.len(), expected: n + 1 });
    }
    let ds = path.ds();
    let density = (0..=n)
        .map(|k| {
            dilation(&curve.x[k], path.node_frame(k))
                .map_err(|e| TimeMapError::NonPositive { s: path.node_s(k), reason: e.to_string() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    for k in 0..n {
        t.push(t[k] + 0.5 * ds * (density[k] + density[k + 1]));
    }
    Ok(TimeMap { s: (0..=n).map(|k| path.node_s(k)).collect(), t })
}

/// One row of an exported trajectory. Inputs are held over the interval that
/// starts at the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub t: f64,
    pub w1: f64,
    pub w2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl Sample {
    pub fn velocity(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.v1, self.v2, self.v3)
    }

    pub fn position(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.px, self.py, self.pz)
    }

    pub fn angles(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.phi, self.theta, self.psi)
    }

    pub fn rates(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.p, self.q, self.r)
    }

    fn lerp(&self, other: &Sample, a: f64) -> Sample {
        let mix = |x: f64, y: f64| x + (y - x) * a;
        Sample {
            s: mix(self.s, other.s),
            t: mix(self.t, other.t),
            w1: mix(self.w1, other.w1),
            w2: mix(self.w2, other.w2),
            v1: mix(self.v1, other.v1),
            v2: mix(self.v2, other.v2),
            v3: mix(self.v3, other.v3),
            phi: mix(self.phi, other.phi),
            theta: mix(self.theta, other.theta),
            psi: mix(self.psi, other.psi),
            px: mix(self.px, other.px),
            py: mix(self.py, other.py),
            pz: mix(self.pz, other.pz),
            ..*self
        }
    }
}

/// Node-wise samples on the arc-length grid. The last node repeats the last
/// input.
pub fn arc_samples(curve: &Curve<NX, NU>, tmap: &TimeMap, path: &FramePath) -> Vec<Sample> {
    let n = path.n_steps();
    (0..=n)
        .map(|k| {
            let x = &curve.x[k];
            let u = &curve.u[k.min(n - 1)];
            let f = path.node_frame(k);
            let pos = path.node_point(k) + f.n * x[0] + f.b * x[1];
            Sample {
                s: tmap.s[k],
                t: tmap.t[k],
                w1: x[0],
                w2: x[1],
                v1: x[2],
                v2: x[3],
                v3: x[4],
                phi: x[5],
                theta: x[6],
                psi: x[7],
                p: u[0],
                q: u[1],
                r: u[2],
                f: u[3],
                px: pos.x,
                py: pos.y,
                pz: pos.z,
            }
        })
        .collect()
}

/// Resamples node-wise samples at `t_j = j dt`, ending exactly at `T`.
/// States, positions and `s` are interpolated linearly in time; inputs are
/// those of the interval containing `t_j`.
pub fn to_time_domain(samples: &[Sample], dt: f64) -> Result<Vec<Sample>, TimeMapError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TimeMapError::Step(dt));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let tmap = TimeMap { s: samples.iter().map(|s| s.s).collect(), t: times };
    let total = tmap.total();
    let steps = (total / dt).floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    let at = |t: f64| {
        let k = tmap.interval_at_time(t);
        let (a, b) = (&samples[k], &samples[k + 1]);
        let frac = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        Sample { t, ..a.lerp(b, frac) }
    };
    for j in 0..=steps {
        out.push(at(j as f64 * dt));
    }
    if total - steps as f64 * dt > 1e-9 * dt {
        let mut last = samples[samples.len() - 1];
        let prev = &samples[samples.len() - 2];
        (last.p, last.q, last.r, last.f) = (prev.p, prev.q, prev.r, prev.f);
        out.push(last);
    }
    Ok(out)
}
