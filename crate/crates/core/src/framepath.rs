//! Arc-length parameterized frame paths.
//!
//! A [`FramePath`] is a purely geometric reference curve. It carries the
//! Serret-Frenet frame along the curve and provides the change of
//! coordinates between inertial positions and transverse coordinates
//! `(s, w1, w2)`.
//!
//! Paths are sampled on "stations" spaced `ds / 2` apart so that both the grid
//! nodes (`s = i * ds`) and the interval midpoints used by RK4 are available
//! without interpolation. Queries at arbitrary `s` integrate the Frenet
//! equations locally from the nearest station below `s`, which keeps
//! positions, frames and curvature mutually consistent to quadrature
//! precision.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default grid step along the arc length, in meters.
pub const DEFAULT_DS: f64 = 1e-3;

const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// Tolerance on the tangential component of a point relative to its
/// projection.
pub const PROJECTION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("initial tangent is not orthogonal to the binormal (|t0 . b| = {0:e})")]
    NonOrthogonalFrame(f64),
    #[error("vector `{name}` must have unit length (norm = {norm})")]
    NotUnit { name: &'static str, norm: f64 },
    #[error("curvature profile covers [0, {covered}] m but the path needs [0, {needed}] m")]
    ProfileTooShort { covered: f64, needed: f64 },
    #[error("invalid curvature profile: {0}")]
    InvalidProfile(String),
    #[error("invalid path parameter: {0}")]
    InvalidParameter(String),
    #[error("arc length {s} m outside the path domain [0, {length}] m")]
    OutOfDomain { s: f64, length: f64 },
    #[error("ambiguous projection: minima at s = {s1} m and s = {s2} m are equidistant ({distance} m)")]
    AmbiguousProjection { s1: f64, s2: f64, distance: f64 },
    #[error("point is {distance} m from the path, beyond the capture radius {radius} m")]
    OutsideTube { distance: f64, radius: f64 },
    #[error("point is not orthogonal to the path at s = {s} m (tangential offset {offset:e} m)")]
    NotProjected { s: f64, offset: f64 },
    #[error("path comes back within {distance} m of itself between s = {s1} m and s = {s2} m")]
    SelfIntersecting { s1: f64, s2: f64, distance: f64 },
    #[error("failed to read curvature csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("failed to read curvature csv: {0}")]
    Io(#[from] std::io::Error),
}

/// Closed-form curvature shapes.
///
/// The two bump shapes are differences of smooth steps normalized so that
/// their peak equals `gain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurvatureShape {
    Constant { value: f64 },
    /// `gain * (tanh(slope (s - start)) - tanh(slope (s - end))) / max(...)`
    TanhDifference { gain: f64, slope: f64, start: f64, end: f64 },
    /// Same as `TanhDifference` with logistic steps `1 / (1 + exp(-slope x))`.
    SigmoidDifference { gain: f64, slope: f64, start: f64, end: f64 },
}

impl CurvatureShape {
    fn raw(&self, s: f64) -> f64 {
        match *self {
            CurvatureShape::Constant { value } => value,
            CurvatureShape::TanhDifference { slope, start, end, .. } => {
                (slope * (s - start)).tanh() - (slope * (s - end)).tanh()
            }
            CurvatureShape::SigmoidDifference { slope, start, end, .. } => {
                logistic(slope * (s - start)) - logistic(slope * (s - end))
            }
        }
    }

    fn validate(&self) -> Result<(), PathError> {
        let bad = |msg: &str| Err(PathError::InvalidProfile(msg.to_string()));
        match *self {
            CurvatureShape::Constant { value } if !value.is_finite() => bad("non-finite curvature"),
            CurvatureShape::TanhDifference { gain, slope, start, end }
            | CurvatureShape::SigmoidDifference { gain, slope, start, end } => {
                if ![gain, slope, start, end].iter().all(|v| v.is_finite()) {
                    bad("non-finite bump parameter")
                } else if slope <= 0.0 {
                    bad("bump slope must be positive")
                } else if end <= start {
                    bad("bump end must come after its start")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Curvature (or torsion) as a function of arc length.
#[derive(Debug, Clone, PartialEq)]
pub enum CurvatureProfile {
    ClosedForm { shape: CurvatureShape, scale: f64 },
    /// Samples `values[i] = k(i * ds)`, linearly interpolated.
    Sampled { ds: f64, values: Vec<f64> },
}

impl CurvatureProfile {
    pub fn closed_form(shape: CurvatureShape) -> Result<Self, PathError> {
        shape.validate()?;
        let scale = match shape {
            CurvatureShape::Constant { .. } => 1.0,
            CurvatureShape::TanhDifference { gain, start, end, .. }
            | CurvatureShape::SigmoidDifference { gain, start, end, .. } => {
                // Differences of equal-slope odd-symmetric steps peak halfway.
                gain / shape.raw(0.5 * (start + end))
            }
        };
        Ok(CurvatureProfile::ClosedForm { shape, scale })
    }

    pub fn zero() -> Self {
        CurvatureProfile::ClosedForm { shape: CurvatureShape::Constant { value: 0.0 }, scale: 1.0 }
    }

    pub fn constant(value: f64) -> Self {
        CurvatureProfile::ClosedForm { shape: CurvatureShape::Constant { value }, scale: 1.0 }
    }

    pub fn sampled(ds: f64, values: Vec<f64>) -> Result<Self, PathError> {
        if !(ds > 0.0 && ds.is_finite()) {
            return Err(PathError::InvalidProfile(format!("sample spacing {ds} must be positive")));
        }
        if values.len() < 2 {
            return Err(PathError::InvalidProfile("need at least two samples".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(PathError::InvalidProfile(format!("non-finite sample at index {i}")));
        }
        Ok(CurvatureProfile::Sampled { ds, values })
    }

    /// Loads `(s, k)` samples from a CSV file with a header row.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, PathError> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut s = Vec::new();
        let mut k = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |idx: usize| -> Result<f64, PathError> {
                record
                    .get(idx)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| PathError::InvalidProfile(format!("bad value in row {:?}", record)))
            };
            s.push(parse(0)?);
            k.push(parse(1)?);
        }
        if s.len() < 2 {
            return Err(PathError::InvalidProfile("need at least two samples".into()));
        }
        if s[0].abs() > 1e-12 {
            return Err(PathError::InvalidProfile(format!("samples must start at s = 0, got {}", s[0])));
        }
        let ds = s[1] - s[0];
        for (i, w) in s.windows(2).enumerate() {
            if ((w[1] - w[0]) - ds).abs() > 1e-9 * ds.max(1.0) {
                return Err(PathError::InvalidProfile(format!("non-uniform spacing at row {}", i + 1)));
            }
        }
        Self::sampled(ds, k)
    }

    /// Upper end of the domain where the profile is defined.
    pub fn domain_end(&self) -> f64 {
        match self {
            CurvatureProfile::ClosedForm { .. } => f64::INFINITY,
            CurvatureProfile::Sampled { ds, values } => ds * (values.len() - 1) as f64,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            CurvatureProfile::ClosedForm { shape, scale } => scale * shape.raw(s),
            CurvatureProfile::Sampled { ds, values } => {
                let x = (s / ds).max(0.0);
                let i = (x.floor() as usize).min(values.len() - 2);
                let frac = x - i as f64;
                values[i] + (values[i + 1] - values[i]) * frac
            }
        }
    }

    /// Checks grid spacing and continuity of a sampled profile.
    ///
    /// Closed forms are checked by sampling them on the requested grid.
    pub fn validate(&self, ds: f64, lipschitz: f64, length: f64) -> Result<(), PathError> {
        if let CurvatureProfile::Sampled { ds: own, .. } = self {
            if (own - ds).abs() > 1e-9 * ds {
                return Err(PathError::InvalidProfile(format!(
                    "sample spacing {own} differs from the path grid step {ds}"
                )));
            }
        }
        if self.domain_end() < length - 1e-9 {
            return Err(PathError::ProfileTooShort { covered: self.domain_end(), needed: length });
        }
        let n = (length / ds).round() as usize;
        let mut prev = self.eval(0.0);
        for i in 1..=n {
            let s = i as f64 * ds;
            let k = self.eval(s);
            if !k.is_finite() {
                return Err(PathError::InvalidProfile(format!("non-finite curvature at s = {s}")));
            }
            if (k - prev).abs() > lipschitz * ds {
                return Err(PathError::InvalidProfile(format!(
                    "curvature jumps by {} between s = {} and s = {s}",
                    (k - prev).abs(),
                    s - ds
                )));
            }
            prev = k;
        }
        Ok(())
    }

    /// Integral of the profile over `[a, b]`, exact for sampled profiles when
    /// `[a, b]` lies inside one sample interval.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        gauss_legendre(a, b, |s| self.eval(s))
    }
}

fn gauss_legendre(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if b == a {
        return 0.0;
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn gauss_legendre_vec(a: f64, b: f64, mut f: impl FnMut(f64) -> Vector3<f64>) -> Vector3<f64> {
    if b == a {
        return Vector3::zeros();
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = Vector3::zeros();
    for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
        acc += *w * f(mid + half * x);
    }
    acc * half
}

/// Serret-Frenet frame at one arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetFrame {
    pub t: Vector3<f64>,
    pub n: Vector3<f64>,
    pub b: Vector3<f64>,
    /// Signed curvature, 1/m.
    pub k: f64,
    /// Torsion, 1/m.
    pub tau: f64,
}

impl FrenetFrame {
    /// `[t n b]`, mapping Frenet components to inertial components.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.t, self.n, self.b])
    }

    fn from_rotation(r: &Matrix3<f64>, k: f64, tau: f64) -> Self {
        FrenetFrame { t: r.column(0).into(), n: r.column(1).into(), b: r.column(2).into(), k, tau }
    }

    /// Largest deviation from a right-handed orthonormal triad.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
        let hand = (self.t.cross(&self.n) - self.b).abs().max();
        gram.max(hand)
    }
}

/// Frenet generator `[[0,-k,0],[k,0,-tau],[0,tau,0]]`.
pub fn frenet_generator(k: f64, tau: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -k, 0.0, k, 0.0, -tau, 0.0, tau, 0.0)
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let t = r.column(0).normalize();
    let n_raw: Vector3<f64> = r.column(1).into();
    let n = (n_raw - t * t.dot(&n_raw)).normalize();
    let b = t.cross(&n);
    Matrix3::from_columns(&[t, n, b])
}

#[derive(Debug, Clone)]
enum PathKind {
    /// Curve in the plane orthogonal to a fixed binormal; `n = b x t` with
    /// signed curvature.
    Planar {
        binormal: Vector3<f64>,
        t0: Vector3<f64>,
        n0: Vector3<f64>,
        curvature: CurvatureProfile,
        headings: Vec<f64>,
    },
    Spatial { curvature: CurvatureProfile, torsion: CurvatureProfile },
}

/// Arc-length parameterized curve with Frenet frames.
#[derive(Debug, Clone)]
pub struct FramePath {
    ds: f64,
    n_steps: usize,
    kind: PathKind,
    points: Vec<Vector3<f64>>,
    frames: Vec<FrenetFrame>,
    max_curvature: f64,
}

fn check_unit(name: &'static str, v: &Vector3<f64>) -> Result<(), PathError> {
    let norm = v.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(PathError::NotUnit { name, norm });
    }
    Ok(())
}

fn grid_steps(length: f64, ds: f64) -> Result<usize, PathError> {
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(PathError::InvalidParameter(format!("grid step ds = {ds} must be positive")));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(PathError::InvalidParameter(format!("length L = {length} must be positive")));
    }
    let n = (length / ds).round();
    if (n * ds - length).abs() > 1e-9 * length.max(1.0) || n < 2.0 {
        return Err(PathError::InvalidParameter(format!(
            "length {length} m is not a multiple (>= 2) of the grid step {ds} m"
        )));
    }
    Ok(n as usize)
}

/// Builds a planar path whose tangent turns about a fixed `binormal` at the
/// rate given by the signed curvature profile.
pub fn build_planar_path(
    profile: &CurvatureProfile,
    binormal: Vector3<f64>,
    p0: Vector3<f64>,
    t0: Vector3<f64>,
    length: f64,
    ds: f64,
) -> Result<FramePath, PathError> {
    check_unit("binormal", &binormal)?;
    check_unit("t0", &t0)?;
    let dot = t0.dot(&binormal).abs();
    if dot > 1e-9 {
        return Err(PathError::NonOrthogonalFrame(dot));
    }
    let n_steps = grid_steps(length, ds)?;
    if profile.domain_end() < length - 1e-9 {
        return Err(PathError::ProfileTooShort { covered: profile.domain_end(), needed: length });
    }
    let n0 = binormal.cross(&t0);
    let h = 0.5 * ds;
    let stations = 2 * n_steps + 1;

    let mut headings = Vec::with_capacity(stations);
    let mut points = Vec::with_capacity(stations);
    headings.push(0.0);
    points.push(p0);
    for j in 0..stations - 1 {
        let a = j as f64 * h;
        let b = (j + 1) as f64 * h;
        let theta_a = headings[j];
        let dp = gauss_legendre_vec(a, b, |sigma| {
            let th = theta_a + profile.integrate(a, sigma);
            t0 * th.cos() + n0 * th.sin()
        });
        points.push(points[j] + dp);
        headings.push(theta_a + profile.integrate(a, b));
    }

    let frames: Vec<FrenetFrame> = headings
        .iter()
        .enumerate()
        .map(|(j, th)| planar_frame(&binormal, &t0, &n0, *th, profile.eval(j as f64 * h)))
        .collect();
    let max_curvature = frames.iter().map(|f| f.k.abs()).fold(0.0, f64::max);

    Ok(FramePath {
        ds,
        n_steps,
        kind: PathKind::Planar { binormal, t0, n0, curvature: profile.clone(), headings },
        points,
        frames,
        max_curvature,
    })
}

fn planar_frame(binormal: &Vector3<f64>, t0: &Vector3<f64>, n0: &Vector3<f64>, heading: f64, k: f64) -> FrenetFrame {
    let t = t0 * heading.cos() + n0 * heading.sin();
    let n = binormal.cross(&t);
    FrenetFrame { t, n, b: *binormal, k, tau: 0.0 }
}

/// Builds a general 3D path by integrating the Frenet equations with RK4.
pub fn build_spatial_path(
    curvature: &CurvatureProfile,
    torsion: &CurvatureProfile,
    p0: Vector3<f64>,
    t0: Vector3<f64>,
    n0: Vector3<f64>,
    length: f64,
    ds: f64,
) -> Result<FramePath, PathError> {
    check_unit("t0", &t0)?;
    check_unit("n0", &n0)?;
    let dot = t0.dot(&n0).abs();
    if dot > 1e-9 {
        return Err(PathError::NonOrthogonalFrame(dot));
    }
    let n_steps = grid_steps(length, ds)?;
    for profile in [curvature, torsion] {
        if profile.domain_end() < length - 1e-9 {
            return Err(PathError::ProfileTooShort { covered: profile.domain_end(), needed: length });
        }
    }
    let h = 0.5 * ds;
    let stations = 2 * n_steps + 1;
    let mut points = Vec::with_capacity(stations);
    let mut rotations = Vec::with_capacity(stations);
    points.push(p0);
    rotations.push(Matrix3::from_columns(&[t0, n0, t0.cross(&n0)]));
    for j in 0..stations - 1 {
        let (p, r) = frenet_rk4(curvature, torsion, j as f64 * h, &points[j], &rotations[j], h);
        points.push(p);
        rotations.push(r);
    }
    let frames: Vec<FrenetFrame> = rotations
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let s = j as f64 * h;
            FrenetFrame::from_rotation(r, curvature.eval(s), torsion.eval(s))
        })
        .collect();
    let max_curvature = frames.iter().map(|f| f.k.abs()).fold(0.0, f64::max);
    Ok(FramePath {
        ds,
        n_steps,
        kind: PathKind::Spatial { curvature: curvature.clone(), torsion: torsion.clone() },
        points,
        frames,
        max_curvature,
    })
}

fn frenet_rk4(
    curvature: &CurvatureProfile,
    torsion: &CurvatureProfile,
    s: f64,
    p: &Vector3<f64>,
    r: &Matrix3<f64>,
    h: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let field = |sigma: f64, r: &Matrix3<f64>| -> (Vector3<f64>, Matrix3<f64>) {
        let omega = frenet_generator(curvature.eval(sigma), torsion.eval(sigma));
        (r.column(0).into(), r * omega)
    };
    let (dp1, dr1) = field(s, r);
    let (dp2, dr2) = field(s + 0.5 * h, &(r + dr1 * (0.5 * h)));
    let (dp3, dr3) = field(s + 0.5 * h, &(r + dr2 * (0.5 * h)));
    let (dp4, dr4) = field(s + h, &(r + dr3 * h));
    let p_next = p + (dp1 + dp2 * 2.0 + dp3 * 2.0 + dp4) * (h / 6.0);
    let r_next = r + (dr1 + dr2 * 2.0 + dr3 * 2.0 + dr4) * (h / 6.0);
    (p_next, orthonormalize(&r_next))
}

impl FramePath {
    pub fn ds(&self) -> f64 {
        self.ds
    }

    /// Number of grid intervals; the grid has `n_steps + 1` nodes.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn length(&self) -> f64 {
        self.n_steps as f64 * self.ds
    }

    pub fn max_curvature(&self) -> f64 {
        self.max_curvature
    }

    /// Radius within which the closest-point projection is unique.
    pub fn capture_radius(&self) -> f64 {
        if self.max_curvature > 0.0 {
            1.0 / self.max_curvature
        } else {
            f64::INFINITY
        }
    }

    pub fn is_planar(&self) -> bool {
        matches!(self.kind, PathKind::Planar { .. })
    }

    /// Arc length of grid node `i`.
    pub fn node_s(&self, i: usize) -> f64 {
        i as f64 * self.ds
    }

    pub fn node_point(&self, i: usize) -> &Vector3<f64> {
        &self.points[2 * i]
    }

    pub fn node_frame(&self, i: usize) -> &FrenetFrame {
        &self.frames[2 * i]
    }

    /// Frame at half-step station `j` (`s = j * ds / 2`): even stations are
    /// grid nodes, odd stations interval midpoints.
    pub fn station_frame(&self, j: usize) -> &FrenetFrame {
        &self.frames[j]
    }

    pub fn station_point(&self, j: usize) -> &Vector3<f64> {
        &self.points[j]
    }

    pub fn station_count(&self) -> usize {
        self.frames.len()
    }

    fn check_domain(&self, s: f64) -> Result<f64, PathError> {
        let length = self.length();
        let slack = 1e-9 * length.max(1.0);
        if !(s >= -slack && s <= length + slack) {
            return Err(PathError::OutOfDomain { s, length });
        }
        Ok(s.clamp(0.0, length))
    }

    /// Point and frame at arbitrary `s`.
    pub fn evaluate(&self, s: f64) -> Result<(Vector3<f64>, FrenetFrame), PathError> {
        let s = self.check_domain(s)?;
        let h = 0.5 * self.ds;
        let j = ((s / h).floor() as usize).min(self.frames.len() - 2);
        let sj = j as f64 * h;
        if s == sj {
            return Ok((self.points[j], self.frames[j]));
        }
        match &self.kind {
            PathKind::Planar { binormal, t0, n0, curvature, headings } => {
                let theta_j = headings[j];
                let heading = theta_j + curvature.integrate(sj, s);
                let dp = gauss_legendre_vec(sj, s, |sigma| {
                    let th = theta_j + curvature.integrate(sj, sigma);
                    t0 * th.cos() + n0 * th.sin()
                });
                let frame = planar_frame(binormal, t0, n0, heading, curvature.eval(s));
                Ok((self.points[j] + dp, frame))
            }
            PathKind::Spatial { curvature, torsion } => {
                let (p, r) = frenet_rk4(curvature, torsion, sj, &self.points[j], &self.frames[j].rotation(), s - sj);
                Ok((p, FrenetFrame::from_rotation(&r, curvature.eval(s), torsion.eval(s))))
            }
        }
    }

    /// Frenet frame at arbitrary `s`, orthonormal by construction.
    pub fn frenet_at(&self, s: f64) -> Result<FrenetFrame, PathError> {
        self.evaluate(s).map(|(_, f)| f)
    }

    pub fn point_at(&self, s: f64) -> Result<Vector3<f64>, PathError> {
        self.evaluate(s).map(|(p, _)| p)
    }

    /// Arc length of the closest path point to `p`, using the path's own
    /// capture radius.
    pub fn project_point(&self, p: &Vector3<f64>, s_hint: Option<f64>) -> Result<f64, PathError> {
        self.project_point_within(p, s_hint, self.capture_radius())
    }

    /// Closest-point projection with an explicit capture radius.
    ///
    /// With a hint, only a window of arc length around it is searched.
    pub fn project_point_within(
        &self,
        p: &Vector3<f64>,
        s_hint: Option<f64>,
        capture_radius: f64,
    ) -> Result<f64, PathError> {
        let n = self.n_steps;
        let (lo, hi) = match s_hint {
            Some(hint) => {
                let hint = self.check_domain(hint)?;
                let window = (0.5 * capture_radius.min(1.0)).max(50.0 * self.ds);
                let lo = ((hint - window) / self.ds).floor().max(0.0) as usize;
                let hi = (((hint + window) / self.ds).ceil() as usize).min(n);
                (lo, hi)
            }
            None => (0, n),
        };

        let dist2: Vec<f64> = (lo..=hi).map(|i| (p - self.node_point(i)).norm_squared()).collect();
        let mut minima: Vec<(usize, f64)> = Vec::new();
        for (idx, &d) in dist2.iter().enumerate() {
            let left = if idx == 0 { f64::INFINITY } else { dist2[idx - 1] };
            let right = if idx + 1 == dist2.len() { f64::INFINITY } else { dist2[idx + 1] };
            if d <= left && d < right || d < left && d <= right {
                minima.push((lo + idx, d));
            }
        }
        let &(best_i, best_d2) = minima
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty search range has a minimum");
        let best_d = best_d2.sqrt();
        for &(i, d2) in &minima {
            if i.abs_diff(best_i) > 4 && (d2.sqrt() - best_d).abs() < 1e-9 {
                return Err(PathError::AmbiguousProjection {
                    s1: self.node_s(best_i.min(i)),
                    s2: self.node_s(best_i.max(i)),
                    distance: best_d,
                });
            }
        }
        if best_d >= capture_radius {
            return Err(PathError::OutsideTube { distance: best_d, radius: capture_radius });
        }
        self.refine_projection(p, best_i)
    }

    /// Solves `t(s) . (p - p_f(s)) = 0` near node `i` by safeguarded Newton.
    fn refine_projection(&self, p: &Vector3<f64>, i: usize) -> Result<f64, PathError> {
        let length = self.length();
        let mut a = self.node_s(i.saturating_sub(1));
        let mut b = self.node_s((i + 1).min(self.n_steps));
        let g = |s: f64| -> Result<(f64, f64), PathError> {
            let (pf, fr) = self.evaluate(s)?;
            let d = p - pf;
            Ok((fr.t.dot(&d), -(1.0 - fr.k * fr.n.dot(&d))))
        };
        let (ga, _) = g(a)?;
        let (gb, _) = g(b)?;
        if ga <= 0.0 && a == 0.0 {
            return Ok(0.0);
        }
        if gb >= 0.0 && b == length {
            return Ok(length);
        }
        if ga.signum() == gb.signum() {
            // Bracket missed the root: widen once, then fall back to the node.
            a = (a - self.ds).max(0.0);
            b = (b + self.ds).min(length);
        }
        let mut s = self.node_s(i);
        for _ in 0..60 {
            let (gs, dgs) = g(s)?;
            if gs == 0.0 {
                break;
            }
            if gs > 0.0 {
                a = s;
            } else {
                b = s;
            }
            let mut next = if dgs < 0.0 { s - gs / dgs } else { 0.5 * (a + b) };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - s).abs() <= 1e-15 * (1.0 + s.abs()) {
                s = next;
                break;
            }
            s = next;
        }
        Ok(s)
    }

    /// Normal and binormal components of `p - p_f(s_f)`.
    pub fn transverse_coords(&self, s_f: f64, p: &Vector3<f64>) -> Result<(f64, f64), PathError> {
        let (pf, fr) = self.evaluate(s_f)?;
        let d = p - pf;
        let offset = fr.t.dot(&d);
        if offset.abs() > PROJECTION_TOLERANCE {
            return Err(PathError::NotProjected { s: s_f, offset });
        }
        Ok((fr.n.dot(&d), fr.b.dot(&d)))
    }

    /// `p_f(s) + R_SF(s) [0, w1, w2]`.
    pub fn reconstruct_position(&self, s: f64, w1: f64, w2: f64) -> Result<Vector3<f64>, PathError> {
        let (pf, fr) = self.evaluate(s)?;
        Ok(pf + fr.n * w1 + fr.b * w2)
    }

    /// Largest central-difference residual of `R' = R * generator(k, tau)`
    /// over the interior stations.
    pub fn frenet_residual(&self) -> f64 {
        let h = 0.5 * self.ds;
        (1..self.frames.len() - 1)
            .map(|j| {
                let fd = (self.frames[j + 1].rotation() - self.frames[j - 1].rotation()) / (2.0 * h);
                let f = &self.frames[j];
                (fd - f.rotation() * frenet_generator(f.k, f.tau)).abs().max()
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation of `|p'|` from one, by central differences.
    pub fn arc_length_error(&self) -> f64 {
        let h = 0.5 * self.ds;
        (1..self.points.len() - 1)
            .map(|j| ((self.points[j + 1] - self.points[j - 1]).norm() / (2.0 * h) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Fails if two nodes more than `2 radius` apart in arc length come
    /// within `radius` of each other in space.
    pub fn check_self_intersection(&self, radius: f64) -> Result<(), PathError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(PathError::InvalidParameter(format!("radius {radius} must be positive")));
        }
        let cell = |p: &Vector3<f64>| -> (i64, i64, i64) {
            ((p.x / radius).floor() as i64, (p.y / radius).floor() as i64, (p.z / radius).floor() as i64)
        };
        let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for i in 0..=self.n_steps {
            buckets.entry(cell(self.node_point(i))).or_default().push(i);
        }
        let window = 2.0 * radius;
        for i in 0..=self.n_steps {
            let p = self.node_point(i);
            let (cx, cy, cz) = cell(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(members) = buckets.get(&(cx + dx, cy + dy, cz + dz)) else { continue };
                        for &j in members {
                            if j <= i || self.node_s(j) - self.node_s(i) <= window {
                                continue;
                            }
                            let d = (self.node_point(j) - p).norm();
                            if d < radius {
                                return Err(PathError::SelfIntersecting {
                                    s1: self.node_s(i),
                                    s2: self.node_s(j),
                                    distance: d,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
