//! Corridor bounds along the path, obstacle shaping, and the normalized
//! quadratic constraints seen by the solver.
//!
//! Every constraint has the form `sum_i (alpha_i z[j_i] + beta_i)^2 - 1` over
//! at most two entries of the stacked state-input vector
//! `z = [w1, w2, v1, v2, v3, phi, theta, psi, p, q, r, F]`, so it is convex
//! and non-positive exactly on its feasible set.
//!
//! Stage constraint ordering: `[p, q, r, F, phi, theta, psi, corridor...]`,
//! where the corridor contributes one entry for circular sections and two
//! (`w1` then `w2`) for rectangular ones.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{InputVec, StateVec, NX};
use crate::framepath::{FramePath, PathError, PROJECTION_TOLERANCE};

/// Default number of nodes over which obstacle bounds are dilated.
pub const DEFAULT_OBSTACLE_WINDOW: usize = 5;

pub const MAX_STAGE_CONSTRAINTS: usize = 9;

/// Entries of the stage constraint vector that depend on the state only.
pub const FIRST_STATE_CONSTRAINT: usize = 4;

#[derive(Debug, Error)]
pub enum CorridorError {
    #[error("bound profile has {got} samples, expected {expected}")]
    ProfileLength { got: usize, expected: usize },
    #[error("bound `{name}` is not finite at s = {s} m")]
    NonFinite { name: &'static str, s: f64 },
    #[error("corridor closed on s in [{s_start}, {s_end}] m (clearance below {clearance} m)")]
    Infeasible { s_start: f64, s_end: f64, clearance: f64 },
    #[error("obstacle radius must be positive, got {value} m at s = {s} m")]
    NonPositiveRadius { value: f64, s: f64 },
    #[error("bound `{name}` = {value} m at s = {s} m exceeds the projection limit {limit} m")]
    BeyondCaptureRadius { name: &'static str, value: f64, s: f64, limit: f64 },
    #[error("obstacle restriction needs a rectangular section")]
    NotRectangular,
    #[error("invalid bound: {0}")]
    InvalidBound(String),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Bound values sampled on the path grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundProfile {
    pub ds: f64,
    pub values: Vec<f64>,
}

impl BoundProfile {
    pub fn constant(ds: f64, n_steps: usize, value: f64) -> Self {
        BoundProfile { ds, values: vec![value; n_steps + 1] }
    }

    pub fn from_fn(ds: f64, n_steps: usize, f: impl Fn(f64) -> f64) -> Self {
        BoundProfile { ds, values: (0..=n_steps).map(|i| f(i as f64 * ds)).collect() }
    }

    pub fn at_node(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Linear interpolation on the grid, clamped at the ends.
    pub fn eval(&self, s: f64) -> f64 {
        let x = (s / self.ds).max(0.0);
        let last = self.values.len() - 1;
        let i = (x.floor() as usize).min(last.saturating_sub(1));
        let frac = (x - i as f64).min(1.0);
        self.values[i] + (self.values[(i + 1).min(last)] - self.values[i]) * frac
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        BoundProfile { ds: self.ds, values: self.values.iter().map(|v| f(*v)).collect() }
    }

    fn check(&self, name: &'static str, n_steps: usize) -> Result<(), CorridorError> {
        if self.values.len() != n_steps + 1 {
            return Err(CorridorError::ProfileLength { got: self.values.len(), expected: n_steps + 1 });
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(CorridorError::NonFinite { name, s: i as f64 * self.ds });
        }
        Ok(())
    }
}

/// Smooth step from `hi` down to `lo` around `s_mid`, optionally back up to
/// `hi` around `s_back`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidBound {
    pub s_mid: f64,
    pub width: f64,
    pub hi: f64,
    pub lo: f64,
    #[serde(default)]
    pub s_back: Option<f64>,
}

impl SigmoidBound {
    pub fn eval(&self, s: f64) -> f64 {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut drop = sig((s - self.s_mid) / self.width);
        if let Some(back) = self.s_back {
            drop -= sig((s - back) / self.width);
        }
        self.hi - (self.hi - self.lo) * drop
    }

    pub fn validate(&self) -> Result<(), CorridorError> {
        if !(self.hi > self.lo && self.lo > 0.0 && self.width > 0.0) {
            return Err(CorridorError::InvalidBound(format!(
                "sigmoid bound needs hi > lo > 0 and width > 0, got {self:?}"
            )));
        }
        if let Some(back) = self.s_back {
            if back <= self.s_mid {
                return Err(CorridorError::InvalidBound("sigmoid return point must follow its drop".into()));
            }
        }
        Ok(())
    }
}

pub fn sigmoid_bound(s_mid: f64, width: f64, hi: f64, lo: f64, ds: f64, n_steps: usize) -> Result<BoundProfile, CorridorError> {
    let shape = SigmoidBound { s_mid, width, hi, lo, s_back: None };
    shape.validate()?;
    Ok(BoundProfile::from_fn(ds, n_steps, |s| shape.eval(s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum CorridorSpec {
    Circular { r_obs: BoundProfile },
    Rectangular { w1_min: BoundProfile, w1_max: BoundProfile, w2_min: BoundProfile, w2_max: BoundProfile },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    W1Min,
    W1Max,
    W2Min,
    W2Max,
}

impl BoundSide {
    fn is_lower(self) -> bool {
        matches!(self, BoundSide::W1Min | BoundSide::W2Min)
    }
}

impl CorridorSpec {
    pub fn constraint_count(&self) -> usize {
        match self {
            CorridorSpec::Circular { .. } => 1,
            CorridorSpec::Rectangular { .. } => 2,
        }
    }

    /// Checks sampling, positivity and clearance against the path geometry.
    pub fn validate(&self, path: &FramePath, min_clearance: f64) -> Result<(), CorridorError> {
        let n = path.n_steps();
        let limit = 0.95 * path.capture_radius();
        let within = |name: &'static str, p: &BoundProfile| -> Result<(), CorridorError> {
            p.check(name, n)?;
            for (i, v) in p.values.iter().enumerate() {
                if v.abs() > limit {
                    return Err(CorridorError::BeyondCaptureRadius { name, value: *v, s: i as f64 * p.ds, limit });
                }
            }
            Ok(())
        };
        match self {
            CorridorSpec::Circular { r_obs } => {
                within("r_obs", r_obs)?;
                if let Some(i) = r_obs.values.iter().position(|v| *v <= 0.0) {
                    return Err(CorridorError::NonPositiveRadius { value: r_obs.values[i], s: i as f64 * r_obs.ds });
                }
            }
            CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } => {
                within("w1_min", w1_min)?;
                within("w1_max", w1_max)?;
                within("w2_min", w2_min)?;
                within("w2_max", w2_max)?;
                check_gap(w1_min, w1_max, min_clearance)?;
                check_gap(w2_min, w2_max, min_clearance)?;
            }
        }
        Ok(())
    }

    fn profile_mut(&mut self, side: BoundSide) -> Result<&mut BoundProfile, CorridorError> {
        match self {
            CorridorSpec::Circular { .. } => Err(CorridorError::NotRectangular),
            CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } => Ok(match side {
                BoundSide::W1Min => w1_min,
                BoundSide::W1Max => w1_max,
                BoundSide::W2Min => w2_min,
                BoundSide::W2Max => w2_max,
            }),
        }
    }

    /// Whether transverse position `(w1, w2)` at node `i` lies inside.
    pub fn contains(&self, i: usize, w1: f64, w2: f64) -> bool {
        match self {
            CorridorSpec::Circular { r_obs } => w1 * w1 + w2 * w2 <= r_obs.at_node(i).powi(2),
            CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } => {
                (w1_min.at_node(i)..=w1_max.at_node(i)).contains(&w1) && (w2_min.at_node(i)..=w2_max.at_node(i)).contains(&w2)
            }
        }
    }
}

fn check_gap(lo: &BoundProfile, hi: &BoundProfile, clearance: f64) -> Result<(), CorridorError> {
    let closed: Vec<usize> =
        (0..lo.values.len()).filter(|&i| hi.values[i] - lo.values[i] < clearance.max(f64::MIN_POSITIVE)).collect();
    if let (Some(first), Some(last)) = (closed.first(), closed.last()) {
        return Err(CorridorError::Infeasible {
            s_start: *first as f64 * lo.ds,
            s_end: *last as f64 * lo.ds,
            clearance,
        });
    }
    Ok(())
}

/// `(w1^2 + w2^2) / r_obs^2 - 1`.
pub fn eval_circular(w1: f64, w2: f64, r_obs: f64) -> f64 {
    (w1 * w1 + w2 * w2) / (r_obs * r_obs) - 1.0
}

/// `((2 w - (max + min)) / (max - min))^2 - 1`.
pub fn eval_rect(w: f64, w_min: f64, w_max: f64) -> f64 {
    ((2.0 * w - (w_max + w_min)) / (w_max - w_min)).powi(2) - 1.0
}

/// One normalized quadratic constraint over the stacked state-input vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConstraint {
    /// `(index into z, alpha, beta)`; unused slots have `alpha = 0`.
    pub terms: [(usize, f64, f64); 2],
}

impl QuadConstraint {
    pub fn single(index: usize, alpha: f64, beta: f64) -> Self {
        QuadConstraint { terms: [(index, alpha, beta), (index, 0.0, 0.0)] }
    }

    /// Constraint `((2 z - (hi + lo)) / (hi - lo))^2 - 1`.
    pub fn interval(index: usize, lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        Self::single(index, 2.0 / width, -(hi + lo) / width)
    }

    /// Constraint `(z / bound)^2 - 1`.
    pub fn symmetric(index: usize, bound: f64) -> Self {
        Self::single(index, 1.0 / bound, 0.0)
    }

    pub fn disk(i: usize, j: usize, radius: f64) -> Self {
        QuadConstraint { terms: [(i, 1.0 / radius, 0.0), (j, 1.0 / radius, 0.0)] }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|(j, a, b)| if *a == 0.0 { 0.0 } else { (a * z[*j] + b).powi(2) }).sum::<f64>() - 1.0
    }

    /// Nonzero gradient entries `(index, d/dz)`.
    pub fn gradient(&self, z: &[f64]) -> [(usize, f64); 2] {
        self.terms.map(|(j, a, b)| (j, 2.0 * a * (a * z[j] + b)))
    }

    /// Diagonal Hessian entries `(index, d2/dz2)`.
    pub fn hessian(&self) -> [(usize, f64); 2] {
        self.terms.map(|(j, a, _)| (j, 2.0 * a * a))
    }
}

/// Actuator, attitude and corridor limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStateBounds {
    pub p_max: f64,
    pub q_max: f64,
    pub r_max: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub phi_max: BoundProfile,
    pub theta_max: BoundProfile,
    pub psi_max: BoundProfile,
}

impl InputStateBounds {
    pub fn validate(&self, n_steps: usize) -> Result<(), CorridorError> {
        for (name, v) in [("p_max", self.p_max), ("q_max", self.q_max), ("r_max", self.r_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CorridorError::InvalidBound(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.f_min > 0.0 && self.f_max > self.f_min && self.f_max.is_finite()) {
            return Err(CorridorError::InvalidBound(format!(
                "thrust bounds need 0 < F_min < F_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        for (name, p) in [("phi_max", &self.phi_max), ("theta_max", &self.theta_max), ("psi_max", &self.psi_max)] {
            p.check(name, n_steps)?;
            if p.values.iter().any(|v| *v <= 0.0) {
                return Err(CorridorError::InvalidBound(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Stacked stage constraints at one grid node.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintSet {
    items: [QuadConstraint; MAX_STAGE_CONSTRAINTS],
    len: usize,
}

impl ConstraintSet {
    pub fn as_slice(&self) -> &[QuadConstraint] {
        &self.items[..self.len]
    }

    /// Constraints depending on the state only.
    pub fn state_only(&self) -> &[QuadConstraint] {
        &self.items[FIRST_STATE_CONSTRAINT..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Constraint set at grid node `i`.
pub fn stage_constraints(bounds: &InputStateBounds, corridor: &CorridorSpec, i: usize) -> ConstraintSet {
    let placeholder = QuadConstraint::single(0, 0.0, 0.0);
    let mut items = [placeholder; MAX_STAGE_CONSTRAINTS];
    items[0] = QuadConstraint::symmetric(NX, bounds.p_max);
    items[1] = QuadConstraint::symmetric(NX + 1, bounds.q_max);
    items[2] = QuadConstraint::symmetric(NX + 2, bounds.r_max);
    items[3] = QuadConstraint::interval(NX + 3, bounds.f_min, bounds.f_max);
    items[4] = QuadConstraint::symmetric(5, bounds.phi_max.at_node(i));
    items[5] = QuadConstraint::symmetric(6, bounds.theta_max.at_node(i));
    items[6] = QuadConstraint::symmetric(7, bounds.psi_max.at_node(i));
    let len = match corridor {
        CorridorSpec::Circular { r_obs } => {
            items[7] = QuadConstraint::disk(0, 1, r_obs.at_node(i));
            8
        }
        CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } => {
            items[7] = QuadConstraint::interval(0, w1_min.at_node(i), w1_max.at_node(i));
            items[8] = QuadConstraint::interval(1, w2_min.at_node(i), w2_max.at_node(i));
            9
        }
    };
    ConstraintSet { items, len }
}

pub fn stack(x: &StateVec, u: &InputVec) -> [f64; NX + 4] {
    let mut z = [0.0; NX + 4];
    z[..NX].copy_from_slice(x.as_slice());
    z[NX..].copy_from_slice(u.as_slice());
    z
}

/// Stage constraint values at node `i`, every entry `<= 0` iff feasible.
pub fn eval_stage_constraints(
    x: &StateVec,
    u: &InputVec,
    bounds: &InputStateBounds,
    corridor: &CorridorSpec,
    i: usize,
) -> Vec<f64> {
    let z = stack(x, u);
    stage_constraints(bounds, corridor, i).as_slice().iter().map(|c| c.value(&z)).collect()
}

/// Per-state interval at the final arc length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalBox {
    pub lower: [f64; NX],
    pub upper: [f64; NX],
}

impl FinalBox {
    /// Box `center +- tol`.
    pub fn around(center: &StateVec, tol: &[f64; NX]) -> Self {
        let mut lower = [0.0; NX];
        let mut upper = [0.0; NX];
        for i in 0..NX {
            lower[i] = center[i] - tol[i];
            upper[i] = center[i] + tol[i];
        }
        FinalBox { lower, upper }
    }

    pub fn validate(&self) -> Result<(), CorridorError> {
        for i in 0..NX {
            if !(self.upper[i] > self.lower[i]) {
                return Err(CorridorError::InvalidBound(format!(
                    "final box component {i} has min {} >= max {}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> [QuadConstraint; NX] {
        std::array::from_fn(|i| QuadConstraint::interval(i, self.lower[i], self.upper[i]))
    }

    pub fn center(&self) -> StateVec {
        StateVec::from_fn(|i, _| 0.5 * (self.lower[i] + self.upper[i]))
    }
}

pub fn eval_final_constraints(x: &StateVec, fbox: &FinalBox) -> [f64; NX] {
    fbox.constraints().map(|c| c.value(x.as_slice()))
}

/// Arc length and transverse coordinates of an obstacle point.
///
/// Points whose closest path point is an endpoint keep their normal and
/// binormal components; the tangential offset is returned for the caller to
/// screen.
pub fn map_obstacle_point(path: &FramePath, p_obs: &Vector3<f64>) -> Result<(f64, f64, f64, f64), CorridorError> {
    let s = path.project_point(p_obs, None)?;
    let (pf, frame) = path.evaluate(s)?;
    let d = p_obs - pf;
    Ok((s, frame.n.dot(&d), frame.b.dot(&d), frame.t.dot(&d)))
}

/// Tightens one bound of a rectangular corridor against an obstacle cloud.
///
/// Each point writes its transverse coordinate into the nearest grid node;
/// the imposed values are then dilated over `window` nodes (a moving maximum
/// for lower bounds, a moving minimum for upper bounds) and merged with the
/// existing bound. Points beyond the path ends are ignored.
pub fn restrict_bounds(
    corridor: &CorridorSpec,
    obstacle_points: &[Vector3<f64>],
    path: &FramePath,
    side: BoundSide,
    window: usize,
    min_clearance: f64,
) -> Result<CorridorSpec, CorridorError> {
    restrict_bounds_inflated(corridor, obstacle_points, path, side, window, min_clearance, 0.0)
}

/// [`restrict_bounds`] with every obstacle coordinate pushed `inflation`
/// meters further into the corridor.
pub fn restrict_bounds_inflated(
    corridor: &CorridorSpec,
    obstacle_points: &[Vector3<f64>],
    path: &FramePath,
    side: BoundSide,
    window: usize,
    min_clearance: f64,
    inflation: f64,
) -> Result<CorridorSpec, CorridorError> {
    if !(inflation >= 0.0 && inflation.is_finite()) {
        return Err(CorridorError::InvalidBound(format!("obstacle inflation {inflation} must be nonnegative")));
    }
    let mut out = corridor.clone();
    let profile = out.profile_mut(side)?;
    let n = path.n_steps();
    profile.check("restricted bound", n)?;
    if obstacle_points.is_empty() {
        return Ok(out);
    }
    let mapped: Vec<(f64, f64, f64, f64)> =
        obstacle_points.par_iter().map(|p| map_obstacle_point(path, p)).collect::<Result<_, _>>()?;

    let lower = side.is_lower();
    let tighter = |a: f64, b: f64| if lower { a.max(b) } else { a.min(b) };
    let neutral = if lower { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut imposed = vec![neutral; n + 1];
    for (s, w1, w2, tangential) in mapped {
        if tangential.abs() > PROJECTION_TOLERANCE.max(0.5 * path.ds()) {
            continue;
        }
        let node = ((s / path.ds()).round() as usize).min(n);
        let w = match side {
            BoundSide::W1Min | BoundSide::W1Max => w1,
            BoundSide::W2Min | BoundSide::W2Max => w2,
        };
        let w = if lower { w + inflation } else { w - inflation };
        imposed[node] = tighter(imposed[node], w);
    }
    let half = window.max(1) / 2;
    for i in 0..=n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n);
        let dilated = imposed[lo..=hi].iter().copied().fold(neutral, tighter);
        profile.values[i] = tighter(profile.values[i], dilated);
    }
    if let CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } = &out {
        check_gap(w1_min, w1_max, min_clearance)?;
        check_gap(w2_min, w2_max, min_clearance)?;
    }
    Ok(out)
}
