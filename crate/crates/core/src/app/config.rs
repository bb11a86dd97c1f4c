//! Scenario configuration: the JSON schema and construction of the solver
//! objects from it.
//!
//! Relative file references (curvature samples, bound samples, obstacle
//! clouds) are resolved against the directory of the config file. Angles in
//! `bounds`, `init.yaw` and the angle components of `final_box` use
//! `angle_unit`; everything else is SI.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::{restrict_bounds_inflated, BoundProfile, BoundSide, CorridorSpec, FinalBox, InputStateBounds, SigmoidBound};
use crate::cost::{BarrierParams, HessianMode, Schedule};
use crate::dynamics::{StateVec, VehicleParams, NU, NX};
use crate::flatness::{seed_initial_state, InitSpec};
use crate::framepath::{build_planar_path, build_spatial_path, CurvatureProfile, CurvatureShape, FramePath, DEFAULT_DS};
use crate::problem::QuadrotorProblem;
use crate::pronto::{NewtonSettings, RegulatorWeights};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// `field` is a dotted path into the config, e.g. `vehicle.m`.
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::Io { .. } => None,
        }
    }
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

impl AngleUnit {
    pub fn to_rad(self) -> f64 {
        match self {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => std::f64::consts::PI / 180.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub angle_unit: AngleUnit,
    pub frame_path: FramePathConfig,
    pub vehicle: VehicleConfig,
    pub bounds: BoundsConfig,
    pub corridor: CorridorConfig,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub final_box: Option<FinalBoxConfig>,
}

fn default_ds() -> f64 {
    DEFAULT_DS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FramePathConfig {
    /// Curve in the plane orthogonal to `binormal`, with `n = b x t`.
    Planar {
        curvature: CurvatureConfig,
        binormal: [f64; 3],
        #[serde(default)]
        p0: [f64; 3],
        t0: [f64; 3],
        length: f64,
        #[serde(default = "default_ds")]
        ds: f64,
    },
    Spatial {
        curvature: CurvatureConfig,
        torsion: CurvatureConfig,
        #[serde(default)]
        p0: [f64; 3],
        t0: [f64; 3],
        n0: [f64; 3],
        length: f64,
        #[serde(default = "default_ds")]
        ds: f64,
    },
}

impl FramePathConfig {
    pub fn length(&self) -> f64 {
        match self {
            FramePathConfig::Planar { length, .. } | FramePathConfig::Spatial { length, .. } => *length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureConfig {
    Constant { value: f64 },
    TanhDifference { gain: f64, slope: f64, start: f64, end: f64 },
    SigmoidDifference { gain: f64, slope: f64, start: f64, end: f64 },
    /// Two columns `s, value` with a header row, uniform spacing from 0.
    Csv { file: PathBuf },
}

fn default_g() -> f64 {
    9.81
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    /// Mass, kg.
    pub m: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub p_max: f64,
    pub q_max: f64,
    pub r_max: f64,
    /// Thrust, N.
    pub f_min: f64,
    pub f_max: f64,
    pub phi_max: ProfileConfig,
    pub theta_max: ProfileConfig,
    pub psi_max: ProfileConfig,
}

/// A bound profile over the arc-length grid: a bare number or a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileConfig {
    Value(f64),
    Shaped(ProfileShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileShape {
    Constant {
        value: f64,
    },
    /// Smooth drop from `hi` to `lo` around `s_mid` (and back at `s_back`),
    /// negated when `negate` is set so that lower bounds can mirror upper
    /// ones.
    Sigmoid {
        s_mid: f64,
        width: f64,
        hi: f64,
        lo: f64,
        #[serde(default)]
        s_back: Option<f64>,
        #[serde(default)]
        negate: bool,
    },
    /// One value per grid node.
    Samples {
        values: Vec<f64>,
    },
    /// Two columns `s, value` with a header row, interpolated linearly onto
    /// the grid.
    Csv {
        file: PathBuf,
    },
}

fn default_clearance() -> f64 {
    1e-3
}

fn default_window() -> usize {
    crate::corridor::DEFAULT_OBSTACLE_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorridorConfig {
    Circular {
        r_obs: ProfileConfig,
        #[serde(default = "default_clearance")]
        min_clearance: f64,
    },
    Rectangular {
        w1_min: ProfileConfig,
        w1_max: ProfileConfig,
        w2_min: ProfileConfig,
        w2_max: ProfileConfig,
        #[serde(default)]
        obstacles: Vec<ObstacleConfig>,
        /// Moving-extremum window applied to obstacle updates, in nodes.
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_clearance")]
        min_clearance: f64,
    },
}

/// Point cloud file with columns `x, y, z` and a header row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub file: PathBuf,
    pub side: BoundSide,
    /// Vehicle radius plus position-error margin, m.
    #[serde(default)]
    pub inflation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub schedule: Schedule,
    pub initial: BarrierParams,
    pub newton: NewtonConfig,
    pub regulator: RegulatorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub gamma_min: f64,
    pub hessian: HessianMode,
    /// `null` disables the margin cap.
    pub margin_fraction: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let d = NewtonSettings::<NX, NU>::default();
        NewtonConfig {
            tol: d.tol,
            max_iter: d.max_iter,
            armijo: d.armijo,
            backtrack: d.backtrack,
            gamma_min: d.gamma_min,
            hessian: d.mode,
            margin_fraction: d.margin_fraction,
        }
    }
}

/// Diagonal weight: one value for every component or one per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagonal<const N: usize> {
    Uniform(f64),
    #[serde(with = "serde_arrays")]
    PerComponent([f64; N]),
}

impl<const N: usize> Diagonal<N> {
    pub fn values(&self) -> [f64; N] {
        match self {
            Diagonal::Uniform(v) => [*v; N],
            Diagonal::PerComponent(v) => *v,
        }
    }
}

mod serde_arrays {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let len = v.len();
        v.try_into().map_err(|_| serde::de::Error::invalid_length(len, &format!("{N} values").as_str()))
    }
}

/// Weights of the regulator that defines the projection operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegulatorConfig {
    pub q: Diagonal<NX>,
    pub r: Diagonal<NU>,
    pub p_final: Diagonal<NX>,
}

impl Default for RegulatorConfig {
    fn default() -> Self {
        RegulatorConfig { q: Diagonal::Uniform(30.0), r: Diagonal::Uniform(1.0), p_final: Diagonal::Uniform(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalBoxConfig {
    pub tolerance: Diagonal<NX>,
    #[serde(default)]
    pub center: FinalCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FinalCenter {
    Rule(CenterRule),
    #[serde(with = "serde_arrays")]
    Explicit([f64; NX]),
}

impl Default for FinalCenter {
    fn default() -> Self {
        FinalCenter::Rule(CenterRule::InitialTransported)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterRule {
    /// The initial state `x_w0` as is.
    Initial,
    /// `x_w0` with its velocity rotated onto the final tangent, keeping its
    /// tangential speed.
    InitialTransported,
}

/// A validated scenario with every solver object built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub problem: QuadrotorProblem,
    /// Initialization with angles converted to radians.
    pub init: InitSpec,
    pub schedule: Schedule,
    pub initial_params: BarrierParams,
    pub settings: NewtonSettings<NX, NU>,
    /// Initial state `x_w0` of the flatness seed.
    pub initial_state: StateVec,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.config.name
    }
}

/// Reads, parses and builds a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut config = parse_config(&text)?;
    if config.name.is_empty() {
        config.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    config.build(base)
}

/// Parses the JSON text; errors name the offending field.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = strip_position(&inner.to_string());
        // Missing fields are reported at the enclosing object.
        let field = match message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            Some(name) if path == "." => name.to_string(),
            Some(name) => format!("{path}.{name}"),
            None => path,
        };
        invalid(field, message)
    })
}

fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

fn vec3(v: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

fn curvature_profile(config: &CurvatureConfig, base: &Path, field: &str) -> Result<CurvatureProfile, ConfigError> {
    let shape = match *config {
        CurvatureConfig::Constant { value } => CurvatureShape::Constant { value },
        CurvatureConfig::TanhDifference { gain, slope, start, end } => CurvatureShape::TanhDifference { gain, slope, start, end },
        CurvatureConfig::SigmoidDifference { gain, slope, start, end } => {
            CurvatureShape::SigmoidDifference { gain, slope, start, end }
        }
        CurvatureConfig::Csv { ref file } => {
            let file = resolve(base, file);
            return CurvatureProfile::from_csv(&file).map_err(|e| invalid(format!("{field}.file"), format!("{}: {e}", file.display())));
        }
    };
    CurvatureProfile::closed_form(shape).map_err(|e| invalid(field, e))
}

fn read_two_columns(file: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut reader = csv::Reader::from_path(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", file.display()))?;
        let parse = |i: usize| {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| format!("{}: bad value in data row {}", file.display(), row + 1))
        };
        a.push(parse(0)?);
        b.push(parse(1)?);
    }
    Ok((a, b))
}

/// Reads an obstacle point cloud (`x, y, z` columns with a header row).
pub fn read_point_cloud(file: &Path) -> Result<Vec<Vector3<f64>>, String> {
    let mut reader = csv::Reader::from_path(file).map_err(|e| format!("{}: {e}", file.display()))?;
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", file.display()))?;
        let mut p = [0.0; 3];
        for (i, v) in p.iter_mut().enumerate() {
            *v = record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("{}: bad coordinate in data row {}", file.display(), row + 1))?;
        }
        points.push(vec3(&p));
    }
    Ok(points)
}

fn bound_profile(config: &ProfileConfig, scale: f64, path: &FramePath, base: &Path, field: &str) -> Result<BoundProfile, ConfigError> {
    let (ds, n) = (path.ds(), path.n_steps());
    let profile = match config {
        ProfileConfig::Value(value) | ProfileConfig::Shaped(ProfileShape::Constant { value }) => BoundProfile::constant(ds, n, *value),
        ProfileConfig::Shaped(ProfileShape::Sigmoid { s_mid, width, hi, lo, s_back, negate }) => {
            let shape = SigmoidBound { s_mid: *s_mid, width: *width, hi: *hi, lo: *lo, s_back: *s_back };
            shape.validate().map_err(|e| invalid(field, e))?;
            let sign = if *negate { -1.0 } else { 1.0 };
            BoundProfile::from_fn(ds, n, |s| sign * shape.eval(s))
        }
        ProfileConfig::Shaped(ProfileShape::Samples { values }) => {
            if values.len() != n + 1 {
                return Err(invalid(field, format!("expected {} samples (one per grid node), got {}", n + 1, values.len())));
            }
            BoundProfile { ds, values: values.clone() }
        }
        ProfileConfig::Shaped(ProfileShape::Csv { file }) => {
            let file = resolve(base, file);
            let (s, v) = read_two_columns(&file).map_err(|e| invalid(format!("{field}.file"), e))?;
            if s.len() < 2 || s.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(format!("{field}.file"), "need at least two rows with increasing s"));
            }
            let end = path.length();
            if s[0] > 1e-9 || s[s.len() - 1] < end - 1e-9 {
                return Err(invalid(
                    format!("{field}.file"),
                    format!("samples cover [{}, {}] but the path needs [0, {end}]", s[0], s[s.len() - 1]),
                ));
            }
            BoundProfile::from_fn(ds, n, |x| {
                let j = s.partition_point(|si| *si <= x).clamp(1, s.len() - 1);
                let frac = (x - s[j - 1]) / (s[j] - s[j - 1]);
                v[j - 1] + (v[j] - v[j - 1]) * frac
            })
        }
    };
    if let Some(i) = profile.values.iter().position(|v| !v.is_finite()) {
        return Err(invalid(field, format!("non-finite value at s = {}", i as f64 * ds)));
    }
    Ok(profile.map(|v| v * scale))
}

impl ScenarioConfig {
    /// Builds and validates every solver object. File references are
    /// resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<Scenario, ConfigError> {
        let unit = self.angle_unit.to_rad();
        let path = self.build_path(base)?;
        let vehicle = VehicleParams::new(self.vehicle.m, self.vehicle.g).map_err(|e| {
            let field = if !(self.vehicle.m > 0.0 && self.vehicle.m.is_finite()) { "vehicle.m" } else { "vehicle.g" };
            invalid(field, e)
        })?;

        let b = &self.bounds;
        let bounds = InputStateBounds {
            p_max: b.p_max * unit,
            q_max: b.q_max * unit,
            r_max: b.r_max * unit,
            f_min: b.f_min,
            f_max: b.f_max,
            phi_max: bound_profile(&b.phi_max, unit, &path, base, "bounds.phi_max")?,
            theta_max: bound_profile(&b.theta_max, unit, &path, base, "bounds.theta_max")?,
            psi_max: bound_profile(&b.psi_max, unit, &path, base, "bounds.psi_max")?,
        };
        bounds.validate(path.n_steps()).map_err(|e| invalid("bounds", e))?;

        let (corridor, min_clearance) = self.build_corridor(&path, base)?;

        let init = InitSpec { yaw: self.init.yaw.scaled(unit), ..self.init.clone() };
        init.validate(path.n_steps()).map_err(|e| invalid("init", e))?;

        let s = &self.solver;
        s.schedule.validate().map_err(|e| invalid("solver.schedule", e))?;
        s.initial.validate().map_err(|e| invalid("solver.initial", e))?;
        let (q, r, pf) = (s.regulator.q.values(), s.regulator.r.values(), s.regulator.p_final.values());
        if !(q.iter().chain(&pf).all(|v| *v >= 0.0 && v.is_finite()) && r.iter().all(|v| *v > 0.0 && v.is_finite())) {
            return Err(invalid("solver.regulator", "q and p_final must be nonnegative and r positive"));
        }
        let n = &s.newton;
        let settings = NewtonSettings {
            tol: n.tol,
            max_iter: n.max_iter,
            armijo: n.armijo,
            backtrack: n.backtrack,
            gamma_min: n.gamma_min,
            mode: n.hessian,
            weights: RegulatorWeights::diagonal(q, r, pf),
            margin_fraction: n.margin_fraction,
        };
        settings.validate().map_err(|e| invalid("solver.newton", e))?;

        let open = QuadrotorProblem::new(path, vehicle, bounds, corridor, None, min_clearance).map_err(|e| invalid("corridor", e))?;
        let initial_state = seed_initial_state(&open, &init).map_err(|e| invalid("init", e))?;
        let final_box = match &self.final_box {
            None => None,
            Some(fb) => Some(self.build_final_box(fb, &open.path, &initial_state, unit)?),
        };
        let QuadrotorProblem { path, vehicle, bounds, corridor, .. } = open;
        let problem =
            QuadrotorProblem::new(path, vehicle, bounds, corridor, final_box, min_clearance).map_err(|e| invalid("final_box", e))?;

        Ok(Scenario {
            config: self.clone(),
            problem,
            init,
            schedule: s.schedule,
            initial_params: s.initial,
            settings,
            initial_state,
        })
    }

    fn build_path(&self, base: &Path) -> Result<FramePath, ConfigError> {
        let built = match &self.frame_path {
            FramePathConfig::Planar { curvature, binormal, p0, t0, length, ds } => {
                let k = curvature_profile(curvature, base, "frame_path.curvature")?;
                build_planar_path(&k, vec3(binormal), vec3(p0), vec3(t0), *length, *ds)
            }
            FramePathConfig::Spatial { curvature, torsion, p0, t0, n0, length, ds } => {
                let k = curvature_profile(curvature, base, "frame_path.curvature")?;
                let tau = curvature_profile(torsion, base, "frame_path.torsion")?;
                build_spatial_path(&k, &tau, vec3(p0), vec3(t0), vec3(n0), *length, *ds)
            }
        };
        built.map_err(|e| invalid("frame_path", e))
    }

    fn build_corridor(&self, path: &FramePath, base: &Path) -> Result<(CorridorSpec, f64), ConfigError> {
        match &self.corridor {
            CorridorConfig::Circular { r_obs, min_clearance } => {
                let r_obs = bound_profile(r_obs, 1.0, path, base, "corridor.r_obs")?;
                Ok((CorridorSpec::Circular { r_obs }, *min_clearance))
            }
            CorridorConfig::Rectangular { w1_min, w1_max, w2_min, w2_max, obstacles, window, min_clearance } => {
                let mut spec = CorridorSpec::Rectangular {
                    w1_min: bound_profile(w1_min, 1.0, path, base, "corridor.w1_min")?,
                    w1_max: bound_profile(w1_max, 1.0, path, base, "corridor.w1_max")?,
                    w2_min: bound_profile(w2_min, 1.0, path, base, "corridor.w2_min")?,
                    w2_max: bound_profile(w2_max, 1.0, path, base, "corridor.w2_max")?,
                };
                spec.validate(path, *min_clearance).map_err(|e| invalid("corridor", e))?;
                for (i, obstacle) in obstacles.iter().enumerate() {
                    let field = format!("corridor.obstacles[{i}]");
                    let file = resolve(base, &obstacle.file);
                    let points = read_point_cloud(&file).map_err(|e| invalid(format!("{field}.file"), e))?;
                    spec = restrict_bounds_inflated(&spec, &points, path, obstacle.side, *window, *min_clearance, obstacle.inflation)
                        .map_err(|e| invalid(field, e))?;
                }
                Ok((spec, *min_clearance))
            }
        }
    }

    fn build_final_box(&self, config: &FinalBoxConfig, path: &FramePath, x0: &StateVec, unit: f64) -> Result<FinalBox, ConfigError> {
        let angle_scaled = |mut v: [f64; NX]| {
            for a in &mut v[5..] {
                *a *= unit;
            }
            v
        };
        let tol = angle_scaled(config.tolerance.values());
        if !tol.iter().all(|t| *t > 0.0 && t.is_finite()) {
            return Err(invalid("final_box.tolerance", "tolerances must be positive"));
        }
        let center = match &config.center {
            FinalCenter::Explicit(c) => StateVec::from(angle_scaled(*c)),
            FinalCenter::Rule(CenterRule::Initial) => *x0,
            FinalCenter::Rule(CenterRule::InitialTransported) => {
                let t0 = path.node_frame(0).t;
                let speed = t0.dot(&Vector3::new(x0[2], x0[3], x0[4]));
                let v = path.node_frame(path.n_steps()).t * speed;
                let mut c = *x0;
                c[2] = v.x;
                c[3] = v.y;
                c[4] = v.z;
                c
            }
        };
        let fbox = FinalBox::around(&center, &tol);
        fbox.validate().map_err(|e| invalid("final_box", e))?;
        Ok(fbox)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "angle_unit": "deg",
        "frame_path": {"kind": "planar", "curvature": {"kind": "constant", "value": 0.0},
                       "binormal": [0, 0, 1], "t0": [1, 0, 0], "length": 2.0},
        "vehicle": {"m": 0.0325},
        "bounds": {"p_max": 15, "q_max": 15, "r_max": 15, "f_min": 0.1, "f_max": 0.5,
                   "phi_max": 45, "theta_max": 45, "psi_max": {"kind": "constant", "value": 45}},
        "corridor": {"section": "circular", "r_obs": 0.3}
    }"#;

    #[test]
    fn minimal_config_builds_with_defaults() {
        let sc = parse_config(MINIMAL).unwrap().build(Path::new(".")).unwrap();
        assert_eq!(sc.problem.path.n_steps(), 2000);
        assert!((sc.problem.bounds.p_max - 15f64.to_radians()).abs() < 1e-15);
        assert!((sc.problem.bounds.phi_max.at_node(7) - 45f64.to_radians()).abs() < 1e-15);
        assert_eq!(sc.problem.vehicle.g, 9.81);
        assert!(sc.problem.final_box.is_none());
        assert_eq!(sc.settings.weights.q[(0, 0)], 30.0);
        assert_eq!(sc.settings.margin_fraction, Some(0.5));
        assert_eq!(sc.schedule, Schedule::default());
    }

    #[test]
    fn missing_mass_names_the_field() {
        let text = MINIMAL.replace(r#""vehicle": {"m": 0.0325}"#, r#""vehicle": {}"#);
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.field(), Some("vehicle.m"), "{err}");
    }

    #[test]
    fn bad_values_name_the_field() {
        let text = MINIMAL.replace(r#""m": 0.0325"#, r#""m": -1"#);
        let err = parse_config(&text).unwrap().build(Path::new(".")).unwrap_err();
        assert_eq!(err.field(), Some("vehicle.m"));

        // Tagged sections report the section; the message names the value.
        let text = MINIMAL.replace(r#""length": 2.0"#, r#""length": "long""#);
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.field(), Some("frame_path"));
        assert!(err.to_string().contains("long"), "{err}");

        let text = MINIMAL.replace(r#""r_obs": 0.3"#, r#""r_obs": 0.3, "radius": 1"#);
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn corridor_beyond_curvature_limit_is_rejected() {
        // Radius-1 circle: the corridor may not reach 0.95 m toward the center.
        let text = MINIMAL
            .replace(r#""value": 0.0}"#, r#""value": 1.0}"#)
            .replace(r#""r_obs": 0.3"#, r#""r_obs": 0.97"#);
        let err = parse_config(&text).unwrap().build(Path::new(".")).unwrap_err();
        assert_eq!(err.field(), Some("corridor"), "{err}");
    }

    #[test]
    fn transported_final_center_follows_the_tangent() {
        let text = MINIMAL
            .replace(r#""value": 0.0}"#, r#""value": 0.5}"#)
            .replace(r#""length": 2.0"#, r#""length": 3.0"#)
            .replace(r#""r_obs": 0.3}"#, r#""r_obs": 0.3}, "final_box": {"tolerance": 0.02}"#);
        let sc = parse_config(&text).unwrap().build(Path::new(".")).unwrap();
        let c = sc.problem.final_box.unwrap().center();
        let t_end = sc.problem.path.node_frame(sc.problem.path.n_steps()).t;
        let v = Vector3::new(c[2], c[3], c[4]);
        assert!((v - t_end * 0.5).norm() < 1e-9, "{v:?}");
        assert!((c[0] - sc.initial_state[0]).abs() < 1e-15);
    }

    #[test]
    fn per_component_weights_need_the_right_length() {
        let text = MINIMAL.replace(
            r#""r_obs": 0.3}"#,
            r#""r_obs": 0.3}, "solver": {"regulator": {"q": [1, 2, 3]}}"#,
        );
        assert_eq!(parse_config(&text).unwrap_err().field(), Some("solver.regulator.q"));
    }
}
