//! On-disk artifacts of a run and the per-figure plot bundles derived from
//! them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::timemap::Sample;
use crate::corridor::CorridorSpec;
use crate::problem::QuadrotorProblem;

pub const ARCLENGTH_FILE: &str = "arclength.csv";
pub const TIME_FILE: &str = "time.csv";
pub const TIMEMAP_FILE: &str = "timemap.csv";
pub const GEOMETRY_FILE: &str = "geometry.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";
pub const LOG_FILE: &str = "solver_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_DIR: &str = "plots";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Content { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv { path: path.to_path_buf(), source }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| ExportError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ExportError::Json { path: path.to_path_buf(), source })
}

/// One JSON value per line.
pub fn write_jsonl(path: &Path, values: &[serde_json::Value]) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for v in values {
        serde_json::to_writer(&mut w, v).map_err(|source| ExportError::Json { path: path.to_path_buf(), source })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<serde_json::Value>, ExportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| ExportError::Json { path: path.to_path_buf(), source }))
        .collect()
}

/// Time-domain row: the arc-length columns with `t` first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub t: f64,
    pub s: f64,
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

impl From<&Sample> for TimeRow {
    fn from(x: &Sample) -> Self {
        TimeRow {
            t: x.t,
            s: x.s,
            w1: x.w1,
            w2: x.w2,
            v1: x.v1,
            v2: x.v2,
            v3: x.v3,
            phi: x.phi,
            theta: x.theta,
            psi: x.psi,
            p: x.p,
            q: x.q,
            r: x.r,
            f: x.f,
            px: x.px,
            py: x.py,
            pz: x.pz,
        }
    }
}

impl From<&TimeRow> for Sample {
    fn from(x: &TimeRow) -> Self {
        Sample {
            s: x.s,
            t: x.t,
            w1: x.w1,
            w2: x.w2,
            v1: x.v1,
            v2: x.v2,
            v3: x.v3,
            phi: x.phi,
            theta: x.theta,
            psi: x.psi,
            p: x.p,
            q: x.q,
            r: x.r,
            f: x.f,
            px: x.px,
            py: x.py,
            pz: x.pz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMapRow {
    pub s: f64,
    pub t: f64,
}

/// Frame path point and Frenet frame at a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
    pub k: f64,
    pub tau: f64,
}

/// Bounds at a grid node. A circular section of radius `r_obs` is reported
/// through its extent `+-r_obs` along each axis as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub s: f64,
    pub w1_min: f64,
    pub w1_max: f64,
    pub w2_min: f64,
    pub w2_max: f64,
    pub r_obs: Option<f64>,
    pub phi_max: f64,
    pub theta_max: f64,
    pub psi_max: f64,
}

pub fn geometry_rows(problem: &QuadrotorProblem) -> Vec<GeometryRow> {
    let path = &problem.path;
    (0..=path.n_steps())
        .map(|k| {
            let (p, f) = (path.node_point(k), path.node_frame(k));
            GeometryRow {
                s: path.node_s(k),
                x: p.x,
                y: p.y,
                z: p.z,
                tx: f.t.x,
                ty: f.t.y,
                tz: f.t.z,
                nx: f.n.x,
                ny: f.n.y,
                nz: f.n.z,
                bx: f.b.x,
                by: f.b.y,
                bz: f.b.z,
                k: f.k,
                tau: f.tau,
            }
        })
        .collect()
}

pub fn bounds_rows(problem: &QuadrotorProblem) -> Vec<BoundsRow> {
    let b = &problem.bounds;
    (0..=problem.path.n_steps())
        .map(|k| {
            let (w1_min, w1_max, w2_min, w2_max, r_obs) = match &problem.corridor {
                CorridorSpec::Circular { r_obs } => {
                    let r = r_obs.at_node(k);
                    (-r, r, -r, r, Some(r))
                }
                CorridorSpec::Rectangular { w1_min, w1_max, w2_min, w2_max } => {
                    (w1_min.at_node(k), w1_max.at_node(k), w2_min.at_node(k), w2_max.at_node(k), None)
                }
            };
            BoundsRow {
                s: problem.path.node_s(k),
                w1_min,
                w1_max,
                w2_min,
                w2_max,
                r_obs,
                phi_max: b.phi_max.at_node(k),
                theta_max: b.theta_max.at_node(k),
                psi_max: b.psi_max.at_node(k),
            }
        })
        .collect()
}

/// Input limits as stored in the summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub p_max: f64,
    pub q_max: f64,
    pub r_max: f64,
    pub f_min: f64,
    pub f_max: f64,
}

#[derive(Debug, Serialize)]
struct AxisRow {
    s: f64,
    value: f64,
    min: f64,
    max: f64,
}

#[derive(Debug, Serialize)]
struct VelocityRow {
    s: f64,
    t: f64,
    tv: f64,
    nv: f64,
    bv: f64,
    speed: f64,
}

#[derive(Debug, Serialize)]
struct AngleRow {
    s: f64,
    phi: f64,
    theta: f64,
    psi: f64,
    phi_max: f64,
    theta_max: f64,
    psi_max: f64,
}

#[derive(Debug, Serialize)]
struct RateRow {
    s: f64,
    p: f64,
    q: f64,
    r: f64,
    p_max: f64,
    q_max: f64,
    r_max: f64,
}

#[derive(Debug, Serialize)]
struct ThrustRow {
    s: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "F_min")]
    f_min: f64,
    #[serde(rename = "F_max")]
    f_max: f64,
}

#[derive(Debug, Serialize)]
struct PositionRow {
    s: f64,
    px: f64,
    py: f64,
    pz: f64,
    path_x: f64,
    path_y: f64,
    path_z: f64,
}

#[derive(Debug, Serialize)]
struct RadialRow {
    s: f64,
    radius: f64,
    r_obs: f64,
}

fn write_axis(path: &Path, name: &str, rows: Vec<AxisRow>) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["s", name, &format!("{name}_min"), &format!("{name}_max")]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([r.s, r.value, r.min, r.max].iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one CSV per figure quantity into `<dir>/plots` from the run
/// artifacts and returns the files written.
pub fn plotdata(dir: &Path, limits: &InputLimits) -> Result<Vec<PathBuf>, ExportError> {
    let samples: Vec<Sample> = read_csv(&dir.join(ARCLENGTH_FILE))?;
    let geometry: Vec<GeometryRow> = read_csv(&dir.join(GEOMETRY_FILE))?;
    let bounds: Vec<BoundsRow> = read_csv(&dir.join(BOUNDS_FILE))?;
    if geometry.len() != samples.len() || bounds.len() != samples.len() {
        return Err(ExportError::Content {
            path: dir.to_path_buf(),
            message: format!(
                "{} trajectory rows but {} geometry and {} bounds rows",
                samples.len(),
                geometry.len(),
                bounds.len()
            ),
        });
    }
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut written = Vec::new();
    let rows = || samples.iter().zip(&geometry).zip(&bounds);

    let file = out.join("w1.csv");
    write_axis(&file, "w1", rows().map(|((x, _), b)| AxisRow { s: x.s, value: x.w1, min: b.w1_min, max: b.w1_max }).collect())?;
    written.push(file);
    let file = out.join("w2.csv");
    write_axis(&file, "w2", rows().map(|((x, _), b)| AxisRow { s: x.s, value: x.w2, min: b.w2_min, max: b.w2_max }).collect())?;
    written.push(file);
    if bounds.iter().all(|b| b.r_obs.is_some()) {
        let file = out.join("radial.csv");
        let radial: Vec<RadialRow> = rows()
            .map(|((x, _), b)| RadialRow { s: x.s, radius: x.w1.hypot(x.w2), r_obs: b.r_obs.unwrap_or(f64::NAN) })
            .collect();
        write_csv(&file, &radial)?;
        written.push(file);
    }

    let file = out.join("velocity.csv");
    let velocity: Vec<VelocityRow> = rows()
        .map(|((x, g), _)| {
            let v = x.velocity();
            let dot = |a: f64, b: f64, c: f64| a * v.x + b * v.y + c * v.z;
            VelocityRow {
                s: x.s,
                t: x.t,
                tv: dot(g.tx, g.ty, g.tz),
                nv: dot(g.nx, g.ny, g.nz),
                bv: dot(g.bx, g.by, g.bz),
                speed: v.norm(),
            }
        })
        .collect();
    write_csv(&file, &velocity)?;
    written.push(file);

    let file = out.join("angles.csv");
    let angles: Vec<AngleRow> = rows()
        .map(|((x, _), b)| AngleRow {
            s: x.s,
            phi: x.phi,
            theta: x.theta,
            psi: x.psi,
            phi_max: b.phi_max,
            theta_max: b.theta_max,
            psi_max: b.psi_max,
        })
        .collect();
    write_csv(&file, &angles)?;
    written.push(file);

    let file = out.join("rates.csv");
    let rates: Vec<RateRow> = samples
        .iter()
        .map(|x| RateRow { s: x.s, p: x.p, q: x.q, r: x.r, p_max: limits.p_max, q_max: limits.q_max, r_max: limits.r_max })
        .collect();
    write_csv(&file, &rates)?;
    written.push(file);

    let file = out.join("thrust.csv");
    let thrust: Vec<ThrustRow> =
        samples.iter().map(|x| ThrustRow { s: x.s, f: x.f, f_min: limits.f_min, f_max: limits.f_max }).collect();
    write_csv(&file, &thrust)?;
    written.push(file);

    let file = out.join("position.csv");
    let position: Vec<PositionRow> = rows()
        .map(|((x, g), _)| PositionRow { s: x.s, px: x.px, py: x.py, pz: x.pz, path_x: g.x, path_y: g.y, path_z: g.z })
        .collect();
    write_csv(&file, &position)?;
    written.push(file);
    Ok(written)
}
