//! Regenerates the scenario-1 obstacle point clouds.
//!
//! Usage: `cargo run -p mintime-core --example scenario1_obstacles [DIR]`
//! (defaults to `scenarios/`).

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use mintime_core::framepath::{build_planar_path, CurvatureProfile, CurvatureShape};
use nalgebra::Vector3;

/// Surface of the parallelepiped x in [2, 3], y in [-2, 0.3], z in [-2, 2].
fn write_box(out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "x,y,z")?;
    for k in 0..=8 {
        let z = -2.0 + k as f64 * 0.5;
        // 4 mm along x so every grid node under the box sees a point.
        for i in 0..=250 {
            let x = 2.0 + i as f64 * 0.004;
            for y in [-2.0, 0.3] {
                writeln!(out, "{x:.4},{y:.4},{z:.4}")?;
            }
        }
        for j in 1..46 {
            let y = -2.0 + j as f64 * 0.05;
            for x in [2.0, 3.0] {
                writeln!(out, "{x:.4},{y:.4},{z:.4}")?;
            }
        }
    }
    Ok(())
}

/// Vertical cylinder of radius 0.3 around `axis`, z in [-2, 0.3].
fn write_cylinder(out: &mut impl Write, axis: &Vector3<f64>) -> std::io::Result<()> {
    writeln!(out, "x,y,z")?;
    for h in 0..=23 {
        let z = -2.0 + h as f64 * 0.1;
        for a in 0..472 {
            let ang = a as f64 / 472.0 * TAU;
            writeln!(out, "{:.6},{:.6},{z:.4}", axis.x + 0.3 * ang.cos(), axis.y + 0.3 * ang.sin())?;
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("scenarios"));
    let shape = CurvatureShape::TanhDifference { gain: 0.2, slope: 1.0, start: 5.0, end: 5.0 * (1.0 + FRAC_PI_2) };
    let path = build_planar_path(&CurvatureProfile::closed_form(shape)?, Vector3::z(), Vector3::zeros(), Vector3::x(), 17.854, 1e-3)?;
    // The cylinder stands on the frame path at s = 15.
    let (axis, _) = path.evaluate(15.0)?;

    let mut out = BufWriter::new(File::create(dir.join("scenario1_box.csv"))?);
    write_box(&mut out)?;
    out.flush()?;
    let mut out = BufWriter::new(File::create(dir.join("scenario1_cylinder.csv"))?);
    write_cylinder(&mut out, &axis)?;
    out.flush()?;
    Ok(())
}
