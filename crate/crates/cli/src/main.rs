use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgGroup, Parser, Subcommand};
use rayon::prelude::*;

use mintime_core::app::export::{self, TimeRow, ARCLENGTH_FILE};
use mintime_core::app::pipeline::{self, PipelineError, Stage};
use mintime_core::app::timemap::{to_time_domain, Sample, DEFAULT_DT};
use mintime_core::app::{load_scenario, Scenario};
use mintime_core::corridor::CorridorSpec;

#[derive(Parser)]
#[command(name = "mintime", version, about = "Minimum-time quadrotor trajectories through corridors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more scenarios; several configs run concurrently.
    Solve {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run directory. With several configs each gets `<out>/<file stem>`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and validate a scenario without solving it.
    Check { config: PathBuf },
    /// Print a run's trajectory as CSV on a uniform time or arc-length grid.
    #[command(group(ArgGroup::new("grid").required(true).args(["time", "arclength"])))]
    Export {
        dir: PathBuf,
        #[arg(long)]
        time: bool,
        #[arg(long)]
        arclength: bool,
        /// Time step for `--time`, s.
        #[arg(long, default_value_t = DEFAULT_DT, requires = "time")]
        dt: f64,
        /// Write to a file instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write per-figure CSVs into `<dir>/plots`.
    Plotdata { dir: PathBuf },
}

fn fail(err: &PipelineError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::FAILURE
}

fn load(path: &Path) -> Result<Scenario, PipelineError> {
    load_scenario(path).map_err(|e| PipelineError::new(Stage::Load, e))
}

fn solve_one(config: &Path, out: &Path) -> Result<pipeline::Summary, PipelineError> {
    let scenario = load(config)?;
    pipeline::run(&scenario, out)
}

fn solve(configs: &[PathBuf], out: &Path) -> ExitCode {
    let dirs: Vec<PathBuf> = if configs.len() == 1 {
        vec![out.to_path_buf()]
    } else {
        configs
            .iter()
            .map(|c| out.join(c.file_stem().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("run"))))
            .collect()
    };
    let results: Vec<_> = configs.par_iter().zip(&dirs).map(|(c, d)| solve_one(c, d)).collect();
    let mut code = ExitCode::SUCCESS;
    for ((config, dir), result) in configs.iter().zip(&dirs).zip(results) {
        match result {
            Ok(s) => println!(
                "{}: T = {:.4} s, peak tangential speed {:.3} m/s at s = {:.3}, min margin {:.3e}, {} iterations, {:.1} s -> {}",
                config.display(),
                s.maneuver_time,
                s.peak_tangential_speed.value,
                s.peak_tangential_speed.s,
                s.min_margin,
                s.iterations,
                s.runtime_s,
                dir.display()
            ),
            Err(e) => {
                eprintln!("{}: error: {e}", config.display());
                code = ExitCode::FAILURE;
            }
        }
    }
    code
}

fn check(config: &Path) -> ExitCode {
    let scenario = match load(config) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let p = &scenario.problem;
    let section = match &p.corridor {
        CorridorSpec::Circular { .. } => "circular",
        CorridorSpec::Rectangular { .. } => "rectangular",
    };
    println!(
        "{}: ok; L = {} m, ds = {} m, {} nodes, max curvature {:.4} 1/m, {section} corridor, thrust [{:.4}, {:.4}] N, final box {}",
        scenario.name(),
        p.path.length(),
        p.path.ds(),
        p.path.n_steps() + 1,
        p.path.max_curvature(),
        p.bounds.f_min,
        p.bounds.f_max,
        if p.final_box.is_some() { "yes" } else { "no" },
    );
    ExitCode::SUCCESS
}

fn export(dir: &Path, time: bool, dt: f64, output: Option<&Path>) -> anyhow::Result<()> {
    let samples: Vec<Sample> = export::read_csv(&dir.join(ARCLENGTH_FILE))?;
    let sink: Box<dyn Write> = match output {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    if time {
        for row in to_time_domain(&samples, dt)? {
            w.serialize(TimeRow::from(&row))?;
        }
    } else {
        for row in &samples {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { configs, out } => solve(&configs, &out),
        Command::Check { config } => check(&config),
        Command::Export { dir, time, arclength: _, dt, output } => match export(&dir, time, dt, output.as_deref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&PipelineError::new(Stage::Export, e.to_string())),
        },
        Command::Plotdata { dir } => match pipeline::plotdata(&dir) {
            Ok(files) => {
                for f in files {
                    println!("{}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
