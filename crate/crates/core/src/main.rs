use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use transport_iss::analysis::{
    analyze, sweep, verify_iss, Outcome, ReportInputs, SweepOptions, SweepParameter, SCHEMA_VERSION,
};
use transport_iss::model::{load_network, NetworkSpec};
use transport_iss::operators::{assemble_gain, VelocityGrid};
use transport_iss::simulator::{run, Scenario, ScenarioConfig, DEFAULT_SPATIAL_CELLS};
use transport_iss::spectral::{spectral_abscissa, ABSCISSA_TOL};
use transport_iss::Error;

/// Small-gain certificates, ISS constants and simulations for transport networks of circles.
#[derive(Debug, Parser)]
#[command(name = "transport-iss", version)]
struct Cli {
    /// Velocity cells of the midpoint grid.
    #[arg(long, global = true, default_value_t = VelocityGrid::DEFAULT_CELLS)]
    k_velocity: usize,
    /// Time step; defaults to 0.9 dx_min / v_max.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Seed of every sampled quantity.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the assembled gain matrix as CSV.
    #[arg(long, global = true)]
    dump_gain: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certificate, abscissa and ISS constants as JSON.
    Analyze {
        config: PathBuf,
        #[arg(long, default_value = "inf", value_parser = parse_p)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_SPATIAL_CELLS)]
        spatial_cells: usize,
    },
    /// Trajectory CSV of a scenario.
    Simulate { config: PathBuf, scenario: PathBuf },
    /// Checks the ISS estimate along a scenario; exit 0 pass, 1 fail, 3 inconclusive.
    Verify {
        config: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value = "inf", value_parser = parse_p)]
        p: f64,
    },
    /// Certificate and observed behaviour across a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParameter,
        /// Comma-separated increasing values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// Length of each run in slowest circulation periods.
        #[arg(long, default_value_t = 8.0)]
        periods: f64,
        #[arg(long, default_value_t = 32)]
        spatial_cells: usize,
    },
    /// The decay exponent where the gain radius crosses 1.
    Abscissa {
        config: PathBuf,
        #[arg(long, default_value_t = ABSCISSA_TOL)]
        tol: f64,
    },
}

fn parse_p(s: &str) -> Result<f64, String> {
    let p = match s {
        "inf" | "infinity" | "Inf" => f64::INFINITY,
        _ => s.parse::<f64>().map_err(|e| e.to_string())?,
    };
    if p >= 1.0 {
        Ok(p)
    } else {
        Err(format!("p must be at least 1, got {s}"))
    }
}

#[derive(Serialize)]
struct AbscissaReport {
    schema_version: u32,
    velocity_cells: usize,
    lambda_star: f64,
    predicted_decay: Option<f64>,
    bracket_width: f64,
    iterations: usize,
    r_lower: f64,
    r_upper: f64,
}

fn read_spec(path: &Path) -> transport_iss::Result<NetworkSpec> {
    load_network(&fs::read_to_string(path)?)
}

fn read_scenario(
    path: &Path,
    spec: &NetworkSpec,
    grid: &VelocityGrid,
    dt: Option<f64>,
) -> transport_iss::Result<Scenario> {
    let mut cfg = ScenarioConfig::from_json(&fs::read_to_string(path)?)?;
    if dt.is_some() {
        cfg.dt = dt;
    }
    Scenario::new(spec.clone(), grid.clone(), cfg)
}

fn sink(out: &Option<PathBuf>, name: &str) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(BufWriter::new(File::create(dir.join(name))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json<T: Serialize>(
    out: &Option<PathBuf>,
    name: &str,
    value: &T,
) -> transport_iss::Result<()> {
    let mut w = sink(out, name)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

fn execute(cli: &Cli) -> transport_iss::Result<ExitCode> {
    let config = match &cli.command {
        Command::Analyze { config, .. }
        | Command::Simulate { config, .. }
        | Command::Verify { config, .. }
        | Command::Sweep { config, .. }
        | Command::Abscissa { config, .. } => config,
    };
    let spec = read_spec(config)?;
    let grid = VelocityGrid::for_spec(&spec, cli.k_velocity)?;
    if let Some(path) = &cli.dump_gain {
        let report = assemble_gain(&spec, &grid, 0.0);
        log::info!("gain quadrature residual {:e}", report.quadrature_residual);
        report
            .matrix
            .write_csv(BufWriter::new(File::create(path)?))?;
    }
    match &cli.command {
        Command::Analyze {
            p, spatial_cells, ..
        } => {
            let report = analyze(&spec, &grid, *p, *spatial_cells, cli.seed)?;
            emit_json(&cli.out, "analysis.json", &report)?;
        }
        Command::Simulate { scenario, .. } => {
            let scenario = read_scenario(scenario, &spec, &grid, cli.dt)?;
            let traj = run(&scenario)?;
            let mut w = sink(&cli.out, "trajectory.csv")?;
            traj.write_csv(&mut w)?;
            w.flush()?;
            if let (Some(dir), false) = (&cli.out, traj.snapshots.is_empty()) {
                traj.write_snapshots(BufWriter::new(File::create(dir.join("snapshots.bin"))?))?;
            }
        }
        Command::Verify { scenario, p, .. } => {
            let scenario = read_scenario(scenario, &spec, &grid, cli.dt)?;
            let report = verify_iss(
                &scenario,
                *p,
                &ReportInputs::for_scenario(&scenario, cli.seed),
            )?;
            emit_json(&cli.out, "iss_report.json", &report)?;
            return Ok(match report.outcome {
                Outcome::Pass => ExitCode::SUCCESS,
                Outcome::Fail => ExitCode::from(1),
                Outcome::Inconclusive => ExitCode::from(3),
            });
        }
        Command::Sweep {
            param,
            values,
            periods,
            spatial_cells,
            ..
        } => {
            let opts = SweepOptions {
                spatial_cells: *spatial_cells,
                dt: cli.dt,
                periods: *periods,
                ..SweepOptions::default()
            };
            let result = sweep(&spec, &grid, *param, values, &opts)?;
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir)?;
                result.write_csv(BufWriter::new(File::create(dir.join("sweep.csv"))?))?;
            }
            emit_json(&cli.out, "sweep.json", &result)?;
        }
        Command::Abscissa { tol, .. } => {
            let a = spectral_abscissa(&spec, &grid, *tol)?;
            emit_json(
                &cli.out,
                "abscissa.json",
                &AbscissaReport {
                    schema_version: SCHEMA_VERSION,
                    velocity_cells: grid.len(),
                    lambda_star: a.lambda_star,
                    predicted_decay: a.predicted_decay(),
                    bracket_width: a.bracket_width,
                    iterations: a.iterations,
                    r_lower: a.r_lower,
                    r_upper: a.r_upper,
                },
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let input = e.is_input_error()
                || matches!(
                    e,
                    Error::SmallGainViolation(_) | Error::Cfl { .. } | Error::Io(_)
                );
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}
