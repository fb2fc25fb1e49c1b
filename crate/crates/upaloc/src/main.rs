//! Command-line front end: single-field estimation, Monte Carlo runs, pilot
//! and array-size sweeps, bound tabulation, and subsystem counting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 degenerate scenario.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use upaloc::channel::simulate_pilot_field;
use upaloc::error::Error;
use upaloc::estimators::{estimate_pipeline_full, LsSettings};
use upaloc::geometry::UpaConfig;
use upaloc::harness::{
    crb_map, reference_scenario, run_monte_carlo, sweep_k, sweep_n, trial_rng, write_crb_map_csv,
    write_rmse_csv, write_trial_csv, AngleUnit, Scenario, ScenarioFile,
};
use upaloc::phase::count_systems;

#[derive(Parser)]
#[command(
    name = "upaloc",
    version,
    about = "Near-field 3D localization on a uniform planar array: estimators, bounds, and Monte Carlo sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one pilot field and print both position estimates
    Estimate(ScenarioArgs),
    /// Monte Carlo RMSE against the bound for one scenario
    Mc(McArgs),
    /// Monte Carlo sweep over the pilot count
    SweepK(SweepKArgs),
    /// Monte Carlo sweep over the array half-size
    SweepN(SweepNArgs),
    /// Tabulate the position bound over a range and angle grid
    CrbMap(CrbMapArgs),
    /// Count measurement sums and distinct solvable subsystems
    CountSystems(CountSystemsArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file; the built-in reference scenario when omitted
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count override
    #[arg(long)]
    trials: Option<u32>,
    /// Least-squares iteration cap
    #[arg(long, default_value_t = 100)]
    ls_max_iter: u32,
    /// Least-squares relative step tolerance
    #[arg(long, default_value_t = 1e-12)]
    ls_tol: f64,
    /// Print angle columns in degrees
    #[arg(long)]
    degrees: bool,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Also write per-trial signed errors to this CSV
    #[arg(long)]
    per_trial: Option<PathBuf>,
}

#[derive(Args)]
struct SweepKArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Pilot counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "5,20,100")]
    k: Vec<u32>,
}

#[derive(Args)]
struct SweepNArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Array half-sizes to sweep
    #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
    n: Vec<i64>,
}

#[derive(Args)]
struct CrbMapArgs {
    #[command(flatten)]
    common: ScenarioArgs,
    /// Ranges in meters
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    r: Vec<f64>,
    /// theta:phi pairs in radians; the scenario user's angles when omitted
    #[arg(long, value_delimiter = ',', value_parser = parse_angle_pair)]
    angles: Vec<(f64, f64)>,
}

#[derive(Args)]
struct CountSystemsArgs {
    /// Array half-size
    #[arg(long)]
    half_size: u32,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_angle_pair(text: &str) -> Result<(f64, f64), String> {
    let (theta, phi) = text
        .split_once(':')
        .ok_or_else(|| format!("expected theta:phi, got {text}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad angle {v}: {e}"))
    };
    Ok((parse(theta)?, parse(phi)?))
}

struct CliError {
    code: i32,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => 2,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    let mut s = match &args.scenario {
        Some(path) => ScenarioFile::parse(&fs::read_to_string(path)?)?.into_scenario()?,
        None => reference_scenario(),
    };
    if let Some(seed) = args.seed {
        s.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        s.trials = trials;
    }
    Ok(s)
}

fn ls_settings(args: &ScenarioArgs) -> LsSettings {
    LsSettings {
        max_iterations: args.ls_max_iter,
        step_tolerance: args.ls_tol,
        ..LsSettings::default()
    }
}

fn angle_unit(args: &ScenarioArgs) -> AngleUnit {
    if args.degrees {
        AngleUnit::Degrees
    } else {
        AngleUnit::Radians
    }
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run_estimate(args: &ScenarioArgs) -> Result<(), CliError> {
    let s = load_scenario(args)?;
    s.validate()?;
    let mut rng = trial_rng(s.master_seed, 0);
    let field = simulate_pilot_field(&s.user, &s.cfg, &s.gains, &s.radio, &mut rng)?;
    let full = estimate_pipeline_full(&field, &s.cfg, &ls_settings(args))?;
    let (unit, factor) = match angle_unit(args) {
        AngleUnit::Degrees => ("deg", 180.0 / std::f64::consts::PI),
        AngleUnit::Radians => ("rad", 1.0),
    };
    let mut w = output(&args.out)?;
    match &full.closed_form {
        Ok(abc) => {
            let p = upaloc::geometry::spherical_from_abc(abc)?.position;
            writeln!(
                w,
                "closed_form: r={:.6} m  theta={:.6} {unit}  phi={:.6} {unit}",
                p.r,
                p.theta * factor,
                p.phi * factor,
            )?;
        }
        Err(e) => writeln!(w, "closed_form: failed ({e}); least squares used the fallback start")?,
    }
    let ls = &full.least_squares;
    writeln!(
        w,
        "least_squares: r={:.6} m  theta={:.6} {unit}  phi={:.6} {unit}",
        ls.spherical.r,
        ls.spherical.theta * factor,
        ls.spherical.phi * factor,
    )?;
    writeln!(
        w,
        "cartesian: x={:.6} m  y={:.6} m  z={:.6} m",
        ls.cartesian.x, ls.cartesian.y, ls.cartesian.z
    )?;
    writeln!(
        w,
        "solver: iterations={}  converged={}  objective={:.3e}",
        ls.iterations, ls.flags.ls_converged, ls.final_objective
    )?;
    let f = ls.flags;
    writeln!(
        w,
        "flags: clamped_y={} clamped_arccos={} azimuth_degenerate={} near_degenerate_denominator={} used_fallback_init={}",
        f.clamped_y, f.clamped_arccos, f.azimuth_degenerate, f.near_degenerate_denominator, f.used_fallback_init
    )?;
    Ok(())
}

fn run_mc(args: &McArgs) -> Result<(), CliError> {
    let s = load_scenario(&args.common)?;
    let run = run_monte_carlo(&s, &ls_settings(&args.common))?;
    let unit = angle_unit(&args.common);
    write_rmse_csv(&run.rows, unit, &mut output(&args.common.out)?)?;
    if let Some(path) = &args.per_trial {
        write_trial_csv(&run.records, unit, &mut fs::File::create(path)?)?;
    }
    Ok(())
}

fn run_sweep_k(args: &SweepKArgs) -> Result<(), CliError> {
    let s = load_scenario(&args.common)?;
    let rows = sweep_k(&s, &args.k, &ls_settings(&args.common))?;
    write_rmse_csv(&rows, angle_unit(&args.common), &mut output(&args.common.out)?)?;
    Ok(())
}

fn run_sweep_n(args: &SweepNArgs) -> Result<(), CliError> {
    let s = load_scenario(&args.common)?;
    let rows = sweep_n(&s, &args.n, &ls_settings(&args.common))?;
    write_rmse_csv(&rows, angle_unit(&args.common), &mut output(&args.common.out)?)?;
    Ok(())
}

fn run_crb_map(args: &CrbMapArgs) -> Result<(), CliError> {
    let s = load_scenario(&args.common)?;
    let pairs = if args.angles.is_empty() {
        vec![(s.user.theta, s.user.phi)]
    } else {
        args.angles.clone()
    };
    let rows = crb_map(&s.cfg, &s.radio, &s.gains, &args.r, &pairs)?;
    write_crb_map_csv(&rows, angle_unit(&args.common), &mut output(&args.common.out)?)?;
    Ok(())
}

fn run_count_systems(args: &CountSystemsArgs) -> Result<(), CliError> {
    // Validates the spacing-independent parts of the configuration shape.
    UpaConfig::new(args.half_size as i64, 0.005, 0.01)?;
    let count = count_systems(args.half_size);
    let mut w = output(&args.out)?;
    writeln!(w, "half_size,sums,systems")?;
    writeln!(w, "{},{},{}", args.half_size, count.sums, count.systems)?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Mc(args) => run_mc(args),
        Command::SweepK(args) => run_sweep_k(args),
        Command::SweepN(args) => run_sweep_n(args),
        Command::CrbMap(args) => run_crb_map(args),
        Command::CountSystems(args) => run_count_systems(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
