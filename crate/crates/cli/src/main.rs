use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qoct_core::config::{
    load_config, write_interferogram_csv, write_json, write_sweep_csv, LoadedConfig, ResolvedRun,
    RunManifest,
};
use qoct_core::oracle::c_tau_oracle_batch;
use qoct_core::sweeps::{find_first_null, fit, run_sweep, SweepPoint, SweepRange};
use qoct_core::{rad_per_ps_to_ghz, EngineMode, Execution};

/// Environment variable that takes precedence over `--threads`.
const THREADS_ENV: &str = "QOCT_SIM_THREADS";

/// Exit status when `validate` finds the engine and the oracle disagree.
const EXIT_VALIDATION_FAILED: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "qoct-sim",
    version,
    about = "Phase-dependent quantum OCT interferogram simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalised coincidence Γ(τ) over the configured delay scan.
    Interferogram(Common),
    /// Midpoint artifact amplitude over the configured sweep.
    Sweep(Common),
    /// Lowest drive frequency at which the midpoint artifact vanishes.
    NullSearch(Common),
    /// Fit the artifact model to observed or synthetic sweep data.
    Fit(Common),
    /// Compare the closed-form engine with direct quadrature.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file, or the name of a bundled preset.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output.dir` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EngineMode>,
    /// Worker threads; `QOCT_SIM_THREADS` overrides this flag.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_mode(s: &str) -> Result<EngineMode, String> {
    s.parse().map_err(|e: qoct_core::Error| e.to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Interferogram(_) => "interferogram",
            Command::Sweep(_) => "sweep",
            Command::NullSearch(_) => "null-search",
            Command::Fit(_) => "fit",
            Command::Validate(_) => "validate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Interferogram(c)
            | Command::Sweep(c)
            | Command::NullSearch(c)
            | Command::Fit(c)
            | Command::Validate(c) => c,
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?,
        ),
        _ => flag,
    };
    match requested {
        Some(0) => bail!("thread count must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

struct RunContext {
    command: &'static str,
    loaded: LoadedConfig,
    run: ResolvedRun,
    out: PathBuf,
    exec: Execution,
    threads: usize,
}

/// Outcome of a command: whether `validate` passed.
enum Outcome {
    Done,
    ValidationFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(EXIT_VALIDATION_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let started = Instant::now();
    let common = cli.command.common();
    let threads = thread_count(common.threads)?;
    let loaded = load_config(&common.config)?;
    let mode = common.mode.unwrap_or(loaded.config.engine.mode);
    let out = common
        .out
        .clone()
        .or_else(|| {
            loaded
                .config
                .output
                .as_ref()
                .map(|o| loaded.base_dir.join(&o.dir))
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the worker pool")?;
    let exec = if threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };

    pool.install(|| {
        let run = loaded.config.resolve_with_mode(mode)?;
        let ctx = RunContext {
            command: cli.command.name(),
            loaded,
            run,
            out,
            exec,
            threads,
        };
        let outcome = match cli.command {
            Command::Interferogram(_) => interferogram(&ctx)?,
            Command::Sweep(_) => sweep(&ctx)?,
            Command::NullSearch(_) => null_search(&ctx)?,
            Command::Fit(_) => fit_command(&ctx)?,
            Command::Validate(_) => validate(&ctx)?,
        };
        let manifest = RunManifest::new(
            ctx.command,
            &ctx.loaded.origin,
            &ctx.run,
            ctx.threads,
            started.elapsed(),
        );
        write_json(&ctx.out.join("manifest.json"), &manifest)?;
        Ok(outcome)
    })
}

fn interferogram(ctx: &RunContext) -> Result<Outcome> {
    let result = ctx
        .run
        .scenario
        .interferogram(&ctx.run.tau_grid, ctx.exec)?
        .with_provenance(format!("{}:{}", ctx.loaded.origin, ctx.run.digest));
    write_interferogram_csv(&ctx.out.join("interferogram.csv"), &result)?;
    Ok(Outcome::Done)
}

fn sweep_section(ctx: &RunContext) -> Result<&qoct_core::config::SweepConfig> {
    ctx.loaded
        .config
        .sweep
        .as_ref()
        .context("the config has no [sweep] section")
}

fn sweep(ctx: &RunContext) -> Result<Outcome> {
    let section = sweep_section(ctx)?;
    let spec = ctx.run.sweep_spec(&ctx.loaded.config)?;
    let points: Vec<SweepPoint> = run_sweep(&spec, ctx.exec)?
        .into_iter()
        .map(|p| SweepPoint {
            x: section.from_engine(p.x),
            ..p
        })
        .collect();
    write_sweep_csv(&ctx.out.join("sweep.csv"), &points)?;
    Ok(Outcome::Done)
}

fn null_search(ctx: &RunContext) -> Result<Outcome> {
    let section = ctx
        .loaded
        .config
        .null_search
        .as_ref()
        .context("the config has no [null_search] section")?;
    let range = SweepRange {
        start: qoct_core::ghz_to_rad_per_ps(section.start_ghz),
        stop: qoct_core::ghz_to_rad_per_ps(section.stop_ghz),
        count: section.scan_points,
    };
    let scenario = &ctx.run.scenario;
    let result = find_first_null(scenario, range, ctx.exec)?;

    // How far the null moves when the carrier phase is off by ±0.2 rad.
    let mut sensitivity = serde_json::Map::new();
    if let Some(phi) = ctx.run.carrier_phase() {
        for (label, dphi) in [("minus_0.2_rad", -0.2), ("plus_0.2_rad", 0.2)] {
            let shifted = scenario.with_carrier_phase(phi + dphi)?;
            let found = find_first_null(&shifted, range, ctx.exec)?;
            sensitivity.insert(label.into(), json!(found.omega().map(rad_per_ps_to_ghz)));
        }
    }
    let body = json!({
        "result": {
            "null": result,
            "omega_ghz": result.omega().map(rad_per_ps_to_ghz),
        },
        "diagnostics": {
            "scan_ghz": [section.start_ghz, section.stop_ghz],
            "scan_points": section.scan_points,
            "carrier_phase_rad": ctx.run.carrier_phase(),
            "null_ghz_with_carrier_phase_offset": sensitivity,
        },
    });
    write_json(&ctx.out.join("null_search.json"), &body)?;
    Ok(Outcome::Done)
}

fn fit_command(ctx: &RunContext) -> Result<Outcome> {
    let config = &ctx.loaded.config;
    let section = config
        .fit
        .as_ref()
        .context("the config has no [fit] section")?;
    let sweep = sweep_section(ctx)?;
    let problem = section.problem(&ctx.run, sweep, &ctx.loaded.base_dir)?;
    let spec = ctx.run.sweep_spec(config)?;
    let started = Instant::now();
    let result = fit(&problem, &spec)?;
    let n = problem.observations().len();
    let body = json!({
        "result": result,
        "diagnostics": {
            "observations": n,
            "rms_residual": result.residual_norm / (n as f64).sqrt(),
            "synthetic": section.synthetic.is_some(),
            "fit_seconds": started.elapsed().as_secs_f64(),
        },
    });
    write_json(&ctx.out.join("fit.json"), &body)?;
    Ok(Outcome::Done)
}

fn validate(ctx: &RunContext) -> Result<Outcome> {
    let section = ctx
        .loaded
        .config
        .validate
        .as_ref()
        .context("the config has no [validate] section")?;
    let taus = section.taus()?;
    let grid = section.grid()?;
    let s = &ctx.run.scenario;
    let engine = s.engine()?;
    let oracle = c_tau_oracle_batch(
        &s.spectrum,
        &s.arm1,
        &s.arm2,
        &s.stack,
        &taus,
        &grid,
        ctx.exec,
    )?;
    let max_abs_err = taus
        .iter()
        .zip(&oracle)
        .map(|(&t, o)| (engine.gamma(t) - o.gamma()).abs())
        .fold(0.0, f64::max);
    let passed = max_abs_err <= section.tolerance;
    let body = json!({
        "max_abs_err": max_abs_err,
        "grid": {
            "half_width": grid.half_width(),
            "points_per_axis": grid.points_per_axis(),
            "scheme": grid.scheme(),
            "tau_start_ps": section.tau_start_ps,
            "tau_stop_ps": section.tau_stop_ps,
            "tau_count": section.tau_count,
            "tolerance": section.tolerance,
        },
        "passed": passed,
    });
    write_json(&ctx.out.join("validate.json"), &body)?;
    Ok(if passed {
        Outcome::Done
    } else {
        eprintln!(
            "validation failed: max |ΔΓ| = {max_abs_err:.3e} > {:.1e}",
            section.tolerance
        );
        Outcome::ValidationFailed
    })
}
