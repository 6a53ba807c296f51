use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dlcz_core::harness::{
    export_svg, run_scenario, PlotSpec, RunReport, ScenarioId, ScenarioSpec, Sweep,
};
use dlcz_core::{validate_config, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "dlcz",
    version,
    about = "Warm-vapor DLCZ memory simulation scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anti-Stokes click probability with the write pulse off, versus read energy.
    #[command(name = "noise_vs_read_power", alias = "noise-vs-read-power")]
    NoiseVsReadPower(RunArgs),
    /// Cross-correlation versus write energy.
    #[command(name = "g2_vs_power", alias = "g2-vs-power")]
    G2VsPower(RunArgs),
    /// Excitation probability recovered from Stokes clicks versus write energy.
    #[command(name = "lambda_vs_power", alias = "lambda-vs-power")]
    LambdaVsPower(RunArgs),
    /// Cavity calibration, photon scan, and deconvolved bandwidth.
    #[command(name = "bandwidth_measurement", alias = "bandwidth-measurement")]
    BandwidthMeasurement(RunArgs),
    /// Cross-correlation versus storage time with the decay fit.
    #[command(name = "lifetime_vs_time", alias = "lifetime-vs-time")]
    LifetimeVsTime(RunArgs),
    /// Cross and auto correlations and the Cauchy-Schwarz test.
    #[command(name = "cs_violation", alias = "cs-violation")]
    CsViolation(RunArgs),
    /// Lifetime and bandwidth combined into both time-bandwidth products.
    #[command(name = "tbp_report", alias = "tbp-report")]
    TbpReport(RunArgs),
    /// Run every scenario, each into its own subdirectory of --out.
    All(RunArgs),
    /// Check a config file and report every violation.
    Validate { config: PathBuf },
    /// Print the default config as TOML.
    #[command(name = "default-config")]
    DefaultConfig,
    /// Render an SVG plot from two columns of a CSV file.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; defaults to the built-in operating point.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per simulated point, overriding the config.
    #[arg(long)]
    trials: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "dlcz-out")]
    out: PathBuf,
    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
    /// Sweep as PARAM=V1,V2,... (e.g. pulses.energy_pj=0,30,60).
    #[arg(long)]
    sweep: Option<Sweep>,
}

#[derive(Args)]
struct PlotArgs {
    csv: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Error-bar column; `{y}_err` is used when present.
    #[arg(long)]
    err: Option<String>,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    Ok(cfg)
}

fn spec_for(id: ScenarioId, args: &RunArgs, cfg: ExperimentConfig, out: PathBuf) -> ScenarioSpec {
    ScenarioSpec {
        sweep: args.sweep.clone(),
        ..ScenarioSpec::new(id, cfg, out)
    }
}

fn summarize(report: &RunReport) {
    eprintln!(
        "{}: {} point(s), {} failed, {:.2} s",
        report.scenario_id,
        report.points.len(),
        report.failed_points.len(),
        report.wall_time_s
    );
    for p in &report.points {
        if let Some(e) = &p.error {
            eprintln!("  point {}: {e}", p.index);
        }
    }
}

fn run(ids: &[ScenarioId], args: &RunArgs, nested: bool) -> Result<bool> {
    let cfg = load_config(args)?;
    let pool = match args.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?),
        None => None,
    };
    let mut all_ok = true;
    for &id in ids {
        let out = if nested {
            args.out.join(id.name())
        } else {
            args.out.clone()
        };
        let spec = spec_for(id, args, cfg.clone(), out);
        let report = match &pool {
            Some(p) => p.install(|| run_scenario(&spec)),
            None => run_scenario(&spec),
        }
        .with_context(|| format!("scenario {id}"))?;
        summarize(&report);
        all_ok &= report.all_ok();
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::NoiseVsReadPower(a) => run(&[ScenarioId::NoiseVsReadPower], &a, false),
        Command::G2VsPower(a) => run(&[ScenarioId::G2VsPower], &a, false),
        Command::LambdaVsPower(a) => run(&[ScenarioId::LambdaVsPower], &a, false),
        Command::BandwidthMeasurement(a) => run(&[ScenarioId::BandwidthMeasurement], &a, false),
        Command::LifetimeVsTime(a) => run(&[ScenarioId::LifetimeVsTime], &a, false),
        Command::CsViolation(a) => run(&[ScenarioId::CsViolation], &a, false),
        Command::TbpReport(a) => run(&[ScenarioId::TbpReport], &a, false),
        Command::All(a) => run(&ScenarioId::ALL, &a, true),
        Command::Validate { config } => validate(&config),
        Command::DefaultConfig => ExperimentConfig::default()
            .to_toml_string()
            .map(|s| {
                print!("{s}");
                true
            })
            .map_err(Into::into),
        Command::Plot(p) => plot(&p),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn validate(path: &PathBuf) -> Result<bool> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::from_toml_str(&text)?;
    validate_config(cfg)?;
    println!("{}: ok", path.display());
    Ok(true)
}

fn plot(p: &PlotArgs) -> Result<bool> {
    let spec = PlotSpec {
        x: p.x.clone(),
        y: p.y.clone(),
        y_err: p.err.clone(),
        title: p.title.clone(),
        output: p.out.clone(),
    };
    export_svg(&p.csv, &spec)?;
    Ok(true)
}
