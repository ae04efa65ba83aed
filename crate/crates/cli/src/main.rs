//! `gridfuse`: simulate, filter, evaluate and calibrate from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridfuse_core::io;
use gridfuse_core::metrics::{ecdf, error_series, summarize, StatsSummary};
use gridfuse_core::noise::fit_gmm;
use gridfuse_core::sim::{self, Scenario, ScenarioConfig};
use gridfuse_core::{CombineMode, Error, FilterConfig, GridFilter};

#[derive(Parser, Debug)]
#[command(name = "gridfuse", version, about = "Grid-based Bayes filtering for GNSS / UWB positioning")]
struct Cli {
    /// JSON configuration (scenario for `simulate`, filter for `filter`).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Grid cell size in meters.
    #[arg(long = "grid-res", global = true, value_name = "METERS")]
    grid_res: Option<f64>,
    /// How likelihoods of one epoch are combined.
    #[arg(long, global = true, value_enum)]
    combine: Option<Combine>,
    /// Weighted-mean radius around the MAP cell, meters.
    #[arg(long, global = true, value_name = "R")]
    radius: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Combine {
    Sum,
    Product,
}

impl From<Combine> for CombineMode {
    fn from(c: Combine) -> Self {
        match c {
            Combine::Sum => CombineMode::Sum,
            Combine::Product => CombineMode::Product,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Kind {
    Static,
    Dynamic,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write observations, ground truth and a matching filter config.
    Simulate {
        /// Built-in scenario used when no --config is given.
        #[arg(long, value_enum, default_value = "dynamic")]
        scenario: Kind,
        /// Number of GNSS plus UWB epochs for the built-in scenario.
        #[arg(long, default_value_t = 500)]
        epochs: usize,
    },
    /// Run the filter over an observation file.
    Filter {
        #[arg(long, value_name = "PATH")]
        observations: PathBuf,
    },
    /// Error statistics and ECDF of estimates against ground truth.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        estimates: PathBuf,
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
    },
    /// Fit a Gaussian mixture to a residual file.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        residuals: PathBuf,
        #[arg(long, default_value_t = 4)]
        components: usize,
    },
    /// Static and dynamic end-to-end runs with the reference noise models.
    Demo {
        #[arg(long, default_value_t = 500)]
        static_epochs: usize,
        #[arg(long, default_value_t = 2066)]
        dynamic_epochs: usize,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn say(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn check_overrides(cli: &Cli) -> Outcome {
    if let Some(r) = cli.grid_res {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Failure::Usage(format!("--grid-res must be positive, got {r}")));
        }
    }
    if let Some(r) = cli.radius {
        if !(r > 0.0) {
            return Err(Failure::Usage(format!("--radius must be positive, got {r}")));
        }
    }
    Ok(())
}

fn apply_overrides(cli: &Cli, mut cfg: FilterConfig) -> Result<FilterConfig, Failure> {
    if let Some(res) = cli.grid_res {
        cfg.grid = cfg.grid.resampled(res)?;
    }
    if let Some(c) = cli.combine {
        cfg.combine = c.into();
    }
    if cli.radius.is_some() {
        cfg.radius = cli.radius;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scenario_for(seed: Option<u64>, grid_res: Option<f64>, kind: Kind, epochs: usize) -> Result<Scenario, Failure> {
    let mut cfg = ScenarioConfig { epochs, ..Default::default() };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(res) = grid_res {
        cfg.cell_size = res;
    }
    Ok(match kind {
        Kind::Static => sim::make_static_scenario(&cfg)?,
        Kind::Dynamic => sim::make_dynamic_scenario(&cfg)?,
    })
}

fn write_scenario_files(dir: &Path, scenario: &Scenario) -> Result<(Vec<gridfuse_core::Observation>, sim::GroundTruth), Failure> {
    let (events, truth) = sim::generate(scenario)?;
    io::write_scenario(io::create(&dir.join("scenario.json"))?, scenario)?;
    io::write_observations(io::create(&dir.join("observations.csv"))?, &events)?;
    io::write_truth(io::create(&dir.join("truth.csv"))?, &truth)?;
    Ok((events, truth))
}

fn simulate(cli: &Cli, kind: Kind, epochs: usize) -> Outcome {
    let scenario = match &cli.config {
        Some(path) => {
            let mut s = io::read_scenario(io::open(path)?)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if let Some(res) = cli.grid_res {
                s.grid = s.grid.resampled(res)?;
            }
            s
        }
        None => scenario_for(cli.seed, cli.grid_res, kind, epochs)?,
    };
    let (events, truth) = write_scenario_files(&cli.out, &scenario)?;
    let filter = apply_overrides(cli, sim::filter_config(&scenario))?;
    io::write_filter_config(io::create(&cli.out.join("filter.json"))?, &filter)?;
    say(format!(
        "simulated `{}`: {} events, {} epochs -> {}",
        scenario.name,
        events.len(),
        truth.len(),
        cli.out.display()
    ));
    Ok(())
}

fn filter(cli: &Cli, observations: &Path) -> Outcome {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("`filter` needs --config PATH".into()))?;
    let cfg = apply_overrides(cli, io::read_filter_config(io::open(path)?)?)?;
    let events = io::read_observations(io::open(observations)?)?;
    let mut f = GridFilter::new(cfg)?;
    let report = f.run(&events)?;
    io::write_estimates(io::create(&cli.out.join("estimates.csv"))?, &report.estimates)?;
    say(format!(
        "{} estimates from {} epochs ({} rejected, {} reinitializations)",
        report.estimates.len(),
        report.epochs,
        report.rejected,
        report.reinitializations
    ));
    Ok(())
}

fn stats_line(label: &str, s: &StatsSummary) -> String {
    format!(
        "{label:>8}: mean {:.3} m  median {:.3} m  var {:.3} m^2  q68 {:.3}  q95 {:.3}  q99.7 {:.3}  (n={})",
        s.mean, s.median, s.variance, s.sigma1, s.sigma2, s.sigma3, s.count
    )
}

fn evaluate_into(dir: &Path, label: &str, estimates: &[gridfuse_core::Estimate], truth: &[sim::TruthSample]) -> Result<StatsSummary, Failure> {
    let series = error_series(estimates, truth);
    if series.unmatched > 0 {
        log::warn!("{label}: {} estimates without ground truth skipped", series.unmatched);
    }
    let stats = summarize(&series.errors)?;
    io::write_stats(io::create(&dir.join("stats.csv"))?, &[(label, &stats)])?;
    io::write_ecdf(io::create(&dir.join("ecdf.csv"))?, &ecdf(&series.errors)?)?;
    Ok(stats)
}

fn evaluate(cli: &Cli, estimates: &Path, truth: &Path) -> Outcome {
    let est = io::read_estimates(io::open(estimates)?)?;
    let truth = io::read_truth(io::open(truth)?)?;
    let stats = evaluate_into(&cli.out, "run", &est, &truth)?;
    say(stats_line("run", &stats));
    Ok(())
}

fn calibrate(cli: &Cli, residuals: &Path, components: usize) -> Outcome {
    if components == 0 {
        return Err(Failure::Usage("--components must be at least 1".into()));
    }
    let r = io::read_residuals(io::open(residuals)?)?;
    let fit = fit_gmm(&r, components, cli.seed.unwrap_or(0))?;
    io::write_gmm(io::create(&cli.out.join("gmm.json"))?, &fit.model)?;
    for (k, c) in fit.model.components.iter().enumerate() {
        say(format!("component {}: weight {:.4}  mean {:.3}  variance {:.3}", k + 1, c.weight, c.mean, c.variance));
    }
    if !fit.converged {
        log::warn!("EM stopped at the iteration limit");
    }
    Ok(())
}

fn demo(cli: &Cli, static_epochs: usize, dynamic_epochs: usize) -> Outcome {
    let seed = cli.seed.unwrap_or(42);
    let mut rows = Vec::new();
    for (kind, label, epochs) in [(Kind::Static, "static", static_epochs), (Kind::Dynamic, "dynamic", dynamic_epochs)] {
        let dir = cli.out.join(label);
        let scenario = scenario_for(Some(seed), cli.grid_res, kind, epochs)?;
        let (events, truth) = write_scenario_files(&dir, &scenario)?;
        let cfg = apply_overrides(cli, sim::filter_config(&scenario))?;
        io::write_filter_config(io::create(&dir.join("filter.json"))?, &cfg)?;
        let report = GridFilter::new(cfg)?.run(&events)?;
        io::write_estimates(io::create(&dir.join("estimates.csv"))?, &report.estimates)?;
        let stats = evaluate_into(&dir, label, &report.estimates, &truth)?;
        say(stats_line(label, &stats));
        rows.push((label, stats));
    }
    let table: Vec<(&str, &StatsSummary)> = rows.iter().map(|(l, s)| (*l, s)).collect();
    io::write_stats(io::create(&cli.out.join("stats.csv"))?, &table)?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    check_overrides(cli)?;
    match &cli.command {
        Command::Simulate { scenario, epochs } => simulate(cli, *scenario, *epochs),
        Command::Filter { observations } => filter(cli, observations),
        Command::Evaluate { estimates, truth } => evaluate(cli, estimates, truth),
        Command::Calibrate { residuals, components } => calibrate(cli, residuals, *components),
        Command::Demo { static_epochs, dynamic_epochs } => demo(cli, *static_epochs, *dynamic_epochs),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GRIDFUSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
