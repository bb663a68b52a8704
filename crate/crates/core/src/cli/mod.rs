//! Command-line front end: argument parsing, config resolution, and the
//! subcommands `thresholds`, `delta-curve`, `equilibria`, `verify`,
//! `figure1` and `simulate`.

mod commands;
mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::equilibrium::SolverSettings;
use crate::error::{Error, Result};
use crate::game::{GameConfig, RawConfig};

pub use commands::{
    cmd_delta_curve, cmd_equilibria, cmd_figure1, cmd_simulate, cmd_thresholds, parse_curve_csv,
    CurveSummary, DeltaCurve, Figure1, Figure1Options, SimulateOptions, ThresholdRow, ThresholdTable,
};
pub use verify::{cmd_verify, verify_with, CheckResult, Formulas, VerifyLevel, VerifyOutcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DEFAULT_CONFIG: RawConfig = RawConfig {
    players: Some(20),
    groups: Some(4),
    group_size: Some(5),
    sample_size: Some(1),
    rate: Some(16.0),
};

#[derive(Debug, Parser)]
#[command(
    name = "groupgoods",
    version,
    about = "Equilibria of sequential group public-goods games under position uncertainty"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Key-value config file (keys N, b, n, m, r); explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Total number of players.
    #[arg(long = "N", global = true)]
    pub players: Option<i64>,
    /// Number of groups.
    #[arg(long = "b", global = true)]
    pub groups: Option<i64>,
    /// Group size.
    #[arg(long = "n", global = true)]
    pub group_size: Option<i64>,
    /// Number of predecessor groups observed.
    #[arg(long = "m", global = true)]
    pub sample_size: Option<i64>,
    /// Rate of return on the common fund.
    #[arg(long = "r", global = true)]
    pub rate: Option<f64>,
    /// Forgiveness probability for `simulate` (default 0.5).
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Tremble probability for `simulate` (default 0.01).
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Monte Carlo replications (default 100000).
    #[arg(long, global = true)]
    pub reps: Option<u64>,
    /// Base seed; replication k uses stream k of it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Grid points for scans (default 2001) and curves (default 201).
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Output file, or directory for `figure1`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format (thresholds, delta-curve).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pure-equilibrium thresholds on r and their feasibility.
    Thresholds,
    /// Δ(γ) on a grid plus its maximum and roots.
    DeltaCurve,
    /// Pure and mixed equilibrium report.
    Equilibria,
    /// Run the oracle and invariant suites.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: VerifyLevel,
    },
    /// Data for the two Δ curves (n = 5 solid, n = 1 dashed).
    Figure1,
    /// Monte Carlo estimates of φ, ψ and payoffs.
    Simulate {
        #[arg(long, value_enum, default_value = "all")]
        quantity: SimQuantity,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimQuantity {
    Phi,
    Psi,
    Payoff,
    All,
}

/// Provenance written into every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: GameConfig,
    pub settings: SolverSettings,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &GameConfig, settings: &SolverSettings, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config: *config,
            settings: *settings,
            seed,
            outputs: Vec::new(),
            version: VERSION.to_string(),
        }
    }

    /// `# key: value` lines for CSV headers.
    pub fn csv_header(&self) -> String {
        let mut s = format!(
            "# groupgoods {}\n# command: {}\n# config: {}\n# settings: grid_points={} root_tolerance={:e} max_iterations={} bracket_epsilon={:e}\n# seed: {}\n",
            self.version,
            self.command,
            self.config,
            self.settings.grid_points,
            self.settings.root_tolerance,
            self.settings.max_iterations,
            self.settings.bracket_epsilon,
            self.seed
        );
        for o in &self.outputs {
            s.push_str(&format!("# output: {o}\n"));
        }
        s
    }
}

impl CommonArgs {
    fn flag_config(&self) -> RawConfig {
        RawConfig {
            players: self.players,
            groups: self.groups,
            group_size: self.group_size,
            sample_size: self.sample_size,
            rate: self.rate,
        }
    }

    /// File values (or the built-in default game), then explicit flags. When
    /// any of `N`, `b`, `n` is given on the command line the default game is
    /// not used, so the missing size can be derived and `r` must be given.
    pub fn resolve_config(&self) -> Result<GameConfig> {
        let flags = self.flag_config();
        let base = match &self.config {
            Some(path) => RawConfig::parse(&std::fs::read_to_string(path)?)?,
            None if flags.players.is_some() || flags.groups.is_some() || flags.group_size.is_some() => {
                RawConfig::default()
            }
            None => DEFAULT_CONFIG,
        };
        let mut merged = base.overridden_by(&flags);
        if merged.sample_size.is_none() {
            merged.sample_size = Some(1);
        }
        merged.resolve()
    }

    pub fn settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        if let Some(g) = self.grid {
            s.grid_points = g;
        }
        s
    }
}

/// Exit status for an error: 1 validation, 2 internal inconsistency,
/// 3 insufficient simulation data.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Internal(_) => 2,
        Error::InsufficientData(_) => 3,
        _ => 1,
    }
}

/// Runs a parsed command line, printing to stdout. Returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let common = &cli.common;
    let settings = common.settings();
    settings.validate()?;
    match &cli.command {
        Command::Thresholds => {
            let config = common.resolve_config()?;
            let table = cmd_thresholds(&config);
            let text = match common.format {
                Some(Format::Json) => serde_json::to_string_pretty(&table)? + "\n",
                _ => table.to_string(),
            };
            write_or_print(&common.out, &text)?;
        }
        Command::DeltaCurve => {
            let config = common.resolve_config()?;
            let grid = common.grid.unwrap_or(201);
            let mut manifest = RunManifest::new("delta-curve", &config, &settings, common.seed);
            if let Some(p) = &common.out {
                manifest.outputs.push(p.display().to_string());
            }
            let curve = cmd_delta_curve(&config, config.rate(), grid, &settings, manifest)?;
            let text = match common.format {
                Some(Format::Json) => serde_json::to_string_pretty(&curve)? + "\n",
                _ => curve.to_csv(),
            };
            write_or_print(&common.out, &text)?;
            if common.out.is_some() {
                println!("{}", curve.summary);
            }
        }
        Command::Equilibria => {
            let config = common.resolve_config()?;
            let manifest = RunManifest::new("equilibria", &config, &settings, common.seed);
            let text = cmd_equilibria(&config, &settings, &manifest)?;
            write_or_print(&common.out, &(text + "\n"))?;
        }
        Command::Verify { level } => {
            let config = common.resolve_config()?;
            let outcome = cmd_verify(&config, *level, common.seed)?;
            write_or_print(&common.out, &outcome.to_string())?;
            if !outcome.all_passed() {
                return Ok(2);
            }
        }
        Command::Figure1 => {
            let opts = Figure1Options {
                rate: common.rate,
                grid: common.grid.unwrap_or(201),
                out_dir: common.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            };
            let fig = cmd_figure1(&opts, &settings, common.seed)?;
            println!("{fig}");
        }
        Command::Simulate { quantity } => {
            let config = common.resolve_config()?;
            let opts = SimulateOptions {
                quantity: *quantity,
                gamma: common.gamma.unwrap_or(0.5),
                epsilon: common.epsilon.unwrap_or(0.01),
                replications: common.reps.unwrap_or(100_000),
                seed: common.seed,
            };
            let manifest = RunManifest::new("simulate", &config, &settings, common.seed);
            let text = cmd_simulate(&config, &opts, &manifest)?;
            write_or_print(&common.out, &text)?;
        }
    }
    Ok(0)
}
