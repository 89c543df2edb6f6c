//! Command-line front end: configuration loading, experiment orchestration
//! and structured export of the results.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use classd::InputSignal;

use config::{Experiment, ExperimentConfig, Format};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "classd", version, about = "Class-D amplifier analysis: steady state, stability, transfer function, simulation and spectra")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic steady state at each operating point.
    Steady,
    /// Floquet multipliers and the stability threshold at each operating point.
    Stability,
    /// Parameter sweep: multipliers, THD, harmonics and skipped pulses per grid point.
    Sweep {
        /// Swept parameter (c1, c2, c3, omega1, r, l, c, period).
        #[arg(long)]
        param: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Small-signal transfer function over a frequency grid.
    Tf,
    /// Event-driven simulation and harmonic analysis of the pulse train.
    Simulate {
        /// Write the pulse events instead of the harmonic table.
        #[arg(long)]
        events: bool,
    },
    /// Perturbation prediction of the output harmonics.
    Predict {
        /// Write the predicted audio-rate time series instead.
        #[arg(long)]
        samples: bool,
    },
    /// Analytic vs simulated harmonics; exit status 1 if a tolerance is exceeded.
    Compare,
    /// Runs the experiment named by the config key `experiment`.
    Run,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment configuration (defaults to the reference design).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (defaults to `output.path`, else stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for sweeps (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[arg(long, global = true)]
    pub r: Option<f64>,
    #[arg(long, global = true)]
    pub l: Option<f64>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub period: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub c1: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub c2: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub c3: Option<f64>,
    #[arg(long, global = true)]
    pub omega1: Option<f64>,
    /// Ripple compensation (0 or 1).
    #[arg(long, global = true)]
    pub k: Option<u8>,

    /// Operating point(s) for steady, stability and tf (repeatable).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub u0: Vec<f64>,
    /// Replace the input by a constant.
    #[arg(long, global = true, allow_hyphen_values = true, conflicts_with_all = ["amplitude", "frequency"])]
    pub constant: Option<f64>,
    /// Sine amplitude (the configured input must be a sine, or absent).
    #[arg(long, global = true)]
    pub amplitude: Option<f64>,
    /// Sine frequency in Hz.
    #[arg(long, global = true)]
    pub frequency: Option<f64>,
    #[arg(long, global = true)]
    pub transient_periods: Option<usize>,
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
}

impl CommonArgs {
    /// Loads the configuration and applies the command-line overrides.
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let p = &mut cfg.params;
        for (slot, value) in [
            (&mut p.r, self.r),
            (&mut p.l, self.l),
            (&mut p.c, self.c),
            (&mut p.period, self.period),
            (&mut p.c1, self.c1),
            (&mut p.c2, self.c2),
            (&mut p.c3, self.c3),
            (&mut p.omega1, self.omega1),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        if self.k.is_some() {
            p.k = self.k;
        }
        if !self.u0.is_empty() {
            cfg.operating_point.u0 = self.u0.clone();
            cfg.sweep.u0 = self.u0[0];
        }
        if let Some(value) = self.constant {
            cfg.input = InputSignal::Constant { value };
        }
        if self.amplitude.is_some() || self.frequency.is_some() {
            match &mut cfg.input {
                InputSignal::Sine { amplitude, frequency, .. } => {
                    *amplitude = self.amplitude.unwrap_or(*amplitude);
                    *frequency = self.frequency.unwrap_or(*frequency);
                }
                _ => {
                    return Err(CliError::Config(
                        "`input`: --amplitude/--frequency need a sine input".into(),
                    ))
                }
            }
        }
        if let Some(v) = self.transient_periods {
            cfg.transient_periods = v;
        }
        if let Some(v) = self.n_max {
            cfg.n_max = v;
            cfg.compare.harmonics = cfg.compare.harmonics.min(v);
        }
        if let Some(f) = self.format {
            cfg.output.format = f;
        }
        if let Some(out) = &self.out {
            cfg.output.path = Some(out.display().to_string());
        }
        Ok(cfg)
    }
}

fn write_table(table: &output::Table, cfg: &ExperimentConfig) -> CliResult<()> {
    let format = cfg.output.format;
    match &cfg.output.path {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Output(format!("{path}: {e}")))?;
            let mut w = BufWriter::new(file);
            table.write(format, &mut w)?;
            w.flush().map_err(|e| CliError::Output(format!("{path}: {e}")))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write(format, &mut lock)
        }
    }
}

/// Runs one invocation; the error's exit code distinguishes tolerance,
/// configuration and computation failures.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = cli.common.resolve()?;
    let experiment = match &cli.command {
        Command::Steady => Experiment::Steady,
        Command::Stability => Experiment::Stability,
        Command::Sweep { param, lo, hi, points } => {
            if let Some(p) = param {
                cfg.sweep.param = p.clone();
            }
            cfg.sweep.lo = lo.unwrap_or(cfg.sweep.lo);
            cfg.sweep.hi = hi.unwrap_or(cfg.sweep.hi);
            cfg.sweep.points = points.unwrap_or(cfg.sweep.points);
            Experiment::Sweep
        }
        Command::Tf => Experiment::Tf,
        Command::Simulate { .. } => Experiment::Simulate,
        Command::Predict { .. } => Experiment::Predict,
        Command::Compare => Experiment::Compare,
        Command::Run => cfg
            .experiment
            .ok_or_else(|| CliError::Config("`experiment`: required by `classd run`".into()))?,
    };
    cfg.validate()?;
    let events = matches!(cli.command, Command::Simulate { events: true });
    let samples = matches!(cli.command, Command::Predict { samples: true });
    log::info!("running {experiment}");
    let (table, failures) = match experiment {
        Experiment::Steady => (commands::steady(&cfg)?, 0),
        Experiment::Stability => (commands::stability(&cfg)?, 0),
        Experiment::Sweep => (commands::sweep(&cfg, cli.common.jobs)?, 0),
        Experiment::Tf => (commands::tf(&cfg)?, 0),
        Experiment::Simulate => (commands::simulate_cmd(&cfg, events)?, 0),
        Experiment::Predict => (commands::predict(&cfg, samples)?, 0),
        Experiment::Compare => commands::compare(&cfg)?,
    };
    write_table(&table, &cfg)?;
    if failures > 0 {
        return Err(CliError::Tolerance(failures));
    }
    Ok(())
}
