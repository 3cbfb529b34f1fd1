//! `pehsim` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Needs, Overrides, RectifierKind};
use output::{Format, Sink};

/// Bad input: flags, config files, data files.
#[derive(Debug)]
pub struct UsageError(pub String);

/// The numerics ran but produced nothing usable.
#[derive(Debug)]
pub struct NumericalError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for NumericalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for NumericalError {}

#[derive(Parser)]
#[command(name = "pehsim", version, about = "Piezoelectric energy harvester bias-flip simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, value_enum)]
    rectifier: Option<RectifierKind>,
    /// Forward drop of each bridge diode (diode rectifier only).
    #[arg(long, global = true, value_name = "VOLTS")]
    diode_drop: Option<f64>,
    #[arg(long, global = true, value_enum)]
    bf: Option<OnOff>,
    /// Post-flip voltage fraction.
    #[arg(long, global = true, value_name = "FLOAT")]
    flip_ratio: Option<f64>,
    /// Sweep grid in hertz.
    #[arg(long, global = true, value_name = "F_LO:F_HI:STEP")]
    grid: Option<String>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Characteristic frequencies, coupling and matched-load figures.
    Analyze,
    /// Optimized harvested power over a frequency grid, with the 3-dB bandwidth.
    Sweep,
    /// Steady-state cycle at one frequency with the optimal rectification voltage.
    Waveform {
        #[arg(long, value_name = "HZ")]
        frequency: Option<f64>,
    },
    /// Stiffness and coupling of a layer stack, optionally against a second stack.
    Design,
    /// Fit a compact model to measured voltages; the configured model is the initial guess.
    Fit {
        /// Measurement CSV with frequency_hz, load_ohms, voltage_volts.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Include the residual after every iteration.
        #[arg(long)]
        history: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<NumericalError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<pehsim::Error>() {
            return match e {
                pehsim::Error::InvalidParameter { .. }
                | pehsim::Error::InvalidConfig(_)
                | pehsim::Error::InsufficientData(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

/// A closed downstream pipe (`pehsim sweep | head`) is not an error.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<csv::Error>().is_some_and(|e| match e.kind() {
                csv::ErrorKind::Io(io) => io.kind() == std::io::ErrorKind::BrokenPipe,
                _ => false,
            })
            || c.downcast_ref::<serde_json::Error>()
                .is_some_and(|e| e.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe))
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    if let Some(n) = c.jobs {
        if n == 0 {
            anyhow::bail!(UsageError("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("--jobs: {e}")))?;
    }
    let mut overrides = Overrides {
        rectifier: c.rectifier,
        diode_drop: c.diode_drop,
        bias_flip: c.bf.map(|b| matches!(b, OnOff::On)),
        flip_ratio: c.flip_ratio,
        grid: c.grid.clone(),
        ..Default::default()
    };
    let (needs, default_format) = match &cli.command {
        Command::Analyze => (Needs::default(), Format::Json),
        Command::Sweep => (
            Needs {
                grid: true,
                ..Default::default()
            },
            Format::Csv,
        ),
        Command::Waveform { frequency } => {
            overrides.frequency = *frequency;
            (
                Needs {
                    waveform: true,
                    ..Default::default()
                },
                Format::Csv,
            )
        }
        Command::Design => (
            Needs {
                design: true,
                ..Default::default()
            },
            Format::Json,
        ),
        Command::Fit { data, .. } => {
            overrides.data = data.clone();
            (
                Needs {
                    fit_data: true,
                    ..Default::default()
                },
                Format::Json,
            )
        }
    };
    let cfg = config::resolve(c.config.as_deref(), &overrides, needs)?;
    let format = c.format.unwrap_or(default_format);
    let sink = Sink::new(c.out.as_deref());
    match cli.command {
        Command::Analyze => commands::analyze(&cfg, format, &sink),
        Command::Sweep => commands::sweep(&cfg, format, &sink),
        Command::Waveform { .. } => commands::waveform(&cfg, format, &sink),
        Command::Design => commands::design(&cfg, format, &sink),
        Command::Fit { history, .. } => commands::fit(&cfg, format, &sink, history),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
