//! Command-line front end: argument parsing, configuration, thread pool setup
//! and the subcommands.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitStatus};

#[derive(Debug, Parser)]
#[command(name = "assoc4d", version, about = "Multi-view multi-person 4D association")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set solver.graph.w_size=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads (overrides `threads`; 0 lets the runtime decide).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Association mode: full-4d, no-tracking or two-step (overrides `mode`).
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output; repeat for more.
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reconstruct 3D skeletons from calibrated multi-view detections.
    Solve {
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Skeleton output file.
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
        /// Per-frame timing and size diagnostics as key=value lines.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Generate a synthetic scene: calibration, detections and ground truth.
    Synth {
        /// Output directory.
        #[arg(long, short = 'o')]
        out: PathBuf,
        /// Write detections in the binary format.
        #[arg(long)]
        binary: bool,
    },
    /// Score predicted skeletons against ground truth.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare the greedy objective with the exhaustive optimum per frame.
    Oracle {
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Objective table file (stdout when absent).
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
        /// Search state cap per frame (overrides `oracle.cap`).
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Time the association step on a synthetic sequence.
    Bench,
    /// Print the effective configuration with all defaults filled in.
    Config,
}

impl Cli {
    /// Configuration file, then `--set` overrides, then dedicated flags.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(t) = self.threads {
            overrides.push(format!("threads={t}"));
        }
        if let Some(m) = &self.mode {
            overrides.push(format!("mode={m:?}"));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Command::Oracle { cap: Some(cap), .. } = self.command {
            overrides.push(format!("oracle.cap={cap}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Runs `command` inside a pool of `threads` workers (the global pool when 0).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::runtime)?;
    Ok(pool.install(f))
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = cli.run_config()?;
    with_threads(cfg.threads, || match &cli.command {
        Command::Solve {
            calibration,
            detections,
            output,
            diagnostics,
        } => commands::solve(
            &cfg,
            &commands::SolveArgs {
                calibration: calibration.clone(),
                detections: detections.clone(),
                output: output.clone(),
                diagnostics: diagnostics.clone(),
            },
        ),
        Command::Synth { out, binary } => commands::synth(
            &cfg,
            &commands::SynthArgs {
                out: out.clone(),
                binary: *binary,
            },
        ),
        Command::Eval { pred, gt, json } => commands::evaluate(
            &cfg,
            &commands::EvalArgs {
                pred: pred.clone(),
                gt: gt.clone(),
                json: json.clone(),
            },
        )
        .map(drop),
        Command::Oracle {
            calibration,
            detections,
            output,
            ..
        } => commands::oracle(
            &cfg,
            &commands::OracleArgs {
                calibration: calibration.clone(),
                detections: detections.clone(),
                output: output.clone(),
            },
        )
        .map(drop),
        Command::Bench => commands::bench(&cfg).map(|r| print!("{}", r.to_lines())),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    })?
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage.code() } else { ExitStatus::Ok.code() };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => ExitStatus::Ok.code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.status.code()
        }
    }
}
