use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::{cmd_batch_demo, cmd_faithfulness, cmd_profile, cmd_simulate, ExperimentSpec, HarnessError, Overrides};
use super::{FIG5_WORKLOAD, TOKEN_REDUCTION_WORKLOAD};
use crate::trace::RatioGranularity;

/// Scheduling experiments for structured chain-of-thought policies.
#[derive(Debug, Parser)]
#[command(name = "ecot-sched", version)]
pub struct Cli {
    /// Experiment spec (TOML).
    #[arg(long, global = true, env = "ECOT_SCHED_CONFIG")]
    pub config: Option<PathBuf>,
    /// Base seed; repetition r uses seed + r.
    #[arg(long, global = true, env = "ECOT_SCHED_SEED")]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true, env = "ECOT_SCHED_OUT")]
    pub out: Option<PathBuf>,
    /// Report measured wall time instead of the simulated clock.
    #[arg(long, global = true, env = "ECOT_SCHED_WALL_CLOCK")]
    pub wall_clock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Bundled spec to run when --config is absent.
    #[arg(long, env = "ECOT_SCHED_SPEC")]
    pub spec: Option<String>,
    #[arg(long, env = "ECOT_SCHED_TIMESTEPS")]
    pub timesteps: Option<u64>,
    #[arg(long, env = "ECOT_SCHED_REPETITIONS")]
    pub repetitions: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Workload {
    Fig5,
    TokenReduction,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Granularity {
    #[default]
    Token,
    Step,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every mode and repetition of a spec and write artifacts.
    Simulate(ExperimentArgs),
    /// Compare static and continuous batching of one request set.
    BatchDemo {
        /// Request lengths in tokens.
        lengths: Vec<usize>,
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long)]
        pad_to: Option<usize>,
        /// Use a bundled request set instead of LENGTHS.
        #[arg(long, value_enum, conflicts_with = "lengths")]
        workload: Option<Workload>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Update-ratio and length statistics of trace logs.
    Profile {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        granularity: Granularity,
    },
    /// Action-faithfulness curves per mode.
    Faithfulness {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long, env = "ECOT_SCHED_SAMPLES")]
        samples: Option<usize>,
    },
    /// List bundled specs.
    Specs,
}

fn load_spec(cli: &Cli, args: &ExperimentArgs, samples: Option<usize>) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = match (&cli.config, &args.spec) {
        (Some(path), _) => ExperimentSpec::from_path(path)?,
        (None, Some(name)) => ExperimentSpec::bundled(name)?,
        (None, None) => {
            return Err(HarnessError::Config(
                "config: pass --config PATH or --spec NAME (see `ecot-sched specs`)".into(),
            ))
        }
    };
    spec.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        wall_clock: cli.wall_clock,
        timesteps: args.timesteps,
        repetitions: args.repetitions,
        samples,
    })?;
    Ok(spec)
}

fn json<T: Serialize>(out: &mut dyn Write, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let stdout_err = |source| HarnessError::Io {
        path: "<stdout>".into(),
        source,
    };
    match &cli.command {
        Command::Simulate(args) => {
            let spec = load_spec(cli, args, None)?;
            let report = cmd_simulate(&spec)?;
            json(out, &report).map_err(stdout_err)?;
            Ok(if report.aborted() { 1 } else { 0 })
        }
        Command::BatchDemo {
            lengths,
            slots,
            pad_to,
            workload,
            json: as_json,
        } => {
            let (lengths, default_slots, default_pad) = match workload {
                Some(Workload::Fig5) => (FIG5_WORKLOAD.0.to_vec(), FIG5_WORKLOAD.1, Some(FIG5_WORKLOAD.2)),
                Some(Workload::TokenReduction) => (
                    TOKEN_REDUCTION_WORKLOAD.0.to_vec(),
                    TOKEN_REDUCTION_WORKLOAD.1,
                    Some(TOKEN_REDUCTION_WORKLOAD.2),
                ),
                None => (lengths.clone(), lengths.len(), None),
            };
            let report = cmd_batch_demo(&lengths, slots.unwrap_or(default_slots), pad_to.or(default_pad))?;
            if *as_json {
                json(out, &report).map_err(stdout_err)?;
            } else {
                writeln!(out, "{report}").map_err(stdout_err)?;
            }
            Ok(0)
        }
        Command::Profile { logs, granularity } => {
            let g = match granularity {
                Granularity::Token => RatioGranularity::Token,
                Granularity::Step => RatioGranularity::Step,
            };
            let csv = cli.out.as_ref().map(|o| o.join("profile.csv"));
            let report = cmd_profile(logs, g, csv.as_deref())?;
            json(out, &report).map_err(stdout_err)?;
            Ok(0)
        }
        Command::Faithfulness { experiment, samples } => {
            let spec = load_spec(cli, experiment, *samples)?;
            let report = cmd_faithfulness(&spec)?;
            json(out, &report).map_err(stdout_err)?;
            Ok(0)
        }
        Command::Specs => {
            for (name, text) in super::BUNDLED_SPECS {
                let summary = text.lines().next().unwrap_or("").trim_start_matches('#').trim();
                writeln!(out, "{name:<14} {summary}").map_err(stdout_err)?;
            }
            Ok(0)
        }
    }
}

/// Parses `args` and runs the selected command, returning the process exit
/// code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                2
            } else {
                let _ = write!(out, "{}", e.render());
                0
            };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
