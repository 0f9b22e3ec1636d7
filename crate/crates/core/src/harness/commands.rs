use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentSpec, HarnessError};
use crate::batcher::{continuous_batch, padding_waste, static_batch, BatchSchedule, GenerationRequest};
use crate::metrics::{
    faithfulness_curve, profile_episodes_with, write_faithfulness_csv, FaithfulnessReport, FaithfulnessSample, ModeTable, ProfileReport,
};
use crate::schedulers::{run_episode, Abort, EpisodeInput, EpisodeReport, Scheduler, SchedulerConfig};
use crate::trace::{deserialize_trace, Context, RatioGranularity, ReasoningTrace};

/// Step lengths whose static/continuous token ratio exceeds six: seven
/// one-token requests sharing a batch with a 120-token one.
pub const TOKEN_REDUCTION_WORKLOAD: ([usize; 8], usize, usize) = ([1, 1, 1, 1, 1, 1, 1, 120], 8, 120);

/// Lengths, slots and padding of the illustrative static-vs-continuous
/// example.
pub const FIG5_WORKLOAD: ([usize; 4], usize, usize) = ([3, 6, 8, 9], 4, 11);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// One (mode, repetition) run.
pub struct Cell {
    pub config: SchedulerConfig,
    pub rep: u64,
    pub seed: u64,
    pub report: EpisodeReport,
}

/// Runs every (mode, repetition) cell of `spec` in memory.
pub fn run_cells(spec: &ExperimentSpec) -> Result<Vec<Cell>, HarnessError> {
    let mut cells = Vec::new();
    for rep in 0..spec.repetitions {
        let seed = spec.seed.wrapping_add(rep);
        for config in &spec.modes {
            let backend = spec.backend.build(&spec.schema, seed)?;
            let mut scheduler = Scheduler::new(config.clone(), backend.as_ref(), spec.schema.clone())
                .map_err(|e| HarnessError::Config(format!("modes: {e}")))?;
            let input = EpisodeInput::new(spec.instruction.clone(), seed, spec.timesteps);
            let report = run_episode(&mut scheduler, &input);
            cells.push(Cell {
                config: config.clone(),
                rep,
                seed,
                report,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub mode: String,
    pub rep: u64,
    pub seed: u64,
    pub timesteps: usize,
    pub mean_latency_ms: Option<f64>,
    pub tokens: u64,
    pub failures: u64,
    pub background_failures: u64,
    pub aborted: Option<Abort>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub name: String,
    pub dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub comparison: ModeTable,
    pub files: Vec<PathBuf>,
}

impl SimulateReport {
    pub fn aborted(&self) -> bool {
        self.cells.iter().any(|c| c.aborted.is_some())
    }
}

/// Runs the experiment and writes `<out>/<name>/<mode>/<rep>/trace.jsonl`,
/// `.../timesteps.csv` and `<out>/<name>/comparison.csv`. Aborted cells
/// keep whatever they completed.
pub fn cmd_simulate(spec: &ExperimentSpec) -> Result<SimulateReport, HarnessError> {
    let dir = spec.out_root().join(&spec.name);
    let cells = run_cells(spec)?;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for cell in &cells {
        let label = cell.config.label();
        let cell_dir = dir.join(&label).join(cell.rep.to_string());

        let log = cell_dir.join("trace.jsonl");
        let mut w = create(&log)?;
        cell.report.write_trace_log(&mut w).map_err(io_err(&log))?;
        w.flush().map_err(io_err(&log))?;
        files.push(log);

        let csv_path = cell_dir.join("timesteps.csv");
        cell.report.write_timesteps_csv(create(&csv_path)?)?;
        files.push(csv_path);

        summaries.push(CellSummary {
            mode: label,
            rep: cell.rep,
            seed: cell.seed,
            timesteps: cell.report.results.len(),
            mean_latency_ms: cell.report.mean_latency(),
            tokens: cell.report.total_tokens(),
            failures: cell.report.total_failures(),
            background_failures: cell.report.background_failures,
            aborted: cell.report.aborted.clone(),
            dir: cell_dir,
        });
    }

    let latencies: Vec<(String, Vec<f64>, u64)> = cells
        .iter()
        .filter(|c| !c.report.results.is_empty())
        .map(|c| (c.config.label(), c.report.latencies(), c.report.total_tokens()))
        .collect();
    let comparison = ModeTable::build(latencies.iter().map(|(l, v, t)| (l.as_str(), v.as_slice(), *t)))?;
    let table = dir.join("comparison.csv");
    comparison.write_csv(create(&table)?)?;
    files.push(table);

    Ok(SimulateReport {
        name: spec.name.clone(),
        dir,
        cells: summaries,
        comparison,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    /// Slot-iterations held by a request or padding.
    pub occupied: usize,
    pub tokens: usize,
    pub padding: usize,
    pub makespan: usize,
    pub padding_waste: f64,
}

impl BatchStats {
    fn of(s: &BatchSchedule) -> Self {
        Self {
            occupied: s.occupied_slot_iterations(),
            tokens: s.token_slot_iterations(),
            padding: s.pad_slot_iterations(),
            makespan: s.makespan(),
            padding_waste: padding_waste(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchDemoReport {
    pub lengths: Vec<usize>,
    pub slots: usize,
    pub pad_to: usize,
    #[serde(rename = "static")]
    pub static_: BatchStats,
    pub continuous: BatchStats,
    /// Static over continuous occupied slot-iterations.
    pub token_ratio: f64,
}

impl fmt::Display for BatchDemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "lengths {:?}, {} slots, static batch padded to {}",
            self.lengths, self.slots, self.pad_to
        )?;
        writeln!(
            f,
            "{:<11} {:>9} {:>7} {:>8} {:>9} {:>14}",
            "mode", "occupied", "tokens", "padding", "makespan", "padding_waste"
        )?;
        for (name, s) in [("static", &self.static_), ("continuous", &self.continuous)] {
            writeln!(
                f,
                "{:<11} {:>9} {:>7} {:>8} {:>9} {:>14.3}",
                name, s.occupied, s.tokens, s.padding, s.makespan, s.padding_waste
            )?;
        }
        write!(f, "static/continuous: {:.3}", self.token_ratio)
    }
}

/// Static and continuous schedules of one request set side by side.
pub fn cmd_batch_demo(lengths: &[usize], slots: usize, pad_to: Option<usize>) -> Result<BatchDemoReport, HarnessError> {
    if lengths.is_empty() {
        return Err(HarnessError::Config("lengths: at least one request length is required".into()));
    }
    let requests = GenerationRequest::from_lengths(lengths);
    let stat = static_batch(&requests, slots, pad_to)?;
    let cont = continuous_batch(&requests, slots)?;
    let static_ = BatchStats::of(&stat);
    let continuous = BatchStats::of(&cont);
    Ok(BatchDemoReport {
        lengths: lengths.to_vec(),
        slots,
        pad_to: pad_to.unwrap_or_else(|| lengths.iter().copied().max().unwrap_or(0)),
        token_ratio: static_.occupied as f64 / continuous.occupied as f64,
        static_,
        continuous,
    })
}

/// Reads trace logs; each file is split into episodes wherever the
/// timestep fails to increase.
pub fn read_trace_logs(paths: &[PathBuf]) -> Result<Vec<Vec<ReasoningTrace>>, HarnessError> {
    let mut episodes: Vec<Vec<ReasoningTrace>> = Vec::new();
    for path in paths {
        let text = fs::read(path).map_err(io_err(path))?;
        let mut current: Vec<ReasoningTrace> = Vec::new();
        for (n, line) in text.split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let rec = deserialize_trace(line).map_err(|e| HarnessError::Parse {
                path: path.clone(),
                line: n + 1,
                message: e.to_string(),
            })?;
            if current.last().is_some_and(|prev| rec.trace.timestep <= prev.timestep) {
                episodes.push(std::mem::take(&mut current));
            }
            current.push(rec.trace);
        }
        if !current.is_empty() {
            episodes.push(current);
        }
    }
    Ok(episodes)
}

/// Per-step update-ratio and length statistics of the given logs; written
/// to `out` as CSV when provided.
pub fn cmd_profile(
    paths: &[PathBuf],
    granularity: RatioGranularity,
    out: Option<&Path>,
) -> Result<ProfileReport, HarnessError> {
    let episodes = read_trace_logs(paths)?;
    let report = profile_episodes_with(&episodes, granularity)?;
    if let Some(path) = out {
        report.write_csv(create(path)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessCurve {
    pub mode: String,
    #[serde(flatten)]
    pub report: FaithfulnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessOutput {
    pub name: String,
    pub curves: Vec<FaithfulnessCurve>,
    pub file: PathBuf,
}

/// Builds the samples a faithfulness curve draws from.
pub fn faithfulness_pool(spec: &ExperimentSpec, cells: &[Cell], label: &str) -> Vec<FaithfulnessSample> {
    cells
        .iter()
        .filter(|c| c.config.label() == label)
        .flat_map(|c| {
            let input = EpisodeInput::new(spec.instruction.clone(), c.seed, spec.timesteps);
            c.report.results.iter().map(move |r| FaithfulnessSample {
                context: Context::hashed(&input.instruction, &input.observation(r.trace.timestep)),
                trace: r.trace.clone(),
                staleness: r.staleness.clone(),
            })
        })
        .collect()
}

/// AF curve per mode, written to `<out>/<name>/faithfulness.csv`.
pub fn cmd_faithfulness(spec: &ExperimentSpec) -> Result<FaithfulnessOutput, HarnessError> {
    let dim = spec.modes[0].action_dim;
    if spec.modes.iter().any(|m| m.action_dim != dim) {
        return Err(HarnessError::Config("modes: faithfulness needs one action_dim across modes".into()));
    }
    let policy = spec.faithfulness.policy(spec.schema.num_reasoning(), dim)?;
    let cells = run_cells(spec)?;
    let mut curves = Vec::new();
    for config in &spec.modes {
        let label = config.label();
        let pool = faithfulness_pool(spec, &cells, &label);
        let report = faithfulness_curve(&policy, &pool, spec.faithfulness.samples, spec.seed)?;
        curves.push(FaithfulnessCurve { mode: label, report });
    }
    let file = spec.out_root().join(&spec.name).join("faithfulness.csv");
    write_faithfulness_csv(curves.iter().map(|c| (c.mode.as_str(), &c.report)), create(&file)?)?;
    Ok(FaithfulnessOutput {
        name: spec.name.clone(),
        curves,
        file,
    })
}
