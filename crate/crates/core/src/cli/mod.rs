//! Command-line front end: `simulate`, `run`, `replay`, `gantt` and `serve`.
//!
//! Every flag can also be set through a `CREWFLOW_`-prefixed environment
//! variable (`CREWFLOW_SEED`, `CREWFLOW_PRESET`, ...); flags win.
//!
//! Exit codes: 0 success, 1 validation or user error, 2 internal failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crew::{feedback_preset, pipeline_preset, WorkerRegistry};
use crate::feedback::{scripted_feedback_source, FeedbackSource, FeedbackTrace, FrequencyPolicy, PolicyName, Silent};
use crate::graph::{validate_pipeline, Durations, EventId, PipelineDef, ValidatedGraph};
use crate::scheduler::{run, Mode, RunConfig, RunError, RunResult, SliceClock, VirtualSliceClock, WallSliceClock};
use crate::service::{ClockKind, Service, ServiceConfig};
use crate::store::{read_state_file, replay, verify_against, GanttRow, RunLog, RunState, Store};
use crate::{Time, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "crewflow", version, about = "Feedback-driven DAG orchestration for film production")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a pipeline on the virtual clock and compare serial with parallel.
    Simulate(SimulateArgs),
    /// Run a pipeline, by default on the wall clock.
    Run(RunArgs),
    /// Rebuild a run's state from its log and check it.
    Replay(ReplayArgs),
    /// Export Gantt rows from a log, or from a fresh simulation.
    Gantt(GanttArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Pipeline definition file (TOML or JSON).
    #[arg(long, env = "CREWFLOW_PIPELINE", conflicts_with = "preset")]
    pub pipeline: Option<PathBuf>,
    /// Bundled pipeline preset.
    #[arg(long, env = "CREWFLOW_PRESET", default_value = "film")]
    pub preset: String,
    /// Feedback trace file, or the name of a bundled trace.
    #[arg(long, env = "CREWFLOW_FEEDBACK")]
    pub feedback: Option<String>,
    /// Interaction policy applied to the trace: none, low, intermediate, no-limits.
    #[arg(long, env = "CREWFLOW_POLICY", default_value = "no-limits")]
    pub policy: String,
    #[arg(long, env = "CREWFLOW_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Duration override file: a map from event id to ticks.
    #[arg(long, env = "CREWFLOW_DURATIONS")]
    pub durations: Option<PathBuf>,
    /// Single duration override, `EVENT=TICKS`. Repeatable.
    #[arg(long = "duration", value_name = "EVENT=TICKS")]
    pub duration: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Parallel,
    Serial,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, env = "CREWFLOW_MODE", value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Also write the report here.
    #[arg(long, env = "CREWFLOW_OUT")]
    pub out: Option<PathBuf>,
    /// Store the run logs under this directory (runs `parallel` and `serial`).
    #[arg(long, env = "CREWFLOW_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, env = "CREWFLOW_MODE", default_value = "parallel")]
    pub mode: Mode,
    #[arg(long, env = "CREWFLOW_CLOCK", default_value = "wall")]
    pub clock: ClockKind,
    /// Wall milliseconds per tick.
    #[arg(long, env = "CREWFLOW_TICK_MS", default_value_t = 20)]
    pub tick_ms: u64,
    /// How long a finished wall-clock run stays open for feedback.
    #[arg(long, env = "CREWFLOW_REVIEW_WINDOW_MS", default_value_t = 0)]
    pub review_window_ms: u64,
    /// Print each log record as it is written.
    #[arg(long)]
    pub follow: bool,
    #[arg(long, env = "CREWFLOW_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
    #[arg(long, env = "CREWFLOW_RUN_ID", default_value = "run")]
    pub run_id: String,
    #[arg(long, env = "CREWFLOW_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A log file (NDJSON) or a run directory holding `log.ndjson`.
    #[arg(long, env = "CREWFLOW_LOG")]
    pub log: PathBuf,
    #[arg(long, env = "CREWFLOW_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GanttFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct GanttArgs {
    /// Read rows from this log instead of simulating.
    #[arg(long, env = "CREWFLOW_LOG")]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, env = "CREWFLOW_MODE", default_value = "parallel")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "json")]
    pub format: GanttFormat,
    #[arg(long, env = "CREWFLOW_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CREWFLOW_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Persist runs under this directory instead of in memory.
    #[arg(long, env = "CREWFLOW_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, env = "CREWFLOW_TICK_MS", default_value_t = 20)]
    pub tick_ms: u64,
    #[arg(long, env = "CREWFLOW_REVIEW_WINDOW_MS", default_value_t = 2000)]
    pub review_window_ms: u64,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: exit code 1.
    #[error("{0}")]
    User(String),
    /// Broken invariant or failed I/O on our side: exit code 2.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::User(_) => 1,
            Self::Internal(_) => 2,
        }
    }

    fn user(e: impl ToString) -> Self {
        Self::User(e.to_string())
    }

    fn internal(e: impl ToString) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::MissingWorker(_) | RunError::Graph(_) | RunError::WorkerFailure { .. } => Self::user(e),
            _ => Self::internal(e),
        }
    }
}

/// Per-mode outcome inside a [`SimReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub makespan: Time,
    pub slice_count: u64,
    pub revocations: usize,
    pub attempts: BTreeMap<EventId, u32>,
}

impl From<&RunResult> for ModeSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            makespan: r.makespan,
            slice_count: r.slice_count,
            revocations: r.revocations,
            attempts: r.attempts.clone(),
        }
    }
}

/// Serial versus parallel comparison. The headline counters come from the
/// parallel run when one was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub pipeline: String,
    pub seed: u64,
    pub serial_makespan: Option<Time>,
    pub parallel_makespan: Option<Time>,
    /// `parallel / serial` as a float.
    pub multiple: Option<f64>,
    /// The same ratio in lowest terms, e.g. `68/95`.
    pub multiple_exact: Option<String>,
    pub slice_count: u64,
    pub revocations: usize,
    pub attempts: BTreeMap<EventId, u32>,
    pub runs: BTreeMap<Mode, ModeSummary>,
}

impl SimReport {
    pub fn new(pipeline: &str, seed: u64, parallel: Option<&RunResult>, serial: Option<&RunResult>) -> Self {
        let headline = parallel.or(serial).map(ModeSummary::from).expect("at least one mode ran");
        let (serial_makespan, parallel_makespan) = (serial.map(|r| r.makespan), parallel.map(|r| r.makespan));
        let (multiple, multiple_exact) = match (parallel_makespan, serial_makespan) {
            (Some(p), Some(s)) if s > 0 => {
                let g = num_integer::gcd(p, s);
                (Some(p as f64 / s as f64), Some(format!("{}/{}", p / g, s / g)))
            }
            _ => (None, None),
        };
        let mut runs = BTreeMap::new();
        for (mode, r) in [(Mode::Parallel, parallel), (Mode::Serial, serial)] {
            if let Some(r) = r {
                runs.insert(mode, ModeSummary::from(r));
            }
        }
        Self {
            pipeline: pipeline.to_owned(),
            seed,
            serial_makespan,
            parallel_makespan,
            multiple,
            multiple_exact,
            slice_count: headline.slice_count,
            revocations: headline.revocations,
            attempts: headline.attempts,
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Pipeline, feedback and overrides resolved from [`PipelineArgs`].
pub struct Inputs {
    pub def: PipelineDef,
    pub graph: ValidatedGraph,
    pub trace: Option<FeedbackTrace>,
    pub policy: FrequencyPolicy,
    pub durations: Durations,
    pub seed: u64,
}

impl Inputs {
    pub fn load(args: &PipelineArgs) -> Result<Self, CliError> {
        let def = match &args.pipeline {
            Some(path) => PipelineDef::load(path).map_err(CliError::user)?,
            None => pipeline_preset(&args.preset).map_err(CliError::user)?,
        };
        let graph = validate_pipeline(&def).map_err(CliError::user)?;
        let trace = match &args.feedback {
            None => None,
            Some(spec) if Path::new(spec).exists() => Some(FeedbackTrace::load(spec).map_err(CliError::user)?),
            Some(name) => Some(
                feedback_preset(name)
                    .map_err(|_| CliError::User(format!("feedback `{name}` is neither a file nor a bundled trace")))?,
            ),
        };
        let policy = FrequencyPolicy::preset(args.policy.parse::<PolicyName>().map_err(CliError::user)?);
        let mut durations = match &args.durations {
            Some(path) => load_durations(path)?,
            None => Durations::new(),
        };
        for pair in &args.duration {
            let (id, ticks) = pair
                .split_once('=')
                .ok_or_else(|| CliError::User(format!("--duration expects EVENT=TICKS, got `{pair}`")))?;
            let ticks = ticks.trim().parse::<Time>().map_err(|e| CliError::User(format!("--duration {pair}: {e}")))?;
            durations.insert(EventId::new(id.trim()), ticks);
        }
        for (id, ticks) in &durations {
            if !graph.contains(id.as_str()) {
                return Err(CliError::User(format!("duration given for unknown event `{id}`")));
            }
            if *ticks == 0 {
                return Err(CliError::User(format!("duration of `{id}` must be positive")));
            }
        }
        Ok(Self { def, graph, trace, policy, durations, seed: args.seed })
    }

    pub fn feedback_source(&self) -> Result<Box<dyn FeedbackSource>, CliError> {
        Ok(match &self.trace {
            Some(trace) => Box::new(scripted_feedback_source(trace, self.policy, &self.graph).map_err(CliError::user)?),
            None => Box::new(Silent),
        })
    }

    pub fn config(&self, mode: Mode, run_id: &str) -> RunConfig {
        RunConfig::default()
            .with_run_id(run_id)
            .with_mode(mode)
            .with_seed(self.seed)
            .with_durations(self.durations.clone())
    }

    fn run_virtual(&self, mode: Mode, store: Option<&Store>) -> Result<RunResult, CliError> {
        let workers = WorkerRegistry::mock_for(&self.def);
        let mut source = self.feedback_source()?;
        let run_id = match mode {
            Mode::Parallel => "parallel",
            Mode::Serial => "serial",
        };
        let config = self.config(mode, run_id);
        let mut clock = VirtualSliceClock::new();
        match store {
            Some(store) => {
                store.create_run(run_id).map_err(CliError::user)?;
                let mut sink = store.sink(run_id).map_err(CliError::internal)?;
                Ok(run(&self.graph, &workers, source.as_mut(), &mut clock, &config, &mut sink)?)
            }
            None => {
                let mut log = RunLog::new();
                Ok(run(&self.graph, &workers, source.as_mut(), &mut clock, &config, &mut log)?)
            }
        }
    }
}

fn load_durations(path: &Path) -> Result<Durations, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str::<Durations>(&text).map_err(CliError::user)
    } else {
        serde_json::from_str::<Durations>(&text).map_err(CliError::user)
    };
    parsed.map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// Runs the requested modes on the virtual clock.
pub fn simulate_report(inputs: &Inputs, mode: ModeArg, store: Option<&Store>) -> Result<SimReport, CliError> {
    let parallel = match mode {
        ModeArg::Parallel | ModeArg::Both => Some(inputs.run_virtual(Mode::Parallel, store)?),
        ModeArg::Serial => None,
    };
    let serial = match mode {
        ModeArg::Serial | ModeArg::Both => Some(inputs.run_virtual(Mode::Serial, store)?),
        ModeArg::Parallel => None,
    };
    Ok(SimReport::new(inputs.graph.name(), inputs.seed, parallel.as_ref(), serial.as_ref()))
}

/// Outcome of `replay`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    /// `verified` when the fold succeeded and matched any stored snapshot.
    pub status: String,
    /// Whether a `state.json` snapshot was compared.
    pub snapshot_checked: bool,
    pub state: RunState,
}

/// Replays a log file or run directory.
pub fn replay_path(path: &Path) -> Result<ReplayReport, CliError> {
    let (log_path, dir) =
        if path.is_dir() { (path.join("log.ndjson"), Some(path)) } else { (path.to_path_buf(), None) };
    let text = std::fs::read_to_string(&log_path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", log_path.display())))?;
    let log = RunLog::from_ndjson(&text).map_err(CliError::internal)?;
    let state = replay(log.records()).map_err(CliError::internal)?;
    let snapshot = match dir {
        Some(dir) => read_state_file(dir).map_err(CliError::internal)?,
        None => None,
    };
    if let Some(stored) = &snapshot {
        verify_against(&state, stored).map_err(CliError::internal)?;
    }
    Ok(ReplayReport { status: "verified".into(), snapshot_checked: snapshot.is_some(), state })
}

pub fn gantt_csv(rows: &[GanttRow]) -> String {
    let mut out = String::from("event_id,attempt,start,end,revoked,failed\n");
    for r in rows {
        let end = r.end.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{}\n", r.event_id, r.attempt, r.start, end, r.revoked, r.failed));
    }
    out
}

fn emit(out: &mut dyn Write, file: Option<&Path>, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(CliError::internal)?;
    if let Some(path) = file {
        std::fs::write(path, text).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = Inputs::load(&args.pipeline)?;
    let store = match &args.log_dir {
        Some(dir) => Some(Store::open(dir).map_err(CliError::user)?),
        None => None,
    };
    let report = simulate_report(&inputs, args.mode, store.as_ref())?;
    emit(out, args.out.as_deref(), &report.to_json())
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let inputs = Inputs::load(&args.pipeline)?;
    let store = match &args.log_dir {
        Some(dir) => Store::open(dir).map_err(CliError::user)?,
        None => Store::in_memory(),
    };
    store.create_run(&args.run_id).map_err(CliError::user)?;
    let workers = WorkerRegistry::mock_for(&inputs.def);
    let mut source = inputs.feedback_source()?;
    let config = inputs.config(args.mode, &args.run_id);
    let mut clock: Box<dyn SliceClock> = match args.clock {
        ClockKind::Virtual => Box::new(VirtualSliceClock::new()),
        ClockKind::Wall => Box::new(WallSliceClock::new(
            Duration::from_millis(args.tick_ms),
            Duration::from_millis(args.review_window_ms),
        )),
    };
    let mut sink = store.sink(&args.run_id).map_err(CliError::internal)?;
    let graph = &inputs.graph;
    let result = std::thread::scope(|scope| {
        let engine = scope.spawn(move || run(graph, &workers, source.as_mut(), clock.as_mut(), &config, &mut sink));
        if args.follow {
            follow(&store, &args.run_id, out)?;
        }
        engine.join().map_err(|_| CliError::Internal("scheduler thread panicked".into()))
    })?;
    let result = result?;
    let summary = serde_json::json!({
        "run_id": result.run_id,
        "status": result.status,
        "makespan": result.makespan,
        "slice_count": result.slice_count,
        "revocations": result.revocations,
        "attempts": result.attempts,
    });
    emit(out, args.out.as_deref(), &json_line(&summary))
}

fn follow(store: &Store, run_id: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rx = store.subscribe(run_id).map_err(CliError::internal)?;
    let rt = tokio::runtime::Builder::new_current_thread().build().map_err(CliError::internal)?;
    let mut next = 0;
    loop {
        let cursor = *rx.borrow_and_update();
        for record in store.records(run_id, next, None).map_err(CliError::internal)? {
            writeln!(out, "{}", record.to_line()).map_err(CliError::internal)?;
            next = record.seq + 1;
        }
        if cursor.closed && next >= cursor.len {
            return Ok(());
        }
        if rt.block_on(rx.changed()).is_err() {
            return Ok(());
        }
    }
}

fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = replay_path(&args.log)?;
    emit(out, args.out.as_deref(), &json_line(&report))
}

fn cmd_gantt(args: &GanttArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = match &args.log {
        Some(path) => replay_path(path)?.state.gantt,
        None => {
            let inputs = Inputs::load(&args.pipeline)?;
            let store = Store::in_memory();
            inputs.run_virtual(args.mode, Some(&store))?;
            let run_id = match args.mode {
                Mode::Parallel => "parallel",
                Mode::Serial => "serial",
            };
            store.state(run_id).map_err(CliError::internal)?.map_err(CliError::internal)?.gantt
        }
    };
    let text = match args.format {
        GanttFormat::Json => json_line(&serde_json::json!({ "rows": rows })),
        GanttFormat::Csv => gantt_csv(&rows),
    };
    emit(out, args.out.as_deref(), &text)
}

fn cmd_serve(args: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let listener = std::net::TcpListener::bind(&args.listen)
        .map_err(|e| CliError::User(format!("cannot listen on {}: {e}", args.listen)))?;
    listener.set_nonblocking(true).map_err(CliError::internal)?;
    let store = match &args.store {
        Some(dir) => Store::open(dir).map_err(CliError::user)?,
        None => Store::in_memory(),
    };
    let config = ServiceConfig {
        tick: Duration::from_millis(args.tick_ms),
        review_window: Duration::from_millis(args.review_window_ms),
    };
    let addr = listener.local_addr().map_err(CliError::internal)?;
    writeln!(out, "listening on http://{addr}").map_err(CliError::internal)?;
    out.flush().map_err(CliError::internal)?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::internal)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        crate::service::serve(listener, Service::new(store, config)).await
    })
    .map_err(CliError::internal)
}

/// Executes a parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Replay(a) => cmd_replay(a, out),
        Command::Gantt(a) => cmd_gantt(a, out),
        Command::Serve(a) => cmd_serve(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("CREWFLOW_LOG"))
        .with_writer(std::io::stderr)
        .try_init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_args(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
