//! `screensense`: describe screens, run tasks, evaluate and record
//! demonstrations.

mod eval;
mod targets;

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use chrono::Utc;
use clap::{Parser, Subcommand};
use screensense::executor::{decode_screenshot, DeviceDriver, ExecutorParams};
use screensense::grouping::IconLexicon;
use screensense::pbd::{record_demonstration, DemoEvent, EventSource, PbdError, RecordContext, TraceStore};
use screensense::perception::{BBox, WidgetCategory};
use screensense::planner::{run_task, OutcomeStatus, StepReport, TaskContext};
use screensense::simdevice::{encode_png, gen_synthetic_screen, SimEventSource, SynthParams};
use screensense::understand::{understand, Observation};
use screensense::Config;

use targets::{llm_client, perception_source, Device, DeviceTarget, LlmTarget, PerceptionMode};

const EXIT_USAGE: u8 = 64;
const EXIT_PERCEPTION: u8 = 2;
const EXIT_IMAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "screensense", version, about = "Screen understanding and task automation for mobile UIs")]
struct Cli {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the semantic description of one screen and its debug dump.
    Describe(DescribeArgs),
    /// Carry out a task on a device.
    Run(RunArgs),
    /// Score one-step action prediction over a directory of records.
    Eval(EvalArgs),
    /// Record a demonstration into the trace store.
    Record(RecordArgs),
    /// Write synthetic screenshots with their perception and ground truth.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct DescribeArgs {
    /// PNG screenshot.
    image: Option<PathBuf>,
    #[arg(long, value_enum)]
    perception: Option<PerceptionMode>,
    #[arg(long)]
    perception_file: Vec<PathBuf>,
    /// Describe the synthetic screen generated from this seed.
    #[arg(long, conflicts_with_all = ["image", "device"])]
    synthetic: Option<u64>,
    /// Describe the current screen of a device.
    #[arg(long, conflicts_with = "image")]
    device: Option<DeviceTarget>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Task text; defaults to the simulated scenario's own task.
    task: Option<String>,
    #[arg(long)]
    device: DeviceTarget,
    #[arg(long, default_value = "scripted")]
    llm: LlmTarget,
    /// Defaults to `perfect` on the simulator and `sidecar` otherwise.
    #[arg(long, value_enum)]
    perception: Option<PerceptionMode>,
    #[arg(long)]
    perception_file: Vec<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Simulated screen size, e.g. 720x1600.
    #[arg(long, value_parser = parse_size)]
    size: Option<(u32, u32)>,
    /// Consult demonstrations stored in this directory.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Consult the configured trace store.
    #[arg(long, conflicts_with = "store")]
    pbd: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    dir: PathBuf,
    #[arg(long)]
    llm: LlmTarget,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct RecordArgs {
    /// Task text; defaults to the simulated scenario's own task.
    task: Option<String>,
    #[arg(long)]
    device: DeviceTarget,
    #[arg(long, value_enum)]
    perception: Option<PerceptionMode>,
    #[arg(long)]
    perception_file: Vec<PathBuf>,
    /// Read JSON events from stdin, one per line, and forward each to the
    /// device. Simulated devices otherwise replay their scenario's
    /// demonstration.
    #[arg(long)]
    stdin_events: bool,
    #[arg(long, value_parser = parse_size)]
    size: Option<(u32, u32)>,
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_size)]
    size: Option<(u32, u32)>,
    /// Write evaluation records instead: a task naming one labeled button
    /// and its box.
    #[arg(long)]
    eval: bool,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("height: {e}"))?;
    if w < 100 || h < 100 {
        return Err("screen must be at least 100x100".into());
    }
    Ok((w, h))
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, err: e.into() }
    }
}

trait WithCode<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, err: e.into() })
    }
}

type CmdResult = Result<u8, Failure>;

/// `println!` that tolerates a closed stdout, as with `| head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($arg)*).and_then(|_| out.flush());
    }};
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let config = match &cli.config {
        Some(p) => Config::load(p).code(EXIT_USAGE)?,
        None => Config::default(),
    };
    if cli.print_config {
        let _ = std::io::stdout().write_all(config.to_toml().as_bytes());
        return Ok(0);
    }
    match cli.command {
        Some(Command::Describe(a)) => describe(a, &config),
        Some(Command::Run(a)) => run(a, &config),
        Some(Command::Eval(a)) => eval_cmd(a, &config),
        Some(Command::Record(a)) => record(a, &config),
        Some(Command::Synth(a)) => synth(a, &config),
        None => Err(Failure { code: EXIT_USAGE, err: anyhow!("no command given; see --help") }),
    }
}

fn lexicon(config: &Config) -> Result<Arc<IconLexicon>, Failure> {
    Ok(Arc::new(config.load_lexicon().context("loading icon lexicon").code(EXIT_USAGE)?))
}

/// The simulator needs no settle delay between gestures.
fn executor_params(config: &Config, device: &Device) -> ExecutorParams {
    match device {
        Device::Sim(_) => ExecutorParams { settle_ms: 0, ..config.executor.clone() },
        Device::Adb(_) => config.executor.clone(),
    }
}

fn default_mode(mode: Option<PerceptionMode>, files: &[PathBuf], device: &Device) -> PerceptionMode {
    mode.unwrap_or(match device {
        _ if !files.is_empty() => PerceptionMode::File,
        Device::Sim(_) => PerceptionMode::Perfect,
        Device::Adb(_) => PerceptionMode::Sidecar,
    })
}

fn describe(a: DescribeArgs, config: &Config) -> CmdResult {
    let lex = lexicon(config)?;
    let (image, obs) = if let Some(seed) = a.synthetic {
        let screen = gen_synthetic_screen(seed, &SynthParams::default());
        let obs = match a.perception.unwrap_or(PerceptionMode::Perfect) {
            PerceptionMode::Perfect => Observation {
                perception: screen.perception(Some(&lex)),
                blocks: Some(screen.spec.truth_blocks.clone()),
            },
            mode => perception_source(mode, &a.perception_file, None, &lex, config)
                .code(EXIT_USAGE)?
                .observe(&screen.image)
                .code(EXIT_PERCEPTION)?,
        };
        (screen.image, obs)
    } else if let Some(target) = &a.device {
        let mut device = Device::open(target, None).code(EXIT_USAGE)?;
        let bytes = device.driver().screenshot().context("screenshot")?;
        let image = decode_screenshot(&bytes).code(EXIT_IMAGE)?;
        let mode = default_mode(a.perception, &a.perception_file, &device);
        let obs = perception_source(mode, &a.perception_file, device.sim(), &lex, config)
            .code(EXIT_USAGE)?
            .observe(&image)
            .code(EXIT_PERCEPTION)?;
        (image, obs)
    } else {
        let Some(path) = &a.image else {
            return Err(Failure { code: EXIT_USAGE, err: anyhow!("describe needs IMAGE, --synthetic or --device") });
        };
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display())).code(EXIT_IMAGE)?;
        let image = decode_screenshot(&bytes).with_context(|| path.display().to_string()).code(EXIT_IMAGE)?;
        let mode = a.perception.unwrap_or(if a.perception_file.is_empty() {
            PerceptionMode::Sidecar
        } else {
            PerceptionMode::File
        });
        if mode == PerceptionMode::Perfect {
            return Err(Failure { code: EXIT_USAGE, err: anyhow!("perfect perception needs --synthetic or --device sim:NAME") });
        }
        let obs = perception_source(mode, &a.perception_file, None, &lex, config)
            .code(EXIT_USAGE)?
            .observe(&image)
            .code(EXIT_PERCEPTION)?;
        (image, obs)
    };
    let u = understand(&obs, &image, &config.understand, Some(&lex)).code(EXIT_PERCEPTION)?;
    say!("{}", u.semantics.render());
    say!("--- dump ---");
    say!("{}", serde_json::to_string_pretty(&u.debug_dump())?);
    Ok(0)
}

static ABORT: AtomicBool = AtomicBool::new(false);

fn exit_for(status: OutcomeStatus) -> u8 {
    match status {
        OutcomeStatus::Completed => 0,
        OutcomeStatus::StepLimit => 10,
        OutcomeStatus::RepromptLimit => 11,
        OutcomeStatus::DeviceError => 12,
        OutcomeStatus::PerceptionError => 13,
        OutcomeStatus::LlmError => 14,
        OutcomeStatus::Aborted => 130,
    }
}

fn scenario_task(task: Option<String>, device: &Device) -> Result<String, Failure> {
    match (task, device) {
        (Some(t), _) => Ok(t),
        (None, Device::Sim(d)) => Ok(d.scenario().task),
        (None, Device::Adb(_)) => Err(Failure { code: EXIT_USAGE, err: anyhow!("a task is required on a real device") }),
    }
}

fn run(a: RunArgs, config: &Config) -> CmdResult {
    let lex = lexicon(config)?;
    let mut device = Device::open(&a.device, a.size).code(EXIT_USAGE)?;
    let task = scenario_task(a.task, &device)?;
    let mode = default_mode(a.perception, &a.perception_file, &device);
    let mut perception = perception_source(mode, &a.perception_file, device.sim(), &lex, config).code(EXIT_USAGE)?;
    let mut llm = llm_client(&a.llm, &a.device, config).code(EXIT_USAGE)?;
    let store = match (&a.store, a.pbd) {
        (Some(dir), _) => Some(TraceStore::open(dir)?),
        (None, true) => Some(TraceStore::open(&config.pbd.store_dir)?),
        (None, false) => None,
    };
    let mut planner = config.planner.clone();
    if let Some(n) = a.max_steps {
        planner.step_limit = n;
    }
    let executor = executor_params(config, &device);
    let _ = ctrlc::set_handler(|| ABORT.store(true, Ordering::SeqCst));

    let mut print_step = |r: &StepReport| {
        say!("step {}: {}", r.index + 1, r.description);
    };
    let mut ctx = TaskContext {
        device: device.driver(),
        perception: perception.as_mut(),
        llm: llm.as_mut(),
        lexicon: Some(&lex),
        store: store.as_ref(),
        understand: &config.understand,
        planner: &planner,
        executor: &executor,
        abort: Some(&ABORT),
        on_step: Some(&mut print_step),
    };
    let outcome = run_task(&task, &mut ctx);
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    if outcome.status == OutcomeStatus::Aborted {
        say!("history: {}", outcome.history.steps().join(" -> "));
    }
    say!("status: {} ({} steps)", outcome.status.as_str(), outcome.steps_taken);
    Ok(exit_for(outcome.status))
}

fn eval_cmd(a: EvalArgs, config: &Config) -> CmdResult {
    let lex = lexicon(config)?;
    let records = eval::load_dataset(&a.dir).code(EXIT_PERCEPTION)?;
    let mut llm = match &a.llm {
        LlmTarget::Scripted(None) => {
            return Err(Failure { code: EXIT_USAGE, err: anyhow!("eval needs --llm scripted:PATH or an http endpoint") })
        }
        t => llm_client(t, &DeviceTarget::Serial(String::new()), config).code(EXIT_USAGE)?,
    };
    let summary = eval::evaluate(&records, llm.as_mut(), &config.planner.role_prompt, &config.understand, &lex)?;
    if a.json {
        say!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(0);
    }
    for r in &summary.results {
        say!("{}: {}", r.name, r.verdict.as_str());
    }
    say!("accuracy: {:.4} ({}/{})", summary.accuracy, summary.correct, summary.records);
    say!("ui errors: {}", summary.ui_errors);
    for (k, v) in &summary.breakdown {
        say!("  {k}: {v}");
    }
    say!("planning errors: {}", summary.planning_errors);
    Ok(0)
}

/// Demonstration events as JSON lines, forwarded to the device as they
/// are read.
struct StdinEvents<'a> {
    lines: std::io::Lines<std::io::StdinLock<'static>>,
    device: &'a mut dyn DeviceDriver,
    size: (u32, u32),
    executor: ExecutorParams,
}

impl EventSource for StdinEvents<'_> {
    fn next_event(&mut self) -> Result<(DemoEvent, chrono::DateTime<Utc>), PbdError> {
        let line = loop {
            match self.lines.next() {
                None => return Ok((DemoEvent::Stop, Utc::now())),
                Some(l) => {
                    let l = l.map_err(|e| PbdError::Store(e.to_string()))?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
            }
        };
        let event: DemoEvent =
            serde_json::from_str(&line).map_err(|e| PbdError::Store(format!("bad event {line:?}: {e}")))?;
        let (w, h) = (self.size.0 as i32, self.size.1 as i32);
        let cmd = match &event {
            DemoEvent::Tap { x, y } => Some(format!("input tap {x} {y}")),
            DemoEvent::LongPress { x, y } => Some(format!("input swipe {x} {y} {x} {y} {}", self.executor.long_press_ms)),
            DemoEvent::Text { text } => Some(screensense::executor::DeviceCommand::text(text).shell_line),
            DemoEvent::Swipe { dir } => {
                use screensense::planner::SwipeDir::*;
                let (cx, cy, qx, qy) = (w / 2, h / 2, w / 4, h / 4);
                let (x1, y1, x2, y2) = match dir {
                    Up => (cx, cy + qy, cx, cy - qy),
                    Down => (cx, cy - qy, cx, cy + qy),
                    Left => (cx + qx, cy, cx - qx, cy),
                    Right => (cx - qx, cy, cx + qx, cy),
                };
                Some(format!("input swipe {x1} {y1} {x2} {y2} {}", self.executor.swipe_ms))
            }
            DemoEvent::Stop => None,
        };
        if let Some(cmd) = cmd {
            self.device.exec_shell(&cmd).map_err(|e| PbdError::Store(e.to_string()))?;
            if self.executor.settle_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(self.executor.settle_ms));
            }
        }
        Ok((event, Utc::now()))
    }
}

fn record(a: RecordArgs, config: &Config) -> CmdResult {
    let lex = lexicon(config)?;
    let mut device = Device::open(&a.device, a.size).code(EXIT_USAGE)?;
    let task = scenario_task(a.task, &device)?;
    let mode = default_mode(a.perception, &a.perception_file, &device);
    let mut perception = perception_source(mode, &a.perception_file, device.sim(), &lex, config).code(EXIT_USAGE)?;
    let store = TraceStore::open(a.store.as_ref().unwrap_or(&config.pbd.store_dir))?;
    let executor = executor_params(config, &device);

    let size = match device.sim() {
        Some(d) => (d.spec().w, d.spec().h),
        None => {
            let img = decode_screenshot(&device.driver().screenshot().context("screenshot")?).code(EXIT_IMAGE)?;
            img.dimensions()
        }
    };
    let mut sim_events = match (&device, a.stdin_events) {
        (Device::Sim(d), false) => Some(SimEventSource::new(d.clone(), d.scenario().demonstration)),
        (Device::Adb(_), false) => {
            return Err(Failure { code: EXIT_USAGE, err: anyhow!("recording on a real device needs --stdin-events") })
        }
        (_, true) => None,
    };
    let mut event_device = match &device {
        Device::Sim(d) => Device::Sim(d.clone()),
        Device::Adb(d) => Device::Adb(d.clone()),
    };
    let mut stdin_events;
    let events: &mut dyn EventSource = match sim_events.as_mut() {
        Some(s) => s,
        None => {
            stdin_events = StdinEvents {
                lines: std::io::stdin().lock().lines(),
                device: event_device.driver(),
                size,
                executor: executor.clone(),
            };
            &mut stdin_events
        }
    };
    let mut ctx = RecordContext {
        device: device.driver(),
        perception: perception.as_mut(),
        understand: &config.understand,
        lexicon: Some(&lex),
    };
    let trace = record_demonstration(&task, &mut ctx, events).code(EXIT_PERCEPTION)?;
    for (i, s) in trace.steps.iter().enumerate() {
        say!("step {}: {s}", i + 1);
    }
    let path = store.save(&trace)?;
    say!("saved: {}", path.display());
    Ok(0)
}

/// The first labeled button whose label is unique on the screen.
fn eval_target(truth: &[(BBox, Option<WidgetCategory>, Option<String>)]) -> Option<(String, BBox)> {
    truth.iter().find_map(|(b, cat, label)| {
        let label = label.as_deref()?.trim();
        let unique = truth.iter().filter(|(_, _, l)| l.as_deref().map(str::trim) == Some(label)).count() == 1;
        (*cat == Some(WidgetCategory::Button) && !label.is_empty() && unique).then(|| (label.to_string(), *b))
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synth(a: SynthArgs, config: &Config) -> CmdResult {
    let lex = lexicon(config)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut params = SynthParams::default();
    if let Some((w, h)) = a.size {
        (params.w, params.h) = (w, h);
    }
    let mut written = 0;
    let mut seed = a.seed;
    while written < a.count {
        if a.eval && seed - a.seed > a.count * 20 {
            let err = anyhow!("found only {written} screens with a unique labeled button");
            return Err(err.into());
        }
        let screen = gen_synthetic_screen(seed, &params);
        let perception = screen.perception(Some(&lex));
        let stem = a.out.join(format!("seed_{seed}"));
        seed += 1;
        if a.eval {
            let Some((label, bbox)) = eval_target(&screen.truth_elements()) else { continue };
            let mut record: serde_json::Value = serde_json::from_str(&perception.to_json())?;
            record["task"] = format!("Tap {label}").into();
            record["truth_element_box"] = serde_json::to_value(bbox)?;
            record["truth_label"] = label.into();
            write(&stem.with_extension("json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
        } else {
            write(&stem.with_extension("perception.json"), perception.to_json().as_bytes())?;
            write(&stem.with_extension("truth.json"), serde_json::to_string_pretty(&screen.spec)?.as_bytes())?;
        }
        write(&stem.with_extension("png"), &encode_png(&screen.image))?;
        say!("{}", stem.with_extension("png").display());
        written += 1;
    }
    Ok(0)
}
