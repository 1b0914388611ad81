//! `stopline` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 usage or configuration
//! error. Machine-readable output is one JSON object per line, tagged with
//! an `event` field like the record store.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use stopline_core::config::{ConfigError, Deployment};
use stopline_core::eval::{evaluate, EvalReport};
use stopline_core::framelist::{list_base_dir, ListParser};
use stopline_core::pipeline::{Pipeline, PipelineStats, RunOptions};
use stopline_core::stopline::rasterize_band;
use stopline_core::store::RecordStore;
use stopline_core::synthgen::{gen_dataset, read_labels, DatasetSpec, Mix, SynthError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_DATA: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "stopline", version, about = "Stop-line violation detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run detection over a frame list, appending violations to the store.
    Run(RunArgs),
    /// Generate a labelled synthetic dataset.
    Gen(GenArgs),
    /// Compare stored verdicts with a label file.
    Eval(EvalArgs),
    /// Validate a deployment config and rasterize every band.
    Check(CheckArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub list: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Keep reading lines appended to the list file.
    #[arg(long)]
    pub watch: bool,
    /// Poll interval while watching.
    #[arg(long, default_value_t = 500)]
    pub poll_ms: u64,
    /// Stop watching after this many seconds without new lines.
    #[arg(long)]
    pub idle_exit: Option<f64>,
    /// Seed unseeded streams from their first five frames.
    #[arg(long)]
    pub seed_frames: bool,
    /// Checkpoint directory; defaults to `<store stem>.ckpt` next to the store.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Restore models from checkpoints and skip frames already covered.
    #[arg(long)]
    pub resume: bool,
    /// Accepted backgrounds between mean snapshots (0 disables them).
    #[arg(long, default_value_t = 1)]
    pub snapshot_every: u32,
    /// Also log every accepted background frame in the store.
    #[arg(long)]
    pub log_backgrounds: bool,
    /// Print one record per processed frame.
    #[arg(long)]
    pub outcomes: bool,
}

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    /// Vehicle, pedestrian and empty fractions.
    #[arg(long, default_value = "0.4,0.3,0.3")]
    pub mix: String,
    /// Gaussian noise sigma in gray levels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame illumination offset drawn from [-j, j].
    #[arg(long, default_value_t = 0)]
    pub illumination: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalFormat {
    Table,
    Records,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalFormat::Table)]
    pub format: EvalFormat,
}

#[derive(Debug, clap::Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn data(message: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn usage(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::data(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn emit(out: &mut dyn Write, value: &impl Serialize) -> CmdResult {
    let line = serde_json::to_string(value).map_err(Failure::data)?;
    writeln!(out, "{line}").map_err(Failure::data)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Gen(a) => cmd_gen(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Check(a) => cmd_check(a, out),
    }
}

pub fn default_checkpoint_dir(store: &Path) -> PathBuf {
    let stem = store.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "store".into());
    store.with_file_name(format!("{stem}.ckpt"))
}

#[derive(Serialize)]
struct RunSummary {
    event: &'static str,
    #[serde(flatten)]
    stats: PipelineStats,
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let deployment = Deployment::load(&args.config)?;
    if !args.list.is_file() {
        return Err(Failure::data(format!("{}: no such list file", args.list.display())));
    }
    let mut store = RecordStore::open(&args.store).map_err(Failure::data)?;
    let options = RunOptions {
        seed_from_frames: args.seed_frames,
        checkpoint_dir: Some(args.checkpoints.clone().unwrap_or_else(|| default_checkpoint_dir(&args.store))),
        snapshot_every: args.snapshot_every,
        resume: args.resume,
        log_backgrounds: args.log_backgrounds,
        frames_base: list_base_dir(&args.list),
    };
    let mut pipeline = Pipeline::new(deployment, options);
    let mut parser = ListParser::new();
    let mut offset = 0u64;
    let poll = Duration::from_millis(args.poll_ms.max(1));
    let mut last_data = Instant::now();
    loop {
        let (chunk, consumed) = read_lines(&args.list, offset, !args.watch)?;
        offset += consumed;
        let ingested = parser.parse_text(&chunk);
        for w in &ingested.warnings {
            let _ = writeln!(err, "warning: {}:{w}", args.list.display());
        }
        if !ingested.frames.is_empty() {
            last_data = Instant::now();
            let batch = pipeline
                .process_batch(&ingested.frames, &mut store)
                .map_err(Failure::data)?;
            for o in &batch.outcomes {
                if let stopline_core::FrameEvent::Error { message } = &o.event {
                    let _ = writeln!(err, "warning: frame {}: {message}", o.frame.frame_id());
                }
                if args.outcomes {
                    emit(out, o)?;
                }
            }
        }
        if !args.watch {
            break;
        }
        if let Some(idle) = args.idle_exit {
            if last_data.elapsed().as_secs_f64() >= idle {
                break;
            }
        }
        thread::sleep(poll);
    }
    emit(
        out,
        &RunSummary {
            event: "run_summary",
            stats: pipeline.stats(),
        },
    )
}

/// Reads lines from `offset`. Unless `to_eof`, a trailing partial line is left
/// for a later call.
fn read_lines(path: &Path, offset: u64, to_eof: bool) -> Result<(String, u64), Failure> {
    let io = |e: std::io::Error| Failure::data(format!("{}: {e}", path.display()));
    let mut file = File::open(path).map_err(io)?;
    let len = file.metadata().map_err(io)?.len();
    if len < offset {
        return Err(Failure::data(format!("{}: list file shrank while being read", path.display())));
    }
    file.seek(SeekFrom::Start(offset)).map_err(io)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(io)?;
    let complete = if to_eof {
        buf.len()
    } else {
        buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1)
    };
    buf.truncate(complete);
    let text = String::from_utf8(buf).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok((text, complete as u64))
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> CmdResult {
    let mix: Mix = args.mix.parse().map_err(Failure::usage)?;
    mix.validate()?;
    if args.n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    if !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(Failure::usage("--noise must be a non-negative number"));
    }
    let mut spec = DatasetSpec::new(args.n, mix, args.noise, args.seed);
    spec.illumination_jitter = args.illumination;
    let summary = gen_dataset(&spec, &args.out)?;
    emit(
        out,
        &json!({
            "event": "dataset",
            "out_dir": summary.out_dir,
            "list": summary.list_path,
            "labels": summary.labels_path,
            "config": summary.config_path,
            "frames": summary.labels.len(),
            "vehicle": summary.counts[0],
            "pedestrian": summary.counts[1],
            "empty": summary.counts[2],
        }),
    )
}

/// Loads the store and labels and builds the report.
pub fn evaluate_files(store: &Path, labels: &Path) -> Result<(EvalReport, Vec<FrameVerdict>), Failure> {
    if !store.is_file() {
        return Err(Failure::data(format!("{}: no such store", store.display())));
    }
    let store = RecordStore::open(store).map_err(Failure::data)?;
    let labels = read_labels(labels).map_err(Failure::data)?;
    let report = evaluate(&labels, store.records()).map_err(Failure::data)?;
    let flagged: HashSet<&str> = store.records().iter().map(|r| r.frame.path.as_str()).collect();
    let verdicts = labels
        .iter()
        .map(|l| FrameVerdict {
            event: "frame_verdict",
            path: l.path.clone(),
            truth_violation: l.truth_violation,
            flagged: flagged.contains(l.path.as_str()),
        })
        .collect();
    Ok((report, verdicts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameVerdict {
    event: &'static str,
    pub path: String,
    pub truth_violation: bool,
    pub flagged: bool,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    event: &'static str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let (report, verdicts) = evaluate_files(&args.store, &args.labels)?;
    let record = ReportRecord {
        event: "eval_report",
        report: &report,
    };
    match args.format {
        EvalFormat::Table => {
            write!(out, "{}", report.to_table()).map_err(Failure::data)?;
            emit(out, &record)
        }
        EvalFormat::Records => {
            for v in &verdicts {
                emit(out, v)?;
            }
            emit(out, &record)
        }
    }
}

pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> CmdResult {
    let deployment = Deployment::load(&args.config)?;
    for camera in &deployment.cameras {
        for pan in &camera.pans {
            let band = rasterize_band(&pan.geometry, camera.frame_width, camera.frame_height)
                .map_err(Failure::usage)?;
            let first = &band.lines[0];
            let last = band.lines.last().expect("at least one line");
            emit(
                out,
                &json!({
                    "event": "band",
                    "camera_id": camera.camera_id,
                    "pan_index": pan.pan_index,
                    "skew_deg": pan.geometry.skew_deg,
                    "lines": band.lines.len(),
                    "samples_per_line": first.len(),
                    "start": [first[0].x, first[0].y],
                    "end": [first[first.len() - 1].x, first[first.len() - 1].y],
                    "last_line_end": [last[last.len() - 1].x, last[last.len() - 1].y],
                    "seeded": !pan.seed_images.is_empty(),
                }),
            )?;
        }
    }
    Ok(())
}
