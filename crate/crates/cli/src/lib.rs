//! Command-line front end: simulation, scoring, feature extraction, regression,
//! summarization, evaluation and the survey server.

pub mod commands;
pub mod manifest;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "memscore", version, about = "Video memorability measurement, prediction and summarization")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON file with per-section overrides (simulate, protocol, scoring, forest, grid, learn).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic study with planted memorability and simulated sessions.
    Simulate(SimulateArgs),
    /// Run the survey server.
    Serve(ServeArgs),
    /// Turn session logs into per-video scores (CSV).
    Score(ScoreArgs),
    /// Consistency and correlation analyses of a study.
    Analyze(AnalyzeArgs),
    /// Build COL and SAL feature channels from extracted frames and saliency maps.
    ExtractFeatures(ExtractArgs),
    /// Evaluate channels with the repeated train/test protocol and fit final models.
    Train(TrainArgs),
    /// Predict scores with trained models, fusing across channels.
    Predict(PredictArgs),
    /// Select summary segments for a problem file.
    Summarize(SummarizeArgs),
    /// Score a selection against reference summaries.
    Evaluate(EvaluateArgs),
    /// Cut a video into uniform segments or segments from boundary times.
    Segment(SegmentArgs),
    /// Learn objective weights from reference summaries.
    LearnWeights(LearnArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n_videos: Option<usize>,
    /// Participants per target video; sets the participant count.
    #[arg(long)]
    pub per_video: Option<usize>,
    /// Zero the planted effect on recall and response time.
    #[arg(long)]
    pub null_model: bool,
    /// Use the image-flash recall variant.
    #[arg(long)]
    pub image_flash: bool,
    /// Output bundle; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Append-only event log; created when missing.
    #[arg(long)]
    pub log: PathBuf,
    /// Write a snapshot every N log entries (0 disables).
    #[arg(long, default_value_t = 500)]
    pub snapshot_every: usize,
    /// Media directory served at /media; defaults to MEMSCORE_DATA_DIR.
    #[arg(long)]
    pub media: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Study bundle JSON; stdin when absent or `-`.
    pub input: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write the full report (participants, exclusions, pair scores) as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Study bundle JSON; stdin when absent or `-`.
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub repeats: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of `<video_id>/*.ppm` frames.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Directory of `<video_id>/*.pgm` saliency maps.
    #[arg(long)]
    pub saliency: Option<PathBuf>,
    /// Frames sampled per video for the colour histogram.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature channel JSON; repeat for several channels.
    #[arg(long = "channel", required = true)]
    pub channels: Vec<PathBuf>,
    /// Scores CSV as written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Channel combination to report, names joined by `+`; repeatable. Defaults to each channel and all together.
    #[arg(long = "set")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 80)]
    pub train_n: usize,
    #[arg(long, default_value_t = 25)]
    pub repeats: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long = "channel", required = true)]
    pub channels: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Problem file JSON.
    pub problem: PathBuf,
    /// Objective weights, comma separated, in the order mem,rep,unif.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, conflicts_with = "budget_duration")]
    pub budget_count: Option<usize>,
    #[arg(long)]
    pub budget_duration: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Selection JSON as written by `summarize`.
    #[arg(long)]
    pub selection: PathBuf,
    /// Reference summaries JSON (a list).
    #[arg(long)]
    pub references: PathBuf,
    /// Problem file whose segments give the times of segment indices.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Segment captions JSON (`{"0": "...", ...}`); adds a ROUGE-SU row.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub skip: usize,
    #[arg(long, default_value = "memscore")]
    pub method: String,
    #[arg(long, default_value = "")]
    pub budget: String,
    /// Report CSV; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub video_id: String,
    #[arg(long, required_unless_present = "boundaries")]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub segment_s: f64,
    /// JSON list of boundary times in seconds, first and last included.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// JSON list of `{problem, references}` with problems in problem-file form.
    pub training: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the command and maps failures to exit codes:
/// 1 for I/O, 2 for usage and validation errors.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 when an I/O error is anywhere in the chain, else 2.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) {
        1
    } else {
        2
    }
}
