//! cadar: detect cognitive attacks on perception-graph streams, generate
//! synthetic benchmarks, run evaluation suites, and sweep ablations.
//!
//! Exit codes: 0 success, 1 internal error, 2 input or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use cadar_core::bench::{generate, GroundTruth, Manifest, ManifestEntry, ScenarioSpec, SuiteSpec};
use cadar_core::eval::{evaluate, EvalSummary, VideoResult};
use cadar_core::io::{frame_to_line, FrameReader};
use cadar_core::pipeline::{run_frames, Session, SessionConfig, TraceOptions};
use cadar_core::{Error as CoreError, PerceptionFrame};

#[derive(Parser)]
#[command(
    name = "cadar",
    version,
    about = "Perception-graph cognitive-attack detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run detection over a frame stream and emit a report stream.
    Detect(DetectArgs),
    /// Generate a synthetic scenario or a whole benchmark suite.
    Generate(GenerateArgs),
    /// Run a generated suite through detection and score it.
    Bench(BenchArgs),
    /// Sweep one axis over a suite and tabulate per-type accuracy.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct DetectArgs {
    /// Frame stream file, or `-` for stdin.
    #[arg(long)]
    input: String,
    /// Session config file (JSON).
    #[arg(long, env = "CADAR_CONFIG")]
    config: Option<PathBuf>,
    /// Override the warm-up window from the config file.
    #[arg(long)]
    reference_frames: Option<u32>,
    /// Override every RNG seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace_matching: bool,
    #[arg(long)]
    trace_estimation: bool,
    /// Report stream destination, or `-` for stdout.
    #[arg(long)]
    output: String,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario or suite spec (JSON); a `counts` key marks a suite.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Override the spec seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite manifest produced by `generate`.
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, env = "CADAR_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    reference_frames: Option<u32>,
    /// Force the estimation module on or off.
    #[arg(long)]
    estimation: Option<Toggle>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation summary destination (JSON).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationAxis {
    Estimation,
    ReferenceFrames,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    suite: PathBuf,
    /// Sweep axis.
    #[arg(long, value_enum)]
    axis: AblationAxis,
    /// Comma-separated axis values: integers for reference-frames,
    /// on/off for estimation.
    #[arg(long)]
    values: String,
    #[arg(long, env = "CADAR_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the table and the plot-ready data file.
    #[arg(long)]
    output_dir: PathBuf,
}

enum CliError {
    Input(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::Internal(_) => CliError::Internal(err.to_string()),
            _ => CliError::Input(err.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        CliError::Input(err.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(args) => detect(args),
        Command::Generate(args) => generate_cmd(args),
        Command::Bench(args) => bench(args),
        Command::Ablate(args) => ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

fn load_config(path: &Option<PathBuf>) -> CliResult<SessionConfig> {
    let config = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?;
            SessionConfig::from_json(&text)?
        }
        None => SessionConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

/// CLI flag beats config file beats built-in default; one seed feeds every
/// RNG stream.
fn apply_overrides(
    config: &mut SessionConfig,
    reference_frames: Option<u32>,
    seed: Option<u64>,
) {
    if let Some(r) = reference_frames {
        config.reference_frames = r;
    }
    if let Some(s) = seed {
        config.embedding.seed = s;
        config.estimation.seed = s;
    }
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

fn detect(args: DetectArgs) -> CliResult<()> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args.reference_frames, args.seed);
    eprintln!(
        "effective config: {}",
        serde_json::to_string(&config).map_err(|e| CliError::Internal(e.to_string()))?
    );

    let input: Box<dyn BufRead> = if args.input == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(fs::File::open(&args.input).map_err(
            |e| CliError::Input(format!("input {}: {e}", args.input)),
        )?))
    };
    let mut output: Box<dyn Write> = if args.output == "-" {
        Box::new(BufWriter::new(io::stdout()))
    } else {
        Box::new(BufWriter::new(fs::File::create(&args.output).map_err(
            |e| CliError::Input(format!("output {}: {e}", args.output)),
        )?))
    };

    let trace = TraceOptions {
        matching: args.trace_matching,
        estimation: args.trace_estimation,
    };
    let mut session = Session::new(config, trace)?;
    for item in FrameReader::new(input) {
        let (line, frame) = item?;
        let report = session
            .process_frame(&frame)
            .map_err(|e| CliError::Input(format!("line {line}: {e}")))?;
        serde_json::to_writer(&mut output, &report)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(output)?;
    }
    let verdict = session.finalize();
    serde_json::to_writer(&mut output, &serde_json::json!({ "verdict": verdict }))
        .map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(output)?;
    output.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn write_video(
    dir: &Path,
    spec: &ScenarioSpec,
) -> CliResult<(Vec<PerceptionFrame>, GroundTruth)> {
    fs::create_dir_all(dir)?;
    let (frames, truth) = generate(spec)?;
    let mut stream = BufWriter::new(fs::File::create(dir.join("stream.jsonl"))?);
    for frame in &frames {
        writeln!(stream, "{}", frame_to_line(frame)?)?;
    }
    stream.flush()?;
    fs::write(
        dir.join("truth.json"),
        serde_json::to_string_pretty(&truth).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    fs::write(
        dir.join("spec.json"),
        serde_json::to_string_pretty(spec).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    Ok((frames, truth))
}

fn generate_cmd(args: GenerateArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Input(format!("spec {}: {e}", args.spec.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("spec {}: {e}", args.spec.display())))?;
    let is_suite = value.get("counts").is_some();
    fs::create_dir_all(&args.output_dir)?;

    let mut entries = Vec::new();
    if is_suite {
        let mut suite: SuiteSpec = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("suite spec: {e}")))?;
        if let Some(seed) = args.seed {
            suite.seed = seed;
        }
        for (index, (category, spec)) in suite.expand().into_iter().enumerate() {
            let id = format!("v{index:03}_{category}");
            let rel = PathBuf::from("videos").join(&id);
            write_video(&args.output_dir.join(&rel), &spec)?;
            entries.push(ManifestEntry {
                id,
                category,
                stream: rel.join("stream.jsonl").to_string_lossy().into_owned(),
                truth: rel.join("truth.json").to_string_lossy().into_owned(),
                spec: rel.join("spec.json").to_string_lossy().into_owned(),
            });
        }
    } else {
        let mut spec: ScenarioSpec = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("scenario spec: {e}")))?;
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        let (_, truth) = write_video(&args.output_dir, &spec)?;
        let category = if truth.video_labels.is_empty() {
            "clean".to_string()
        } else {
            truth
                .video_labels
                .iter()
                .map(|t| t.label().to_string())
                .collect::<Vec<_>>()
                .join("+")
        };
        entries.push(ManifestEntry {
            id: spec.name.clone(),
            category,
            stream: "stream.jsonl".into(),
            truth: "truth.json".into(),
            spec: "spec.json".into(),
        });
    }

    let manifest = Manifest { videos: entries };
    fs::write(
        args.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    println!(
        "generated {} video(s) under {}",
        manifest.videos.len(),
        args.output_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench / ablate
// ---------------------------------------------------------------------------

fn read_frames_file(path: &Path) -> CliResult<Vec<PerceptionFrame>> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Input(format!("stream {}: {e}", path.display())))?;
    FrameReader::new(BufReader::new(file))
        .map(|item| item.map(|(_, frame)| frame).map_err(CliError::from))
        .collect()
}

fn load_manifest(path: &Path) -> CliResult<(PathBuf, Manifest)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("manifest {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((base, manifest))
}

/// Run every suite video through its own session, in parallel; results come
/// back in manifest order so aggregation is deterministic.
fn run_suite(
    base: &Path,
    manifest: &Manifest,
    config: SessionConfig,
) -> CliResult<(Vec<VideoResult>, Vec<GroundTruth>)> {
    let outcomes: Vec<CliResult<(VideoResult, GroundTruth)>> = manifest
        .videos
        .par_iter()
        .map(|entry| {
            let frames = read_frames_file(&base.join(&entry.stream))?;
            let truth_text = fs::read_to_string(base.join(&entry.truth))
                .map_err(|e| CliError::Input(format!("truth {}: {e}", entry.truth)))?;
            let truth: GroundTruth = serde_json::from_str(&truth_text)
                .map_err(|e| CliError::Input(format!("truth {}: {e}", entry.truth)))?;
            let (reports, verdict) = run_frames(&frames, config, TraceOptions::default())?;
            Ok((VideoResult { verdict, reports }, truth))
        })
        .collect();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut truths = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (result, truth) = outcome?;
        results.push(result);
        truths.push(truth);
    }
    Ok((results, truths))
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args.reference_frames, args.seed);
    if let Some(toggle) = args.estimation {
        config.estimation.enabled = toggle == Toggle::On;
    }
    let (base, manifest) = load_manifest(&args.suite)?;
    let (results, truths) = run_suite(&base, &manifest, config)?;
    let summary = evaluate(&results, &truths)?;
    fs::write(
        &args.output,
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    print!("{summary}");
    Ok(())
}

const ABLATION_CATEGORIES: [&str; 6] = ["text", "visual", "removal", "addition", "mixed", "clean"];

fn category_column(summary: &EvalSummary, category: &str) -> f64 {
    let key = if category == "mixed" { "text+visual" } else { category };
    summary.category_accuracy(key).unwrap_or(f64::NAN)
}

fn ablate(args: AblateArgs) -> CliResult<()> {
    let base_config = load_config(&args.config)?;
    let (base, manifest) = load_manifest(&args.suite)?;
    fs::create_dir_all(&args.output_dir)?;

    let values: Vec<String> = args
        .values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Input("no axis values given".into()));
    }

    let mut rows: Vec<(String, EvalSummary)> = Vec::new();
    for value in &values {
        let mut config = base_config;
        apply_overrides(&mut config, None, args.seed);
        match args.axis {
            AblationAxis::ReferenceFrames => {
                let r: u32 = value.parse().map_err(|_| {
                    CliError::Input(format!("reference-frames value `{value}` is not an integer"))
                })?;
                config.reference_frames = r;
            }
            AblationAxis::Estimation => {
                config.estimation.enabled = match value.as_str() {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(CliError::Input(format!(
                            "estimation value `{other}` must be on or off"
                        )))
                    }
                };
            }
        }
        let (results, truths) = run_suite(&base, &manifest, config)?;
        rows.push((value.clone(), evaluate(&results, &truths)?));
    }

    let axis_name = match args.axis {
        AblationAxis::Estimation => "estimation",
        AblationAxis::ReferenceFrames => "reference_frames",
    };
    let mut csv = String::from("value,text,visual,removal,addition,mixed,clean,overall\n");
    let mut table = format!(
        "{:<10} {:>7} {:>7} {:>8} {:>9} {:>7} {:>7} {:>8}\n",
        axis_name, "text", "visual", "removal", "addition", "mixed", "clean", "overall"
    );
    for (value, summary) in &rows {
        let cols: Vec<f64> = ABLATION_CATEGORIES
            .iter()
            .map(|c| category_column(summary, c))
            .collect();
        csv.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            value, cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], summary.overall_accuracy
        ));
        table.push_str(&format!(
            "{:<10} {:>6.1}% {:>6.1}% {:>7.1}% {:>8.1}% {:>6.1}% {:>6.1}% {:>7.1}%\n",
            value,
            100.0 * cols[0],
            100.0 * cols[1],
            100.0 * cols[2],
            100.0 * cols[3],
            100.0 * cols[4],
            100.0 * cols[5],
            100.0 * summary.overall_accuracy
        ));
    }
    let csv_path = args.output_dir.join(format!("ablation_{axis_name}.csv"));
    fs::write(&csv_path, &csv)?;
    let detail: BTreeMap<&str, &EvalSummary> = rows
        .iter()
        .map(|(value, summary)| (value.as_str(), summary))
        .collect();
    fs::write(
        args.output_dir.join(format!("ablation_{axis_name}.json")),
        serde_json::to_string_pretty(&detail).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    print!("{table}");
    println!("data file: {}", csv_path.display());
    Ok(())
}
