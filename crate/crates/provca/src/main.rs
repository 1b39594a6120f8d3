//! Command-line surface: answer a single question, run a benchmark, generate
//! synthetic suites, inspect traces, and manage the cache.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use provca::cache::ResponseCache;
use provca::gateway::{HttpBackend, DEFAULT_MODEL};
use provca::harness::{self, FormatAdapter};
use provca::index::{HttpCaptioner, HttpEmbedder};
use provca::model::QueryTask;
use provca::net::RetryPolicy;
use provca::pipeline::{self, Backends, PipelineConfig, VideoSource};
use provca::sampler::SyntheticVideoSpec;
use provca::trace::PipelineTrace;

#[derive(Parser)]
#[command(
    name = "provca",
    version,
    about = "Progressive video condensation for long-form video question answering"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one multiple-choice question about one video
    Answer(AnswerArgs),
    /// Run the pipeline over a task file and write a report
    Bench(BenchArgs),
    /// Generate a deterministic synthetic planted-needle suite
    Synth(SynthArgs),
    /// Pretty-print a recorded run trace
    Trace(TraceArgs),
    /// Inspect or clear the response/frame cache
    Cache(CacheArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MockKind {
    /// Scripted backend that reads planted synthetic metadata
    Oracle,
    /// Scripted backend emitting malformed output everywhere
    Adversarial,
}

#[derive(Args)]
struct BackendArgs {
    /// Run against scripted offline backends instead of remote services
    #[arg(long, value_name = "KIND", num_args = 0..=1, default_missing_value = "oracle")]
    mock: Option<MockKind>,

    /// Chat model identifier
    #[arg(long, default_value = DEFAULT_MODEL)]
    model: String,

    /// Captioner model identifier
    #[arg(long, default_value = "default-captioner")]
    captioner_model: String,

    /// Embedding model identifier
    #[arg(long, default_value = "sentence-transformers/all-MiniLM-L6-v2")]
    embedder_model: String,

    /// Embedding output dimension
    #[arg(long, default_value_t = 384)]
    embed_dim: usize,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration file (JSON; flags below override it)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long)]
    n_segments: Option<usize>,

    #[arg(long)]
    budget_cap: Option<usize>,

    #[arg(long)]
    t_max: Option<f64>,

    #[arg(long)]
    t_min: Option<f64>,

    /// Sampling policy: `fps:<rate>` or `uniform:<count>`
    #[arg(long, value_name = "POLICY")]
    sampling: Option<String>,

    /// Attach representative images to the selection call
    #[arg(long)]
    select_with_images: bool,

    /// Ablation switch: skip segment localization
    #[arg(long)]
    disable_localization: bool,

    /// Ablation switch: skip snippet selection (uniform blocks instead)
    #[arg(long)]
    disable_snippet_selection: bool,

    /// Ablation switch: skip keyframe refinement (representatives only)
    #[arg(long)]
    disable_refinement: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&raw)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(n) = self.n_segments {
            config.n_segments = n;
        }
        if let Some(cap) = self.budget_cap {
            config.budget_cap = cap;
        }
        if let Some(t) = self.t_max {
            config.t_max = t;
        }
        if let Some(t) = self.t_min {
            config.t_min = t;
        }
        if let Some(policy) = &self.sampling {
            config.sampling = parse_sampling(policy)?;
        }
        if self.select_with_images {
            config.select_with_images = true;
        }
        if self.disable_localization {
            config.enable_localization = false;
        }
        if self.disable_snippet_selection {
            config.enable_snippet_selection = false;
        }
        if self.disable_refinement {
            config.enable_refinement = false;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct AnswerArgs {
    /// Video file path, or `synth:<frames>:<needle>:<seed>` for a synthetic video
    #[arg(long, value_name = "PATH")]
    video: String,

    /// The question to answer
    #[arg(long)]
    question: String,

    /// Comma-separated answer options (at least 2)
    #[arg(long, value_name = "CSV")]
    options: String,

    /// Write the run trace to this path
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    #[command(flatten)]
    backend: BackendArgs,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Task file to load
    #[arg(long, value_name = "PATH")]
    tasks: PathBuf,

    /// Where to write the report (JSON)
    #[arg(long, value_name = "PATH")]
    out: PathBuf,

    /// Task file layout
    #[arg(long, default_value = "native")]
    adapter: String,

    /// Worker threads for task-level parallelism
    #[arg(long, default_value_t = 4)]
    parallel: usize,

    /// Abort on the first malformed row instead of skipping it
    #[arg(long)]
    strict: bool,

    /// Directory to write per-task traces into
    #[arg(long, value_name = "DIR")]
    trace_dir: Option<PathBuf>,

    #[command(flatten)]
    backend: BackendArgs,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of tasks to generate
    #[arg(long)]
    count: usize,

    /// Suite seed
    #[arg(long)]
    seed: u64,

    /// Output directory (tasks land in <out>/tasks.jsonl)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file to render
    #[arg(long, value_name = "PATH")]
    show: PathBuf,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct CacheArgs {
    /// Print entry counts and byte sizes
    #[arg(long)]
    stats: bool,

    /// Remove every cached entry
    #[arg(long)]
    clear: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::from_env(env_logger::Env::default())
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Answer(args) => cmd_answer(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Cache(args) => cmd_cache(args),
    }
}

fn cache_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("PROVCA_CACHE_DIR") {
        return PathBuf::from(dir);
    }
    let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
    Path::new(&home).join(".cache").join("provca")
}

fn parse_sampling(raw: &str) -> anyhow::Result<provca::sampler::SamplingPolicy> {
    use provca::sampler::SamplingPolicy;
    let (kind, value) = raw.split_once(':').with_context(|| {
        format!("sampling policy `{raw}` is not `fps:<rate>` or `uniform:<count>`")
    })?;
    Ok(match kind {
        "fps" => SamplingPolicy::fps(value.parse::<f64>().context("fps rate")?)
            .map_err(|e| anyhow::anyhow!("{e}"))?,
        "uniform" => SamplingPolicy::uniform(value.parse::<usize>().context("uniform count")?)
            .map_err(|e| anyhow::anyhow!("{e}"))?,
        other => bail!("unknown sampling policy kind `{other}`"),
    })
}

fn parse_video_source(raw: &str) -> anyhow::Result<VideoSource> {
    if let Some(rest) = raw.strip_prefix("synth:") {
        let fields: Vec<&str> = rest.split(':').collect();
        if fields.len() != 3 {
            bail!("synthetic source must be `synth:<frames>:<needle>:<seed>`");
        }
        let frame_count: usize = fields[0].parse().context("synthetic frame count")?;
        let needle: usize = fields[1].parse().context("synthetic needle index")?;
        let seed: u64 = fields[2].parse().context("synthetic seed")?;
        let spec = SyntheticVideoSpec {
            frame_count,
            needle_indices: std::collections::BTreeSet::from([needle]),
            distractor_themes: (0..16).map(|i| format!("theme_{i:02}")).collect(),
            seed,
        };
        return Ok(VideoSource::Synthetic(spec));
    }
    Ok(VideoSource::File(PathBuf::from(raw)))
}

fn build_backends(args: &BackendArgs) -> Backends {
    match args.mock {
        Some(MockKind::Oracle) => Backends::oracle(),
        Some(MockKind::Adversarial) => Backends::adversarial(),
        None => {
            let base = std::env::var("PROVCA_API_BASE")
                .unwrap_or_else(|_| provca::gateway::DEFAULT_API_BASE.to_string());
            let key = std::env::var("PROVCA_API_KEY").ok();
            let timeout = Duration::from_secs(120);
            let retry = RetryPolicy::default();
            Backends {
                mllm: std::sync::Arc::new(HttpBackend::from_env(Some(args.model.clone()))),
                captioner: std::sync::Arc::new(HttpCaptioner::new(
                    format!("{}/captions", base.trim_end_matches('/')),
                    args.captioner_model.clone(),
                    key.clone(),
                    timeout,
                    retry,
                )),
                embedder: std::sync::Arc::new(HttpEmbedder::new(
                    format!("{}/embeddings", base.trim_end_matches('/')),
                    args.embedder_model.clone(),
                    key,
                    args.embed_dim,
                    timeout,
                    retry,
                )),
            }
        }
    }
}

/// Mock runs skip the response cache: scripted backends are already
/// deterministic and free, and real-run cache entries stay uncontaminated.
fn open_cache(mock: Option<MockKind>) -> anyhow::Result<Option<ResponseCache>> {
    if mock.is_some() {
        return Ok(None);
    }
    Ok(Some(ResponseCache::open(cache_dir())?))
}

fn cmd_answer(args: AnswerArgs) -> anyhow::Result<ExitCode> {
    let options: Vec<String> =
        args.options.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if options.len() < 2 {
        eprintln!("error: --options needs at least 2 comma-separated entries");
        return Ok(ExitCode::from(2));
    }
    let source = match parse_video_source(&args.video) {
        Ok(source) => source,
        Err(err) => {
            eprintln!("error: {err:#}");
            return Ok(ExitCode::from(2));
        }
    };
    let config = args.config.resolve()?;
    let task = QueryTask::new("cli-answer", &args.question, options, None)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let backends = build_backends(&args.backend);
    let cache = open_cache(args.backend.mock)?;

    let (result, trace) = pipeline::run(&source, &task, &config, &backends, cache.as_ref());
    if let Some(path) = &args.trace {
        trace.write_to(path).context("writing trace")?;
    }
    let answer = result.map_err(|e| anyhow::anyhow!("run failed: {e}"))?;
    let option_text = &task.options()[answer.option_index];
    println!("Answer: ({}) {option_text}", answer.option_letter);
    if answer.guessed {
        println!("(fallback guess after unparsable model output)");
    }
    println!("Rationale: {}", answer.rationale);
    println!("Images sent: {}", trace.ledger.images_sent);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<ExitCode> {
    let adapter = FormatAdapter::from_str(&args.adapter).map_err(|e| anyhow::anyhow!(e))?;
    let loaded = harness::load_tasks(&args.tasks, adapter, args.strict)
        .map_err(|e| anyhow::anyhow!("loading tasks: {e}"))?;
    for diagnostic in &loaded.skipped {
        eprintln!("skipped line {}: {}", diagnostic.line, diagnostic.message);
    }
    let config = args.config.resolve()?;
    let backends = build_backends(&args.backend);
    let cache = open_cache(args.backend.mock)?;

    let report = harness::run_bench(
        &loaded.tasks,
        &config,
        &backends,
        cache.as_ref(),
        args.parallel,
        args.trace_dir.as_deref(),
    )?;
    report.write_to(&args.out)?;
    print!("{}", harness::render_summary(&report));
    println!("report written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<ExitCode> {
    if args.count == 0 {
        eprintln!("error: --count must be at least 1");
        return Ok(ExitCode::from(2));
    }
    let suite = harness::make_needle_suite(args.count, args.seed);
    let path = args.out.join("tasks.jsonl");
    harness::write_tasks(&path, &suite)?;
    println!("wrote {} tasks to {}", suite.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace(args: TraceArgs) -> anyhow::Result<ExitCode> {
    let trace = PipelineTrace::read_from(&args.show)
        .map_err(|e| anyhow::anyhow!("unreadable trace {}: {e}", args.show.display()))?;
    println!("task: {}", trace.task_id);
    if let Some(video) = &trace.video {
        println!(
            "video: {} ({} frames, {})",
            video.source_id, video.frame_count, video.sampling_policy
        );
    }
    for stage in &trace.stages {
        let mut flags = Vec::new();
        if stage.bypassed {
            flags.push("bypassed");
        }
        if stage.fallback {
            flags.push("fallback");
        }
        let flags =
            if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(",")) };
        println!(
            "stage {:<13} calls={} images={}{}",
            stage.stage.name(),
            stage.calls.len(),
            stage.images_sent,
            flags
        );
        if let Some(note) = &stage.note {
            println!("    note: {note}");
        }
        if let Some(parsed) = &stage.parsed {
            println!("    parsed: {parsed}");
        }
    }
    if let Some(keyframes) = &trace.keyframes {
        println!(
            "keyframes: {:?} (truncated: {}, dropped: {:?})",
            keyframes.indices, keyframes.truncated, keyframes.dropped
        );
    }
    if let Some(answer) = &trace.answer {
        println!("answer: ({}) guessed={}", answer.option_letter, answer.guessed);
    }
    println!(
        "ledger: images_sent={} captioner_calls={} embedding_calls={}",
        trace.ledger.images_sent, trace.ledger.captioner_calls, trace.ledger.embedding_calls
    );
    if let Some(aborted) = &trace.aborted {
        println!("aborted: {aborted}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(args: CacheArgs) -> anyhow::Result<ExitCode> {
    let dir = cache_dir();
    if args.stats {
        if !dir.exists() {
            println!("cache at {}: 0 entries, 0 bytes", dir.display());
            return Ok(ExitCode::SUCCESS);
        }
        let cache = ResponseCache::open(&dir)?;
        let stats = cache.stats()?;
        println!(
            "cache at {}: {} entries, {} bytes ({} responses / {} bytes, {} frames / {} bytes)",
            dir.display(),
            stats.total_entries(),
            stats.total_bytes(),
            stats.response_entries,
            stats.response_bytes,
            stats.frame_files,
            stats.frame_bytes,
        );
    } else if args.clear {
        if dir.exists() {
            ResponseCache::open(&dir)?.clear()?;
        }
        println!("cache cleared at {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}
