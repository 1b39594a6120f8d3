//! Dataset ingestion, batch execution, and reporting.
//!
//! The native task format is line-delimited JSON (one task per line), which
//! streams well for large suites; adapters normalize the common public
//! question-answering layouts (CSV with `a0..a4` option columns, JSON arrays
//! with `option 0..option 4` fields) into it.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::ResponseCache;
use crate::model::{ModelError, QueryTask};
use crate::pipeline::{self, Backends, PipelineConfig, VideoSource};
use crate::sampler::synthetic::needle_payload;
use crate::sampler::SyntheticVideoSpec;
use crate::trace::PipelineTrace;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("task file I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("task file is empty: {0}")]
    EmptyFile(PathBuf),
    #[error("no usable tasks in {0}")]
    NoTasks(PathBuf),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("CSV layout error: {0}")]
    Csv(#[from] csv::Error),
    #[error("report does not parse: {0}")]
    Report(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One normalized benchmark task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub source: VideoSource,
    pub question: String,
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<usize>,
    /// e.g. temporal / causal / descriptive
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl TaskRecord {
    pub fn task(&self) -> Result<QueryTask, ModelError> {
        QueryTask::new(&self.task_id, &self.question, self.options.clone(), self.ground_truth)
    }
}

/// Which on-disk layout a task file uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatAdapter {
    /// Line-delimited JSON `TaskRecord`s.
    Native,
    /// CSV with `video`/`question`/`a0..a4`/`answer`/`type` columns.
    NextQa,
    /// CSV with `video_id`/`question`/`a0..a4`/`answer` columns.
    IntentQa,
    /// JSON array with `q_uid`/`question`/`option 0..option 4` fields.
    EgoSchema,
}

impl std::str::FromStr for FormatAdapter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "native" => Ok(FormatAdapter::Native),
            "nextqa" => Ok(FormatAdapter::NextQa),
            "intentqa" => Ok(FormatAdapter::IntentQa),
            "egoschema" => Ok(FormatAdapter::EgoSchema),
            other => Err(format!("unknown adapter `{other}`")),
        }
    }
}

/// A skipped row and why (lenient mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub tasks: Vec<TaskRecord>,
    pub skipped: Vec<LoadDiagnostic>,
}

fn validate_record(record: &TaskRecord) -> Result<(), String> {
    record.task().map(|_| ()).map_err(|e| e.to_string())
}

/// Load and normalize a task file. Malformed rows are skipped with their line
/// numbers (lenient) or abort the load (strict).
pub fn load_tasks(
    path: &Path,
    adapter: FormatAdapter,
    strict: bool,
) -> Result<LoadOutcome, HarnessError> {
    let raw = std::fs::read_to_string(path)?;
    if raw.trim().is_empty() {
        return Err(HarnessError::EmptyFile(path.to_path_buf()));
    }
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    let mut push = |line: usize, parsed: Result<TaskRecord, String>| -> Result<(), HarnessError> {
        match parsed.and_then(|r| validate_record(&r).map(|()| r)) {
            Ok(record) => tasks.push(record),
            Err(message) => {
                if strict {
                    return Err(HarnessError::Malformed { line, message });
                }
                skipped.push(LoadDiagnostic { line, message });
            }
        }
        Ok(())
    };

    match adapter {
        FormatAdapter::Native => {
            for (i, line) in std::io::Cursor::new(&raw).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                push(i + 1, serde_json::from_str(&line).map_err(|e| e.to_string()))?;
            }
        }
        FormatAdapter::NextQa | FormatAdapter::IntentQa => {
            let mut reader = csv::Reader::from_reader(raw.as_bytes());
            let headers = reader.headers()?.clone();
            let column = |name: &str| headers.iter().position(|h| h == name);
            let video_col = column("video").or_else(|| column("video_id"));
            for (i, row) in reader.records().enumerate() {
                let line = i + 2; // header is line 1
                let row = row?;
                let get = |name: &str| {
                    column(name).and_then(|c| row.get(c)).map(|s| s.to_string())
                };
                let parsed = (|| -> Result<TaskRecord, String> {
                    let video = video_col
                        .and_then(|c| row.get(c))
                        .ok_or("missing video column")?
                        .to_string();
                    let question = get("question").ok_or("missing question")?;
                    let options: Vec<String> = (0..5)
                        .map(|k| get(&format!("a{k}")).ok_or(format!("missing option a{k}")))
                        .collect::<Result<_, _>>()?;
                    let ground_truth = match get("answer") {
                        Some(a) if !a.trim().is_empty() => {
                            Some(a.trim().parse::<usize>().map_err(|_| "bad answer index")?)
                        }
                        _ => None,
                    };
                    let qid = get("qid").unwrap_or_else(|| i.to_string());
                    Ok(TaskRecord {
                        task_id: format!("{video}-{qid}"),
                        source: VideoSource::File(PathBuf::from(format!("{video}.mp4"))),
                        question,
                        options,
                        ground_truth,
                        category: get("type").map(normalize_category),
                    })
                })();
                push(line, parsed)?;
            }
        }
        FormatAdapter::EgoSchema => {
            let rows: Vec<serde_json::Value> =
                serde_json::from_str(&raw).map_err(HarnessError::Report)?;
            for (i, row) in rows.iter().enumerate() {
                let parsed = (|| -> Result<TaskRecord, String> {
                    let q_uid =
                        row.get("q_uid").and_then(|v| v.as_str()).ok_or("missing q_uid")?;
                    let question = row
                        .get("question")
                        .and_then(|v| v.as_str())
                        .ok_or("missing question")?;
                    let options: Vec<String> = (0..5)
                        .map(|k| {
                            row.get(format!("option {k}"))
                                .and_then(|v| v.as_str())
                                .map(|s| s.to_string())
                                .ok_or(format!("missing option {k}"))
                        })
                        .collect::<Result<_, _>>()?;
                    let ground_truth = row
                        .get("answer")
                        .or_else(|| row.get("CA"))
                        .and_then(|v| v.as_u64())
                        .map(|v| v as usize);
                    Ok(TaskRecord {
                        task_id: q_uid.to_string(),
                        source: VideoSource::File(PathBuf::from(format!("{q_uid}.mp4"))),
                        question: question.to_string(),
                        options,
                        ground_truth,
                        category: None,
                    })
                })();
                push(i + 1, parsed)?;
            }
        }
    }

    if tasks.is_empty() {
        return Err(HarnessError::NoTasks(path.to_path_buf()));
    }
    Ok(LoadOutcome { tasks, skipped })
}

fn normalize_category(raw: String) -> String {
    match raw.chars().next().map(|c| c.to_ascii_uppercase()) {
        Some('T') => "temporal".into(),
        Some('C') => "causal".into(),
        Some('D') => "descriptive".into(),
        _ => raw,
    }
}

/// Write tasks in the native line-delimited format.
pub fn write_tasks(path: &Path, tasks: &[TaskRecord]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

const NEEDLE_FRAME_COUNT: usize = 128;
const NEEDLE_THEME_REGIONS: usize = 16;
const NEEDLE_OPTION_COUNT: usize = 5;
const CATEGORY_CYCLE: [&str; 3] = ["temporal", "causal", "descriptive"];

/// One synthetic planted-needle task. Deterministic per (seed, index): the
/// video carries exactly one needle frame, the question names it with a
/// machine-readable `[needle@N]` marker, and exactly one of the five options
/// quotes the needle frame's unique event token.
pub fn needle_task(seed: u64, index: usize) -> TaskRecord {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let needle = rng.gen_range(0..NEEDLE_FRAME_COUNT);
    let gt_slot = rng.gen_range(0..NEEDLE_OPTION_COUNT);
    let spec_seed: u64 = rng.gen();

    let spec = SyntheticVideoSpec {
        frame_count: NEEDLE_FRAME_COUNT,
        needle_indices: std::collections::BTreeSet::from([needle]),
        distractor_themes: (0..NEEDLE_THEME_REGIONS).map(|i| format!("theme_{i:02}")).collect(),
        seed: spec_seed,
    };
    let payload = needle_payload(spec_seed, needle);
    let options: Vec<String> = (0..NEEDLE_OPTION_COUNT)
        .map(|slot| {
            let token = if slot == gt_slot {
                payload.clone()
            } else {
                // decoys drawn far outside the frame index range
                needle_payload(spec_seed, 100_000 + slot)
            };
            format!("The marker event {token} takes place.")
        })
        .collect();

    TaskRecord {
        task_id: format!("needle-{seed:04}-{index:04}"),
        source: VideoSource::Synthetic(spec),
        question: format!(
            "Exactly one frame of this video shows a special marker event, at frame {needle} \
             [needle@{needle}]. Which description matches the marked event?"
        ),
        options,
        ground_truth: Some(gt_slot),
        category: Some(CATEGORY_CYCLE[index % CATEGORY_CYCLE.len()].to_string()),
    }
}

/// Deterministic suite of planted-needle tasks.
pub fn make_needle_suite(count: usize, seed: u64) -> Vec<TaskRecord> {
    (0..count).map(|i| needle_task(seed, i)).collect()
}

/// Per-task outcome row of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub task_id: String,
    pub predicted: Option<usize>,
    pub correct: bool,
    pub images_sent: u64,
    pub wall_ms: u64,
    /// Stages whose documented fallback fired.
    pub fallbacks: Vec<String>,
    pub guessed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Aggregates over the rows. Wall time is deliberately excluded so aggregates
/// are identical at any parallelism level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregates {
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_category: BTreeMap<String, CategoryAccuracy>,
    pub mean_images_sent: f64,
    pub total_mllm_calls: u64,
    pub total_captioner_calls: u64,
    pub total_embedding_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub rows: Vec<BenchRow>,
    pub aggregates: BenchAggregates,
}

impl BenchReport {
    pub fn write_to(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Recompute aggregates from the rows (used by tests and after deserialize).
pub fn aggregate(rows: &[BenchRow], traces: Option<&[PipelineTrace]>) -> BenchAggregates {
    let tasks = rows.len();
    let correct = rows.iter().filter(|r| r.correct).count();
    let mut per_category: BTreeMap<String, CategoryAccuracy> = BTreeMap::new();
    for row in rows {
        if let Some(category) = &row.category {
            let entry = per_category
                .entry(category.clone())
                .or_insert(CategoryAccuracy { tasks: 0, correct: 0, accuracy: 0.0 });
            entry.tasks += 1;
            entry.correct += usize::from(row.correct);
        }
    }
    for entry in per_category.values_mut() {
        entry.accuracy = entry.correct as f64 / entry.tasks as f64;
    }
    let total_images: u64 = rows.iter().map(|r| r.images_sent).sum();
    let (mut mllm, mut captioner, mut embedding) = (0u64, 0u64, 0u64);
    if let Some(traces) = traces {
        for trace in traces {
            mllm += trace.mllm_calls() as u64;
            captioner += trace.ledger.captioner_calls;
            embedding += trace.ledger.embedding_calls;
        }
    }
    BenchAggregates {
        tasks,
        correct,
        accuracy: if tasks == 0 { 0.0 } else { correct as f64 / tasks as f64 },
        per_category,
        mean_images_sent: if tasks == 0 { 0.0 } else { total_images as f64 / tasks as f64 },
        total_mllm_calls: mllm,
        total_captioner_calls: captioner,
        total_embedding_calls: embedding,
    }
}

/// Run the pipeline over every task with bounded parallelism. Individual task
/// failures become incorrect rows with an error note; the batch continues.
/// Traces are written to `trace_dir` as `<task_id>.trace.json` when given.
pub fn run_bench(
    tasks: &[TaskRecord],
    config: &PipelineConfig,
    backends: &Backends,
    cache: Option<&ResponseCache>,
    parallelism: usize,
    trace_dir: Option<&Path>,
) -> Result<BenchReport, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks(PathBuf::from("<bench input>")));
    }

    let outcomes = crate::util::bounded_map(tasks, parallelism.max(1), |_, record| {
        let started = Instant::now();
        let row_result = record.task().map(|task| {
            let (result, trace) = pipeline::run(&record.source, &task, config, backends, cache);
            (result, trace)
        });
        let wall_ms = started.elapsed().as_millis() as u64;
        (row_result, wall_ms)
    });

    let mut rows = Vec::with_capacity(tasks.len());
    let mut traces = Vec::with_capacity(tasks.len());
    for (record, (outcome, wall_ms)) in tasks.iter().zip(outcomes) {
        let row = match outcome {
            Ok((result, trace)) => {
                if let Some(dir) = trace_dir {
                    trace
                        .write_to(&dir.join(format!("{}.trace.json", record.task_id)))
                        .map_err(|e| HarnessError::Io(std::io::Error::other(e.to_string())))?;
                }
                let fallbacks: Vec<String> = trace
                    .stages
                    .iter()
                    .filter(|s| s.fallback)
                    .map(|s| s.stage.name().to_string())
                    .collect();
                let images_sent = trace.ledger.images_sent;
                let row = match result {
                    Ok(answer) => BenchRow {
                        task_id: record.task_id.clone(),
                        predicted: Some(answer.option_index),
                        correct: record.ground_truth == Some(answer.option_index),
                        images_sent,
                        wall_ms,
                        fallbacks,
                        guessed: answer.guessed,
                        error: None,
                        category: record.category.clone(),
                    },
                    Err(err) => BenchRow {
                        task_id: record.task_id.clone(),
                        predicted: None,
                        correct: false,
                        images_sent,
                        wall_ms,
                        fallbacks,
                        guessed: false,
                        error: Some(err.to_string()),
                        category: record.category.clone(),
                    },
                };
                traces.push(*trace);
                row
            }
            Err(err) => BenchRow {
                task_id: record.task_id.clone(),
                predicted: None,
                correct: false,
                images_sent: 0,
                wall_ms,
                fallbacks: Vec::new(),
                guessed: false,
                error: Some(err.to_string()),
                category: record.category.clone(),
            },
        };
        rows.push(row);
    }

    rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let aggregates = aggregate(&rows, Some(&traces));
    Ok(BenchReport { schema_version: REPORT_SCHEMA_VERSION, rows, aggregates })
}

/// Human-readable summary table.
pub fn render_summary(report: &BenchReport) -> String {
    let a = &report.aggregates;
    let mut out = String::new();
    out.push_str(&format!(
        "tasks: {}  correct: {}  accuracy: {:.3}\n",
        a.tasks, a.correct, a.accuracy
    ));
    if !a.per_category.is_empty() {
        out.push_str("per category:\n");
        for (category, acc) in &a.per_category {
            out.push_str(&format!(
                "  {:<12} {:>4}/{:<4} {:.3}\n",
                category, acc.correct, acc.tasks, acc.accuracy
            ));
        }
    }
    out.push_str(&format!("mean images sent per task: {:.2}\n", a.mean_images_sent));
    out.push_str(&format!(
        "backend calls: {} model, {} captioner, {} embedding\n",
        a.total_mllm_calls, a.total_captioner_calls, a.total_embedding_calls
    ));
    out
}
