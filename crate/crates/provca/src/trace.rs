//! Per-run trace records and the frame-budget ledger.
//!
//! A trace captures every model interaction of one pipeline run in the fixed
//! stage order `sample → localize → caption_embed → cluster → select → refine
//! → answer`, with enough detail (request digests, raw responses, parse
//! outcomes, fallback flags) to recount the budget ledger from scratch and to
//! compare runs byte-for-byte. Traces deliberately carry no wall-clock data.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bumped whenever the serialized trace layout changes.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace does not parse: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported trace schema version {0}")]
    UnsupportedVersion(u32),
}

/// The seven pipeline stages, in their fixed execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Localize,
    CaptionEmbed,
    Cluster,
    Select,
    Refine,
    Answer,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Sample,
        Stage::Localize,
        Stage::CaptionEmbed,
        Stage::Cluster,
        Stage::Select,
        Stage::Refine,
        Stage::Answer,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Localize => "localize",
            Stage::CaptionEmbed => "caption_embed",
            Stage::Cluster => "cluster",
            Stage::Select => "select",
            Stage::Refine => "refine",
            Stage::Answer => "answer",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One model call attempt (retries are separate records).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    /// Lowercase hex SHA-256 of the canonicalized request payload.
    pub request_digest: String,
    /// The model's raw text output.
    pub raw_response: String,
    pub parse_ok: bool,
    /// True when the response came from the response cache (no transmission).
    pub cached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything recorded for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    /// The stage was skipped by configuration (ablation switch) or because it
    /// was structurally unnecessary (e.g. a single segment).
    pub bypassed: bool,
    /// The stage's documented fallback was applied.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Frame images transmitted to the multimodal model by this stage.
    pub images_sent: u64,
    pub calls: Vec<CallRecord>,
    /// Request digests of captioner calls that actually hit the service.
    pub captioner_digests: Vec<String>,
    /// Request digests of embedding calls that actually hit the service.
    pub embed_digests: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parsed: Option<serde_json::Value>,
}

impl StageRecord {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            prompt_id: None,
            bypassed: false,
            fallback: false,
            note: None,
            images_sent: 0,
            calls: Vec::new(),
            captioner_digests: Vec::new(),
            embed_digests: Vec::new(),
            parsed: None,
        }
    }

    pub fn bypass(mut self, note: impl Into<String>) -> Self {
        self.bypassed = true;
        self.note = Some(note.into());
        self
    }
}

/// Counts of what one run transmitted: frame images to the multimodal model
/// (total and per stage) plus captioner and embedding service calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub images_sent: u64,
    pub per_stage: BTreeMap<String, u64>,
    pub captioner_calls: u64,
    pub embedding_calls: u64,
}

impl Default for BudgetLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl BudgetLedger {
    /// Empty ledger with a zero entry for every stage, so incremental updates
    /// and from-scratch recounts serialize identically.
    pub fn new() -> Self {
        let per_stage = Stage::ORDER.iter().map(|s| (s.name().to_string(), 0)).collect();
        Self { images_sent: 0, per_stage, captioner_calls: 0, embedding_calls: 0 }
    }

    pub fn add_images(&mut self, stage: Stage, count: u64) {
        self.images_sent += count;
        *self.per_stage.entry(stage.name().to_string()).or_insert(0) += count;
    }

    pub fn add_captioner_calls(&mut self, count: u64) {
        self.captioner_calls += count;
    }

    pub fn add_embedding_calls(&mut self, count: u64) {
        self.embedding_calls += count;
    }

    /// Rebuild the ledger from the finished stage records. Must equal the
    /// incrementally maintained ledger on every run.
    pub fn recount(stages: &[StageRecord]) -> Self {
        let mut ledger = Self::new();
        for record in stages {
            ledger.add_images(record.stage, record.images_sent);
            ledger.add_captioner_calls(record.captioner_digests.len() as u64);
            ledger.add_embedding_calls(record.embed_digests.len() as u64);
        }
        ledger
    }

    /// images_sent must equal the per-stage sum.
    pub fn is_consistent(&self) -> bool {
        self.per_stage.values().sum::<u64>() == self.images_sent
    }
}

/// The final answer as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub option_index: usize,
    pub option_letter: char,
    pub rationale: String,
    /// True when the answer stage fell back to option 0 after parse exhaustion.
    pub guessed: bool,
}

/// Summary of the sampled video a run operated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub source_id: String,
    pub frame_count: usize,
    pub sampling_policy: String,
}

/// Final keyframe bookkeeping: which frames survived the merge, and what the
/// cap dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSummary {
    pub indices: Vec<usize>,
    pub truncated: bool,
    pub dropped: Vec<usize>,
}

/// Full per-stage record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub schema_version: u32,
    pub task_id: String,
    pub config: serde_json::Value,
    pub video: Option<VideoSummary>,
    pub stages: Vec<StageRecord>,
    pub keyframes: Option<KeyframeSummary>,
    pub ledger: BudgetLedger,
    pub answer: Option<AnswerRecord>,
    /// Set when the run aborted; the stages up to the failure are retained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl PipelineTrace {
    pub fn new(task_id: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            task_id: task_id.into(),
            config,
            video: None,
            stages: Vec::new(),
            keyframes: None,
            ledger: BudgetLedger::new(),
            answer: None,
            aborted: None,
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Stages must appear in the fixed order, each at most once.
    pub fn stage_order_ok(&self) -> bool {
        let mut expected = Stage::ORDER.iter();
        self.stages.iter().all(|record| expected.any(|s| *s == record.stage))
    }

    /// Total multimodal-model calls across all stages (including cached hits).
    pub fn mllm_calls(&self) -> usize {
        self.stages.iter().map(|s| s.calls.len()).sum()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization cannot fail")
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TraceError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, TraceError> {
        let raw = std::fs::read_to_string(path)?;
        let trace: PipelineTrace = serde_json::from_str(&raw)?;
        if trace.schema_version != TRACE_SCHEMA_VERSION {
            return Err(TraceError::UnsupportedVersion(trace.schema_version));
        }
        Ok(trace)
    }
}
