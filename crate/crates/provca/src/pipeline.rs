//! End-to-end orchestration: sample → localize → caption/embed → cluster →
//! select → refine → merge → answer, with trace recording, budget accounting,
//! per-stage fallbacks, and a configuration switch for every stage.
//!
//! Parse exhaustion and oversized requests are absorbed by documented stage
//! fallbacks (whole video / select-all / representatives / guessed answer);
//! only transport-class failures abort a run, and an aborted run still
//! returns its partial trace.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cache::ResponseCache;
use crate::condenser::{
    dynamic_threshold, partition_segments, sequential_cluster, CondenserError, SnippetPartition,
    ThresholdPolicy,
};
use crate::gateway::{
    self, CallLog, GatewayError, GatewayRun, MllmBackend, RefineGroup, ScriptedBackend,
    SnippetRep,
};
use crate::index::{self, CaptionerClient, EmbedderClient, IndexError, MockCaptioner, MockEmbedder};
use crate::model::{
    merge_chronological, Confidence, EmbeddedCaption, KeyframeSet, ModelError,
    QueryTask, SampledVideo, SegmentWindow, Snippet, SnippetVerdict,
};
use crate::sampler::{self, SamplerConfig, SamplerError, SamplingPolicy, SyntheticVideoSpec};
use crate::trace::{
    AnswerRecord, BudgetLedger, KeyframeSummary, PipelineTrace, Stage, StageRecord, VideoSummary,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("caption/embedding failure: {0}")]
    Index(#[from] IndexError),
    #[error("backend failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Condenser(#[from] CondenserError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// What to run the pipeline on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoSource {
    File(PathBuf),
    Synthetic(SyntheticVideoSpec),
}

/// The three service clients one run talks to. Shareable across concurrent
/// runs.
#[derive(Clone)]
pub struct Backends {
    pub mllm: Arc<dyn MllmBackend>,
    pub captioner: Arc<dyn CaptionerClient>,
    pub embedder: Arc<dyn EmbedderClient>,
}

impl Backends {
    /// Scripted model plus mock captioner/embedder: fully offline.
    pub fn scripted(mllm: ScriptedBackend) -> Self {
        Self {
            mllm: Arc::new(mllm),
            captioner: Arc::new(MockCaptioner),
            embedder: Arc::new(MockEmbedder::default()),
        }
    }

    pub fn oracle() -> Self {
        Self::scripted(ScriptedBackend::oracle())
    }

    pub fn adversarial() -> Self {
        Self::scripted(ScriptedBackend::adversarial())
    }
}

fn default_n_segments() -> usize {
    4
}
fn default_t_max() -> f64 {
    0.9
}
fn default_t_min() -> f64 {
    0.7
}
fn default_budget_cap() -> usize {
    8
}
fn default_sampling() -> SamplingPolicy {
    SamplingPolicy::Uniform { count: 32 }
}
fn default_true() -> bool {
    true
}
fn default_retry_budget() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_jpeg_quality() -> u8 {
    85
}
fn default_max_image_edge() -> u32 {
    512
}
fn default_decoder() -> String {
    "ffmpeg".into()
}

/// Every knob of one run. Each `enable_*` flag reproduces one stage-ablation
/// bypass; all defaults are documented on the fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of coarse segments the video is split into (default 4).
    #[serde(default = "default_n_segments")]
    pub n_segments: usize,
    /// Upper bound of the dynamic similarity threshold (default 0.9).
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Lower bound of the dynamic similarity threshold (default 0.7).
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    /// Maximum keyframes fed to the answering call (default 8).
    #[serde(default = "default_budget_cap")]
    pub budget_cap: usize,
    /// Frame sampling policy for file videos (default uniform 32).
    #[serde(default = "default_sampling")]
    pub sampling: SamplingPolicy,
    /// Attach representative images to the selection call instead of sending
    /// captions only (default false).
    #[serde(default)]
    pub select_with_images: bool,
    /// Stage switch: off substitutes the whole video for the located segment.
    #[serde(default = "default_true")]
    pub enable_localization: bool,
    /// Stage switch: off selects uniform blocks with confidence 0.
    #[serde(default = "default_true")]
    pub enable_snippet_selection: bool,
    /// Stage switch: off turns selected representatives directly into
    /// keyframes.
    #[serde(default = "default_true")]
    pub enable_refinement: bool,
    /// Parse-retry attempts per model call (default 3).
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    /// Parallelism bound for caption fan-out (default 4).
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// JPEG quality for extracted frames (default 85).
    #[serde(default = "default_jpeg_quality")]
    pub jpeg_quality: u8,
    /// Longest image edge sent to models (default 512 px).
    #[serde(default = "default_max_image_edge")]
    pub max_image_edge: u32,
    /// Decoder binary for file videos (default `ffmpeg`).
    #[serde(default = "default_decoder")]
    pub decoder: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_segments == 0 {
            return Err(PipelineError::Internal("n_segments must be >= 1".into()));
        }
        if self.budget_cap == 0 {
            return Err(PipelineError::Internal("budget_cap must be >= 1".into()));
        }
        ThresholdPolicy::new(self.t_max, self.t_min)?;
        Ok(())
    }

    fn threshold_policy(&self) -> ThresholdPolicy {
        ThresholdPolicy { t_max: self.t_max, t_min: self.t_min }
    }

    fn sampler_config(&self, cache: Option<&ResponseCache>) -> SamplerConfig {
        SamplerConfig {
            decoder: self.decoder.clone(),
            jpeg_quality: self.jpeg_quality,
            max_image_edge: self.max_image_edge,
            cache_root: cache.map(|c| c.root().to_path_buf()),
        }
    }
}

/// The final answer of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub option_index: usize,
    pub option_letter: char,
    pub rationale: String,
    /// True when the answer is the documented option-0 fallback.
    pub guessed: bool,
}

/// Select every snippet with confidence 1; when there are more snippets than
/// the budget cap, take the cap evenly spaced ones (`floor(i * p / cap)`).
pub fn fallback_select_all(partition: &SnippetPartition, cap: usize) -> Vec<SnippetVerdict> {
    let p = partition.len();
    let chosen: std::collections::BTreeSet<usize> = if p <= cap {
        (0..p).collect()
    } else {
        (0..cap).map(|i| i * p / cap).collect()
    };
    partition
        .snippets()
        .iter()
        .map(|s| {
            if chosen.contains(&s.ordinal) {
                SnippetVerdict::selected(s.ordinal, Confidence::Sufficient)
            } else {
                SnippetVerdict::rejected(s.ordinal)
            }
        })
        .collect()
}

/// Is this gateway failure absorbed by a stage fallback (true) or does it
/// abort the run (false)?
fn is_stage_fallback(err: &GatewayError) -> bool {
    matches!(
        err,
        GatewayError::ParseExhausted { .. } | GatewayError::TooManyImages { .. }
    )
}

fn merge_call_log(record: &mut StageRecord, ledger: &mut BudgetLedger, log: CallLog) {
    record.prompt_id = log.prompt_id;
    record.images_sent += log.images_transmitted;
    ledger.add_images(record.stage, log.images_transmitted);
    record.calls.extend(log.calls);
}

/// Execute one full pipeline run. The trace is always returned, partial if
/// the run aborted.
pub fn run(
    source: &VideoSource,
    task: &QueryTask,
    config: &PipelineConfig,
    backends: &Backends,
    cache: Option<&ResponseCache>,
) -> (Result<AnswerResult, PipelineError>, Box<PipelineTrace>) {
    let config_value = serde_json::to_value(config).expect("config serializes");
    let mut trace = Box::new(PipelineTrace::new(&task.task_id, config_value));
    let result = run_inner(source, task, config, backends, cache, &mut trace);
    if let Err(err) = &result {
        trace.aborted = Some(err.to_string());
    }
    (result, trace)
}

fn run_inner(
    source: &VideoSource,
    task: &QueryTask,
    config: &PipelineConfig,
    backends: &Backends,
    cache: Option<&ResponseCache>,
    trace: &mut PipelineTrace,
) -> Result<AnswerResult, PipelineError> {
    config.validate()?;
    let gateway_run = GatewayRun {
        backend: backends.mllm.as_ref(),
        cache,
        retry_budget: config.retry_budget,
        temperature: 0.0,
    };

    // ---- sample ----------------------------------------------------------
    let mut record = StageRecord::new(Stage::Sample);
    let video = match source {
        VideoSource::File(path) => {
            sampler::sample(path, &config.sampling, &config.sampler_config(cache))?
        }
        VideoSource::Synthetic(spec) => sampler::make_synthetic(spec)?,
    };
    record.parsed = Some(json!({
        "source_id": video.source_id,
        "frame_count": video.len(),
        "sampling_policy": video.sampling_policy,
    }));
    trace.video = Some(VideoSummary {
        source_id: video.source_id.clone(),
        frame_count: video.len(),
        sampling_policy: video.sampling_policy.clone(),
    });
    trace.stages.push(record);

    let whole_video = SegmentWindow { start: 0, len: video.len() };

    // ---- localize --------------------------------------------------------
    let segments = partition_segments(video.len(), config.n_segments);
    let mut record = StageRecord::new(Stage::Localize);
    let segment = if !config.enable_localization {
        record = record.bypass("localization disabled; using the whole video");
        whole_video
    } else if segments.len() == 1 {
        record = record.bypass("single segment; nothing to localize");
        whole_video
    } else {
        let starting_frames: Vec<&crate::model::FrameRef> =
            segments.iter().map(|w| &video.frames()[w.start]).collect();
        let mut log = CallLog::default();
        let outcome = gateway::locate_segment(
            &segments,
            &starting_frames,
            &task.question,
            &gateway_run,
            &mut log,
        );
        merge_call_log(&mut record, &mut trace.ledger, log);
        match outcome {
            Ok(ordinal) => {
                let window = segments[ordinal];
                record.parsed = Some(json!({
                    "segment": ordinal,
                    "window": { "start": window.start, "len": window.len },
                }));
                window
            }
            Err(err) if is_stage_fallback(&err) => {
                log::warn!("{}: localization fell back to the whole video: {err}", task.task_id);
                record.fallback = true;
                record.note = Some(format!("fell back to the whole video: {err}"));
                whole_video
            }
            Err(err) => {
                trace.stages.push(record);
                return Err(err.into());
            }
        }
    };
    trace.stages.push(record);

    // ---- caption / embed -------------------------------------------------
    let mut record = StageRecord::new(Stage::CaptionEmbed);
    let mut captions: BTreeMap<usize, String> = BTreeMap::new();
    let mut embedded: Vec<EmbeddedCaption> = Vec::new();
    if !config.enable_snippet_selection {
        record = record.bypass("snippet selection disabled; captions deferred to answer stage");
    } else {
        let segment_frames = &video.frames()[segment.indices()];
        let batch = index::caption_frames_lenient(
            segment_frames,
            backends.captioner.as_ref(),
            cache,
            config.parallelism,
        )?;
        if !batch.failed.is_empty() {
            record.fallback = true;
            record.note = Some(format!(
                "placeholder captions substituted for frames {:?}",
                batch.failed
            ));
        }
        let texts: Vec<String> = batch.captions.iter().map(|(_, c)| c.clone()).collect();
        let embed_batch = index::embed(&texts, backends.embedder.as_ref(), cache)?;
        for ((frame_index, text), vector) in
            batch.captions.iter().zip(embed_batch.vectors.into_iter())
        {
            embedded.push(EmbeddedCaption::new(*frame_index, text, vector)?);
            captions.insert(*frame_index, text.clone());
        }
        record.captioner_digests = batch.miss_digests;
        record.embed_digests = embed_batch.miss_digests;
        trace.ledger.add_captioner_calls(record.captioner_digests.len() as u64);
        trace.ledger.add_embedding_calls(record.embed_digests.len() as u64);
        record.parsed = Some(json!({ "captioned_frames": embedded.len() }));
    }
    trace.stages.push(record);

    // ---- cluster ----------------------------------------------------------
    let threshold = dynamic_threshold(segment.len, video.len(), &config.threshold_policy())?;
    let mut record = StageRecord::new(Stage::Cluster);
    let partition = if !config.enable_snippet_selection {
        record = record.bypass("snippet selection disabled; uniform blocks substituted");
        let blocks = partition_segments(segment.len, config.budget_cap);
        let snippets: Vec<Snippet> = blocks
            .iter()
            .enumerate()
            .map(|(ordinal, block)| {
                Snippet::new(
                    ordinal,
                    SegmentWindow { start: segment.start + block.start, len: block.len },
                )
            })
            .collect();
        SnippetPartition::new(snippets, segment, threshold)?
    } else {
        sequential_cluster(&embedded, segment, threshold)?
    };
    let snippet_windows: Vec<serde_json::Value> = partition
        .snippets()
        .iter()
        .map(|s| json!({ "ordinal": s.ordinal, "start": s.window.start, "len": s.window.len }))
        .collect();
    record.parsed = Some(json!({
        "threshold": threshold,
        "snippets": snippet_windows,
        "uniform_blocks": !config.enable_snippet_selection,
    }));
    trace.stages.push(record);

    // ---- select ------------------------------------------------------------
    let mut record = StageRecord::new(Stage::Select);
    let verdicts: Vec<SnippetVerdict> = if !config.enable_snippet_selection {
        record = record
            .bypass("snippet selection disabled; every uniform block selected with confidence 0");
        partition
            .snippets()
            .iter()
            .map(|s| SnippetVerdict::selected(s.ordinal, Confidence::Refine))
            .collect()
    } else {
        let reps: Vec<SnippetRep<'_>> = partition
            .snippets()
            .iter()
            .map(|s| SnippetRep {
                ordinal: s.ordinal,
                window: s.window,
                caption: captions
                    .get(&s.representative())
                    .map(|c| c.as_str())
                    .unwrap_or(index::CAPTION_PLACEHOLDER),
                frame: config
                    .select_with_images
                    .then(|| &video.frames()[s.representative()]),
            })
            .collect();
        let mut log = CallLog::default();
        let outcome = gateway::select_snippets(&reps, &task.question, &gateway_run, &mut log);
        merge_call_log(&mut record, &mut trace.ledger, log);
        match outcome {
            Ok(parsed) => {
                if parsed.iter().any(|v| v.selected) {
                    parsed
                } else {
                    record.fallback = true;
                    record.note = Some("model selected zero snippets; selecting all".into());
                    fallback_select_all(&partition, config.budget_cap)
                }
            }
            Err(err) if is_stage_fallback(&err) => {
                log::warn!("{}: selection fell back to select-all: {err}", task.task_id);
                record.fallback = true;
                record.note = Some(format!("selection fell back to select-all: {err}"));
                fallback_select_all(&partition, config.budget_cap)
            }
            Err(err) => {
                trace.stages.push(record);
                return Err(err.into());
            }
        }
    };
    record.parsed = Some(serde_json::to_value(&verdicts).expect("verdicts serialize"));
    trace.stages.push(record);

    let selected_count = verdicts.iter().filter(|v| v.selected).count();
    if selected_count == 0 {
        return Err(PipelineError::Internal("no snippets selected after fallbacks".into()));
    }

    // ---- refine -------------------------------------------------------------
    let sufficient: Vec<&Snippet> = partition
        .snippets()
        .iter()
        .filter(|s| {
            verdicts[s.ordinal].selected
                && verdicts[s.ordinal].confidence == Some(Confidence::Sufficient)
        })
        .collect();
    let low_confidence: Vec<&Snippet> = partition
        .snippets()
        .iter()
        .filter(|s| {
            verdicts[s.ordinal].selected
                && verdicts[s.ordinal].confidence == Some(Confidence::Refine)
        })
        .collect();

    let mut record = StageRecord::new(Stage::Refine);
    // (snippet ordinal, keyframe index) pairs from the 0-confidence snippets
    let refined: Vec<(usize, usize)> = if !config.enable_refinement {
        record =
            record.bypass("refinement disabled; representatives used directly as keyframes");
        low_confidence.iter().map(|s| (s.ordinal, s.representative())).collect()
    } else if low_confidence.is_empty() {
        record = record.bypass("no low-confidence snippets to refine");
        Vec::new()
    } else {
        let groups: Vec<RefineGroup<'_>> = low_confidence
            .iter()
            .map(|s| RefineGroup {
                ordinal: s.ordinal,
                window: s.window,
                frames: video.frames()[s.window.indices()].iter().collect(),
            })
            .collect();
        let mut log = CallLog::default();
        let outcome = gateway::refine_keyframes(&groups, &task.question, &gateway_run, &mut log);
        merge_call_log(&mut record, &mut trace.ledger, log);
        match outcome {
            Ok(choices) => {
                record.parsed = Some(json!({ "choices": choices }));
                choices
            }
            Err(err) if is_stage_fallback(&err) => {
                log::warn!("{}: refinement fell back to representatives: {err}", task.task_id);
                record.fallback = true;
                record.note =
                    Some(format!("refinement fell back to representative frames: {err}"));
                low_confidence.iter().map(|s| (s.ordinal, s.representative())).collect()
            }
            Err(err) => {
                trace.stages.push(record);
                return Err(err.into());
            }
        }
    };
    trace.stages.push(record);

    // ---- merge ---------------------------------------------------------------
    // Selection-priority order: confidence-1 representatives first, then the
    // refined (or substituted) keyframes, each group in snippet order.
    let mut priority: Vec<usize> = sufficient.iter().map(|s| s.representative()).collect();
    priority.extend(refined.iter().map(|(_, frame)| *frame));

    let mut record = StageRecord::new(Stage::Answer);
    let missing: Vec<&crate::model::FrameRef> = priority
        .iter()
        .filter(|idx| !captions.contains_key(idx))
        .map(|&idx| &video.frames()[idx])
        .collect();
    if !missing.is_empty() {
        let batch = index::caption_frames_lenient(
            &missing.iter().map(|f| (*f).clone()).collect::<Vec<_>>(),
            backends.captioner.as_ref(),
            cache,
            config.parallelism,
        )?;
        if !batch.failed.is_empty() {
            record.fallback = true;
            record.note = Some(format!(
                "placeholder captions substituted for keyframes {:?}",
                batch.failed
            ));
        }
        record.captioner_digests = batch.miss_digests;
        trace.ledger.add_captioner_calls(record.captioner_digests.len() as u64);
        for (frame_index, caption) in batch.captions {
            captions.insert(frame_index, caption);
        }
    }

    let chosen: Vec<(usize, String)> = priority
        .iter()
        .map(|&idx| {
            (idx, captions.get(&idx).cloned().unwrap_or_else(|| index::CAPTION_PLACEHOLDER.into()))
        })
        .collect();
    let merged = merge_chronological(&video, &chosen, config.budget_cap)?;
    trace.keyframes = Some(KeyframeSummary {
        indices: merged.keyframes.indices(),
        truncated: merged.truncated,
        dropped: merged.dropped.clone(),
    });

    // ---- answer ----------------------------------------------------------------
    let keyframes = merged.keyframes;
    assert_condensation_invariants(&video, segment, &partition, &keyframes, selected_count)?;

    let mut log = CallLog::default();
    let outcome = gateway::answer_question(&keyframes, task, &gateway_run, &mut log);
    let last_raw = log.calls.last().map(|c| c.raw_response.clone()).unwrap_or_default();
    merge_call_log(&mut record, &mut trace.ledger, log);
    let answer = match outcome {
        Ok((option_index, rationale)) => AnswerResult {
            option_index,
            option_letter: QueryTask::option_letter(option_index),
            rationale,
            guessed: false,
        },
        Err(err) if is_stage_fallback(&err) => {
            log::warn!("{}: answer fell back to option 0: {err}", task.task_id);
            record.fallback = true;
            record.note = Some(format!("answer fell back to option 0: {err}"));
            AnswerResult {
                option_index: 0,
                option_letter: 'A',
                rationale: last_raw,
                guessed: true,
            }
        }
        Err(err) => {
            trace.stages.push(record);
            return Err(err.into());
        }
    };
    record.parsed = Some(json!({ "option_index": answer.option_index }));
    trace.stages.push(record);
    trace.answer = Some(AnswerRecord {
        option_index: answer.option_index,
        option_letter: answer.option_letter,
        rationale: answer.rationale.clone(),
        guessed: answer.guessed,
    });

    // The incrementally maintained ledger must equal a from-scratch recount.
    let recount = BudgetLedger::recount(&trace.stages);
    if recount != trace.ledger || !trace.ledger.is_consistent() {
        return Err(PipelineError::Internal("budget ledger does not recount".into()));
    }
    if !trace.stage_order_ok() {
        return Err(PipelineError::Internal("stage records out of order".into()));
    }

    Ok(answer)
}

/// Monotone-condensation checks, re-asserted independently of the merge step.
fn assert_condensation_invariants(
    video: &SampledVideo,
    segment: SegmentWindow,
    partition: &SnippetPartition,
    keyframes: &KeyframeSet,
    selected_count: usize,
) -> Result<(), PipelineError> {
    if segment.len > video.len() {
        return Err(PipelineError::Internal("segment exceeds video".into()));
    }
    let snippet_total: usize = partition.snippets().iter().map(|s| s.window.len).sum();
    if snippet_total != segment.len {
        return Err(PipelineError::Internal("snippets do not tile the segment".into()));
    }
    let indices = keyframes.indices();
    if !indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(PipelineError::Internal("keyframes not strictly chronological".into()));
    }
    if keyframes.len() > keyframes.budget_cap || keyframes.len() > selected_count {
        return Err(PipelineError::Internal(
            "keyframe count exceeds budget cap or selected snippet count".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallType, ScriptStrategy};
    use crate::harness::needle_task;
    use crate::trace::Stage;

    fn oracle_run(
        task_seed: u64,
        config: &PipelineConfig,
    ) -> (AnswerResult, Box<PipelineTrace>) {
        let record = needle_task(task_seed, 0);
        let (result, trace) =
            run(&record.source, &record.task().unwrap(), config, &Backends::oracle(), None);
        (result.unwrap(), trace)
    }

    #[test]
    fn fallback_select_all_spacing() {
        let segment = SegmentWindow { start: 0, len: 16 };
        let snippets: Vec<Snippet> = (0..16)
            .map(|i| Snippet::new(i, SegmentWindow { start: i, len: 1 }))
            .collect();
        let partition = SnippetPartition::new(snippets, segment, 0.8).unwrap();

        let verdicts = fallback_select_all(&partition, 8);
        let selected: Vec<usize> =
            verdicts.iter().filter(|v| v.selected).map(|v| v.ordinal).collect();
        assert_eq!(selected, vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert!(verdicts
            .iter()
            .filter(|v| v.selected)
            .all(|v| v.confidence == Some(Confidence::Sufficient)));

        let small = SnippetPartition::new(
            (0..3).map(|i| Snippet::new(i, SegmentWindow { start: i, len: 1 })).collect(),
            SegmentWindow { start: 0, len: 3 },
            0.8,
        )
        .unwrap();
        assert!(fallback_select_all(&small, 8).iter().all(|v| v.selected));
        let single = SnippetPartition::new(
            vec![Snippet::new(0, SegmentWindow { start: 0, len: 1 })],
            SegmentWindow { start: 0, len: 1 },
            0.8,
        )
        .unwrap();
        assert!(fallback_select_all(&single, 8)[0].selected);
    }

    #[test]
    fn select_with_images_attaches_representatives() {
        let config =
            PipelineConfig { select_with_images: true, ..PipelineConfig::default() };
        let record = needle_task(17, 0);
        let task = record.task().unwrap();
        let (result, trace) =
            run(&record.source, &task, &config, &Backends::oracle(), None);
        let answer = result.unwrap();
        assert_eq!(Some(answer.option_index), task.ground_truth);

        let select = trace.stage(Stage::Select).unwrap();
        let p = trace.stage(Stage::Cluster).unwrap().parsed.as_ref().unwrap()["snippets"]
            .as_array()
            .unwrap()
            .len() as u64;
        assert_eq!(select.images_sent, p, "one representative image per snippet");
    }

    #[test]
    fn oracle_answers_needle_task_and_keyframes_contain_needle() {
        let record = needle_task(11, 0);
        let task = record.task().unwrap();
        let (result, trace) =
            run(&record.source, &task, &PipelineConfig::default(), &Backends::oracle(), None);
        let answer = result.unwrap();
        assert_eq!(Some(answer.option_index), task.ground_truth);
        assert!(!answer.guessed);

        let needle = match &record.source {
            VideoSource::Synthetic(spec) => *spec.needle_indices.iter().next().unwrap(),
            _ => unreachable!(),
        };
        let keyframes = trace.keyframes.as_ref().unwrap();
        assert!(keyframes.indices.contains(&needle));
        assert!(trace.stage_order_ok());
        assert_eq!(trace.stages.len(), 7);
        assert!(trace.ledger.is_consistent());
    }

    #[test]
    fn single_frame_video_degenerates_cleanly() {
        let spec = SyntheticVideoSpec {
            frame_count: 1,
            needle_indices: std::collections::BTreeSet::from([0]),
            distractor_themes: vec![],
            seed: 3,
        };
        let task = QueryTask::new(
            "single",
            "what is marked? [needle@0]",
            vec!["a".into(), "b".into()],
            Some(0),
        )
        .unwrap();
        let (result, trace) = run(
            &VideoSource::Synthetic(spec),
            &task,
            &PipelineConfig::default(),
            &Backends::oracle(),
            None,
        );
        let answer = result.unwrap();
        assert!(!answer.guessed);
        let localize = trace.stage(Stage::Localize).unwrap();
        assert!(localize.bypassed);
        assert_eq!(trace.keyframes.as_ref().unwrap().indices, vec![0]);
    }

    #[test]
    fn all_adversarial_completes_via_fallback_chain() {
        let record = needle_task(5, 1);
        let (result, trace) = run(
            &record.source,
            &record.task().unwrap(),
            &PipelineConfig::default(),
            &Backends::adversarial(),
            None,
        );
        let answer = result.unwrap();
        assert!(answer.guessed);
        assert_eq!(answer.option_index, 0);

        let localize = trace.stage(Stage::Localize).unwrap();
        assert!(localize.fallback, "localization fell back to whole video");
        let select = trace.stage(Stage::Select).unwrap();
        assert!(select.fallback, "selection fell back to select-all");
        // select-all yields confidence 1 everywhere -> refinement has nothing to do
        let refine = trace.stage(Stage::Refine).unwrap();
        assert!(refine.bypassed);
        let answer_stage = trace.stage(Stage::Answer).unwrap();
        assert!(answer_stage.fallback);
        assert!(trace.aborted.is_none());
    }

    #[test]
    fn all_stages_disabled_reduces_to_uniform_baseline() {
        let config = PipelineConfig {
            enable_localization: false,
            enable_snippet_selection: false,
            enable_refinement: false,
            ..PipelineConfig::default()
        };
        let (answer, trace) = oracle_run(21, &config);
        // one single model call: the answer call
        assert_eq!(trace.mllm_calls(), 1);
        assert!(trace.stage(Stage::Localize).unwrap().bypassed);
        assert!(trace.stage(Stage::Select).unwrap().bypassed);
        assert!(trace.stage(Stage::Refine).unwrap().bypassed);
        // uniform sampling of budget_cap frames over the whole video
        let keyframes = &trace.keyframes.as_ref().unwrap().indices;
        assert_eq!(keyframes.len(), config.budget_cap);
        let expected: Vec<usize> =
            partition_segments(128, config.budget_cap).iter().map(|w| w.start).collect();
        assert_eq!(keyframes, &expected);
        assert!(!answer.rationale.is_empty());
    }

    #[test]
    fn refinement_disabled_uses_representatives_only() {
        let config =
            PipelineConfig { enable_refinement: false, ..PipelineConfig::default() };
        let (_, trace) = oracle_run(22, &config);
        let refine = trace.stage(Stage::Refine).unwrap();
        assert!(refine.bypassed);
        assert!(refine.calls.is_empty());

        let cluster = trace.stage(Stage::Cluster).unwrap();
        let snippet_starts: Vec<usize> = cluster.parsed.as_ref().unwrap()["snippets"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["start"].as_u64().unwrap() as usize)
            .collect();
        for idx in &trace.keyframes.as_ref().unwrap().indices {
            assert!(snippet_starts.contains(idx), "keyframe {idx} is not a representative");
        }
    }

    #[test]
    fn zero_selection_triggers_select_all_fallback() {
        let backend = ScriptedBackend::new("zero")
            .with_strategy(CallType::Select, ScriptStrategy::SelectNone);
        let record = needle_task(9, 2);
        let (result, trace) = run(
            &record.source,
            &record.task().unwrap(),
            &PipelineConfig::default(),
            &Backends::scripted(backend),
            None,
        );
        assert!(result.is_ok());
        let select = trace.stage(Stage::Select).unwrap();
        assert!(select.fallback);
        assert!(select.note.as_ref().unwrap().contains("zero snippets"));
    }

    #[test]
    fn ledger_bound_holds_for_oracle_defaults() {
        let (_, trace) = oracle_run(33, &PipelineConfig::default());
        let n_segments = 4u64;
        let p = trace.stage(Stage::Cluster).unwrap().parsed.as_ref().unwrap()["snippets"]
            .as_array()
            .unwrap()
            .len() as u64;
        let refined_images = trace.stage(Stage::Refine).unwrap().images_sent;
        let k = trace.keyframes.as_ref().unwrap().indices.len() as u64;
        assert!(trace.ledger.images_sent <= n_segments + p + refined_images + k);
        assert_eq!(BudgetLedger::recount(&trace.stages), trace.ledger);
    }

    #[test]
    fn two_runs_produce_byte_identical_traces() {
        let record = needle_task(44, 3);
        let task = record.task().unwrap();
        let config = PipelineConfig::default();
        let (a1, t1) = run(&record.source, &task, &config, &Backends::oracle(), None);
        let (a2, t2) = run(&record.source, &task, &config, &Backends::oracle(), None);
        assert_eq!(a1.unwrap(), a2.unwrap());
        assert_eq!(t1.to_json_string(), t2.to_json_string());
    }
}
