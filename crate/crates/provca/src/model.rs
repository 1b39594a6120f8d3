//! Shared domain types plus chronological keyframe merging.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no keyframes selected")]
    NoKeyframes,
    #[error("frame index {index} out of range (video has {len} frames)")]
    FrameIndexOutOfRange { index: usize, len: usize },
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
}

fn invalid(what: &'static str, why: impl Into<String>) -> ModelError {
    ModelError::Invalid { what, why: why.into() }
}

/// Opaque image payload: a file on disk or raw encoded bytes.
///
/// Real videos produce `Path` handles (JPEG files under the frame cache);
/// synthetic test videos produce `Bytes` handles carrying machine-readable
/// frame metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageHandle {
    Path(PathBuf),
    Bytes(Vec<u8>),
}

impl ImageHandle {
    /// Resolve the handle to the encoded image bytes.
    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        match self {
            ImageHandle::Path(p) => std::fs::read(p),
            ImageHandle::Bytes(b) => Ok(b.clone()),
        }
    }
}

/// One sampled frame: its position in the sampled sequence, its timestamp,
/// and an opaque image handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub index: usize,
    pub timestamp_s: f64,
    pub image: ImageHandle,
}

/// The ordered frame sequence actually fed to the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledVideo {
    frames: Vec<FrameRef>,
    pub source_id: String,
    /// Policy tag, e.g. `fps_1`, `uniform_32`, or `explicit`.
    pub sampling_policy: String,
}

impl SampledVideo {
    /// Build a sampled video, checking the frame-sequence invariants:
    /// non-empty, indices contiguous from 0, timestamps non-negative and
    /// strictly increasing with index.
    pub fn new(
        frames: Vec<FrameRef>,
        source_id: impl Into<String>,
        sampling_policy: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if frames.is_empty() {
            return Err(invalid("SampledVideo", "frame list is empty"));
        }
        for (i, frame) in frames.iter().enumerate() {
            if frame.index != i {
                return Err(invalid(
                    "SampledVideo",
                    format!("frame at position {i} has index {}", frame.index),
                ));
            }
            if frame.timestamp_s < 0.0 || !frame.timestamp_s.is_finite() {
                return Err(invalid("SampledVideo", format!("bad timestamp at frame {i}")));
            }
            if i > 0 && frames[i - 1].timestamp_s >= frame.timestamp_s {
                return Err(invalid(
                    "SampledVideo",
                    format!("timestamps not strictly increasing at frame {i}"),
                ));
            }
        }
        Ok(Self { frames, source_id: source_id.into(), sampling_policy: sampling_policy.into() })
    }

    pub fn frames(&self) -> &[FrameRef] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<&FrameRef, ModelError> {
        self.frames
            .get(index)
            .ok_or(ModelError::FrameIndexOutOfRange { index, len: self.frames.len() })
    }
}

/// A multiple-choice question over one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTask {
    pub task_id: String,
    pub question: String,
    options: Vec<String>,
    pub ground_truth: Option<usize>,
}

impl QueryTask {
    pub fn new(
        task_id: impl Into<String>,
        question: impl Into<String>,
        options: Vec<String>,
        ground_truth: Option<usize>,
    ) -> Result<Self, ModelError> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(invalid("QueryTask", "question is blank"));
        }
        if options.len() < 2 {
            return Err(invalid("QueryTask", "fewer than 2 answer options"));
        }
        let distinct: BTreeSet<&str> = options.iter().map(|s| s.as_str()).collect();
        if distinct.len() != options.len() {
            return Err(invalid("QueryTask", "answer options are not distinct"));
        }
        if let Some(gt) = ground_truth {
            if gt >= options.len() {
                return Err(invalid("QueryTask", format!("ground truth {gt} out of range")));
            }
        }
        Ok(Self { task_id: task_id.into(), question, options, ground_truth })
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    /// Letter used for option `i` in prompts and output ('A', 'B', ...).
    pub fn option_letter(i: usize) -> char {
        (b'A' + (i as u8)) as char
    }
}

/// A contiguous frame range `[start, start + len)` of the sampled video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub start: usize,
    pub len: usize,
}

impl SegmentWindow {
    pub fn new(start: usize, len: usize) -> Result<Self, ModelError> {
        if len == 0 {
            return Err(invalid("SegmentWindow", "zero-length window"));
        }
        Ok(Self { start, len })
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index < self.end()
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

impl fmt::Display for SegmentWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "frames {}..{}", self.start, self.end() - 1)
    }
}

/// A frame caption with its (L2-normalized) embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCaption {
    pub frame_index: usize,
    pub text: String,
    vector: Vec<f64>,
}

impl EmbeddedCaption {
    /// Ingest a raw embedding. Rejects empty, non-finite, and zero-norm
    /// vectors; the stored vector is L2-normalized so cosine similarity
    /// between stored vectors reduces to a dot product.
    pub fn new(frame_index: usize, text: impl Into<String>, raw: Vec<f64>) -> Result<Self, ModelError> {
        if raw.is_empty() {
            return Err(invalid("EmbeddedCaption", "empty vector"));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(invalid("EmbeddedCaption", "non-finite vector component"));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(invalid("EmbeddedCaption", "zero-norm vector"));
        }
        let vector = raw.into_iter().map(|x| x / norm).collect();
        Ok(Self { frame_index, text: text.into(), vector })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

/// A contiguous snippet within a segment, represented by its first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub ordinal: usize,
    pub window: SegmentWindow,
}

impl Snippet {
    pub fn new(ordinal: usize, window: SegmentWindow) -> Self {
        Self { ordinal, window }
    }

    /// The snippet's representative frame. Always the first frame.
    pub fn representative(&self) -> usize {
        self.window.start
    }
}

/// Binary per-snippet confidence: 1 means the representative alone suffices,
/// 0 means the snippet should go through keyframe refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Confidence {
    Refine,
    Sufficient,
}

impl Confidence {
    pub fn as_u8(self) -> u8 {
        match self {
            Confidence::Refine => 0,
            Confidence::Sufficient => 1,
        }
    }
}

impl TryFrom<u8> for Confidence {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Confidence::Refine),
            1 => Ok(Confidence::Sufficient),
            other => Err(format!("confidence must be 0 or 1, got {other}")),
        }
    }
}

impl From<Confidence> for u8 {
    fn from(c: Confidence) -> u8 {
        c.as_u8()
    }
}

/// Selection verdict for one snippet. Confidence is present exactly when the
/// snippet is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetVerdict {
    pub ordinal: usize,
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Confidence>,
}

impl SnippetVerdict {
    pub fn selected(ordinal: usize, confidence: Confidence) -> Self {
        Self { ordinal, selected: true, confidence: Some(confidence) }
    }

    pub fn rejected(ordinal: usize) -> Self {
        Self { ordinal, selected: false, confidence: None }
    }
}

/// One final keyframe with its caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: FrameRef,
    pub caption: String,
}

/// The final chronologically sorted keyframe set, bounded by the budget cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    frames: Vec<Keyframe>,
    pub budget_cap: usize,
}

impl KeyframeSet {
    pub fn new(frames: Vec<Keyframe>, budget_cap: usize) -> Result<Self, ModelError> {
        if budget_cap == 0 {
            return Err(invalid("KeyframeSet", "budget cap must be at least 1"));
        }
        if frames.len() > budget_cap {
            return Err(invalid(
                "KeyframeSet",
                format!("{} frames exceed budget cap {budget_cap}", frames.len()),
            ));
        }
        for pair in frames.windows(2) {
            if pair[0].frame.index >= pair[1].frame.index {
                return Err(invalid("KeyframeSet", "frames not strictly sorted by index"));
            }
        }
        Ok(Self { frames, budget_cap })
    }

    pub fn frames(&self) -> &[Keyframe] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.frames.iter().map(|k| k.frame.index).collect()
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.frames.iter().any(|k| k.frame.index == index)
    }
}

/// Result of [`merge_chronological`]: the keyframe set plus what, if anything,
/// was dropped to fit the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub keyframes: KeyframeSet,
    pub truncated: bool,
    /// Frame indices dropped by cap truncation, in drop order.
    pub dropped: Vec<usize>,
}

/// Merge chosen `(frame index, caption)` pairs into a chronologically sorted,
/// deduplicated keyframe set of at most `cap` frames.
///
/// Input order is the selection-priority order: when the deduplicated set
/// exceeds the cap, the first `cap` entries by input position are kept and the
/// rest dropped (callers put confidence-1 representatives before refined
/// keyframes, each group in snippet order). Duplicate indices keep their first
/// (highest-priority) caption.
pub fn merge_chronological(
    video: &SampledVideo,
    chosen: &[(usize, String)],
    cap: usize,
) -> Result<MergeOutcome, ModelError> {
    if cap == 0 {
        return Err(invalid("merge_chronological", "cap must be at least 1"));
    }
    if chosen.is_empty() {
        return Err(ModelError::NoKeyframes);
    }

    let mut seen = BTreeSet::new();
    let mut deduped: Vec<(usize, &str)> = Vec::new();
    for (index, caption) in chosen {
        if *index >= video.len() {
            return Err(ModelError::FrameIndexOutOfRange { index: *index, len: video.len() });
        }
        if seen.insert(*index) {
            deduped.push((*index, caption.as_str()));
        }
    }

    let truncated = deduped.len() > cap;
    let dropped: Vec<usize> = deduped.iter().skip(cap).map(|(i, _)| *i).collect();
    deduped.truncate(cap);
    deduped.sort_by_key(|(i, _)| *i);

    let frames = deduped
        .into_iter()
        .map(|(index, caption)| {
            Ok(Keyframe { frame: video.frame(index)?.clone(), caption: caption.to_string() })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    Ok(MergeOutcome { keyframes: KeyframeSet::new(frames, cap)?, truncated, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn video_with(len: usize) -> SampledVideo {
        let frames = (0..len)
            .map(|i| FrameRef {
                index: i,
                timestamp_s: i as f64,
                image: ImageHandle::Bytes(vec![i as u8]),
            })
            .collect();
        SampledVideo::new(frames, "test", "explicit").unwrap()
    }

    #[test]
    fn sampled_video_rejects_gaps_and_bad_timestamps() {
        let mut frames = vec![
            FrameRef { index: 0, timestamp_s: 0.0, image: ImageHandle::Bytes(vec![]) },
            FrameRef { index: 2, timestamp_s: 1.0, image: ImageHandle::Bytes(vec![]) },
        ];
        assert!(SampledVideo::new(frames.clone(), "s", "explicit").is_err());
        frames[1].index = 1;
        frames[1].timestamp_s = 0.0; // not strictly increasing
        assert!(SampledVideo::new(frames, "s", "explicit").is_err());
        assert!(SampledVideo::new(vec![], "s", "explicit").is_err());
    }

    #[test]
    fn query_task_validation() {
        assert!(QueryTask::new("t", "q?", vec!["a".into()], None).is_err());
        assert!(QueryTask::new("t", "q?", vec!["a".into(), "a".into()], None).is_err());
        assert!(QueryTask::new("t", "q?", vec!["a".into(), "b".into()], Some(2)).is_err());
        let task = QueryTask::new("t", "q?", vec!["a".into(), "b".into()], Some(1)).unwrap();
        assert_eq!(QueryTask::option_letter(2), 'C');
        assert_eq!(task.ground_truth, Some(1));
    }

    #[test]
    fn embedded_caption_normalizes_and_rejects_zero() {
        let c = EmbeddedCaption::new(0, "x", vec![3.0, 4.0]).unwrap();
        assert!((c.vector()[0] - 0.6).abs() < 1e-12);
        assert!((c.vector()[1] - 0.8).abs() < 1e-12);
        assert!(EmbeddedCaption::new(0, "x", vec![0.0, 0.0]).is_err());
        assert!(EmbeddedCaption::new(0, "x", vec![]).is_err());
        assert!(EmbeddedCaption::new(0, "x", vec![f64::NAN]).is_err());
    }

    #[test]
    fn confidence_binary_only() {
        assert_eq!(Confidence::try_from(0).unwrap(), Confidence::Refine);
        assert_eq!(Confidence::try_from(1).unwrap(), Confidence::Sufficient);
        assert!(Confidence::try_from(2).is_err());
    }

    #[test]
    fn merge_sorts_and_dedupes() {
        let video = video_with(16);
        let out = merge_chronological(
            &video,
            &[(7, "a".into()), (3, "b".into()), (7, "a".into())],
            8,
        )
        .unwrap();
        assert_eq!(out.keyframes.indices(), vec![3, 7]);
        assert!(!out.truncated);
        assert!(out.dropped.is_empty());
    }

    #[test]
    fn merge_singleton() {
        let video = video_with(16);
        let out = merge_chronological(&video, &[(5, "x".into())], 8).unwrap();
        assert_eq!(out.keyframes.indices(), vec![5]);
    }

    #[test]
    fn merge_truncates_by_priority_order() {
        // Ten distinct indices in selection-priority order: the first three are
        // confidence-1 representatives, the rest refined keyframes in snippet
        // order. With cap = 8 the final two priority entries (frames 1 and 13)
        // are dropped, regardless of their chronological position.
        let video = video_with(20);
        let priority: Vec<(usize, String)> = [12usize, 4, 18, 9, 2, 15, 6, 11, 1, 13]
            .into_iter()
            .map(|i| (i, format!("c{i}")))
            .collect();
        let out = merge_chronological(&video, &priority, 8).unwrap();
        assert!(out.truncated);
        assert_eq!(out.dropped, vec![1, 13]);
        assert_eq!(out.keyframes.indices(), vec![2, 4, 6, 9, 11, 12, 15, 18]);
        assert_eq!(out.keyframes.len(), 8);
    }

    #[test]
    fn merge_rejects_empty_and_bad_index() {
        let video = video_with(4);
        assert!(matches!(merge_chronological(&video, &[], 8), Err(ModelError::NoKeyframes)));
        assert!(matches!(
            merge_chronological(&video, &[(9, "x".into())], 8),
            Err(ModelError::FrameIndexOutOfRange { index: 9, .. })
        ));
    }

    #[test]
    fn merge_keeps_first_caption_for_duplicates() {
        let video = video_with(8);
        let out = merge_chronological(
            &video,
            &[(2, "high".into()), (2, "low".into())],
            8,
        )
        .unwrap();
        assert_eq!(out.keyframes.frames()[0].caption, "high");
    }

    #[test]
    fn merge_is_idempotent() {
        let video = video_with(32);
        let input: Vec<(usize, String)> =
            vec![(9, "i".into()), (1, "a".into()), (22, "w".into()), (9, "dup".into())];
        let first = merge_chronological(&video, &input, 8).unwrap();
        let again_input: Vec<(usize, String)> = first
            .keyframes
            .frames()
            .iter()
            .map(|k| (k.frame.index, k.caption.clone()))
            .collect();
        let second = merge_chronological(&video, &again_input, 8).unwrap();
        assert_eq!(first.keyframes, second.keyframes);
        assert!(!second.truncated);
    }
}
