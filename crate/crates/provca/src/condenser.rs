//! The numerical condensation core: equal segment partition, the
//! length-dependent similarity threshold, and temporal-aware sequential
//! clustering of caption embeddings into snippets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmbeddedCaption, SegmentWindow, Snippet};

#[derive(Debug, Error)]
pub enum CondenserError {
    #[error("invalid threshold policy: {0}")]
    BadPolicy(String),
    #[error("segment length {segment_len} not in 1..={video_len}")]
    BadSegmentLength { segment_len: usize, video_len: usize },
    #[error("threshold {0} must be positive and finite")]
    BadThreshold(f64),
    #[error("caption list is empty")]
    EmptyCaptions,
    #[error("captions do not cover the segment: {0}")]
    CaptionCoverage(String),
    #[error("caption vectors disagree on dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

/// Upper and lower bounds for the dynamic similarity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub t_max: f64,
    pub t_min: f64,
}

impl ThresholdPolicy {
    pub fn new(t_max: f64, t_min: f64) -> Result<Self, CondenserError> {
        if !(t_max > 0.0 && t_max <= 1.0) {
            return Err(CondenserError::BadPolicy(format!("t_max {t_max} not in (0, 1]")));
        }
        if !(t_min >= 0.0 && t_min < 1.0) {
            return Err(CondenserError::BadPolicy(format!("t_min {t_min} not in [0, 1)")));
        }
        if t_min >= t_max {
            return Err(CondenserError::BadPolicy(format!("t_min {t_min} >= t_max {t_max}")));
        }
        Ok(Self { t_max, t_min })
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self { t_max: 0.9, t_min: 0.7 }
    }
}

/// Ordered contiguous snippets exactly tiling one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetPartition {
    snippets: Vec<Snippet>,
    pub source_segment: SegmentWindow,
    pub threshold_used: f64,
}

impl SnippetPartition {
    /// Build a partition, checking the tiling invariant: snippets are
    /// contiguous, non-overlapping, start at the segment start, and cover it.
    pub fn new(
        snippets: Vec<Snippet>,
        source_segment: SegmentWindow,
        threshold_used: f64,
    ) -> Result<Self, CondenserError> {
        if snippets.is_empty() {
            return Err(CondenserError::CaptionCoverage("no snippets".into()));
        }
        let mut cursor = source_segment.start;
        for (i, snippet) in snippets.iter().enumerate() {
            if snippet.ordinal != i {
                return Err(CondenserError::CaptionCoverage(format!(
                    "snippet at position {i} has ordinal {}",
                    snippet.ordinal
                )));
            }
            if snippet.window.start != cursor {
                return Err(CondenserError::CaptionCoverage(format!(
                    "snippet {i} starts at {} instead of {cursor}",
                    snippet.window.start
                )));
            }
            cursor = snippet.window.end();
        }
        if cursor != source_segment.end() {
            return Err(CondenserError::CaptionCoverage(format!(
                "snippets end at {cursor}, segment ends at {}",
                source_segment.end()
            )));
        }
        Ok(Self { snippets, source_segment, threshold_used })
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }
}

/// Split `[0, video_len)` into at most `n` contiguous windows whose lengths
/// differ by at most one; the remainder goes to the leading windows. With
/// `n > video_len` this degrades to one window per frame.
pub fn partition_segments(video_len: usize, n: usize) -> Vec<SegmentWindow> {
    assert!(video_len >= 1, "video must have at least one frame");
    assert!(n >= 1, "segment count must be at least 1");
    let count = n.min(video_len);
    let base = video_len / count;
    let remainder = video_len % count;
    let mut windows = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < remainder);
        windows.push(SegmentWindow { start, len });
        start += len;
    }
    windows
}

/// The similarity cutoff for a segment of `segment_len` frames inside a video
/// of `video_len` frames:
///
/// `t = t_max - ((segment_len - 1) / video_len) * (t_max - t_min)`
///
/// Affine and non-increasing in `segment_len`; equals `t_max` exactly for a
/// single-frame segment and stays strictly above `t_min`.
pub fn dynamic_threshold(
    segment_len: usize,
    video_len: usize,
    policy: &ThresholdPolicy,
) -> Result<f64, CondenserError> {
    if segment_len < 1 || segment_len > video_len {
        return Err(CondenserError::BadSegmentLength { segment_len, video_len });
    }
    let fraction = (segment_len as f64 - 1.0) / video_len as f64;
    Ok(policy.t_max - fraction * (policy.t_max - policy.t_min))
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn check_captions(
    captions: &[EmbeddedCaption],
    segment: SegmentWindow,
    threshold: f64,
) -> Result<(), CondenserError> {
    if captions.is_empty() {
        return Err(CondenserError::EmptyCaptions);
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(CondenserError::BadThreshold(threshold));
    }
    if captions.len() != segment.len {
        return Err(CondenserError::CaptionCoverage(format!(
            "{} captions for a segment of {} frames",
            captions.len(),
            segment.len
        )));
    }
    let dim = captions[0].dimension();
    for (offset, caption) in captions.iter().enumerate() {
        if caption.frame_index != segment.start + offset {
            return Err(CondenserError::CaptionCoverage(format!(
                "caption {offset} is for frame {}, expected {}",
                caption.frame_index,
                segment.start + offset
            )));
        }
        if caption.dimension() != dim {
            return Err(CondenserError::DimensionMismatch(dim, caption.dimension()));
        }
    }
    Ok(())
}

/// One left-to-right pass over a segment's captions: each frame joins the
/// current snippet iff its similarity to the snippet's *first* frame is at
/// least `t`; otherwise it starts a new snippet and becomes its
/// representative. Ties at exactly `t` stay in the current snippet.
///
/// Caption vectors are unit length (enforced at ingestion), so the similarity
/// here is a plain dot product. Thresholds above 1 are legal and force one
/// snippet per frame.
pub fn sequential_cluster(
    captions: &[EmbeddedCaption],
    segment: SegmentWindow,
    threshold: f64,
) -> Result<SnippetPartition, CondenserError> {
    check_captions(captions, segment, threshold)?;

    let mut boundaries = vec![0usize]; // offsets where snippets start
    let mut rep_vector = captions[0].vector();
    for (offset, caption) in captions.iter().enumerate().skip(1) {
        if dot(rep_vector, caption.vector()) < threshold {
            boundaries.push(offset);
            rep_vector = caption.vector();
        }
    }
    partition_from_boundaries(&boundaries, segment, threshold)
}

fn partition_from_boundaries(
    boundaries: &[usize],
    segment: SegmentWindow,
    threshold: f64,
) -> Result<SnippetPartition, CondenserError> {
    let mut snippets = Vec::with_capacity(boundaries.len());
    for (ordinal, &start_offset) in boundaries.iter().enumerate() {
        let end_offset =
            boundaries.get(ordinal + 1).copied().unwrap_or(segment.len);
        let window = SegmentWindow {
            start: segment.start + start_offset,
            len: end_offset - start_offset,
        };
        snippets.push(Snippet::new(ordinal, window));
    }
    SnippetPartition::new(snippets, segment, threshold)
}

pub mod reference {
    //! Deliberately naive reimplementation of the clustering pass, kept as an
    //! independent check for the optimized path. Recomputes the full cosine
    //! ratio (dot over both norms) on every comparison with explicit loops and
    //! no normalization shortcut. Test use only.

    use super::*;

    fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut nu = 0.0;
        let mut nv = 0.0;
        for i in 0..u.len() {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        dot / (nu.sqrt() * nv.sqrt())
    }

    /// Must produce the same partition as [`sequential_cluster`] on every
    /// valid input.
    pub fn brute_force_cluster(
        captions: &[EmbeddedCaption],
        segment: SegmentWindow,
        threshold: f64,
    ) -> Result<SnippetPartition, CondenserError> {
        check_captions(captions, segment, threshold)?;

        let mut boundaries = vec![0usize];
        for offset in 1..captions.len() {
            let rep_offset = *boundaries.last().expect("at least one boundary");
            let similarity =
                naive_cosine(captions[rep_offset].vector(), captions[offset].vector());
            if similarity < threshold {
                boundaries.push(offset);
            }
        }
        partition_from_boundaries(&boundaries, segment, threshold)
    }
}
