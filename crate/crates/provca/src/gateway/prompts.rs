//! Versioned prompt construction for the four call types.
//!
//! Prompt texts are versioned assets: traces reference them by id
//! (`locate.v1`, ...), and any wording change must bump the version so old
//! traces stay interpretable. Builders interleave text and frame attachments,
//! so the stated frame order in the text always matches the image order in
//! the payload, and every frame index named in the text has exactly one
//! attachment.

use super::parse::Schema;
use super::GatewayError;
use crate::model::{FrameRef, KeyframeSet, QueryTask, SegmentWindow};

pub const LOCATE_PROMPT_ID: &str = "locate.v1";
pub const SELECT_PROMPT_ID: &str = "select.v1";
pub const REFINE_PROMPT_ID: &str = "refine.v1";
pub const ANSWER_PROMPT_ID: &str = "answer.v1";

/// One piece of a prompt: literal text or an attached frame image.
#[derive(Debug, Clone)]
pub enum BundlePart {
    Text(String),
    Frame { frame_index: usize, bytes: Vec<u8> },
}

/// A fully assembled prompt: system text plus interleaved user parts.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub prompt_id: &'static str,
    pub system: String,
    pub parts: Vec<BundlePart>,
    pub schema: Schema,
}

impl PromptBundle {
    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, BundlePart::Frame { .. })).count()
    }

    /// Frame indices in attachment order.
    pub fn frame_indices(&self) -> Vec<usize> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                BundlePart::Frame { frame_index, .. } => Some(*frame_index),
                BundlePart::Text(_) => None,
            })
            .collect()
    }

    fn push_frame(&mut self, frame: &FrameRef) -> Result<(), GatewayError> {
        let bytes = frame.image.read_bytes().map_err(|e| GatewayError::Image(e.to_string()))?;
        self.parts.push(BundlePart::Frame { frame_index: frame.index, bytes });
        Ok(())
    }

    /// No frame index may be attached twice.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let indices = self.frame_indices();
        let mut seen = std::collections::BTreeSet::new();
        for index in indices {
            if !seen.insert(index) {
                return Err(GatewayError::Invalid(format!(
                    "frame {index} attached more than once"
                )));
            }
        }
        Ok(())
    }
}

fn window_line(window: SegmentWindow) -> String {
    format!("frames {}..{}", window.start, window.end() - 1)
}

/// Overview prompt: one starting frame per segment, asking for the single
/// most relevant segment ordinal.
pub fn build_locate(
    segments: &[SegmentWindow],
    starting_frames: &[&FrameRef],
    question: &str,
) -> Result<PromptBundle, GatewayError> {
    let n = segments.len();
    let mut bundle = PromptBundle {
        prompt_id: LOCATE_PROMPT_ID,
        system: "You analyze a long video for question answering. You are shown a global \
                 overview: the starting frame of each of its segments, in order."
            .into(),
        parts: Vec::new(),
        schema: Schema::SegmentOrdinal { n },
    };
    bundle.parts.push(BundlePart::Text(format!(
        "The video is divided into {n} segments. Each segment is introduced by one line and \
         its starting frame image.\n"
    )));
    for (ordinal, (window, frame)) in segments.iter().zip(starting_frames).enumerate() {
        bundle.parts.push(BundlePart::Text(format!(
            "SEGMENT {ordinal}: {}, starting frame {} at {:.1} s:",
            window_line(*window),
            frame.index,
            frame.timestamp_s
        )));
        bundle.push_frame(frame)?;
    }
    bundle.parts.push(BundlePart::Text(format!(
        "\nQuestion: {question}\n\nIdentify the single segment most relevant to answering the \
         question. Reply with one line: `Segment: <number>`."
    )));
    bundle.validate()?;
    Ok(bundle)
}

/// One snippet representative per line (caption text, optionally the image),
/// asking for selected ordinals with binary confidences.
pub struct SnippetRep<'a> {
    pub ordinal: usize,
    pub window: SegmentWindow,
    pub caption: &'a str,
    /// Attached only in the image-assisted selection mode.
    pub frame: Option<&'a FrameRef>,
}

pub fn build_select(reps: &[SnippetRep<'_>], question: &str) -> Result<PromptBundle, GatewayError> {
    let p = reps.len();
    let mut bundle = PromptBundle {
        prompt_id: SELECT_PROMPT_ID,
        system: "You filter video snippets by relevance to a question. Each snippet is \
                 summarized by the caption of its representative (first) frame."
            .into(),
        parts: Vec::new(),
        schema: Schema::Verdicts { p },
    };
    bundle.parts.push(BundlePart::Text(format!(
        "A video segment was split into {p} snippets:\n"
    )));
    for rep in reps {
        bundle.parts.push(BundlePart::Text(format!(
            "SNIPPET {}: {}, representative frame {}. Caption: {}",
            rep.ordinal,
            window_line(rep.window),
            rep.window.start,
            rep.caption
        )));
        if let Some(frame) = rep.frame {
            bundle.push_frame(frame)?;
        }
    }
    bundle.parts.push(BundlePart::Text(format!(
        "\nQuestion: {question}\n\nSelect every snippet relevant to answering the question \
         (at least one). For each selected snippet give a confidence: 1 if its representative \
         frame alone likely suffices to answer, 0 if its other frames should be examined. \
         Reply with one line like: `snippets: 1 (conf 1), 4 (conf 0)`."
    )));
    bundle.validate()?;
    Ok(bundle)
}

/// All frames of one low-confidence snippet, in chronological order.
pub struct RefineGroup<'a> {
    pub ordinal: usize,
    pub window: SegmentWindow,
    pub frames: Vec<&'a FrameRef>,
}

/// One global refinement prompt over every low-confidence snippet: states each
/// snippet id with its frame-index mapping and attaches all frames
/// chronologically, asking for exactly one frame per snippet.
pub fn build_refine(
    groups: &[RefineGroup<'_>],
    question: &str,
) -> Result<PromptBundle, GatewayError> {
    let mut bundle = PromptBundle {
        prompt_id: REFINE_PROMPT_ID,
        system: "You pinpoint the single most question-relevant frame inside each given video \
                 snippet, considering all snippets jointly."
            .into(),
        parts: Vec::new(),
        schema: Schema::RefineChoices {
            snippets: groups.iter().map(|g| (g.ordinal, g.window)).collect(),
        },
    };
    bundle.parts.push(BundlePart::Text(format!(
        "{} snippet(s) need closer inspection. Every frame of each snippet is attached in \
         chronological order, introduced by its snippet line.\n",
        groups.len()
    )));
    for group in groups {
        bundle.parts.push(BundlePart::Text(format!(
            "SNIPPET {}: {} ({} frames attached below)",
            group.ordinal,
            window_line(group.window),
            group.frames.len()
        )));
        for frame in &group.frames {
            bundle.parts.push(BundlePart::Text(format!("frame {}:", frame.index)));
            bundle.push_frame(frame)?;
        }
    }
    bundle.parts.push(BundlePart::Text(format!(
        "\nQuestion: {question}\n\nFor each snippet choose exactly one frame index from that \
         snippet's own range that best helps answer the question. Reply with one line per \
         snippet like: `snippet 2: frame 18`."
    )));
    bundle.validate()?;
    Ok(bundle)
}

/// Final reasoning prompt: keyframe images paired with their captions in
/// chronological order, then the question, the lettered options, and a
/// step-by-step reasoning instruction.
pub fn build_answer(
    keyframes: &KeyframeSet,
    task: &QueryTask,
) -> Result<PromptBundle, GatewayError> {
    let mut bundle = PromptBundle {
        prompt_id: ANSWER_PROMPT_ID,
        system: "You answer a multiple-choice question about a video from a small set of \
                 keyframes. Think step by step, then commit to exactly one option."
            .into(),
        parts: Vec::new(),
        schema: Schema::AnswerLetter { n_options: task.options().len() },
    };
    bundle.parts.push(BundlePart::Text(format!(
        "{} keyframes, in chronological order:\n",
        keyframes.len()
    )));
    for (position, keyframe) in keyframes.frames().iter().enumerate() {
        bundle.parts.push(BundlePart::Text(format!(
            "KEYFRAME {position}: frame {} at {:.1} s. Caption: {}",
            keyframe.frame.index, keyframe.frame.timestamp_s, keyframe.caption
        )));
        bundle.push_frame(&keyframe.frame)?;
    }
    let options = task
        .options()
        .iter()
        .enumerate()
        .map(|(i, text)| format!("({}) {text}", QueryTask::option_letter(i)))
        .collect::<Vec<_>>()
        .join("\n");
    bundle.parts.push(BundlePart::Text(format!(
        "\nQuestion: {}\n\nOptions:\n{options}\n\nReason step by step about what the keyframes \
         show, then end your reply with exactly: `Answer: (X)` where X is the option letter.",
        task.question
    )));
    bundle.validate()?;
    Ok(bundle)
}

/// Format reminder appended on parse retries. Appending it is the only
/// allowed prompt mutation between attempts.
pub fn format_reminder(schema: &Schema) -> String {
    match schema {
        Schema::SegmentOrdinal { n } => format!(
            "\nREMINDER: reply with exactly one line `Segment: <number>` with <number> in 0..{}.",
            n.saturating_sub(1)
        ),
        Schema::Verdicts { .. } => "\nREMINDER: reply with exactly one line like \
             `snippets: 1 (conf 1), 4 (conf 0)` using only the snippet ordinals shown above, \
             with confidence 0 or 1, selecting at least one snippet."
            .into(),
        Schema::RefineChoices { .. } => "\nREMINDER: reply with one line per snippet like \
             `snippet 2: frame 18`, choosing the frame index from that snippet's own range."
            .into(),
        Schema::AnswerLetter { .. } => "\nREMINDER: end your reply with exactly `Answer: (X)` \
             where X is one of the option letters shown above."
            .into(),
    }
}
