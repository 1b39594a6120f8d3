//! Deterministic scripted backends for offline runs and tests.
//!
//! The oracle strategy plays a cooperative model: it reads the structured
//! prompt lines (segment/snippet ranges), the `[needle@N]` marker that
//! synthetic questions carry, and the metadata planted in synthetic frame
//! attachments, and answers correctly from them. The adversarial strategies
//! emit malformed or out-of-range output so fallback paths can be exercised.
//! Everything is a pure function of the request (plus the FIFO position for
//! fixed scripts), so runs replay byte-for-byte.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::sync::OnceLock;

use regex::Regex;

use super::{CallType, ChatRequest, GatewayError, MllmBackend};
use crate::sampler::FrameMeta;

/// Per-call-type response strategy.
#[derive(Debug, Clone)]
pub enum ScriptStrategy {
    /// Read planted metadata and answer correctly.
    Oracle,
    /// Deterministic garbage that can never parse.
    Malformed,
    /// Parseable but out-of-range values (forces range-check retries).
    OutOfRange,
    /// Valid empty selection (`select` only; elsewhere acts like `Oracle`).
    SelectNone,
    /// Canned responses consumed first-in-first-out; empty when exhausted.
    Fixed(Vec<String>),
}

pub struct ScriptedBackend {
    strategies: HashMap<CallType, ScriptStrategy>,
    fifos: Mutex<HashMap<CallType, VecDeque<String>>>,
    max_images: usize,
    model: String,
}

impl ScriptedBackend {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            strategies: HashMap::new(),
            fifos: Mutex::new(HashMap::new()),
            max_images: 64,
            model: model.into(),
        }
    }

    /// All four call types answered by the oracle.
    pub fn oracle() -> Self {
        Self::new("scripted-oracle")
    }

    /// All four call types answer malformed text.
    pub fn adversarial() -> Self {
        let mut backend = Self::new("scripted-adversarial");
        for call in [CallType::Locate, CallType::Select, CallType::Refine, CallType::Answer] {
            backend = backend.with_strategy(call, ScriptStrategy::Malformed);
        }
        backend
    }

    pub fn with_strategy(mut self, call: CallType, strategy: ScriptStrategy) -> Self {
        if let ScriptStrategy::Fixed(replies) = &strategy {
            self.fifos.get_mut().unwrap().insert(call, replies.iter().cloned().collect());
        }
        self.strategies.insert(call, strategy);
        self
    }

    pub fn with_max_images(mut self, max_images: usize) -> Self {
        self.max_images = max_images;
        self
    }

    fn strategy_for(&self, call: CallType) -> &ScriptStrategy {
        self.strategies.get(&call).unwrap_or(&ScriptStrategy::Oracle)
    }
}

const MALFORMED_TEXT: &str =
    "this cannot be determined from the provided material, sorry.";

impl MllmBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn max_images(&self) -> usize {
        self.max_images
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let call = request.call;
        Ok(match self.strategy_for(call) {
            ScriptStrategy::Oracle => oracle_reply(call, request),
            ScriptStrategy::Malformed => MALFORMED_TEXT.to_string(),
            ScriptStrategy::OutOfRange => match call {
                CallType::Locate => "Segment: 999".into(),
                CallType::Select => "snippets: 999 (conf 1)".into(),
                CallType::Refine => "snippet 999: frame 999999".into(),
                CallType::Answer => "Answer: (Z)".into(),
            },
            ScriptStrategy::SelectNone => match call {
                CallType::Select => "none of them are relevant.".into(),
                _ => oracle_reply(call, request),
            },
            ScriptStrategy::Fixed(_) => self
                .fifos
                .lock()
                .unwrap()
                .get_mut(&call)
                .and_then(|fifo| fifo.pop_front())
                .unwrap_or_default(),
        })
    }
}

fn static_regex(pattern: &'static str, slot: &'static OnceLock<Regex>) -> &'static Regex {
    slot.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

macro_rules! re {
    ($pattern:expr) => {{
        static SLOT: OnceLock<Regex> = OnceLock::new();
        static_regex($pattern, &SLOT)
    }};
}

/// The `[needle@N]` marker synthetic questions carry.
fn needle_marker(text: &str) -> Option<usize> {
    let caps = re!(r"\[needle@(\d+)\]").captures(text)?;
    caps[1].parse().ok()
}

/// `(ordinal, start, end_inclusive)` triples from structured prompt lines.
fn ranges(text: &str, keyword: &str) -> Vec<(usize, usize, usize)> {
    let pattern = re!(r"(?m)^(SEGMENT|SNIPPET)\s+(\d+):\s+frames\s+(\d+)\.\.(\d+)");
    pattern
        .captures_iter(text)
        .filter(|caps| &caps[1] == keyword)
        .filter_map(|caps| {
            Some((caps[2].parse().ok()?, caps[3].parse().ok()?, caps[4].parse().ok()?))
        })
        .collect()
}

fn attached_metas(request: &ChatRequest) -> Vec<FrameMeta> {
    request.decoded_images().iter().filter_map(|bytes| FrameMeta::parse(bytes)).collect()
}

fn oracle_reply(call: CallType, request: &ChatRequest) -> String {
    let text = request.joined_text();
    match call {
        CallType::Locate => {
            let segments = ranges(&text, "SEGMENT");
            let ordinal = needle_marker(&text)
                .and_then(|needle| {
                    segments
                        .iter()
                        .find(|&&(_, start, end)| needle >= start && needle <= end)
                        .map(|&(ordinal, _, _)| ordinal)
                })
                .unwrap_or(0);
            format!("Segment: {ordinal}")
        }
        CallType::Select => {
            let snippets = ranges(&text, "SNIPPET");
            match needle_marker(&text).and_then(|needle| {
                snippets
                    .iter()
                    .find(|&&(_, start, end)| needle >= start && needle <= end)
                    .map(|&(ordinal, start, _)| (ordinal, start, needle))
            }) {
                Some((ordinal, representative, needle)) => {
                    // representative suffices only when it *is* the needle
                    let confidence = u8::from(representative == needle);
                    format!("snippets: {ordinal} (conf {confidence})")
                }
                None => "snippets: 0 (conf 1)".to_string(),
            }
        }
        CallType::Refine => {
            let snippets = ranges(&text, "SNIPPET");
            let metas = attached_metas(request);
            let lines: Vec<String> = snippets
                .iter()
                .map(|&(ordinal, start, end)| {
                    let needle_frame = metas
                        .iter()
                        .find(|m| m.needle && m.frame_index >= start && m.frame_index <= end)
                        .map(|m| m.frame_index)
                        .unwrap_or(start);
                    format!("snippet {ordinal}: frame {needle_frame}")
                })
                .collect();
            lines.join("\n")
        }
        CallType::Answer => {
            let metas = attached_metas(request);
            let payload = metas.iter().find_map(|m| m.needle_payload.clone());
            let letter = payload
                .and_then(|payload| {
                    re!(r"(?m)^\(([A-Z])\)\s+(.*)$")
                        .captures_iter(&text)
                        .find(|caps| caps[2].contains(&payload))
                        .map(|caps| caps[1].to_string())
                })
                .unwrap_or_else(|| "A".to_string());
            format!(
                "The keyframes show the relevant moment; matching it against the options. \
                 Answer: ({letter})"
            )
        }
    }
}
