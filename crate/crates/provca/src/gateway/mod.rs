//! All multimodal-model interaction: prompt assembly, the chat-with-images
//! client contract, structured-output parsing with bounded retries, response
//! caching, and scripted offline backends.

pub mod backend;
pub mod parse;
pub mod prompts;
pub mod scripted;

pub use backend::{HttpBackend, DEFAULT_API_BASE, DEFAULT_MODEL};
pub use parse::{parse_structured, Parsed, Schema};
pub use prompts::{PromptBundle, RefineGroup, SnippetRep};
pub use scripted::{ScriptStrategy, ScriptedBackend};

use serde::Serialize;
use thiserror::Error;

use crate::cache::ResponseCache;
use crate::model::{FrameRef, KeyframeSet, QueryTask, SegmentWindow, SnippetVerdict};
use crate::net::TransportError;
use crate::trace::CallRecord;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{call:?} response unparsable after {attempts} attempts: {last_error}")]
    ParseExhausted { call: CallType, attempts: u32, last_error: String },
    #[error("request carries {count} images, backend limit is {limit}")]
    TooManyImages { count: usize, limit: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("unusable backend response: {0}")]
    BadResponse(String),
    #[error("image handle unreadable: {0}")]
    Image(String),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// The four call types of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallType {
    Locate,
    Select,
    Refine,
    Answer,
}

/// Wire shape of one content part in a chat message.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrlPayload },
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageUrlPayload {
    pub url: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Vec<ContentPart>,
}

/// Wire shape of a chat request (the de-facto chat-completions layout).
/// `call` and `image_count` are local metadata, never serialized.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    #[serde(skip)]
    pub call: CallType,
    #[serde(skip)]
    pub image_count: usize,
}

impl ChatRequest {
    /// Canonical digest of the wire payload (lowercase hex SHA-256 of the
    /// canonical JSON form).
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("chat request serializes");
        crate::digest::digest_value(&value)
    }

    /// All text content joined, in order. What a text-reading backend "sees".
    pub fn joined_text(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            for part in &message.content {
                if let ContentPart::Text { text } = part {
                    out.push_str(text);
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Decoded image attachments, in payload order.
    pub fn decoded_images(&self) -> Vec<Vec<u8>> {
        use base64::Engine;
        let mut images = Vec::new();
        for message in &self.messages {
            for part in &message.content {
                if let ContentPart::ImageUrl { image_url } = part {
                    let b64 = image_url.url.strip_prefix("data:image/jpeg;base64,");
                    if let Some(b64) = b64 {
                        if let Ok(bytes) = base64::engine::general_purpose::STANDARD.decode(b64) {
                            images.push(bytes);
                        }
                    }
                }
            }
        }
        images
    }
}

/// A chat-with-images backend. Implementations must be shareable across
/// concurrent runs and deterministic for identical requests (possibly via the
/// response cache in front of them).
pub trait MllmBackend: Send + Sync {
    fn model_id(&self) -> &str;
    /// Hard per-request image limit; oversized requests are rejected before
    /// transmission, never truncated.
    fn max_images(&self) -> usize;
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

/// Per-run gateway context: the backend, the response cache, and the parse
/// retry budget (total attempts per call).
pub struct GatewayRun<'a> {
    pub backend: &'a dyn MllmBackend,
    pub cache: Option<&'a ResponseCache>,
    pub retry_budget: u32,
    pub temperature: f64,
}

impl<'a> GatewayRun<'a> {
    pub fn new(backend: &'a dyn MllmBackend, cache: Option<&'a ResponseCache>) -> Self {
        Self { backend, cache, retry_budget: 3, temperature: 0.0 }
    }
}

/// What one gateway operation did, for the trace: every attempt with its
/// request digest, plus how many images actually went over the wire.
#[derive(Debug, Clone, Default)]
pub struct CallLog {
    pub prompt_id: Option<String>,
    pub calls: Vec<CallRecord>,
    pub images_transmitted: u64,
}

fn bundle_to_request(
    bundle: &PromptBundle,
    run: &GatewayRun<'_>,
    reminder: Option<&str>,
) -> ChatRequest {
    use base64::Engine;
    let mut content: Vec<ContentPart> = Vec::with_capacity(bundle.parts.len() + 1);
    for part in &bundle.parts {
        match part {
            prompts::BundlePart::Text(text) => {
                content.push(ContentPart::Text { text: text.clone() })
            }
            prompts::BundlePart::Frame { bytes, .. } => content.push(ContentPart::ImageUrl {
                image_url: ImageUrlPayload {
                    url: format!(
                        "data:image/jpeg;base64,{}",
                        base64::engine::general_purpose::STANDARD.encode(bytes)
                    ),
                },
            }),
        }
    }
    if let Some(reminder) = reminder {
        content.push(ContentPart::Text { text: reminder.to_string() });
    }
    let call = match bundle.schema {
        Schema::SegmentOrdinal { .. } => CallType::Locate,
        Schema::Verdicts { .. } => CallType::Select,
        Schema::RefineChoices { .. } => CallType::Refine,
        Schema::AnswerLetter { .. } => CallType::Answer,
    };
    ChatRequest {
        model: run.backend.model_id().to_string(),
        temperature: run.temperature,
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: vec![ContentPart::Text { text: bundle.system.clone() }],
            },
            ChatMessage { role: "user".into(), content },
        ],
        call,
        image_count: bundle.image_count(),
    }
}

fn cached_content(cache: &ResponseCache, key: &str) -> Option<String> {
    let stored = cache.get(key)?;
    let value: serde_json::Value = serde_json::from_slice(&stored).ok()?;
    value.get("content").and_then(|c| c.as_str()).map(|s| s.to_string())
}

/// Drive one prompt through the backend with parse retries. Each retry
/// appends the format reminder and nothing else. Returns the parsed value and
/// the raw text it came from.
fn run_call(
    bundle: &PromptBundle,
    run: &GatewayRun<'_>,
    log: &mut CallLog,
) -> Result<(Parsed, String), GatewayError> {
    log.prompt_id = Some(bundle.prompt_id.to_string());
    let limit = run.backend.max_images();
    if bundle.image_count() > limit {
        return Err(GatewayError::TooManyImages { count: bundle.image_count(), limit });
    }

    let attempts = run.retry_budget.max(1);
    let reminder = prompts::format_reminder(&bundle.schema);
    let mut last_error = String::new();
    for attempt in 0..attempts {
        let request =
            bundle_to_request(bundle, run, (attempt > 0).then_some(reminder.as_str()));
        let digest = request.digest();

        let (raw, cached) = match run.cache.and_then(|c| cached_content(c, &digest)) {
            Some(content) => (content, true),
            None => {
                let content = run.backend.chat(&request)?;
                log.images_transmitted += request.image_count as u64;
                if let Some(cache) = run.cache {
                    let payload =
                        serde_json::to_vec(&serde_json::json!({ "content": content }))
                            .expect("json");
                    cache
                        .put(&digest, &payload)
                        .map_err(|e| GatewayError::Invalid(format!("cache write: {e}")))?;
                }
                (content, false)
            }
        };

        match parse_structured(&raw, &bundle.schema) {
            Ok(parsed) => {
                log.calls.push(CallRecord {
                    request_digest: digest,
                    raw_response: raw.clone(),
                    parse_ok: true,
                    cached,
                    error: None,
                });
                return Ok((parsed, raw));
            }
            Err(failure) => {
                last_error = failure.to_string();
                log.calls.push(CallRecord {
                    request_digest: digest,
                    raw_response: raw,
                    parse_ok: false,
                    cached,
                    error: Some(last_error.clone()),
                });
            }
        }
    }
    Err(GatewayError::ParseExhausted {
        call: bundle_to_request(bundle, run, None).call,
        attempts,
        last_error,
    })
}

/// Ask the backend which segment is most relevant to the question, given one
/// starting frame per segment.
pub fn locate_segment(
    segments: &[SegmentWindow],
    starting_frames: &[&FrameRef],
    question: &str,
    run: &GatewayRun<'_>,
    log: &mut CallLog,
) -> Result<usize, GatewayError> {
    if segments.is_empty() || segments.len() != starting_frames.len() {
        return Err(GatewayError::Invalid("one starting frame per segment required".into()));
    }
    if question.trim().is_empty() {
        return Err(GatewayError::Invalid("question is blank".into()));
    }
    let bundle = prompts::build_locate(segments, starting_frames, question)?;
    match run_call(&bundle, run, log)? {
        (Parsed::Segment(ordinal), _) => Ok(ordinal),
        _ => unreachable!("segment schema parses to segment"),
    }
}

/// One call over all snippet representatives; returns a verdict for every
/// ordinal (non-mentioned snippets come back unselected).
pub fn select_snippets(
    reps: &[SnippetRep<'_>],
    question: &str,
    run: &GatewayRun<'_>,
    log: &mut CallLog,
) -> Result<Vec<SnippetVerdict>, GatewayError> {
    if reps.is_empty() {
        return Err(GatewayError::Invalid("at least one snippet representative required".into()));
    }
    let bundle = prompts::build_select(reps, question)?;
    match run_call(&bundle, run, log)? {
        (Parsed::Verdicts(verdicts), _) => Ok(verdicts),
        _ => unreachable!("verdict schema parses to verdicts"),
    }
}

/// One global call over all frames of all low-confidence snippets; returns
/// the chosen frame per snippet, each inside its own snippet's range.
pub fn refine_keyframes(
    groups: &[RefineGroup<'_>],
    question: &str,
    run: &GatewayRun<'_>,
    log: &mut CallLog,
) -> Result<Vec<(usize, usize)>, GatewayError> {
    if groups.is_empty() {
        return Err(GatewayError::Invalid("no snippets to refine".into()));
    }
    for group in groups {
        if group.frames.is_empty() {
            return Err(GatewayError::Invalid(format!("snippet {} has no frames", group.ordinal)));
        }
        if !group.frames.windows(2).all(|w| w[0].index < w[1].index) {
            return Err(GatewayError::Invalid(format!(
                "snippet {} frames not chronological",
                group.ordinal
            )));
        }
    }
    let bundle = prompts::build_refine(groups, question)?;
    match run_call(&bundle, run, log)? {
        (Parsed::Refined(choices), _) => Ok(choices),
        _ => unreachable!("refine schema parses to choices"),
    }
}

/// Final chain-of-thought answering call over the keyframe set. Returns the
/// option index and the raw rationale text.
pub fn answer_question(
    keyframes: &KeyframeSet,
    task: &QueryTask,
    run: &GatewayRun<'_>,
    log: &mut CallLog,
) -> Result<(usize, String), GatewayError> {
    if keyframes.is_empty() {
        return Err(GatewayError::Invalid("keyframe set is empty".into()));
    }
    let bundle = prompts::build_answer(keyframes, task)?;
    match run_call(&bundle, run, log)? {
        (Parsed::Answer(index), rationale) => Ok((index, rationale)),
        _ => unreachable!("answer schema parses to option index"),
    }
}
