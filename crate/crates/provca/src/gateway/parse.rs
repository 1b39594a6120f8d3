//! Tolerant extraction of structured values from model text output.
//!
//! Values may arrive embedded in prose, fenced blocks, JSON objects, or
//! `label: value` lines. Extraction is tolerant about surface form but strict
//! about type and range: an out-of-range ordinal or a non-binary confidence is
//! a parse failure, never silently corrected.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::model::{Confidence, QueryTask, SegmentWindow, SnippetVerdict};

/// What shape of value the caller expects back.
#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    /// A single segment ordinal in `[0, n)`.
    SegmentOrdinal { n: usize },
    /// Selected snippet ordinals in `[0, p)`, each with a binary confidence.
    Verdicts { p: usize },
    /// Exactly one frame choice per listed snippet, each within its window.
    RefineChoices { snippets: Vec<(usize, SegmentWindow)> },
    /// A final option letter for a question with `n_options` options.
    AnswerLetter { n_options: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Segment(usize),
    Verdicts(Vec<SnippetVerdict>),
    /// `(snippet ordinal, chosen frame index)` pairs in snippet order.
    Refined(Vec<(usize, usize)>),
    Answer(usize),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unparsable response: {0}")]
pub struct ParseFailure(pub String);

fn regex(pattern: &'static str, slot: &'static OnceLock<Regex>) -> &'static Regex {
    slot.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

macro_rules! static_regex {
    ($pattern:expr) => {{
        static SLOT: OnceLock<Regex> = OnceLock::new();
        regex($pattern, &SLOT)
    }};
}

fn strip_fences(raw: &str) -> String {
    raw.replace("```json", "\n").replace("```", "\n")
}

/// Deterministic extraction of the value `schema` expects from `raw`.
pub fn parse_structured(raw: &str, schema: &Schema) -> Result<Parsed, ParseFailure> {
    let text = strip_fences(raw);
    match schema {
        Schema::SegmentOrdinal { n } => parse_segment(&text, *n).map(Parsed::Segment),
        Schema::Verdicts { p } => parse_verdicts(&text, *p).map(Parsed::Verdicts),
        Schema::RefineChoices { snippets } => {
            parse_refine(&text, snippets).map(Parsed::Refined)
        }
        Schema::AnswerLetter { n_options } => parse_answer(&text, *n_options).map(Parsed::Answer),
    }
}

fn parse_segment(text: &str, n: usize) -> Result<usize, ParseFailure> {
    let labeled = static_regex!(r"(?i)segment\s*(?:number|id)?\s*[:#=]?\s*(?:is\s*)?(\d+)");
    let candidate = if let Some(caps) = labeled.captures(text) {
        caps[1].to_string()
    } else {
        let any_int = static_regex!(r"\d+");
        any_int
            .find(text)
            .map(|m| m.as_str().to_string())
            .ok_or_else(|| ParseFailure("no segment ordinal found".into()))?
    };
    let ordinal: usize =
        candidate.parse().map_err(|_| ParseFailure(format!("bad integer `{candidate}`")))?;
    if ordinal >= n {
        return Err(ParseFailure(format!("segment ordinal {ordinal} outside [0, {n})")));
    }
    Ok(ordinal)
}

fn parse_verdicts(text: &str, p: usize) -> Result<Vec<SnippetVerdict>, ParseFailure> {
    let mut chosen: BTreeMap<usize, u8> = BTreeMap::new();
    let mut found_any = false;

    if let Some(object) = first_json_object(text) {
        if let Ok(map) = serde_json::from_str::<BTreeMap<String, serde_json::Value>>(&object) {
            for (key, value) in map {
                let ordinal: usize =
                    key.trim().parse().map_err(|_| ParseFailure(format!("bad ordinal `{key}`")))?;
                let conf = value
                    .as_u64()
                    .ok_or_else(|| ParseFailure(format!("non-integer confidence for {key}")))?;
                chosen.insert(ordinal, conf.try_into().unwrap_or(255));
                found_any = true;
            }
        }
    }

    if !found_any {
        // e.g. `snippets: 1 (conf 1), 4 (conf 0)` or `snippet 3, confidence 0`
        let paren = static_regex!(r"(?i)(\d+)\s*\(\s*conf(?:idence)?\s*[:=]?\s*(\d+)\s*\)");
        let worded = static_regex!(r"(?i)snippet\s*(\d+)\s*[,:]?\s*conf(?:idence)?\s*[:=]?\s*(\d+)");
        let line = static_regex!(r"(?m)^\s*(\d+)\s*[:=]\s*(\d+)\s*$");
        for re in [paren, worded, line] {
            for caps in re.captures_iter(text) {
                let ordinal: usize = caps[1].parse().map_err(|_| ParseFailure("ordinal".into()))?;
                let conf: u8 = caps[2].parse().unwrap_or(255);
                chosen.insert(ordinal, conf);
                found_any = true;
            }
            if found_any {
                break;
            }
        }
    }

    if !found_any {
        let none = static_regex!(r"(?i)\bnone\b");
        if none.is_match(text) {
            // explicit empty selection: valid, the pipeline decides what to do
            return Ok((0..p).map(SnippetVerdict::rejected).collect());
        }
        return Err(ParseFailure("no snippet verdicts found".into()));
    }

    let mut verdicts = Vec::with_capacity(p);
    for ordinal in 0..p {
        match chosen.get(&ordinal) {
            Some(&conf) => {
                let confidence = Confidence::try_from(conf).map_err(ParseFailure)?;
                verdicts.push(SnippetVerdict::selected(ordinal, confidence));
            }
            None => verdicts.push(SnippetVerdict::rejected(ordinal)),
        }
    }
    // any mentioned ordinal outside [0, p) is a hard parse failure
    if let Some(&bad) = chosen.keys().find(|&&o| o >= p) {
        return Err(ParseFailure(format!("snippet ordinal {bad} outside [0, {p})")));
    }
    Ok(verdicts)
}

fn parse_refine(
    text: &str,
    snippets: &[(usize, SegmentWindow)],
) -> Result<Vec<(usize, usize)>, ParseFailure> {
    let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();

    if let Some(object) = first_json_object(text) {
        if let Ok(map) = serde_json::from_str::<BTreeMap<String, serde_json::Value>>(&object) {
            for (key, value) in map {
                let ordinal: usize =
                    key.trim().parse().map_err(|_| ParseFailure(format!("bad ordinal `{key}`")))?;
                let frame = value
                    .as_u64()
                    .ok_or_else(|| ParseFailure(format!("non-integer frame for {key}")))?;
                chosen.insert(ordinal, frame as usize);
            }
        }
    }

    if chosen.is_empty() {
        let worded = static_regex!(r"(?i)snippet\s*(\d+)\s*[,:]?\s*(?:frame|->|→)\s*(\d+)");
        let line = static_regex!(r"(?m)^\s*(\d+)\s*[:=]\s*(\d+)\s*$");
        for re in [worded, line] {
            for caps in re.captures_iter(text) {
                let ordinal: usize = caps[1].parse().map_err(|_| ParseFailure("ordinal".into()))?;
                let frame: usize = caps[2].parse().map_err(|_| ParseFailure("frame".into()))?;
                chosen.insert(ordinal, frame);
            }
            if !chosen.is_empty() {
                break;
            }
        }
    }

    if chosen.is_empty() {
        return Err(ParseFailure("no refinement choices found".into()));
    }

    let mut result = Vec::with_capacity(snippets.len());
    for &(ordinal, window) in snippets {
        let frame = *chosen
            .get(&ordinal)
            .ok_or_else(|| ParseFailure(format!("no frame chosen for snippet {ordinal}")))?;
        if !window.contains(frame) {
            return Err(ParseFailure(format!(
                "frame {frame} outside snippet {ordinal} ({window})"
            )));
        }
        result.push((ordinal, frame));
    }
    if chosen.len() != snippets.len() {
        let expected: Vec<usize> = snippets.iter().map(|(o, _)| *o).collect();
        let extra: Vec<usize> =
            chosen.keys().filter(|o| !expected.contains(o)).copied().collect();
        return Err(ParseFailure(format!("choices for unknown snippets {extra:?}")));
    }
    Ok(result)
}

fn parse_answer(text: &str, n_options: usize) -> Result<usize, ParseFailure> {
    let labeled = static_regex!(r"(?i)\banswer\b\s*(?:is|:)?\s*\(?\s*([A-Za-z])\b");
    let parenthesized = static_regex!(r"\(([A-Za-z])\)");
    let bare_upper = static_regex!(r"\b([A-Z])\b");

    let letter = labeled
        .captures_iter(text)
        .last()
        .or_else(|| parenthesized.captures_iter(text).last())
        .or_else(|| bare_upper.captures_iter(text).last())
        .map(|caps| caps[1].chars().next().expect("single letter"))
        .ok_or_else(|| ParseFailure("no option letter found".into()))?;

    let index = (letter.to_ascii_uppercase() as u8).wrapping_sub(b'A') as usize;
    if index >= n_options {
        return Err(ParseFailure(format!(
            "option letter {} outside A..{}",
            letter,
            QueryTask::option_letter(n_options - 1)
        )));
    }
    Ok(index)
}

fn first_json_object(text: &str) -> Option<String> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    for (offset, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + offset + 1].to_string());
                }
            }
            _ => {}
        }
    }
    None
}
