//! Captioning and embedding of frames behind pluggable service clients, with
//! content-addressed response caching and the cosine kernel used by
//! clustering.

pub mod clients;
pub mod mock;

pub use clients::{CaptionerClient, EmbedderClient, HttpCaptioner, HttpEmbedder};
pub use mock::{FailingCaptioner, FailingEmbedder, MockCaptioner, MockEmbedder};

use serde_json::json;
use thiserror::Error;

use crate::cache::ResponseCache;
use crate::model::FrameRef;
use crate::net::TransportError;

/// Prompt sent with every caption request; part of the cache key.
pub const CAPTION_PROMPT: &str = "Describe this video frame in one short sentence.";

/// Caption substituted when a frame's captioner call fails after retries.
pub const CAPTION_PLACEHOLDER: &str = "(no caption available)";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("captioning frame {frame_index} failed: {source}")]
    CaptionFailed { frame_index: usize, source: Box<IndexError> },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input list is empty")]
    EmptyInput,
    #[error("text {0} is blank")]
    BlankText(usize),
    #[error("cosine requires equal dimensions ({0} vs {1})")]
    CosineDimensions(usize, usize),
    #[error("cosine is undefined for zero-norm vectors")]
    ZeroNorm,
    #[error("unusable service response: {0}")]
    BadResponse(String),
    #[error("image handle unreadable: {0}")]
    Image(String),
}

/// Cosine similarity, clamped to [-1, 1] against rounding overshoot.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::CosineDimensions(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroNorm);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn caption_cache_key(model: &str, image_bytes: &[u8], prompt: &str) -> String {
    crate::digest::digest_value(&json!({
        "kind": "caption",
        "model": model,
        "image_sha256": crate::digest::sha256_hex(image_bytes),
        "prompt": prompt,
    }))
}

fn embed_text_cache_key(model: &str, text: &str) -> String {
    crate::digest::digest_value(&json!({
        "kind": "embed",
        "model": model,
        "text": text,
    }))
}

/// Result of a caption batch: ordered captions plus the digests of the calls
/// that actually hit the service (cache misses), for the budget ledger.
#[derive(Debug, Clone)]
pub struct CaptionBatch {
    pub captions: Vec<(usize, String)>,
    pub miss_digests: Vec<String>,
    /// Frames whose caption fell back to the placeholder (lenient mode only).
    pub failed: Vec<usize>,
}

fn caption_one(
    frame: &FrameRef,
    client: &dyn CaptionerClient,
    cache: Option<&ResponseCache>,
) -> Result<(String, Option<String>), IndexError> {
    let bytes = frame.image.read_bytes().map_err(|e| IndexError::Image(e.to_string()))?;
    let key = caption_cache_key(client.id(), &bytes, CAPTION_PROMPT);
    if let Some(cache) = cache {
        if let Some(stored) = cache.get(&key) {
            let parsed: serde_json::Value = serde_json::from_slice(&stored)
                .map_err(|e| IndexError::BadResponse(format!("corrupt cache entry: {e}")))?;
            let caption = parsed
                .get("caption")
                .and_then(|c| c.as_str())
                .ok_or_else(|| IndexError::BadResponse("corrupt cache entry".into()))?;
            return Ok((caption.to_string(), None));
        }
    }
    let caption = client.caption(&frame.image, CAPTION_PROMPT)?;
    if let Some(cache) = cache {
        let payload = serde_json::to_vec(&json!({ "caption": caption })).expect("json");
        cache.put(&key, &payload).map_err(|e| IndexError::Image(e.to_string()))?;
    }
    Ok((caption, Some(key)))
}

/// Caption every frame, order preserved. Cache hits skip the service; the
/// first failure aborts the batch, carrying the failing frame index.
pub fn caption_frames(
    frames: &[FrameRef],
    client: &dyn CaptionerClient,
    cache: Option<&ResponseCache>,
    parallelism: usize,
) -> Result<CaptionBatch, IndexError> {
    if frames.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    let results = crate::util::bounded_map(frames, parallelism, |_, frame| {
        caption_one(frame, client, cache)
    });
    let mut batch = CaptionBatch { captions: Vec::new(), miss_digests: Vec::new(), failed: Vec::new() };
    for (frame, result) in frames.iter().zip(results) {
        match result {
            Ok((caption, miss)) => {
                batch.captions.push((frame.index, caption));
                batch.miss_digests.extend(miss);
            }
            Err(err) => {
                return Err(IndexError::CaptionFailed {
                    frame_index: frame.index,
                    source: Box::new(err),
                })
            }
        }
    }
    Ok(batch)
}

/// Like [`caption_frames`], but a failing frame gets [`CAPTION_PLACEHOLDER`]
/// instead of aborting the batch. One bad frame must not kill a long run; the
/// pipeline flags the substitution in the trace.
pub fn caption_frames_lenient(
    frames: &[FrameRef],
    client: &dyn CaptionerClient,
    cache: Option<&ResponseCache>,
    parallelism: usize,
) -> Result<CaptionBatch, IndexError> {
    if frames.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    let results = crate::util::bounded_map(frames, parallelism, |_, frame| {
        caption_one(frame, client, cache)
    });
    let mut batch = CaptionBatch { captions: Vec::new(), miss_digests: Vec::new(), failed: Vec::new() };
    for (frame, result) in frames.iter().zip(results) {
        match result {
            Ok((caption, miss)) => {
                batch.captions.push((frame.index, caption));
                batch.miss_digests.extend(miss);
            }
            Err(_) => {
                batch.captions.push((frame.index, CAPTION_PLACEHOLDER.to_string()));
                batch.failed.push(frame.index);
            }
        }
    }
    Ok(batch)
}

/// Result of an embedding batch: ordered vectors plus one digest per service
/// call that was actually made.
#[derive(Debug, Clone)]
pub struct EmbedBatch {
    pub vectors: Vec<Vec<f64>>,
    pub miss_digests: Vec<String>,
}

/// Embed texts, order preserved, cached per (model, text). Cache misses are
/// batched into a single service call.
pub fn embed(
    texts: &[String],
    client: &dyn EmbedderClient,
    cache: Option<&ResponseCache>,
) -> Result<EmbedBatch, IndexError> {
    if texts.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(IndexError::BlankText(i));
    }

    let expected_dim = client.dimension();
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
    let mut missing: Vec<usize> = Vec::new();

    for (i, text) in texts.iter().enumerate() {
        let cached = cache.and_then(|c| c.get(&embed_text_cache_key(client.id(), text)));
        match cached {
            Some(stored) => {
                let parsed: serde_json::Value = serde_json::from_slice(&stored)
                    .map_err(|e| IndexError::BadResponse(format!("corrupt cache entry: {e}")))?;
                let vector: Vec<f64> = parsed
                    .get("embedding")
                    .and_then(|e| e.as_array())
                    .ok_or_else(|| IndexError::BadResponse("corrupt cache entry".into()))?
                    .iter()
                    .filter_map(|x| x.as_f64())
                    .collect();
                if vector.len() != expected_dim {
                    return Err(IndexError::DimensionMismatch {
                        expected: expected_dim,
                        got: vector.len(),
                    });
                }
                vectors[i] = Some(vector);
            }
            None => missing.push(i),
        }
    }

    let mut miss_digests = Vec::new();
    if !missing.is_empty() {
        let inputs: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
        let fresh = client.embed(&inputs)?;
        if fresh.len() != inputs.len() {
            return Err(IndexError::BadResponse(format!(
                "{} vectors for {} inputs",
                fresh.len(),
                inputs.len()
            )));
        }
        miss_digests.push(crate::digest::digest_value(&json!({
            "kind": "embed_call",
            "model": client.id(),
            "input": inputs,
        })));
        for (&i, vector) in missing.iter().zip(fresh) {
            if vector.len() != expected_dim {
                return Err(IndexError::DimensionMismatch {
                    expected: expected_dim,
                    got: vector.len(),
                });
            }
            if let Some(cache) = cache {
                let key = embed_text_cache_key(client.id(), &texts[i]);
                let payload =
                    serde_json::to_vec(&json!({ "embedding": vector })).expect("json");
                cache.put(&key, &payload).map_err(|e| IndexError::Image(e.to_string()))?;
            }
            vectors[i] = Some(vector);
        }
    }

    Ok(EmbedBatch {
        vectors: vectors.into_iter().map(|v| v.expect("every slot filled")).collect(),
        miss_digests,
    })
}


#[cfg(test)]
mod cosine_props {
    use super::cosine;
    use proptest::prelude::*;

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-8.0f64..8.0, 1..8)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6)
    }

    fn nonzero_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..8).prop_flat_map(|d| {
            let side = || {
                proptest::collection::vec(-8.0f64..8.0, d..=d)
                    .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6)
            };
            (side(), side())
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_scale_invariant(u in nonzero_vec(), scale in 0.01f64..50.0) {
            let v: Vec<f64> = u.iter().map(|x| x * scale).collect();
            prop_assert!((cosine(&u, &v).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn symmetry_and_range((u, w) in nonzero_pair()) {
            let a = cosine(&u, &w).unwrap();
            let b = cosine(&w, &u).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
