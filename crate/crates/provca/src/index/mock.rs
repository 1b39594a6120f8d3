//! Deterministic offline captioner and embedder for synthetic videos.

use super::clients::{CaptionerClient, EmbedderClient};
use super::IndexError;
use crate::model::ImageHandle;
use crate::net::TransportError;
use crate::sampler::FrameMeta;

/// Reads the metadata planted in synthetic frames and renders it as a caption.
/// Needle frames mention their unique event token; all frames mention their
/// scene theme, which is what the mock embedder keys on.
#[derive(Debug, Default, Clone)]
pub struct MockCaptioner;

impl CaptionerClient for MockCaptioner {
    fn id(&self) -> &str {
        "mock-captioner-v1"
    }

    fn caption(&self, image: &ImageHandle, _prompt: &str) -> Result<String, IndexError> {
        match FrameMeta::from_handle(image) {
            Some(meta) => {
                if let Some(payload) = &meta.needle_payload {
                    Ok(format!(
                        "frame {}: the marker event {} happens in scene {}",
                        meta.frame_index, payload, meta.theme
                    ))
                } else {
                    Ok(format!(
                        "frame {}: routine activity continues in scene {}",
                        meta.frame_index, meta.theme
                    ))
                }
            }
            None => {
                let bytes = image.read_bytes().map_err(|e| IndexError::Image(e.to_string()))?;
                Ok(format!("an unrecognized scene (content {})", &crate::digest::sha256_hex(&bytes)[..8]))
            }
        }
    }
}

/// Maps captions to unit vectors. Captions mentioning `scene <label>` get the
/// basis vector picked by the label (numeric suffixes index directly, others
/// fold their bytes), so distinct nearby themes come out orthogonal. Anything
/// else gets a deterministic pseudo-random unit vector derived from the text.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dimension: 32 }
    }
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "mock embedder needs dimension >= 2");
        Self { dimension }
    }

    fn basis_index(&self, label: &str) -> usize {
        let suffix = label.strip_prefix("theme_").unwrap_or(label);
        if let Ok(k) = suffix.parse::<usize>() {
            return k % self.dimension;
        }
        let folded = suffix.bytes().fold(0usize, |acc, b| acc.wrapping_mul(31).wrapping_add(b as usize));
        folded % self.dimension
    }

    fn vector_for(&self, text: &str) -> Vec<f64> {
        if let Some(label) = extract_theme(text) {
            let mut v = vec![0.0; self.dimension];
            v[self.basis_index(&label)] = 1.0;
            return v;
        }
        // Fallback: unit vector from the text digest.
        let digest = crate::digest::sha256_hex(text.as_bytes());
        let bytes = hex::decode(digest).expect("hex digest");
        let mut v: Vec<f64> = (0..self.dimension)
            .map(|i| f64::from(bytes[i % bytes.len()]) - 127.5)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

fn extract_theme(text: &str) -> Option<String> {
    let pos = text.find("scene ")?;
    let label: String = text[pos + "scene ".len()..]
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    (!label.is_empty()).then_some(label)
}

impl EmbedderClient for MockEmbedder {
    fn id(&self) -> &str {
        "mock-embedder-v1"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, IndexError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Always fails with a transport error. Used to prove the response cache
/// serves warmed entries with zero network activity.
#[derive(Debug, Default, Clone)]
pub struct FailingCaptioner;

impl CaptionerClient for FailingCaptioner {
    fn id(&self) -> &str {
        "mock-captioner-v1" // same id as MockCaptioner so cache keys collide
    }

    fn caption(&self, _image: &ImageHandle, _prompt: &str) -> Result<String, IndexError> {
        Err(IndexError::Transport(TransportError::Network("injected failure".into())))
    }
}

/// Embedder twin of [`FailingCaptioner`].
#[derive(Debug, Clone)]
pub struct FailingEmbedder {
    pub dimension: usize,
}

impl EmbedderClient for FailingEmbedder {
    fn id(&self) -> &str {
        "mock-embedder-v1"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f64>>, IndexError> {
        Err(IndexError::Transport(TransportError::Network("injected failure".into())))
    }
}
