//! Frame sampling: real videos via an external decoder subprocess, synthetic
//! videos for offline testing.

mod decode;
pub mod synthetic;

pub use decode::sample;
pub use synthetic::{make_synthetic, FrameMeta, SyntheticVideoSpec};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("video file not found: {0}")]
    MissingFile(PathBuf),
    #[error("decoder `{decoder}` failed (exit {status}): {diagnostic}")]
    DecoderFailed { decoder: String, status: String, diagnostic: String },
    #[error("decoder `{0}` not found on the execution path")]
    DecoderMissing(String),
    #[error("could not determine video duration: {0}")]
    DurationUnknown(String),
    #[error("invalid sampling policy: {0}")]
    BadPolicy(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("sampler I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// How to turn a video file into a frame sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// Frames at multiples of `1/rate_hz` seconds, clipped to the duration.
    Fps { rate_hz: f64 },
    /// Exactly `count` frames at evenly spaced timestamps starting at t=0.
    Uniform { count: usize },
}

impl SamplingPolicy {
    pub fn fps(rate_hz: f64) -> Result<Self, SamplerError> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(SamplerError::BadPolicy(format!("fps rate {rate_hz} must be > 0")));
        }
        Ok(SamplingPolicy::Fps { rate_hz })
    }

    pub fn uniform(count: usize) -> Result<Self, SamplerError> {
        if count == 0 {
            return Err(SamplerError::BadPolicy("uniform count must be >= 1".into()));
        }
        Ok(SamplingPolicy::Uniform { count })
    }

    /// Stable tag used in cache paths and trace records, e.g. `fps_1` or
    /// `uniform_32`.
    pub fn tag(&self) -> String {
        match self {
            SamplingPolicy::Fps { rate_hz } => format!("fps_{rate_hz}"),
            SamplingPolicy::Uniform { count } => format!("uniform_{count}"),
        }
    }

    /// The sampling grid for a video of the given duration. A zero-duration
    /// (or shorter-than-one-interval) video degrades to a single frame at t=0.
    pub fn timestamps(&self, duration_s: f64) -> Vec<f64> {
        match *self {
            SamplingPolicy::Fps { rate_hz } => fps_timestamps(duration_s, rate_hz),
            SamplingPolicy::Uniform { count } => uniform_timestamps(duration_s, count),
        }
    }
}

/// `floor(duration * rate) + 1` timestamps at multiples of `1/rate`.
pub fn fps_timestamps(duration_s: f64, rate_hz: f64) -> Vec<f64> {
    let duration = duration_s.max(0.0);
    let count = (duration * rate_hz).floor() as usize + 1;
    (0..count).map(|i| i as f64 / rate_hz).collect()
}

/// Exactly `count` timestamps: first at t=0, spacing `duration / count`.
/// Collapses to a single frame when the duration is zero.
pub fn uniform_timestamps(duration_s: f64, count: usize) -> Vec<f64> {
    if duration_s <= 0.0 {
        return vec![0.0];
    }
    let spacing = duration_s / count as f64;
    (0..count).map(|i| i as f64 * spacing).collect()
}

/// Decoder and output settings for [`sample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Decoder binary, invoked with an explicit argument list.
    pub decoder: String,
    /// JPEG quality (1-100) for extracted frames.
    pub jpeg_quality: u8,
    /// Longest allowed image edge in pixels; frames are downscaled to fit.
    pub max_image_edge: u32,
    /// Frame cache root; `None` extracts into a fresh temporary directory.
    pub cache_root: Option<PathBuf>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { decoder: "ffmpeg".into(), jpeg_quality: 85, max_image_edge: 512, cache_root: None }
    }
}
