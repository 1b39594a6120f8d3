//! Decoder subprocess wrapper with an on-disk frame cache.
//!
//! One decoder invocation per video: frames are extracted with the decoder's
//! rate filter into a temp directory, trimmed or padded to the exact sampling
//! grid, then the whole directory is renamed into the cache
//! (`<cache_root>/frames/<video_hash>/<policy_tag>/NNNNN.jpg`). The rename is
//! the atomicity point, so concurrent samplers of the same (video, policy)
//! pair cannot observe partial extractions. The computed sampling grid is
//! authoritative for timestamps; a `manifest.json` beside the frames lets a
//! warm cache skip both the probe and the decode.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{SamplerConfig, SamplerError, SamplingPolicy};
use crate::model::{FrameRef, ImageHandle, SampledVideo};

#[derive(Debug, Serialize, Deserialize)]
struct FrameManifest {
    duration_s: f64,
    timestamps: Vec<f64>,
}

/// Sample a video file according to `policy`.
pub fn sample(
    video_path: &Path,
    policy: &SamplingPolicy,
    config: &SamplerConfig,
) -> Result<SampledVideo, SamplerError> {
    if !video_path.is_file() {
        return Err(SamplerError::MissingFile(video_path.to_path_buf()));
    }
    let video_hash = hash_file(video_path)?;

    let frames_dir: PathBuf;
    let timestamps: Vec<f64>;
    match &config.cache_root {
        Some(root) => {
            let policy_dir = root.join("frames").join(&video_hash).join(policy.tag());
            if let Some(manifest) = read_manifest(&policy_dir) {
                timestamps = manifest.timestamps;
                frames_dir = policy_dir;
            } else {
                let duration = probe_duration(&config.decoder, video_path)?;
                timestamps = policy.timestamps(duration);
                let staging = policy_dir.with_extension(format!("staging.{}", std::process::id()));
                extract_into(video_path, policy, config, duration, &timestamps, &staging)?;
                write_manifest(&staging, duration, &timestamps)?;
                std::fs::create_dir_all(policy_dir.parent().expect("policy dir has parent"))?;
                match std::fs::rename(&staging, &policy_dir) {
                    Ok(()) => {}
                    // A concurrent sampler won the rename; use its frames.
                    Err(_) if read_manifest(&policy_dir).is_some() => {
                        let _ = std::fs::remove_dir_all(&staging);
                    }
                    Err(e) => return Err(e.into()),
                }
                frames_dir = policy_dir;
            }
        }
        None => {
            let duration = probe_duration(&config.decoder, video_path)?;
            timestamps = policy.timestamps(duration);
            let dir = std::env::temp_dir().join(format!(
                "provca-frames-{}-{}",
                &video_hash[..16],
                std::process::id()
            ));
            extract_into(video_path, policy, config, duration, &timestamps, &dir)?;
            frames_dir = dir;
        }
    }

    let frames = timestamps
        .iter()
        .enumerate()
        .map(|(i, &timestamp_s)| FrameRef {
            index: i,
            timestamp_s,
            image: ImageHandle::Path(frames_dir.join(frame_file_name(i))),
        })
        .collect();
    let source_id = format!("{}:{}", video_path.display(), &video_hash[..16]);
    Ok(SampledVideo::new(frames, source_id, policy.tag())?)
}

fn frame_file_name(index: usize) -> String {
    format!("{index:05}.jpg")
}

fn hash_file(path: &Path) -> Result<String, SamplerError> {
    use sha2::{Digest, Sha256};
    use std::io::Read;
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn read_manifest(policy_dir: &Path) -> Option<FrameManifest> {
    let raw = std::fs::read(policy_dir.join("manifest.json")).ok()?;
    serde_json::from_slice(&raw).ok()
}

fn write_manifest(dir: &Path, duration_s: f64, timestamps: &[f64]) -> Result<(), SamplerError> {
    let manifest = FrameManifest { duration_s, timestamps: timestamps.to_vec() };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec(&manifest).expect("manifest"))?;
    Ok(())
}

/// Parse `Duration: HH:MM:SS.cc` from the decoder's stderr banner. The probe
/// call intentionally names no output file, which makes most decoders exit
/// nonzero after printing the input description; only a missing duration line
/// is an error.
fn probe_duration(decoder: &str, video_path: &Path) -> Result<f64, SamplerError> {
    let output = Command::new(decoder)
        .arg("-hide_banner")
        .arg("-i")
        .arg(video_path)
        .output()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SamplerError::DecoderMissing(decoder.to_string()),
            _ => SamplerError::Io(e),
        })?;
    let stderr = String::from_utf8_lossy(&output.stderr);
    parse_duration_line(&stderr).ok_or_else(|| {
        SamplerError::DurationUnknown(format!(
            "no `Duration:` line in decoder output for {}: {}",
            video_path.display(),
            stderr.lines().last().unwrap_or("").trim()
        ))
    })
}

fn parse_duration_line(stderr: &str) -> Option<f64> {
    let start = stderr.find("Duration:")? + "Duration:".len();
    let rest = stderr[start..].trim_start();
    let token: String = rest
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == ':' || *c == '.')
        .collect();
    let mut parts = token.split(':');
    let hours: f64 = parts.next()?.parse().ok()?;
    let minutes: f64 = parts.next()?.parse().ok()?;
    let seconds: f64 = parts.next()?.parse().ok()?;
    Some(hours * 3600.0 + minutes * 60.0 + seconds)
}

fn extract_into(
    video_path: &Path,
    policy: &SamplingPolicy,
    config: &SamplerConfig,
    duration_s: f64,
    timestamps: &[f64],
    out_dir: &Path,
) -> Result<(), SamplerError> {
    std::fs::create_dir_all(out_dir)?;

    // Effective extraction rate: the grid spacing expressed as frames/second.
    // For degenerate single-frame grids any positive rate yields one frame.
    let rate = match *policy {
        SamplingPolicy::Fps { rate_hz } => rate_hz,
        SamplingPolicy::Uniform { count } => {
            if duration_s > 0.0 {
                count as f64 / duration_s
            } else {
                1.0
            }
        }
    };
    let edge = config.max_image_edge;
    let filter = format!(
        "fps={rate},scale=w=min(iw\\,{edge}):h=min(ih\\,{edge}):force_original_aspect_ratio=decrease"
    );
    // Map the 1-100 quality scale onto the decoder's 2 (best) .. 31 (worst).
    let q = (2.0 + (100.0 - f64::from(config.jpeg_quality.clamp(1, 100))) * 29.0 / 99.0).round();

    let output = Command::new(&config.decoder)
        .arg("-hide_banner")
        .arg("-loglevel")
        .arg("error")
        .arg("-i")
        .arg(video_path)
        .arg("-vf")
        .arg(&filter)
        .arg("-q:v")
        .arg(format!("{q}"))
        .arg("-start_number")
        .arg("0")
        .arg(out_dir.join("%05d.jpg"))
        .output()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SamplerError::DecoderMissing(config.decoder.clone()),
            _ => SamplerError::Io(e),
        })?;
    if !output.status.success() {
        let _ = std::fs::remove_dir_all(out_dir);
        return Err(SamplerError::DecoderFailed {
            decoder: config.decoder.clone(),
            status: output.status.to_string(),
            diagnostic: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }

    enforce_frame_count(out_dir, timestamps.len())
}

/// Decoders round the frame count at the clip edge differently; the sampling
/// grid is the contract, so trim extras and pad a shortfall by duplicating the
/// last extracted frame.
fn enforce_frame_count(dir: &Path, expected: usize) -> Result<(), SamplerError> {
    let mut produced: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "jpg").unwrap_or(false))
        .collect();
    produced.sort();
    if produced.is_empty() {
        return Err(SamplerError::DecoderFailed {
            decoder: "decoder".into(),
            status: "0".into(),
            diagnostic: "no frames produced".into(),
        });
    }
    for extra in produced.iter().skip(expected) {
        std::fs::remove_file(extra)?;
    }
    let last = produced[produced.len().min(expected) - 1].clone();
    for i in produced.len()..expected {
        std::fs::copy(&last, dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::os::unix::fs::PermissionsExt;

    /// Fake decoder: with no output pattern it prints a Duration banner to
    /// stderr and exits 1 (as real decoders do when no output is named);
    /// otherwise it writes a fixed number of jpg files and bumps an invocation
    /// counter so tests can observe cache hits.
    fn install_fake_decoder(dir: &Path, banner_duration: &str, frames_produced: usize) -> PathBuf {
        let script = dir.join("fake-ffmpeg");
        let body = format!(
            r#"#!/bin/sh
count_file="$(dirname "$0")/calls"
echo x >> "$count_file"
out=""
for arg in "$@"; do out="$arg"; done
case "$out" in
  *%05d.jpg)
    dir=$(dirname "$out")
    i=0
    while [ $i -lt {frames_produced} ]; do
      printf 'jpegdata-%d' $i > "$dir/$(printf '%05d' $i).jpg"
      i=$((i+1))
    done
    exit 0
    ;;
  *)
    echo "Input #0, fake, from 'x':" 1>&2
    echo "  Duration: {banner_duration}, start: 0.000000, bitrate: 1 kb/s" 1>&2
    exit 1
    ;;
esac
"#
        );
        let mut f = std::fs::File::create(&script).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        let mut perms = f.metadata().unwrap().permissions();
        perms.set_mode(0o755);
        std::fs::set_permissions(&script, perms).unwrap();
        script
    }

    fn decoder_calls(script: &Path) -> usize {
        std::fs::read_to_string(script.parent().unwrap().join("calls"))
            .map(|s| s.lines().count())
            .unwrap_or(0)
    }

    #[test]
    fn missing_file_is_an_error() {
        let cfg = SamplerConfig::default();
        let err = sample(Path::new("/nonexistent/video.mp4"), &SamplingPolicy::fps(1.0).unwrap(), &cfg);
        assert!(matches!(err, Err(SamplerError::MissingFile(_))));
    }

    #[test]
    fn missing_decoder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("v.mp4");
        std::fs::write(&video, b"fake video bytes").unwrap();
        let cfg = SamplerConfig { decoder: "provca-no-such-decoder".into(), ..Default::default() };
        let err = sample(&video, &SamplingPolicy::fps(1.0).unwrap(), &cfg);
        assert!(matches!(err, Err(SamplerError::DecoderMissing(_))));
    }

    #[test]
    fn duration_banner_parses() {
        let stderr = "Input #0\n  Duration: 00:00:44.00, start: 0.0\n";
        assert_eq!(parse_duration_line(stderr), Some(44.0));
        assert_eq!(parse_duration_line("Duration: 01:02:03.50,"), Some(3723.5));
        assert_eq!(parse_duration_line("no duration here"), None);
    }

    #[test]
    fn fps_sampling_enforces_grid_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        // Decoder produces 47 frames for a 44 s clip; the grid wants 45.
        let script = install_fake_decoder(dir.path(), "00:00:44.00", 47);
        let video = dir.path().join("clip.mp4");
        std::fs::write(&video, b"content-A").unwrap();
        let cache_root = dir.path().join("cache");
        let cfg = SamplerConfig {
            decoder: script.to_string_lossy().into_owned(),
            cache_root: Some(cache_root.clone()),
            ..Default::default()
        };

        let video1 = sample(&video, &SamplingPolicy::fps(1.0).unwrap(), &cfg).unwrap();
        assert_eq!(video1.len(), 45);
        assert_eq!(video1.frames()[44].timestamp_s, 44.0);
        assert_eq!(video1.sampling_policy, "fps_1");
        // trimmed down to exactly 45 files on disk (plus manifest)
        let first = &video1.frames()[0].image;
        if let ImageHandle::Path(p) = first {
            assert!(p.exists());
            let n = std::fs::read_dir(p.parent().unwrap())
                .unwrap()
                .filter(|e| {
                    e.as_ref().unwrap().path().extension().map(|x| x == "jpg").unwrap_or(false)
                })
                .count();
            assert_eq!(n, 45);
        } else {
            panic!("expected path handle");
        }
        let calls_after_first = decoder_calls(&script);
        assert!(calls_after_first >= 2); // probe + extract

        // Second sampling of the same (video, policy) is served from cache.
        let video2 = sample(&video, &SamplingPolicy::fps(1.0).unwrap(), &cfg).unwrap();
        assert_eq!(video2.len(), 45);
        assert_eq!(decoder_calls(&script), calls_after_first);
    }

    #[test]
    fn uniform_sampling_pads_shortfall() {
        let dir = tempfile::tempdir().unwrap();
        // Decoder produces only 30 frames; uniform(32) pads to 32.
        let script = install_fake_decoder(dir.path(), "00:01:04.00", 30);
        let video = dir.path().join("clip.mp4");
        std::fs::write(&video, b"content-B").unwrap();
        let cfg = SamplerConfig {
            decoder: script.to_string_lossy().into_owned(),
            cache_root: Some(dir.path().join("cache")),
            ..Default::default()
        };
        let sampled = sample(&video, &SamplingPolicy::uniform(32).unwrap(), &cfg).unwrap();
        assert_eq!(sampled.len(), 32);
        let ts: Vec<f64> = sampled.frames().iter().map(|f| f.timestamp_s).collect();
        assert_eq!(ts[0], 0.0);
        assert!((ts[1] - 2.0).abs() < 1e-12);
        // padded frames duplicate the last decoded image
        let last = sampled.frames()[31].image.read_bytes().unwrap();
        let frame29 = sampled.frames()[29].image.read_bytes().unwrap();
        assert_eq!(last, frame29);
    }

    #[test]
    fn zero_duration_video_yields_single_frame() {
        let dir = tempfile::tempdir().unwrap();
        let script = install_fake_decoder(dir.path(), "00:00:00.00", 1);
        let video = dir.path().join("still.mp4");
        std::fs::write(&video, b"content-C").unwrap();
        let cfg = SamplerConfig {
            decoder: script.to_string_lossy().into_owned(),
            cache_root: Some(dir.path().join("cache")),
            ..Default::default()
        };
        let sampled = sample(&video, &SamplingPolicy::fps(1.0).unwrap(), &cfg).unwrap();
        assert_eq!(sampled.len(), 1);
        assert_eq!(sampled.frames()[0].timestamp_s, 0.0);
    }

    #[test]
    fn decoder_failure_carries_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("broken");
        let body = "#!/bin/sh\nout=\"\"\nfor arg in \"$@\"; do out=\"$arg\"; done\ncase \"$out\" in\n  *%05d.jpg) echo boom 1>&2; exit 3 ;;\n  *) echo 'Duration: 00:00:10.00, start' 1>&2; exit 1 ;;\nesac\n";
        std::fs::write(&script, body).unwrap();
        let mut perms = std::fs::metadata(&script).unwrap().permissions();
        perms.set_mode(0o755);
        std::fs::set_permissions(&script, perms).unwrap();

        let video = dir.path().join("clip.mp4");
        std::fs::write(&video, b"content-D").unwrap();
        let cfg = SamplerConfig {
            decoder: script.to_string_lossy().into_owned(),
            cache_root: Some(dir.path().join("cache")),
            ..Default::default()
        };
        match sample(&video, &SamplingPolicy::fps(1.0).unwrap(), &cfg) {
            Err(SamplerError::DecoderFailed { diagnostic, .. }) => {
                assert!(diagnostic.contains("boom"));
            }
            other => panic!("expected DecoderFailed, got {other:?}"),
        }
    }
}
