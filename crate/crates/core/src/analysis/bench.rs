use crate::arch::{Model, Network};
use crate::error::{Error, Result};
use crate::nn::FeatureMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::time::Instant;

pub const RTF_FRAME_LEN: usize = 512;
pub const RTF_N_FRAMES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RtfReport {
    pub model: String,
    pub frame_len: usize,
    pub n_frames: usize,
    /// Audio duration of one frame.
    pub frame_ms: f64,
    /// Mean wall-clock time per frame, context included.
    pub mean_ms: f64,
    pub rtf: f64,
    pub hardware: String,
}

impl RtfReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model);
        let _ = writeln!(s, "frame_len = {}", self.frame_len);
        let _ = writeln!(s, "n_frames = {}", self.n_frames);
        let _ = writeln!(s, "frame_ms = {:.3}", self.frame_ms);
        let _ = writeln!(s, "mean_ms = {:.4}", self.mean_ms);
        let _ = writeln!(s, "rtf = {:.5}", self.rtf);
        let _ = writeln!(s, "hardware = {}", self.hardware);
        s
    }
}

fn hardware() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|v| v.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{cpu}; {cores} threads; {} {}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Times `n_frames` single-frame forward passes on random input, each frame
/// carrying the model's full left and right context.
pub fn rtf_bench(name: &str, model: &Model, frame_len: usize, n_frames: usize, sample_rate: f64) -> Result<RtfReport> {
    if n_frames == 0 {
        return Err(Error::NoFrames);
    }
    let (l, r) = model.context();
    let m = model.length_multiple();
    if frame_len == 0 || !(l + frame_len + r).is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "frame of {frame_len} samples with context {l}+{r} is not a multiple of {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = FeatureMap::new(Array2::from_shape_fn((model.in_channels(), l + frame_len + r), |_| rng.gen_range(-0.05..0.05)))?;
    model.forward(&x)?;
    let start = Instant::now();
    for _ in 0..n_frames {
        std::hint::black_box(model.forward(std::hint::black_box(&x))?);
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1e3 / n_frames as f64;
    let frame_ms = frame_len as f64 / sample_rate * 1e3;
    Ok(RtfReport {
        model: name.to_string(),
        frame_len,
        n_frames,
        frame_ms,
        mean_ms,
        rtf: mean_ms / frame_ms,
        hardware: hardware(),
    })
}
