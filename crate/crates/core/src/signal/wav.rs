//! Mono 32-bit float WAV files; sample values are pascal.

use super::AudioBuffer;
use crate::error::{Error, Result};
use std::path::Path;

pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate().round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in buffer.samples() {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<Vec<_>, _>>()?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / full)).collect::<Result<Vec<_>, _>>()?
        }
    };
    AudioBuffer::new(samples, spec.sample_rate as f64)
}
