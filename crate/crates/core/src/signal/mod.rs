//! Waveform containers, level calibration and framing.
//!
//! Samples are sound pressure in pascal throughout the crate; `1.0` is 1 Pa.

mod filters;
mod fir;
mod spectrum;
pub mod wav;

pub use filters::{erb_hz, Gammatone, LtiFilter, OnePole};
pub use fir::{design_lowpass, fir_filter, fir_filter_adjoint, DEFAULT_LOWPASS_TAPS};
pub use spectrum::{magnitude_spectrum, Spectrum, Window};

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Reference pressure for dB SPL.
pub const P_REF: f64 = 2e-5;

pub const DEFAULT_SAMPLE_RATE: f64 = 20_000.0;

/// Mono pressure waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Buffer at the default 20 kHz rate.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, DEFAULT_SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

pub fn rms(buffer: &AudioBuffer) -> Result<f64> {
    rms_of(buffer.samples())
}

pub(crate) fn rms_of(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    Ok(ms.sqrt())
}

/// Pressure RMS corresponding to `level_db` dB SPL.
pub fn spl_to_pa(level_db: f64) -> f64 {
    P_REF * 10f64.powf(level_db / 20.0)
}

/// Rescale so the RMS equals `level_db` dB SPL.
pub fn scale_to_spl(buffer: &AudioBuffer, level_db: f64) -> Result<AudioBuffer> {
    let current = rms(buffer)?;
    if current == 0.0 {
        return Err(Error::SilentSignal);
    }
    let gain = spl_to_pa(level_db) / current;
    let samples = buffer.samples.iter().map(|s| s * gain).collect();
    AudioBuffer::new(samples, buffer.sample_rate)
}

/// Sine at `freq` Hz whose RMS equals `level_db` dB SPL.
pub fn tone(freq: f64, level_db: f64, n: usize, sample_rate: f64) -> AudioBuffer {
    let amp = spl_to_pa(level_db) * 2f64.sqrt();
    let samples = (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / sample_rate).sin())
        .collect();
    AudioBuffer { samples, sample_rate }
}

/// Apply raised-cosine onset/offset ramps of `ramp` seconds in place.
pub fn apply_ramps(buffer: &mut AudioBuffer, ramp: f64) {
    let n = buffer.samples.len();
    let r = ((ramp * buffer.sample_rate).round() as usize).min(n / 2);
    for i in 0..r {
        let w = 0.5 * (1.0 - (PI * i as f64 / r as f64).cos());
        buffer.samples[i] *= w;
        buffer.samples[n - 1 - i] *= w;
    }
}

/// One analysis window of a longer signal with its surrounding context.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub left_context: Vec<f64>,
    pub core: Vec<f64>,
    pub right_context: Vec<f64>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.left_context.len() + self.core.len() + self.right_context.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Left context, core and right context as one contiguous sequence.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.left_context);
        out.extend_from_slice(&self.core);
        out.extend_from_slice(&self.right_context);
        out
    }
}

/// Cut `signal` into frames whose cores start every `hop` samples.
///
/// Samples outside the signal read as zero, so the first frame has a silent
/// left context and the last frame may be partly zero padded.
pub fn segment(signal: &[f64], core_len: usize, left: usize, right: usize, hop: usize) -> Result<Vec<Frame>> {
    if core_len == 0 || hop == 0 {
        return Err(Error::invalid("frame length and hop must be positive"));
    }
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = signal.len();
    let count = if n <= core_len { 1 } else { (n - core_len).div_ceil(hop) + 1 };
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < n {
            signal[i as usize]
        } else {
            0.0
        }
    };
    let frames = (0..count)
        .map(|k| {
            let start = (k * hop) as isize;
            let grab = |from: isize, len: usize| (0..len).map(|j| at(from + j as isize)).collect::<Vec<_>>();
            Frame {
                left_context: grab(start - left as isize, left),
                core: grab(start, core_len),
                right_context: grab(start + core_len as isize, right),
            }
        })
        .collect();
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_examples() {
        let c = AudioBuffer::from_samples(vec![0.5; 37]).unwrap();
        assert_eq!(rms(&c).unwrap(), 0.5);
        let z = AudioBuffer::from_samples(vec![0.0; 10]).unwrap();
        assert_eq!(rms(&z).unwrap(), 0.0);
        // 50 Hz at 20 kHz: 400 samples per period, 10 periods
        let s: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 50.0 * i as f64 / 20_000.0).sin()).collect();
        let s = AudioBuffer::from_samples(s).unwrap();
        assert!((rms(&s).unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
        let e = AudioBuffer::from_samples(vec![]).unwrap();
        assert!(matches!(rms(&e), Err(Error::EmptySignal)));
    }

    #[test]
    fn calibration_examples() {
        let x = AudioBuffer::from_samples(vec![0.3, -1.0, 2.0, 0.1]).unwrap();
        let y = scale_to_spl(&x, 70.0).unwrap();
        let target = 2e-5 * 10f64.powf(3.5);
        assert!((rms(&y).unwrap() - target).abs() / target < 1e-9);
        assert!((target - 6.3246e-2).abs() < 1e-6);

        let z = scale_to_spl(&x, 0.0).unwrap();
        assert!((rms(&z).unwrap() - 2e-5).abs() / 2e-5 < 1e-9);

        let again = scale_to_spl(&y, 70.0).unwrap();
        for (a, b) in again.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-12);
        }

        let silent = AudioBuffer::from_samples(vec![0.0; 8]).unwrap();
        let err = scale_to_spl(&silent, 60.0).unwrap_err();
        assert_eq!(err.to_string(), "silent signal cannot be calibrated");
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(AudioBuffer::new(vec![1.0], 0.0).is_err());
        assert!(matches!(AudioBuffer::from_samples(vec![0.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn segment_window_arithmetic() {
        let sig: Vec<f64> = (0..4096).map(|i| i as f64 + 1.0).collect();
        let frames = segment(&sig, 2048, 256, 256, 2048).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.len() == 2560));
        assert!(frames[0].left_context.iter().all(|&v| v == 0.0));
        assert_eq!(frames[1].left_context[0], 2048.0 - 256.0 + 1.0);
        assert!(frames[1].right_context.iter().all(|&v| v == 0.0));

        let exact = segment(&sig[..2048], 2048, 256, 256, 2048).unwrap();
        assert_eq!(exact.len(), 1);
        assert!(exact[0].left_context.iter().chain(&exact[0].right_context).all(|&v| v == 0.0));

        let long = vec![1.0; 8192 + 10];
        let frames = segment(&long, 8192, 7936, 256, 8192).unwrap();
        assert!(frames.iter().all(|f| f.len() == 16384));

        assert!(segment(&sig, 0, 0, 0, 1).is_err());
        assert!(segment(&sig, 8, 0, 0, 0).is_err());
    }

    #[test]
    fn ramps_are_symmetric() {
        let mut t = tone(1000.0, 60.0, 1000, 20_000.0);
        apply_ramps(&mut t, 0.0025);
        assert_eq!(t.samples()[0], 0.0);
        assert!(t.samples()[999].abs() < 1e-12);
    }
}
