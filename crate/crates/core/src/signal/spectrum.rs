use super::AudioBuffer;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    None,
    Hann,
}

/// One-sided magnitude spectrum in RMS units.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_freqs: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Hz per bin.
    pub resolution: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn nyquist(&self) -> f64 {
        *self.bin_freqs.last().unwrap_or(&0.0)
    }

    /// Index of the bin nearest to `freq`, clamped to the spectrum.
    pub fn bin_of(&self, freq: f64) -> usize {
        let i = (freq / self.resolution).round().max(0.0) as usize;
        i.min(self.len().saturating_sub(1))
    }

    pub fn magnitude_at(&self, freq: f64) -> f64 {
        self.magnitudes[self.bin_of(freq)]
    }

    /// Sum of squared magnitudes, which equals the mean-square of an unwindowed signal.
    pub fn power(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum()
    }

    pub fn scaled(&self, c: f64) -> Spectrum {
        Spectrum {
            magnitudes: self.magnitudes.iter().map(|m| m * c).collect(),
            ..self.clone()
        }
    }

    /// `freq_hz,magnitude` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,magnitude\n");
        for (f, m) in self.bin_freqs.iter().zip(&self.magnitudes) {
            let _ = writeln!(s, "{f},{m:e}");
        }
        s
    }

    /// `freq_hz,magnitude_db` rows with a header line.
    pub fn to_csv_db(&self) -> String {
        let mut s = String::from("freq_hz,magnitude_db\n");
        for (f, m) in self.bin_freqs.iter().zip(&self.magnitudes) {
            let db = 20.0 * m.max(1e-300).log10();
            let _ = writeln!(s, "{f},{db:.6}");
        }
        s
    }
}

/// Scaled so a bin-centred sine reads its RMS amplitude.
pub fn magnitude_spectrum(buffer: &AudioBuffer, window: Window) -> Result<Spectrum> {
    spectrum_of(buffer.samples(), buffer.sample_rate(), window)
}

pub(crate) fn spectrum_of(samples: &[f64], sample_rate: f64, window: Window) -> Result<Spectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("spectrum needs at least two samples"));
    }
    let weights: Vec<f64> = match window {
        Window::None => vec![1.0; n],
        Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
    };
    let gain: f64 = weights.iter().sum();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&weights)
        .map(|(s, w)| Complex::new(s * w, 0.0))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut buf);

    let bins = n / 2 + 1;
    let resolution = sample_rate / n as f64;
    let magnitudes = (0..bins)
        .map(|k| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            let scale = if edge { 1.0 } else { 2f64.sqrt() };
            buf[k].norm() * scale / gain
        })
        .collect();
    let bin_freqs = (0..bins).map(|k| k as f64 * resolution).collect();
    Ok(Spectrum { bin_freqs, magnitudes, resolution })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::from_samples(v).unwrap()
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let s = magnitude_spectrum(&buf(x), Window::None).unwrap();
        let interior = &s.magnitudes[1..s.len() - 1];
        assert!(interior.iter().all(|m| (m - interior[0]).abs() < 1e-15));
        assert!((s.magnitudes[0] * 2f64.sqrt() - interior[0]).abs() < 1e-15);
    }

    #[test]
    fn dc_lands_in_bin_zero() {
        let s = magnitude_spectrum(&buf(vec![0.25; 100]), Window::None).unwrap();
        assert!((s.magnitudes[0] - 0.25).abs() < 1e-15);
        assert!(s.magnitudes[1..].iter().all(|m| *m < 1e-15));
    }

    #[test]
    fn unit_sine_reads_rms() {
        let x: Vec<f64> = (0..20_000).map(|i| (2.0 * PI * 1000.0 * i as f64 / 20_000.0).sin()).collect();
        let s = magnitude_spectrum(&buf(x), Window::None).unwrap();
        let k = s.bin_of(1000.0);
        assert_eq!(s.bin_freqs[k], 1000.0);
        assert!((s.magnitudes[k] - 0.5f64.sqrt()).abs() < 1e-9);
        let (imax, _) = s
            .magnitudes
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc });
        assert_eq!(imax, k);
    }

    #[test]
    fn hann_keeps_sine_amplitude() {
        let x: Vec<f64> = (0..4000).map(|i| 2.0 * (2.0 * PI * 500.0 * i as f64 / 20_000.0).sin()).collect();
        let s = magnitude_spectrum(&buf(x), Window::Hann).unwrap();
        assert!((s.magnitude_at(500.0) - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = magnitude_spectrum(&buf(vec![1.0, 0.0, 0.0, 0.0]), Window::None).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("freq_hz,magnitude\n"));
        assert_eq!(csv.lines().count(), 1 + 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn parseval(x in proptest::collection::vec(-10.0f64..10.0, 2..2048)) {
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let n = x.len() as f64;
            let s = magnitude_spectrum(&buf(x), Window::None).unwrap();
            let spec_energy = s.power() * n;
            prop_assert!((energy - spec_energy).abs() <= 1e-6 * energy.max(1e-300));
        }
    }

    #[test]
    fn parseval_at_max_length() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1 << 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let s = magnitude_spectrum(&buf(x), Window::None).unwrap();
        assert!((energy - s.power() * 65536.0).abs() / energy < 1e-6);
    }
}
