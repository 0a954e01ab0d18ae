//! Spectral artifact metrics, probes for waveform systems, auditory response
//! measures and the real-time-factor bench.

mod bench;
mod physiology;
mod probes;

pub use bench::{rtf_bench, RtfReport, RTF_FRAME_LEN, RTF_N_FRAMES};
pub use physiology::{
    erb_of_response, excitation_pattern, fiber_system, population_nrmse, q_erb, rate_level_curve, synchrony_level,
    synchrony_level_at_depth,
    ExcitationPattern, FiberCurves, CLICK_DURATION_S,
};
pub use probes::{
    aliasing_probe, imaging_probe, sinc_interpolate, step_probe, tone_probe, ImagingResult, StridedStack, System,
    PROBE_SETTLE_S,
};

use crate::error::{Error, Result};
use crate::signal::Spectrum;
use std::fmt::Write as _;

/// Reported when the fractional-harmonic energy is below `1e-8` of the fundamental.
pub const THD_FLOOR_DB: f64 = -160.0;
/// Lowest value [`band_energy`] reports.
pub const ENERGY_FLOOR_DB: f64 = -300.0;
/// A peak must exceed the median-smoothed spectrum by this much.
pub const PEAK_THRESHOLD_DB: f64 = 12.0;
pub const PEAK_MEDIAN_BINS: usize = 9;
/// Peaks further than this below the spectral maximum are numeric noise.
pub const PEAK_RANGE_DB: f64 = 120.0;

fn db_power(p: f64) -> f64 {
    (10.0 * p.log10()).max(ENERGY_FLOOR_DB)
}

fn on_bin(spec: &Spectrum, freq: f64) -> bool {
    let b = freq / spec.resolution;
    (b - b.round()).abs() < 1e-6
}

/// Fractional harmonic distortion in dB.
///
/// Sums the squared magnitudes at `k * f0 / 4` for `k = 5, 6, ...` up to
/// Nyquist and divides by the magnitude at `f0`.
pub fn thd_fractional(spec: &Spectrum, f0: f64) -> Result<f64> {
    if !(f0 > 0.0) || !on_bin(spec, f0) || !on_bin(spec, f0 / 4.0) {
        return Err(Error::invalid(format!(
            "f0 = {f0} Hz and f0/4 must fall on bin centres ({} Hz spacing)",
            spec.resolution
        )));
    }
    if spec.nyquist() < 2.0 * f0 {
        return Err(Error::invalid(format!("spectrum ends at {} Hz, below 2 f0", spec.nyquist())));
    }
    let h1 = spec.magnitude_at(f0);
    let peak = spec.magnitudes.iter().cloned().fold(0.0, f64::max);
    if !(h1 > 0.0) || h1 <= 1e-12 * peak {
        return Err(Error::NoFundamental);
    }
    let mut num = 0.0;
    let mut k = 5;
    while k as f64 * f0 / 4.0 <= spec.nyquist() + 1e-9 {
        let h = spec.magnitude_at(k as f64 * f0 / 4.0);
        num += h * h;
        k += 1;
    }
    let ratio = num.sqrt() / h1;
    Ok(if ratio < 1e-8 { THD_FLOOR_DB } else { 20.0 * ratio.log10() })
}

/// Energy in `[lo, hi)` Hz in dB, floored at [`ENERGY_FLOOR_DB`].
pub fn band_energy(spec: &Spectrum, lo: f64, hi: f64) -> Result<f64> {
    let sum: Option<f64> = spec
        .bin_freqs
        .iter()
        .zip(&spec.magnitudes)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, m)| m * m)
        .fold(None, |acc, p| Some(acc.unwrap_or(0.0) + p));
    match sum {
        Some(p) if lo < hi => Ok(db_power(p)),
        _ => Err(Error::EmptyBand { lo, hi }),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Frequencies of local maxima at least [`PEAK_THRESHOLD_DB`] above a
/// [`PEAK_MEDIAN_BINS`]-bin running median of the dB spectrum. The two lowest bins are skipped.
pub fn find_peaks(spec: &Spectrum) -> Vec<f64> {
    let db: Vec<f64> = spec.magnitudes.iter().map(|m| 20.0 * m.max(1e-300).log10()).collect();
    let n = db.len();
    let top = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let half = PEAK_MEDIAN_BINS / 2;
    (2..n.saturating_sub(1))
        .filter(|&i| db[i] > db[i - 1] && db[i] >= db[i + 1] && db[i] >= top - PEAK_RANGE_DB)
        .filter(|&i| {
            let mut win = db[i.saturating_sub(half)..(i + half + 1).min(n)].to_vec();
            db[i] >= median(&mut win) + PEAK_THRESHOLD_DB
        })
        .map(|i| spec.bin_freqs[i])
        .collect()
}

/// Root-mean-square difference as a percentage of the maximum of `p`.
pub fn nrmse(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p.len() != p_hat.len() {
        return Err(Error::shape(format!("sequences differ in length: {} vs {}", p.len(), p_hat.len())));
    }
    if p.is_empty() {
        return Err(Error::EmptySignal);
    }
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("reference maximum must be positive"));
    }
    let mse = p.iter().zip(p_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    Ok(100.0 * mse.sqrt() / max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StimulusKind {
    Tone,
    Step,
    Aliasing,
    Imaging,
}

impl std::fmt::Display for StimulusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StimulusKind::Tone => "tone",
            StimulusKind::Step => "step",
            StimulusKind::Aliasing => "aliasing",
            StimulusKind::Imaging => "imaging",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub kind: StimulusKind,
    pub freq_hz: f64,
    pub level_db: f64,
}

pub const REPORT_HEADER: &str = "# aliasfree-artifact-report v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactReport {
    pub system: String,
    pub stimulus: Stimulus,
    /// Output channel the spectrum was taken from.
    pub channel: usize,
    pub spectrum: Spectrum,
    pub thd_db: Option<f64>,
    pub band_energies: Vec<(String, f64)>,
    pub peaks_hz: Vec<f64>,
    pub notes: Vec<String>,
}

impl ArtifactReport {
    pub fn new(system: &str, stimulus: Stimulus, channel: usize, spectrum: Spectrum) -> Self {
        Self {
            system: system.to_string(),
            stimulus,
            channel,
            spectrum,
            thd_db: None,
            band_energies: Vec::new(),
            peaks_hz: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn thd_at_floor(&self) -> bool {
        self.thd_db == Some(THD_FLOOR_DB)
    }

    pub fn band(&self, name: &str) -> Option<f64> {
        self.band_energies.iter().find(|(n, _)| n == name).map(|(_, e)| *e)
    }

    /// Versioned `key = value` text; the spectrum is exported separately.
    pub fn to_text(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        let _ = writeln!(s, "system = {}", self.system);
        let _ = writeln!(s, "stimulus = {}", self.stimulus.kind);
        let _ = writeln!(s, "freq_hz = {}", self.stimulus.freq_hz);
        let _ = writeln!(s, "level_db = {}", self.stimulus.level_db);
        let _ = writeln!(s, "channel = {}", self.channel);
        let _ = writeln!(s, "resolution_hz = {}", self.spectrum.resolution);
        match self.thd_db {
            Some(t) => {
                let _ = writeln!(s, "thd_db = {t:.4}");
                let _ = writeln!(s, "thd_floor = {}", self.thd_at_floor());
            }
            None => s.push_str("thd_db = n/a\n"),
        }
        for (name, e) in &self.band_energies {
            let _ = writeln!(s, "band.{name} = {e:.4}");
        }
        let peaks: Vec<String> = self.peaks_hz.iter().map(|f| format!("{f}")).collect();
        let _ = writeln!(s, "peaks_hz = {}", peaks.join(","));
        for n in &self.notes {
            let _ = writeln!(s, "note = {n}");
        }
        s
    }
}
