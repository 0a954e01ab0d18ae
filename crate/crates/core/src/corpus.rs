//! Seeded synthetic corpus: tone complexes, amplitude-modulated tones and
//! low-passed noise, each calibrated to a fixed level and paired with a noisy copy.

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::signal::{apply_ramps, design_lowpass, fir_filter, rms, scale_to_spl, AudioBuffer, DEFAULT_SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipKind {
    ToneComplex,
    AmTone,
    Noise,
}

impl ClipKind {
    pub const ALL: [ClipKind; 3] = [ClipKind::ToneComplex, ClipKind::AmTone, ClipKind::Noise];
}

impl fmt::Display for ClipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipKind::ToneComplex => "tone_complex",
            ClipKind::AmTone => "am_tone",
            ClipKind::Noise => "noise",
        })
    }
}

impl FromStr for ClipKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClipKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown clip kind '{s}' (expected tone_complex, am_tone or noise)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub count: usize,
    /// Seconds per clip.
    pub duration: f64,
    pub sample_rate: f64,
    pub level_db: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    /// Frequency range for tonal components, Hz.
    pub f_lo: f64,
    pub f_hi: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 40,
            duration: 0.2,
            sample_rate: DEFAULT_SAMPLE_RATE,
            level_db: 70.0,
            snr_min: -5.0,
            snr_max: 5.0,
            f_lo: 500.0,
            f_hi: 4000.0,
            seed: 0,
        }
    }
}

const CORPUS_KEYS: [&str; 9] = ["count", "duration", "sample_rate", "level_db", "snr_min", "snr_max", "f_lo", "f_hi", "seed"];

impl CorpusConfig {
    pub fn samples_per_clip(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.sample_rate > 0.0) || self.samples_per_clip() < 16 {
            return fail(format!("clips of {} s at {} Hz are too short", self.duration, self.sample_rate));
        }
        if !(self.snr_min <= self.snr_max) {
            return fail(format!("snr_min {} exceeds snr_max {}", self.snr_min, self.snr_max));
        }
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi && self.f_hi < self.sample_rate / 2.0) {
            return fail(format!("tone range [{}, {}] Hz must lie inside (0, {})", self.f_lo, self.f_hi, self.sample_rate / 2.0));
        }
        if !self.level_db.is_finite() {
            return fail("level_db must be finite".into());
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "count", self.count);
        doc.set(section, "duration", self.duration);
        doc.set(section, "sample_rate", self.sample_rate);
        doc.set(section, "level_db", self.level_db);
        doc.set(section, "snr_min", self.snr_min);
        doc.set(section, "snr_max", self.snr_max);
        doc.set(section, "f_lo", self.f_lo);
        doc.set(section, "f_hi", self.f_hi);
        doc.set(section, "seed", self.seed);
    }

    /// Read from `section`; `extra` lists other keys tolerated there.
    pub fn read_kv(doc: &KvDoc, section: &str, extra: &[&str]) -> Result<Self> {
        let allowed: Vec<&str> = CORPUS_KEYS.iter().chain(extra).copied().collect();
        doc.reject_unknown(section, &allowed)?;
        let d = Self::default();
        let cfg = Self {
            count: doc.parsed_or(section, "count", d.count)?,
            duration: doc.parsed_or(section, "duration", d.duration)?,
            sample_rate: doc.parsed_or(section, "sample_rate", d.sample_rate)?,
            level_db: doc.parsed_or(section, "level_db", d.level_db)?,
            snr_min: doc.parsed_or(section, "snr_min", d.snr_min)?,
            snr_max: doc.parsed_or(section, "snr_max", d.snr_max)?,
            f_lo: doc.parsed_or(section, "f_lo", d.f_lo)?,
            f_hi: doc.parsed_or(section, "f_hi", d.f_hi)?,
            seed: doc.parsed_or(section, "seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub index: usize,
    pub kind: ClipKind,
    /// Lowest tonal component, or the noise cutoff for noise clips.
    pub freq_hz: f64,
    pub clean: AudioBuffer,
    /// `clean` plus white noise at `snr_db`.
    pub noisy: AudioBuffer,
    pub snr_db: f64,
}

impl CorpusItem {
    pub fn stem(&self) -> String {
        format!("clip{:05}", self.index)
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Clip `index` of the corpus; independent of every other clip.
pub fn generate_clip(cfg: &CorpusConfig, index: usize) -> Result<CorpusItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = cfg.samples_per_clip();
    let fs = cfg.sample_rate;
    let kind = ClipKind::ALL[index % ClipKind::ALL.len()];
    let time = |i: usize| i as f64 / fs;
    let (raw, freq_hz) = match kind {
        ClipKind::ToneComplex => {
            let parts = rng.gen_range(2..=4);
            let comps: Vec<(f64, f64, f64)> = (0..parts)
                .map(|_| (log_uniform(&mut rng, cfg.f_lo, cfg.f_hi), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.3..1.0)))
                .collect();
            let lowest = comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let x = (0..n).map(|i| comps.iter().map(|&(f, ph, a)| a * (2.0 * PI * f * time(i) + ph).sin()).sum()).collect();
            (x, lowest)
        }
        ClipKind::AmTone => {
            let fc = log_uniform(&mut rng, cfg.f_lo, cfg.f_hi);
            let fm = log_uniform(&mut rng, 4.0, 100.0);
            let depth = rng.gen_range(0.5..1.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let x = (0..n)
                .map(|i| (1.0 + depth * (2.0 * PI * fm * time(i)).sin()) * (2.0 * PI * fc * time(i) + ph).sin())
                .collect();
            (x, fc)
        }
        ClipKind::Noise => {
            let cutoff = log_uniform(&mut rng, cfg.f_lo, cfg.f_hi);
            let taps = design_lowpass(cutoff / (fs / 2.0), 63)?;
            (fir_filter(&white(&mut rng, n), &taps), cutoff)
        }
    };
    let mut shaped = AudioBuffer::new(raw, fs)?;
    apply_ramps(&mut shaped, 0.005);
    let clean = scale_to_spl(&shaped, cfg.level_db)?;
    let snr_db = rng.gen_range(cfg.snr_min..=cfg.snr_max);
    let noise = AudioBuffer::new(white(&mut rng, n), fs)?;
    let gain = rms(&clean)? / rms(&noise)? * 10f64.powf(-snr_db / 20.0);
    let noisy: Vec<f64> = clean.samples().iter().zip(noise.samples()).map(|(c, w)| c + gain * w).collect();
    Ok(CorpusItem { index, kind, freq_hz, clean, noisy: AudioBuffer::new(noisy, fs)?, snr_db })
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| generate_clip(cfg, i)).collect()
}

/// `file,noisy_file,kind,freq_hz,level_db,snr_db`, one row per item.
pub fn manifest_csv(items: &[CorpusItem], level_db: f64) -> String {
    let mut s = String::from("file,noisy_file,kind,freq_hz,level_db,snr_db\n");
    for it in items {
        let stem = it.stem();
        let _ = writeln!(s, "{stem}.wav,{stem}_noisy.wav,{},{:.3},{level_db},{:.4}", it.kind, it.freq_hz, it.snr_db);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{magnitude_spectrum, Window};

    #[test]
    fn clips_are_calibrated_and_deterministic() {
        let cfg = CorpusConfig { count: 9, seed: 4, ..CorpusConfig::default() };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(manifest_csv(&a, cfg.level_db), manifest_csv(&b, cfg.level_db));
        for it in &a {
            assert_eq!(it.clean.len(), 4000);
            assert!((-5.0..=5.0).contains(&it.snr_db));
            let level = 20.0 * (rms(&it.clean).unwrap() / 2e-5).log10();
            assert!((level - 70.0).abs() < 1e-9, "{level}");
            let noise: Vec<f64> = it.noisy.samples().iter().zip(it.clean.samples()).map(|(n, c)| n - c).collect();
            let snr = 20.0 * (rms(&it.clean).unwrap() / rms(&AudioBuffer::new(noise, 2e4).unwrap()).unwrap()).log10();
            assert!((snr - it.snr_db).abs() < 1e-9);
        }
        let other = generate_corpus(&CorpusConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a[0].clean, other[0].clean);
    }

    #[test]
    fn tonal_energy_stays_in_band() {
        let cfg = CorpusConfig { count: 2, duration: 0.4, ..CorpusConfig::default() };
        let it = generate_clip(&cfg, 0).unwrap();
        assert_eq!(it.kind, ClipKind::ToneComplex);
        let sp = magnitude_spectrum(&it.clean, Window::Hann).unwrap();
        let total: f64 = sp.magnitudes.iter().map(|m| m * m).sum();
        let inband: f64 = sp
            .bin_freqs
            .iter()
            .zip(&sp.magnitudes)
            .filter(|(f, _)| (400.0..4500.0).contains(*f))
            .map(|(_, m)| m * m)
            .sum();
        assert!(inband / total > 0.99);
    }

    #[test]
    fn empty_corpus_and_bad_config() {
        let cfg = CorpusConfig { count: 0, ..CorpusConfig::default() };
        assert!(generate_corpus(&cfg).unwrap().is_empty());
        assert_eq!(manifest_csv(&[], 70.0).lines().count(), 1);
        assert!(generate_corpus(&CorpusConfig { snr_min: 6.0, ..CorpusConfig::default() }).is_err());
        assert!("chirp".parse::<ClipKind>().is_err());
        assert_eq!("am_tone".parse::<ClipKind>().unwrap(), ClipKind::AmTone);
    }
}
