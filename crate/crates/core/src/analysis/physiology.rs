use super::{nrmse, System};
use crate::arch::{Model, Network, FIBER_TYPES};
use crate::auditory::{anf_forward_at, ihc_forward_at, AuditoryChain, CfGrid, Cochlea, HearingProfile};
use crate::error::{Error, Result};
use crate::nn::FeatureMap;
use crate::signal::{apply_ramps, magnitude_spectrum, spl_to_pa, tone, AudioBuffer, Window};
use ndarray::Array2;
use std::f64::consts::PI;
use std::fmt::Write as _;

pub const CLICK_DURATION_S: f64 = 100e-6;
const CLICK_RESPONSE_LEN: usize = 8192;
const RATE_TONE_S: f64 = 0.05;
const RATE_RAMP_S: f64 = 0.0025;
const RATE_WINDOW_S: (f64, f64) = (0.01, 0.04);
const SYNC_TONE_S: f64 = 0.4;
const SYNC_MOD_HZ: f64 = 100.0;
const SYNC_ANALYSIS_S: f64 = 0.3;

/// Equivalent rectangular bandwidth of an impulse response: power-spectrum area over its peak.
pub fn erb_of_response(samples: &[f64], sample_rate: f64) -> Result<f64> {
    let spec = magnitude_spectrum(&AudioBuffer::new(samples.to_vec(), sample_rate)?, Window::None)?;
    let power: Vec<f64> = spec.magnitudes.iter().map(|m| m * m).collect();
    let peak = power.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::DegenerateSpectrum("response has no energy".into()));
    }
    Ok(power.iter().sum::<f64>() * spec.resolution / peak)
}

/// Tuning sharpness `cf / ERB` of the channel nearest `cf`, from its response to a
/// 100 µs condensation click at `click_level` dB peSPL.
pub fn q_erb(cochlea: &Cochlea, cf: f64, click_level: f64) -> Result<f64> {
    let fs = cochlea.sample_rate();
    let width = ((CLICK_DURATION_S * fs).round() as usize).max(1);
    let amp = spl_to_pa(click_level) * 2f64.sqrt();
    let x: Vec<f64> = (0..CLICK_RESPONSE_LEN).map(|i| if i < width { amp } else { 0.0 }).collect();
    let y = cochlea.forward(&AudioBuffer::new(x, fs)?)?;
    let ch = cochlea.grid().nearest(cf);
    Ok(cochlea.grid().freqs()[ch] / erb_of_response(&y.channel(ch), fs)?)
}

/// Per-CF RMS responses to pure tones.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPattern {
    pub cfs: Vec<f64>,
    /// `(tone Hz, level dB, RMS per CF)`.
    pub rows: Vec<(f64, f64, Vec<f64>)>,
}

impl ExcitationPattern {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tone_hz,level_db,cf_hz,rms\n");
        for (f, l, r) in &self.rows {
            for (cf, v) in self.cfs.iter().zip(r) {
                let _ = writeln!(s, "{f},{l},{cf:.3},{v:.6e}");
            }
        }
        s
    }

    /// Index of the CF with the largest response in row `row`.
    pub fn peak_cf(&self, row: usize) -> f64 {
        let r = &self.rows[row].2;
        let i = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap_or(0);
        self.cfs[i]
    }
}

/// RMS over the settled part of each channel for every tone and level.
pub fn excitation_pattern(system: &System, freqs: &[f64], levels: &[f64], duration: f64) -> Result<ExcitationPattern> {
    let grid = system
        .cfs()
        .ok_or_else(|| Error::Config(format!("system '{}' has no CF grid", system.name)))?
        .clone();
    let n_in = (duration * system.input_rate()).round() as usize;
    if n_in == 0 {
        return Err(Error::invalid(format!("duration {duration} s is too short")));
    }
    let settle = system.settle();
    let f = system.rate_factor();
    let mut rows = Vec::new();
    for &freq in freqs {
        for &level in levels {
            let y = system.output(&tone(freq, level, 2 * settle + n_in, system.input_rate()))?;
            if y.channels() != grid.len() {
                return Err(Error::shape(format!("{} channels for {} CFs", y.channels(), grid.len())));
            }
            let r = (0..y.channels())
                .map(|c| {
                    let row = y.channel(c);
                    let seg = &row[settle * f..(settle + n_in) * f];
                    (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt()
                })
                .collect();
            rows.push((freq, level, r));
        }
    }
    Ok(ExcitationPattern { cfs: grid.freqs().to_vec(), rows })
}

/// Single-CF cochlea, IHC and nerve stages; the output rows are the three fibre types.
pub fn fiber_system(profile: &HearingProfile, cf: f64, sample_rate: f64) -> Result<System<'static>> {
    let cochlea = Cochlea::new(&CfGrid::from_freqs(vec![cf])?, profile, sample_rate);
    Ok(System::new(&format!("{}@{cf}Hz", profile.name), sample_rate, move |x| {
        let bm = cochlea.forward(x)?;
        let rates = anf_forward_at(&ihc_forward_at(&bm, sample_rate), sample_rate);
        let t = bm.time();
        FeatureMap::new(Array2::from_shape_fn((3, t), |(c, i)| rates[c].data()[[0, i]]))
    }))
}

/// One value per level for each fibre type.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberCurves {
    pub levels: Vec<f64>,
    pub values: [Vec<f64>; 3],
}

impl FiberCurves {
    pub fn to_csv(&self) -> String {
        let mut s = format!("level_db,{}\n", FIBER_TYPES.map(|f| f.to_lowercase()).join(","));
        for (i, l) in self.levels.iter().enumerate() {
            let _ = writeln!(s, "{l},{:.6},{:.6},{:.6}", self.values[0][i], self.values[1][i], self.values[2][i]);
        }
        s
    }
}

fn three_rows(y: &FeatureMap) -> Result<()> {
    if y.channels() != 3 {
        return Err(Error::shape(format!("expected 3 fibre rows, got {}", y.channels())));
    }
    Ok(())
}

/// Mean rate 10 to 40 ms into a 50 ms tone with 2.5 ms ramps.
pub fn rate_level_curve(system: &System, freq: f64, levels: &[f64]) -> Result<FiberCurves> {
    let fs = system.input_rate();
    let n = (RATE_TONE_S * fs).round() as usize;
    let (a, b) = ((RATE_WINDOW_S.0 * fs).round() as usize, (RATE_WINDOW_S.1 * fs).round() as usize);
    let f = system.rate_factor();
    let mut values: [Vec<f64>; 3] = Default::default();
    for &level in levels {
        let mut x = tone(freq, level, n, fs);
        apply_ramps(&mut x, RATE_RAMP_S);
        let y = system.output(&x)?;
        three_rows(&y)?;
        for (c, v) in values.iter_mut().enumerate() {
            let row = y.channel(c);
            let seg = &row[a * f..b * f];
            v.push(seg.iter().sum::<f64>() / seg.len() as f64);
        }
    }
    Ok(FiberCurves { levels: levels.to_vec(), values })
}

/// Magnitude of the 100 Hz component of each fibre's rate for a fully modulated 400 ms tone.
pub fn synchrony_level(system: &System, freq: f64, levels: &[f64]) -> Result<FiberCurves> {
    synchrony_level_at_depth(system, freq, 1.0, levels)
}

/// Carrier at `level` dB SPL multiplied by `1 + depth * sin(2 pi 100 t)`. The
/// 100 Hz magnitude is read from the last 300 ms, after the onset has adapted.
pub fn synchrony_level_at_depth(system: &System, freq: f64, depth: f64, levels: &[f64]) -> Result<FiberCurves> {
    let fs = system.input_rate();
    let n = (SYNC_TONE_S * fs).round() as usize;
    let skip = ((SYNC_TONE_S - SYNC_ANALYSIS_S) * system.sample_rate()).round() as usize;
    let mut values: [Vec<f64>; 3] = Default::default();
    for &level in levels {
        let carrier = tone(freq, level, n, fs);
        let am: Vec<f64> = carrier
            .samples()
            .iter()
            .enumerate()
            .map(|(i, c)| c * (1.0 + depth * (2.0 * PI * SYNC_MOD_HZ * i as f64 / fs).sin()))
            .collect();
        let y = system.output(&AudioBuffer::new(am, fs)?)?;
        three_rows(&y)?;
        for (c, v) in values.iter_mut().enumerate() {
            let rate = y.channel(c)[skip..].to_vec();
            let spec = magnitude_spectrum(&AudioBuffer::new(rate, system.sample_rate())?, Window::None)?;
            v.push(spec.magnitude_at(SYNC_MOD_HZ));
        }
    }
    Ok(FiberCurves { levels: levels.to_vec(), values })
}

/// NRMSE in percent between the normal-hearing population response to `clip`
/// and the impaired one, optionally after the clip passes through `processor`.
pub fn population_nrmse(nh: &AuditoryChain, hi: &AuditoryChain, processor: Option<&Model>, clip: &AudioBuffer) -> Result<f64> {
    let reference = nh.run(clip.samples())?.p;
    let x = match processor {
        Some(m) => m.process(&FeatureMap::from_samples(clip.samples())?)?.channel(0),
        None => clip.samples().to_vec(),
    };
    nrmse(&reference, &hi.run(&x)?.p)
}
