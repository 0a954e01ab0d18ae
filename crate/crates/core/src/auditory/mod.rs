//! Closed-form stand-ins for the cochlea, inner hair cells and auditory nerve,
//! hearing profiles, and the frozen pathways used for closed-loop training.

mod chain;
mod stages;

pub use chain::{AuditoryChain, ChainOutput, Stage};
pub use stages::{
    anf_forward, anf_forward_at, cochlea_forward, ihc_forward, ihc_forward_at, trace_anf, trace_ihc, Cochlea, FiberParams, ANF_FIBERS, BM_GAIN, COCHLEA_EXPONENT,
    COCHLEA_KNEE_PA, IHC_CUTOFF_HZ, IHC_USAT, IHC_VMAX,
};

use crate::error::{Error, Result};
use crate::kv::{parse_list, KvDoc};
use crate::nn::FeatureMap;
use ndarray::{Array1, Axis};

pub const CF_MIN_HZ: f64 = 112.0;
pub const CF_MAX_HZ: f64 = 12_000.0;
/// Channels used for closed-loop training.
pub const TRAIN_CFS: usize = 21;
/// Channels used for excitation-pattern and tuning probes.
pub const PROBE_CFS: usize = 201;

/// Log-spaced centre frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct CfGrid {
    freqs: Vec<f64>,
}

impl CfGrid {
    pub fn log_spaced(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 || lo <= 0.0 || (n > 1 && hi <= lo) {
            return Err(Error::invalid(format!("bad CF grid: {n} channels over [{lo}, {hi}] Hz")));
        }
        let freqs = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
        };
        Ok(Self { freqs })
    }

    /// `n` channels from 112 Hz up to 12 kHz, capped at 0.45 of the sample rate.
    pub fn standard(n: usize, sample_rate: f64) -> Result<Self> {
        Self::log_spaced(n, CF_MIN_HZ, CF_MAX_HZ.min(0.45 * sample_rate))
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.windows(2).any(|w| w[1] <= w[0]) || freqs[0] <= 0.0 {
            return Err(Error::invalid("CF list must be non-empty, positive and strictly increasing"));
        }
        Ok(Self { freqs })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Index of the CF closest to `freq` on a log axis.
    pub fn nearest(&self, freq: f64) -> usize {
        let d = |f: f64| (f.ln() - freq.ln()).abs();
        (0..self.freqs.len())
            .min_by(|&a, &b| d(self.freqs[a]).total_cmp(&d(self.freqs[b])))
            .expect("grid is non-empty")
    }
}

/// Outer-hair-cell gain loss and nerve-fibre weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HearingProfile {
    pub name: String,
    /// `(frequency Hz, loss dB)` breakpoints, interpolated on a log-frequency axis and held beyond the ends.
    pub ohc_gain_db: Vec<(f64, f64)>,
    /// HSR, MSR, LSR weights.
    pub fiber_weights: [f64; 3],
}

pub const KNOWN_PROFILES: [&str; 2] = ["NH", "Slope35-7,0,0"];

pub fn make_profile(name: &str) -> Result<HearingProfile> {
    match name {
        "NH" => Ok(HearingProfile { name: name.into(), ohc_gain_db: Vec::new(), fiber_weights: [13.0, 3.0, 3.0] }),
        "Slope35-7,0,0" => Ok(HearingProfile {
            name: name.into(),
            ohc_gain_db: vec![(1000.0, 0.0), (8000.0, 35.0)],
            fiber_weights: [7.0, 0.0, 0.0],
        }),
        other => Err(Error::UnknownProfile(other.into())),
    }
}

impl HearingProfile {
    pub fn gain_loss_db(&self, freq: f64) -> f64 {
        let pts = &self.ohc_gain_db;
        match pts.len() {
            0 => 0.0,
            1 => pts[0].1,
            _ => {
                if freq <= pts[0].0 {
                    return pts[0].1;
                }
                for w in pts.windows(2) {
                    let ((f0, g0), (f1, g1)) = (w[0], w[1]);
                    if freq <= f1 {
                        let u = (freq / f0).ln() / (f1 / f0).ln();
                        return g0 + u * (g1 - g0);
                    }
                }
                pts[pts.len() - 1].1
            }
        }
    }

    pub fn gain_loss_on(&self, grid: &CfGrid) -> Vec<f64> {
        grid.freqs().iter().map(|&f| self.gain_loss_db(f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ohc_gain_db.iter().any(|&(f, g)| !(f > 0.0) || !(g >= 0.0)) {
            return Err(Error::Config(format!("profile '{}': gain losses must be >= 0 dB at positive frequencies", self.name)));
        }
        if self.ohc_gain_db.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(format!("profile '{}': breakpoint frequencies must increase", self.name)));
        }
        if self.fiber_weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config(format!("profile '{}': fibre weights must be >= 0", self.name)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::default();
        doc.set("", "name", &self.name);
        let pts: Vec<String> = self.ohc_gain_db.iter().map(|(f, g)| format!("{f}:{g}")).collect();
        doc.set("", "ohc_gain_db", pts.join(", "));
        let w: Vec<String> = self.fiber_weights.iter().map(f64::to_string).collect();
        doc.set("", "weights", w.join(","));
        doc.to_text()
    }

    /// Reads `name`, `ohc_gain_db = f:dB, ...` and `weights = H,M,L`.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown("", &["name", "ohc_gain_db", "weights"])?;
        let name = doc.get("", "name").unwrap_or("custom").to_string();
        let mut ohc_gain_db = Vec::new();
        for item in doc.get("", "ohc_gain_db").unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (f, g) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("breakpoint '{item}' should be 'freq:dB'")))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad breakpoint '{item}': {e}")));
            ohc_gain_db.push((num(f)?, num(g)?));
        }
        let w: Vec<f64> = parse_list(doc.get("", "weights").ok_or_else(|| Error::Config("profile needs 'weights = H,M,L'".into()))?)?;
        let fiber_weights: [f64; 3] =
            w.try_into().map_err(|_| Error::Config("weights must list exactly three values".into()))?;
        let p = Self { name, ohc_gain_db, fiber_weights };
        p.validate()?;
        Ok(p)
    }

    /// A built-in name or a path to a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match make_profile(name_or_path) {
            Ok(p) => Ok(p),
            Err(e) => {
                let path = std::path::Path::new(name_or_path);
                if path.is_file() {
                    Self::parse(&std::fs::read_to_string(path)?)
                } else {
                    Err(e)
                }
            }
        }
    }
}

/// Weighted fibre sum per CF and its sum over CFs.
pub fn an_population(hsr: &FeatureMap, msr: &FeatureMap, lsr: &FeatureMap, weights: [f64; 3]) -> Result<(FeatureMap, Vec<f64>)> {
    let dims = hsr.data().dim();
    if msr.data().dim() != dims || lsr.data().dim() != dims {
        return Err(Error::shape(format!(
            "fibre maps differ in shape: {:?}, {:?}, {:?}",
            dims,
            msr.data().dim(),
            lsr.data().dim()
        )));
    }
    let r = hsr.data() * weights[0] + msr.data() * weights[1] + lsr.data() * weights[2];
    let p: Array1<f64> = r.sum_axis(Axis(0));
    Ok((FeatureMap::new(r)?, p.to_vec()))
}
