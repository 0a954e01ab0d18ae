use super::stages::{trace_anf, trace_ihc, Cochlea};
use super::{CfGrid, HearingProfile};
use crate::arch::{Model, Network};
use crate::error::{Error, Result};
use crate::nn::{Eager, FeatureMap, Tracer};

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Cochlea(Cochlea),
    Ihc,
    /// Must come last; the chain then returns the fibre-weighted rate per CF.
    Anf,
    /// A trained network standing in for a stage. Input is zero-padded by the
    /// model's context so the stage preserves length.
    Emulated { model: Model, in_gain: f64, out_gain: f64 },
}

/// Audio-to-nerve pathway whose stages can be surrogates or trained emulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditoryChain {
    stages: Vec<Stage>,
    weights: [f64; 3],
    sample_rate: f64,
    frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// Weighted fibre rates per CF.
    pub r: FeatureMap,
    /// Sum of `r` over CFs.
    pub p: Vec<f64>,
}

impl AuditoryChain {
    /// Surrogate cochlea, IHC and ANF stages for `profile`; frozen.
    pub fn surrogate(profile: &HearingProfile, grid: &CfGrid, sample_rate: f64) -> Self {
        Self {
            stages: vec![Stage::Cochlea(Cochlea::new(grid, profile, sample_rate)), Stage::Ihc, Stage::Anf],
            weights: profile.fiber_weights,
            sample_rate,
            frozen: true,
        }
    }

    pub fn from_stages(stages: Vec<Stage>, weights: [f64; 3], sample_rate: f64, frozen: bool) -> Result<Self> {
        if let Some(i) = stages.iter().position(|s| matches!(s, Stage::Anf)) {
            if i + 1 != stages.len() {
                return Err(Error::Config("the nerve stage must be the last stage of a chain".into()));
            }
        }
        Ok(Self { stages, weights, sample_rate, frozen })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// CF grid of the first surrogate cochlea stage, if any.
    pub fn grid(&self) -> Option<&CfGrid> {
        self.stages.iter().find_map(|s| match s {
            Stage::Cochlea(c) => Some(c.grid()),
            _ => None,
        })
    }

    pub fn weights(&self) -> [f64; 3] {
        self.weights
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, on: bool) {
        self.frozen = on;
    }

    pub fn has_params(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, Stage::Emulated { model, .. } if model.num_params() > 0))
    }

    /// Fails when the chain carries learnable parameters but is not frozen.
    pub fn require_frozen(&self) -> Result<()> {
        if self.has_params() && !self.frozen {
            return Err(Error::Config("auditory chain parameters must be frozen for closed-loop training".into()));
        }
        Ok(())
    }

    pub fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let was = t.trainable();
        if self.frozen {
            t.set_trainable(false);
        }
        let mut h = x.clone();
        let mut out = None;
        for st in &self.stages {
            match st {
                Stage::Cochlea(c) => h = c.trace(t, &h),
                Stage::Ihc => h = trace_ihc(t, &h, self.sample_rate),
                Stage::Anf => {
                    let [a, b, c] = trace_anf(t, &h, self.sample_rate);
                    let a = t.scale(&a, self.weights[0]);
                    let b = t.scale(&b, self.weights[1]);
                    let c = t.scale(&c, self.weights[2]);
                    let ab = t.add(&a, &b);
                    out = Some(t.add(&ab, &c));
                }
                Stage::Emulated { model, in_gain, out_gain } => {
                    let (l, r) = model.context();
                    let p = t.pad(&h, l, r);
                    let p = t.scale(&p, *in_gain);
                    let y = model.trace(t, &p);
                    h = t.scale(&y, *out_gain);
                }
            }
        }
        t.set_trainable(was);
        out.unwrap_or(h)
    }

    pub fn run(&self, samples: &[f64]) -> Result<ChainOutput> {
        let x = FeatureMap::from_samples(samples)?;
        let r = FeatureMap::from_dyn(self.trace(&mut Eager, &x.data().clone().into_dyn()))?;
        let p = r.data().sum_axis(ndarray::Axis(0)).to_vec();
        Ok(ChainOutput { r, p })
    }
}
