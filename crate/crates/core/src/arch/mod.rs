//! Model compositions: memory-block networks, autoencoder baselines and the
//! three-branch nerve model.

pub mod anf;
pub mod autoencoder;
pub mod checkpoint;
pub mod dconnear;
pub mod spec;

pub use anf::{build_anf_threebranch, AnfThreeBranch, FIBER_TYPES};
pub use autoencoder::{build_autoencoder_baseline, Autoencoder, AutoencoderSpec, UpsamplingMode};
pub use checkpoint::{WeightFile, WEIGHTS_MAGIC};
pub use dconnear::{build_dconnear, memory_block_forward, DConnear, MemoryBlock};
pub use spec::{receptive_field_closed_form, ModelSpec};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::{Eager, FeatureMap, ParamStore, Tracer};
use std::path::Path;

/// A differentiable waveform or feature-map model.
pub trait Network {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;

    /// Samples trimmed from the output as `(left, right)`.
    fn context(&self) -> (usize, usize) {
        (0, 0)
    }

    /// Input lengths must be a multiple of this.
    fn length_multiple(&self) -> usize {
        1
    }

    fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V;

    fn check_input(&self, channels: usize, time: usize) -> Result<()> {
        if channels != self.in_channels() {
            return Err(Error::shape(format!("model expects {} input channels, got {channels}", self.in_channels())));
        }
        let (l, r) = self.context();
        if time <= l + r {
            return Err(Error::shape(format!("input of {time} samples is not longer than the {} context samples", l + r)));
        }
        let m = self.length_multiple();
        if !time.is_multiple_of(m) {
            return Err(Error::shape(format!("input length {time} is not a multiple of {m}")));
        }
        Ok(())
    }

    fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(x.channels(), x.time())?;
        let y = self.trace(&mut Eager, &x.data().clone().into_dyn());
        FeatureMap::from_dyn(y)
    }

    /// Length-preserving inference on a whole signal: zero context on both
    /// sides, right-padded up to the length multiple, output cut back to the input length.
    fn process(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let (l, r) = self.context();
        let time = x.time();
        let m = self.length_multiple();
        let extra = (l + time + r).next_multiple_of(m) - (l + time + r);
        let mut padded = ndarray::Array2::zeros((x.channels(), l + time + r + extra));
        padded.slice_mut(ndarray::s![.., l..l + time]).assign(x.data());
        let y = self.forward(&FeatureMap::new(padded)?)?;
        FeatureMap::new(y.data().slice(ndarray::s![.., ..time]).to_owned())
    }

    fn num_params(&self) -> usize {
        self.params().num_scalars()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    DConnear(DConnear),
    Autoencoder(Autoencoder),
    AnfThreeBranch(AnfThreeBranch),
}

macro_rules! each {
    ($self:expr, $m:ident => $e:expr) => {
        match $self {
            Model::DConnear($m) => $e,
            Model::Autoencoder($m) => $e,
            Model::AnfThreeBranch($m) => $e,
        }
    };
}

impl Network for Model {
    fn params(&self) -> &ParamStore {
        each!(self, m => m.params())
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        each!(self, m => m.params_mut())
    }

    fn in_channels(&self) -> usize {
        each!(self, m => m.in_channels())
    }

    fn out_channels(&self) -> usize {
        each!(self, m => m.out_channels())
    }

    fn context(&self) -> (usize, usize) {
        each!(self, m => m.context())
    }

    fn length_multiple(&self) -> usize {
        each!(self, m => m.length_multiple())
    }

    fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        each!(self, m => m.trace(t, x))
    }
}

impl Model {
    /// Upper bound on the input span that can influence one output sample.
    pub fn receptive_span(&self) -> usize {
        match self {
            Model::DConnear(m) => receptive_field_closed_form(m.spec()),
            Model::AnfThreeBranch(m) => {
                receptive_field_closed_form(m.shared_spec()) + receptive_field_closed_form(m.branch_spec()) - 1
            }
            Model::Autoencoder(m) => {
                let s = m.spec();
                let pre = if s.prefilter { crate::signal::DEFAULT_LOWPASS_TAPS - 1 } else { 0 };
                1 + 2 * (0..s.depth).map(|i| (s.kernel - 1 + pre) << i).sum::<usize>()
            }
        }
    }
}

/// Architecture choice plus its hyperparameters, as stored in config and weight files.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    DConnear(ModelSpec),
    Autoencoder(AutoencoderSpec),
    AnfThreeBranch(ModelSpec),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::DConnear(_) => "dconnear",
            ModelConfig::Autoencoder(_) => "autoencoder",
            ModelConfig::AnfThreeBranch(_) => "anf",
        }
    }

    pub fn build(&self, seed: u64) -> Result<Model> {
        Ok(match self {
            ModelConfig::DConnear(s) => Model::DConnear(build_dconnear(s, seed)?),
            ModelConfig::Autoencoder(s) => Model::Autoencoder(build_autoencoder_baseline(s, seed)?),
            ModelConfig::AnfThreeBranch(s) => Model::AnfThreeBranch(AnfThreeBranch::from_spec(s, seed)?),
        })
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "kind", self.kind());
        match self {
            ModelConfig::DConnear(s) | ModelConfig::AnfThreeBranch(s) => s.write_kv(doc, section),
            ModelConfig::Autoencoder(s) => s.write_kv(doc, section),
        }
    }

    /// `extra` names further keys tolerated in `section`.
    pub fn read_kv(doc: &KvDoc, section: &str, extra: &[&str]) -> Result<Self> {
        let mut allowed = vec!["kind"];
        allowed.extend_from_slice(extra);
        let kind: String = doc.parsed_or(section, "kind", "dconnear".to_string())?;
        match kind.as_str() {
            "dconnear" => Ok(ModelConfig::DConnear(ModelSpec::read_kv(doc, section, &allowed)?)),
            "anf" => Ok(ModelConfig::AnfThreeBranch(ModelSpec::read_kv(doc, section, &allowed)?)),
            "autoencoder" => Ok(ModelConfig::Autoencoder(AutoencoderSpec::read_kv(doc, section, &allowed)?)),
            other => Err(Error::Config(format!("unknown model kind '{other}' (expected dconnear, anf or autoencoder)"))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut doc = KvDoc::default();
        self.write_kv(&mut doc, "");
        doc.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_kv(&KvDoc::parse(text)?, "", &[])
    }
}

/// Writes parameters with the model config in the header so the file is self-describing.
pub fn save_model(path: &Path, config: &ModelConfig, model: &Model) -> Result<()> {
    let mut doc = KvDoc::default();
    config.write_kv(&mut doc, "");
    let meta: Vec<(String, String)> = doc.entries().iter().map(|e| (format!("model.{}", e.key), e.value.clone())).collect();
    WeightFile::from_params(model.params(), &meta).save(path)
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, Model)> {
    let wf = WeightFile::load(path)?;
    let mut doc = KvDoc::default();
    for (k, v) in &wf.meta {
        if let Some(key) = k.strip_prefix("model.") {
            doc.set("", key, v);
        }
    }
    if doc.entries().is_empty() {
        return Err(Error::Config(format!("{} carries no model description", path.display())));
    }
    let config = ModelConfig::read_kv(&doc, "", &[])?;
    let mut model = config.build(0)?;
    wf.apply_to(model.params_mut())?;
    Ok((config, model))
}

/// Measures the input span reaching one output sample by perturbing a single sample.
///
/// Weights are replaced by positive constants and biases by zero, so every
/// reachable path contributes a strictly positive amount. The support is read
/// on the skip sum before the pointwise head.
pub fn receptive_field_empirical(model: &Model) -> Result<usize> {
    let mut m = model.clone();
    let n_blocks = m.params().ids().filter(|&id| m.params().name(id).ends_with(".skip")).count().max(1);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        let name = m.params().name(id).to_string();
        let shape = m.params().value(id).shape().to_vec();
        let c = if name.ends_with(".skip") {
            1.0 / n_blocks as f64
        } else if name.ends_with(".B") || name.ends_with(".U") {
            0.0
        } else {
            1.0 / *shape.last().unwrap_or(&1) as f64
        };
        m.params_mut().value_mut(id).fill(c);
    }
    let mut t = 64;
    loop {
        let centre = t / 2;
        let mut x = ndarray::Array2::zeros((m.in_channels(), t));
        x.column_mut(centre).fill(1.0);
        let x = x.into_dyn();
        let y = match &m {
            Model::DConnear(d) => d.trace_trunk(&mut Eager, &x),
            Model::AnfThreeBranch(a) => a.trace_path(&mut Eager, &x, 0),
            Model::Autoencoder(_) => {
                return Err(Error::invalid("receptive field is defined for memory-block models"));
            }
        };
        let y = y.into_dimensionality::<ndarray::Ix2>().expect("2-D");
        let hit: Vec<usize> = (0..t).filter(|&j| y.column(j).iter().any(|&v| v != 0.0)).collect();
        let (lo, hi) = (hit[0], *hit.last().expect("centre is always reached"));
        if lo > 0 && hi < t - 1 {
            return Ok(hi - lo + 1);
        }
        t *= 2;
    }
}
