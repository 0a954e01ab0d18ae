use super::Network;
use crate::error::{Error, Result};
use crate::kv::{parse_list, KvDoc};
use crate::nn::{Activation, Op, ParamId, ParamStore, Tracer};
use crate::signal::{design_lowpass, DEFAULT_LOWPASS_TAPS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpsamplingMode {
    #[default]
    Transposed,
    Subpixel,
    Nearest,
}

impl fmt::Display for UpsamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsamplingMode::Transposed => "transposed",
            UpsamplingMode::Subpixel => "subpixel",
            UpsamplingMode::Nearest => "nearest",
        })
    }
}

impl FromStr for UpsamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transposed" => Ok(UpsamplingMode::Transposed),
            "subpixel" => Ok(UpsamplingMode::Subpixel),
            "nearest" => Ok(UpsamplingMode::Nearest),
            other => Err(Error::Config(format!(
                "unknown upsampling mode '{other}' (expected transposed, subpixel or nearest)"
            ))),
        }
    }
}

/// Strided-conv encoder with a mirrored upsampling decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderSpec {
    /// Number of stride-2 stages in each half.
    pub depth: usize,
    /// Channel count after each encoder stage.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub mode: UpsamplingMode,
    /// Low-pass each encoder input at half its Nyquist before decimation.
    pub prefilter: bool,
    pub act: Activation,
    pub c_in: usize,
    pub c_out: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            channels: vec![16, 32, 64, 128],
            kernel: 16,
            mode: UpsamplingMode::Transposed,
            prefilter: false,
            act: Activation::Tanh,
            c_in: 1,
            c_out: 1,
        }
    }
}

const KEYS: &[&str] = &["depth", "channels", "kernel", "mode", "prefilter", "act", "C_in", "C_out"];

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.depth == 0 {
            bad.push("depth must be >= 1".to_string());
        }
        if self.channels.len() < self.depth {
            bad.push(format!("need {} channel counts, got {}", self.depth, self.channels.len()));
        }
        if self.channels.contains(&0) || self.c_in == 0 || self.c_out == 0 {
            bad.push("channel counts must be >= 1".to_string());
        }
        if self.kernel < 2 {
            bad.push("kernel must be >= 2".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(bad.join("; ")))
        }
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "depth", self.depth);
        let ch: Vec<String> = self.channels.iter().map(usize::to_string).collect();
        doc.set(section, "channels", ch.join(","));
        doc.set(section, "kernel", self.kernel);
        doc.set(section, "mode", self.mode);
        doc.set(section, "prefilter", self.prefilter);
        doc.set(section, "act", self.act);
        doc.set(section, "C_in", self.c_in);
        doc.set(section, "C_out", self.c_out);
    }

    pub fn read_kv(doc: &KvDoc, section: &str, extra: &[&str]) -> Result<Self> {
        let allowed: Vec<&str> = KEYS.iter().chain(extra).copied().collect();
        doc.reject_unknown(section, &allowed)?;
        let d = Self::default();
        let spec = Self {
            depth: doc.parsed_or(section, "depth", d.depth)?,
            channels: match doc.get(section, "channels") {
                Some(v) => parse_list(v)?,
                None => d.channels,
            },
            kernel: doc.parsed_or(section, "kernel", d.kernel)?,
            mode: doc.parsed_or(section, "mode", d.mode)?,
            prefilter: doc.parsed_or(section, "prefilter", d.prefilter)?,
            act: doc.parsed_or(section, "act", d.act)?,
            c_in: doc.parsed_or(section, "C_in", d.c_in)?,
            c_out: doc.parsed_or(section, "C_out", d.c_out)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    params: ParamStore,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    lowpass: Option<Rc<Vec<f64>>>,
}

pub fn build_autoencoder_baseline(spec: &AutoencoderSpec, seed: u64) -> Result<Autoencoder> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let k = spec.kernel;
    let widths: Vec<usize> = std::iter::once(spec.c_in).chain(spec.channels[..spec.depth].iter().copied()).collect();
    let mut encoder = Vec::new();
    for i in 0..spec.depth {
        let (ci, co) = (widths[i], widths[i + 1]);
        let w = p.add_uniform(format!("enc{i}.W"), &[co, ci, k], ci * k, &mut rng);
        let b = p.add_uniform(format!("enc{i}.B"), &[co], ci * k, &mut rng);
        encoder.push(Stage { w, b });
    }
    let mut decoder = Vec::new();
    for i in (0..spec.depth).rev() {
        let (ci, co) = (widths[i + 1], if i == 0 { spec.c_out } else { widths[i] });
        let name = format!("dec{i}");
        let (w, fan_b) = match spec.mode {
            UpsamplingMode::Transposed => (p.add_uniform(format!("{name}.W"), &[ci, co, k], ci * k / 2, &mut rng), ci * k / 2),
            UpsamplingMode::Subpixel => (p.add_uniform(format!("{name}.W"), &[co * 2, ci, k], ci * k, &mut rng), ci * k),
            UpsamplingMode::Nearest => (p.add_uniform(format!("{name}.W"), &[co, ci, k], ci * k, &mut rng), ci * k),
        };
        let b = p.add_uniform(format!("{name}.B"), &[co], fan_b, &mut rng);
        decoder.push(Stage { w, b });
    }
    let lowpass = spec.prefilter.then(|| design_lowpass(0.5, DEFAULT_LOWPASS_TAPS).map(Rc::new)).transpose()?;
    Ok(Autoencoder { spec: spec.clone(), params: p, encoder, decoder, lowpass })
}

impl Autoencoder {
    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    /// Bottleneck features.
    pub fn trace_encoder<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let mut h = x.clone();
        for (i, st) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = t.map(&h, self.spec.act);
            }
            if let Some(lp) = &self.lowpass {
                h = t.apply(Op::Fir(lp.clone()), &[&h]);
            }
            let w = t.param(&self.params, st.w);
            let b = t.param(&self.params, st.b);
            h = t.conv(&h, &w, Some(&b), 2);
        }
        h
    }

    pub fn trace_decoder<T: Tracer>(&self, t: &mut T, z: &T::V) -> T::V {
        let mut h = z.clone();
        for (i, st) in self.decoder.iter().enumerate() {
            if i > 0 {
                h = t.map(&h, self.spec.act);
            }
            let w = t.param(&self.params, st.w);
            let b = t.param(&self.params, st.b);
            h = match self.spec.mode {
                UpsamplingMode::Transposed => t.conv_transpose(&h, &w, Some(&b), 2),
                UpsamplingMode::Subpixel => {
                    let y = t.conv(&h, &w, None, 1);
                    let y = t.apply(Op::PixelShuffle(2), &[&y]);
                    add_bias(t, &y, &b)
                }
                UpsamplingMode::Nearest => {
                    let y = t.apply(Op::Upsample(2), &[&h]);
                    t.conv(&y, &w, Some(&b), 1)
                }
            };
        }
        h
    }
}

/// Per-channel bias via an identity pointwise map.
fn add_bias<T: Tracer>(t: &mut T, y: &T::V, b: &T::V) -> T::V {
    let c = t.value(y).shape()[0];
    let eye = t.constant(ndarray::Array2::<f64>::eye(c).into_dyn());
    t.pointwise(y, &eye, Some(b))
}

impl Network for Autoencoder {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.spec.c_in
    }

    fn out_channels(&self) -> usize {
        self.spec.c_out
    }

    fn length_multiple(&self) -> usize {
        1 << self.spec.depth
    }

    fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let z = self.trace_encoder(t, x);
        self.trace_decoder(t, &z)
    }
}
