//! Layer kernels, a small reverse-mode tape and a finite-difference checker.

mod activation;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;

pub use activation::{Activation, MapFn};
pub use gradcheck::{gradient_check, GradCheck};
pub use graph::{Eager, Gradients, Graph, NodeId, Op, Tracer};
pub use kernels::Direction;
pub use params::{ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::signal::fir_filter;
use ndarray::{Array1, Array2, Array3, ArrayD, Ix2};

/// Channels-by-time activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array2<f64>,
}

impl FeatureMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (c, t) = data.dim();
        if c == 0 || t == 0 {
            return Err(Error::shape(format!("feature map must be non-empty, got {c}x{t}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { data })
    }

    /// Single-channel map from samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((1, samples.len()), samples.to_vec()).expect("row shape"))
    }

    pub fn from_dyn(a: ArrayD<f64>) -> Result<Self> {
        let d = a.into_dimensionality::<Ix2>().map_err(|e| Error::shape(e.to_string()))?;
        Self::new(d)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn time(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.row(c).to_vec()
    }
}

fn check_channels(x: &FeatureMap, expected: usize, what: &str) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::shape(format!("{what} expects {expected} input channels, got {}", x.channels())));
    }
    Ok(())
}

/// `out[c, t] = sum_k W[c, k] x[k, t] + B[c]`.
pub fn pointwise_conv(x: &FeatureMap, w: &Array2<f64>, b: &Array1<f64>) -> Result<FeatureMap> {
    check_channels(x, w.dim().1, "pointwise conv")?;
    if b.len() != w.dim().0 {
        return Err(Error::shape(format!("bias length {} does not match {} outputs", b.len(), w.dim().0)));
    }
    FeatureMap::new(kernels::pointwise(x.data.view(), w.view(), Some(b.view())))
}

/// Per-channel dilated FIR over the past (`History`, taps `0..K`) or future (`Future`, taps `1..=K`).
pub fn dilated_depthwise_conv(x: &FeatureMap, coeffs: &Array2<f64>, dilation: usize, direction: Direction) -> Result<FeatureMap> {
    check_channels(x, coeffs.dim().0, "depthwise conv")?;
    if dilation == 0 || coeffs.dim().1 == 0 {
        return Err(Error::invalid("dilation and kernel size must be at least 1"));
    }
    FeatureMap::new(kernels::depthwise(x.data.view(), coeffs.view(), dilation, direction))
}

/// Strided "same" convolution, optionally preceded by a per-channel FIR prefilter.
pub fn strided_conv(
    x: &FeatureMap,
    w: &Array3<f64>,
    b: Option<&Array1<f64>>,
    stride: usize,
    prefilter: Option<&[f64]>,
) -> Result<FeatureMap> {
    check_channels(x, w.dim().1, "strided conv")?;
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let filtered;
    let input = match prefilter {
        Some(taps) => {
            let rows: Vec<f64> = (0..x.channels()).flat_map(|c| fir_filter(&x.channel(c), taps)).collect();
            filtered = Array2::from_shape_vec(x.data.dim(), rows).expect("same shape");
            filtered.view()
        }
        None => x.data.view(),
    };
    let k = w.dim().2;
    let t_out = x.time().div_ceil(stride);
    FeatureMap::new(kernels::conv(input, w.view(), b.map(|b| b.view()), stride, kernels::same_pad(k), t_out))
}

/// Fractionally strided convolution; `w` is `(c_in, c_out, k)` and the output is `time * stride` long.
pub fn transposed_conv(x: &FeatureMap, w: &Array3<f64>, b: Option<&Array1<f64>>, stride: usize) -> Result<FeatureMap> {
    check_channels(x, w.dim().0, "transposed conv")?;
    if stride == 0 || w.dim().2 < stride {
        return Err(Error::invalid(format!("transposed conv needs kernel >= stride >= 1, got k={} stride={stride}", w.dim().2)));
    }
    FeatureMap::new(kernels::conv_transpose(x.data.view(), w.view(), b.map(|b| b.view()), stride))
}

/// Stride-1 convolution to `c * upscale` channels followed by a pixel shuffle.
pub fn subpixel_conv(x: &FeatureMap, w: &Array3<f64>, b: Option<&Array1<f64>>, upscale: usize) -> Result<FeatureMap> {
    check_channels(x, w.dim().1, "subpixel conv")?;
    if upscale == 0 || !w.dim().0.is_multiple_of(upscale) {
        return Err(Error::shape(format!("{} conv channels are not divisible by upscale {upscale}", w.dim().0)));
    }
    let k = w.dim().2;
    let y = kernels::conv(x.data.view(), w.view(), b.map(|b| b.view()), 1, kernels::same_pad(k), x.time());
    FeatureMap::new(kernels::pixel_shuffle(y.view(), upscale))
}

pub fn nearest_upsample(x: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    FeatureMap::new(kernels::upsample(x.data.view(), factor))
}

pub fn activation(x: &FeatureMap, kind: Activation) -> FeatureMap {
    let f = MapFn::Act(kind);
    FeatureMap { data: x.data.mapv(|v| f.eval(v)) }
}
