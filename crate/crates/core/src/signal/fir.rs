use crate::error::{Error, Result};
use std::f64::consts::PI;

pub const DEFAULT_LOWPASS_TAPS: usize = 127;

/// Linear-phase Hamming-windowed sinc low-pass.
///
/// `cutoff_norm` is the -6 dB point as a fraction of Nyquist. The taps are
/// normalised to unity DC gain and are exactly symmetric.
pub fn design_lowpass(cutoff_norm: f64, taps: usize) -> Result<Vec<f64>> {
    if !(cutoff_norm > 0.0 && cutoff_norm < 1.0) {
        return Err(Error::invalid(format!("cutoff must lie in (0, 1), got {cutoff_norm}")));
    }
    if taps < 3 || taps.is_multiple_of(2) {
        return Err(Error::invalid(format!("low-pass needs an odd tap count >= 3, got {taps}")));
    }
    let centre = (taps - 1) / 2;
    let fc = cutoff_norm / 2.0;
    let half: Vec<f64> = (0..=centre)
        .map(|i| {
            let m = i as f64 - centre as f64;
            let sinc = if m == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * m).sin() / (PI * m) };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let mut h = vec![0.0; taps];
    for (i, &v) in half.iter().enumerate() {
        h[i] = v;
        h[taps - 1 - i] = v;
    }
    let sum: f64 = h.iter().sum();
    for v in &mut h {
        *v /= sum;
    }
    // Summation order differs across the halves; restore exact mirror symmetry.
    for i in 0..centre {
        h[taps - 1 - i] = h[i];
    }
    Ok(h)
}

/// Centred FIR filtering with zero padding; output has the input length.
pub fn fir_filter(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let c = (taps.len() / 2) as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let s = t + k as isize - c;
                if s >= 0 && s < n {
                    acc += h * x[s as usize];
                }
            }
            acc
        })
        .collect()
}

/// Adjoint of [`fir_filter`] with respect to its input.
pub fn fir_filter_adjoint(g: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = g.len() as isize;
    let c = (taps.len() / 2) as isize;
    (0..n)
        .map(|s| {
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let t = s - k as isize + c;
                if t >= 0 && t < n {
                    acc += h * g[t as usize];
                }
            }
            acc
        })
        .collect()
}
