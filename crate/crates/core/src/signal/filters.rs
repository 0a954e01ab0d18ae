use rustfft::num_complex::Complex;
use std::f64::consts::PI;

/// Glasberg-Moore equivalent rectangular bandwidth at `cf` Hz.
pub fn erb_hz(cf: f64) -> f64 {
    24.7 * (4.37 * cf / 1000.0 + 1.0)
}

/// Fourth-order all-pole gammatone realised as a cascade of complex one-pole
/// sections; the output is the real part, normalised to unity gain at CF.
#[derive(Debug, Clone, PartialEq)]
pub struct Gammatone {
    cf: f64,
    bandwidth: f64,
    pole: Complex<f64>,
    gain: f64,
}

impl Gammatone {
    pub const ORDER: usize = 4;

    pub fn new(cf: f64, sample_rate: f64) -> Self {
        Self::with_bandwidth(cf, 1.019 * erb_hz(cf), sample_rate)
    }

    /// `bandwidth` is the gammatone `b` parameter in Hz.
    pub fn with_bandwidth(cf: f64, bandwidth: f64, sample_rate: f64) -> Self {
        let r = (-2.0 * PI * bandwidth / sample_rate).exp();
        let wc = 2.0 * PI * cf / sample_rate;
        let pole = Complex::from_polar(r, wc);
        let g = |om: f64| (Complex::new(1.0, 0.0) / (Complex::new(1.0, 0.0) - pole * Complex::from_polar(1.0, -om))).powi(Self::ORDER as i32);
        let h = (g(wc) + g(-wc).conj()) * 0.5;
        Self { cf, bandwidth, pole, gain: 1.0 / h.norm() }
    }

    pub fn cf(&self) -> f64 {
        self.cf
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// ERB of the continuous-time prototype, `pi * 5!/(2^6 * 3!^2) * b`.
    pub fn analytic_erb(&self) -> f64 {
        PI * 720.0 / (64.0 * 36.0) * self.bandwidth
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut s = [Complex::new(0.0, 0.0); Self::ORDER];
        x.iter()
            .map(|&v| {
                let mut z = Complex::new(v, 0.0);
                for st in s.iter_mut() {
                    *st = z + self.pole * *st;
                    z = *st;
                }
                self.gain * z.re
            })
            .collect()
    }
}

/// First-order low-pass `y[n] = (1 - a) x[n] + a y[n-1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnePole {
    a: f64,
}

impl OnePole {
    pub fn lowpass(cutoff: f64, sample_rate: f64) -> Self {
        Self { a: (-2.0 * PI * cutoff / sample_rate).exp() }
    }

    pub fn from_time_constant(tau: f64, sample_rate: f64) -> Self {
        Self { a: (-1.0 / (tau * sample_rate)).exp() }
    }

    pub fn coefficient(&self) -> f64 {
        self.a
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = 0.0;
        x.iter()
            .map(|&v| {
                y = (1.0 - self.a) * v + self.a * y;
                y
            })
            .collect()
    }
}

/// Causal real LTI filters usable inside differentiable chains.
#[derive(Debug, Clone, PartialEq)]
pub enum LtiFilter {
    Gammatone(Gammatone),
    OnePole(OnePole),
}

impl LtiFilter {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LtiFilter::Gammatone(g) => g.apply(x),
            LtiFilter::OnePole(p) => p.apply(x),
        }
    }

    /// Adjoint (time-reversed filtering), used for back-propagation.
    pub fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let rev: Vec<f64> = g.iter().rev().copied().collect();
        let mut out = self.apply(&rev);
        out.reverse();
        out
    }
}

impl From<Gammatone> for LtiFilter {
    fn from(g: Gammatone) -> Self {
        LtiFilter::Gammatone(g)
    }
}

impl From<OnePole> for LtiFilter {
    fn from(p: OnePole) -> Self {
        LtiFilter::OnePole(p)
    }
}
