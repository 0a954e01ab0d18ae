use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Relu,
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" | "none" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation '{other}' (tanh, sigmoid, relu, identity)"))),
        }
    }
}

/// Elementwise maps with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapFn {
    Act(Activation),
    /// `a * x + b`.
    Affine { a: f64, b: f64 },
    /// Linear below `knee`, `knee * (|x|/knee)^exponent` above, odd-symmetric.
    BrokenStick { knee: f64, exponent: f64 },
    /// `scale * tanh(x / width)`.
    ScaledTanh { scale: f64, width: f64 },
    /// Saturating rate map `spont + (rmax - spont) u^q / (1 + u^q)` with `u = max(x, 0) / theta`.
    RateMap { spont: f64, rmax: f64, theta: f64, q: f64 },
}

impl From<Activation> for MapFn {
    fn from(a: Activation) -> Self {
        MapFn::Act(a)
    }
}

impl MapFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            MapFn::Act(Activation::Tanh) => x.tanh(),
            MapFn::Act(Activation::Sigmoid) => 1.0 / (1.0 + (-x).exp()),
            MapFn::Act(Activation::Relu) => x.max(0.0),
            MapFn::Act(Activation::Identity) => x,
            MapFn::Affine { a, b } => a * x + b,
            MapFn::BrokenStick { knee, exponent } => {
                let m = x.abs();
                if m <= knee {
                    x
                } else {
                    x.signum() * knee * (m / knee).powf(exponent)
                }
            }
            MapFn::ScaledTanh { scale, width } => scale * (x / width).tanh(),
            MapFn::RateMap { spont, rmax, theta, q } => {
                let uq = (x.max(0.0) / theta).powf(q);
                spont + (rmax - spont) * uq / (1.0 + uq)
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            MapFn::Act(Activation::Tanh) => 1.0 - x.tanh().powi(2),
            MapFn::Act(Activation::Sigmoid) => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            MapFn::Act(Activation::Relu) => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            MapFn::Act(Activation::Identity) => 1.0,
            MapFn::Affine { a, .. } => a,
            MapFn::BrokenStick { knee, exponent } => {
                let m = x.abs();
                if m <= knee {
                    1.0
                } else {
                    exponent * (m / knee).powf(exponent - 1.0)
                }
            }
            MapFn::ScaledTanh { scale, width } => scale / width * (1.0 - (x / width).tanh().powi(2)),
            MapFn::RateMap { spont, rmax, theta, q } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let u = x / theta;
                let uq = u.powf(q);
                (rmax - spont) * q * u.powf(q - 1.0) / (1.0 + uq).powi(2) / theta
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn reference_values() {
        assert_eq!(MapFn::from(Activation::Tanh).eval(0.0), 0.0);
        assert_eq!(MapFn::from(Activation::Sigmoid).eval(0.0), 0.5);
        assert_eq!(MapFn::from(Activation::Relu).eval(-1.0), 0.0);
        for x in [-3.0, -0.2, 0.7, 5.0] {
            let t = MapFn::from(Activation::Tanh);
            assert_eq!(t.eval(-x), -t.eval(x));
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let fns = [
            MapFn::Act(Activation::Tanh),
            MapFn::Act(Activation::Sigmoid),
            MapFn::Act(Activation::Relu),
            MapFn::Affine { a: -2.0, b: 0.3 },
            MapFn::BrokenStick { knee: 0.5, exponent: 0.3 },
            MapFn::ScaledTanh { scale: -3.0, width: 0.7 },
            MapFn::RateMap { spont: 10.0, rmax: 250.0, theta: 0.4, q: 1.5 },
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for f in fns {
            for _ in 0..200 {
                let x: f64 = rng.gen_range(-3.0..3.0);
                if x.abs() < 1e-3 || (x.abs() - 0.5).abs() < 1e-3 {
                    continue;
                }
                let num = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                let ana = f.derivative(x);
                let rel = (num - ana).abs() / ana.abs().max(num.abs()).max(1e-12);
                assert!(rel < 1e-6 || (num - ana).abs() < 1e-9, "{f:?} at {x}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("gelu".parse::<Activation>().is_err());
    }
}
