use super::{CfGrid, HearingProfile};
use crate::error::{Error, Result};
use crate::nn::{Activation, Eager, FeatureMap, MapFn, Op, Tracer};
use crate::signal::{AudioBuffer, Gammatone, LtiFilter, OnePole, DEFAULT_SAMPLE_RATE};
use std::rc::Rc;

/// Compression knee, the peak pressure of a 30 dB SPL sine.
pub const COCHLEA_KNEE_PA: f64 = 2e-5 * 31.622776601683793 * std::f64::consts::SQRT_2;
pub const COCHLEA_EXPONENT: f64 = 0.3;
/// Pa to displacement proxy; puts a 70 dB SPL tone near 1e-6 at CF.
pub const BM_GAIN: f64 = 3e-4;
pub const IHC_CUTOFF_HZ: f64 = 3000.0;
pub const IHC_VMAX: f64 = 0.06;
pub const IHC_USAT: f64 = 2e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberParams {
    pub name: &'static str,
    pub spont: f64,
    pub rmax: f64,
    /// Normalised drive at half-saturation.
    pub theta: f64,
    pub q: f64,
    /// Adaptation time constant in seconds.
    pub tau: f64,
    /// Onset-emphasis constant in spikes/s.
    pub k: f64,
}

pub const ANF_FIBERS: [FiberParams; 3] = [
    FiberParams { name: "HSR", spont: 60.0, rmax: 250.0, theta: 0.03, q: 2.0, tau: 0.015, k: 100.0 },
    FiberParams { name: "MSR", spont: 10.0, rmax: 250.0, theta: 0.1, q: 1.5, tau: 0.015, k: 100.0 },
    FiberParams { name: "LSR", spont: 1.0, rmax: 250.0, theta: 0.3, q: 1.0, tau: 0.015, k: 100.0 },
];

/// Gammatone, outer-hair-cell gain, broken-stick compression and a second
/// gammatone pass per CF.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochlea {
    grid: CfGrid,
    sample_rate: f64,
    gains: Rc<Vec<f64>>,
    filters: Rc<Vec<LtiFilter>>,
}

impl Cochlea {
    pub fn new(grid: &CfGrid, profile: &HearingProfile, sample_rate: f64) -> Self {
        let gains = profile.gain_loss_on(grid).iter().map(|g| 10f64.powf(-g / 20.0)).collect();
        let filters = grid.freqs().iter().map(|&cf| Gammatone::new(cf, sample_rate).into()).collect();
        Self { grid: grid.clone(), sample_rate, gains: Rc::new(gains), filters: Rc::new(filters) }
    }

    pub fn grid(&self) -> &CfGrid {
        &self.grid
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// `x` is a single-channel pressure waveform in Pa.
    pub fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let y = t.apply(Op::FilterBank(self.filters.clone()), &[x]);
        let y = t.apply(Op::ChannelGain(self.gains.clone()), &[&y]);
        let y = t.map(&y, MapFn::BrokenStick { knee: COCHLEA_KNEE_PA, exponent: COCHLEA_EXPONENT });
        let y = t.apply(Op::FilterBank(self.filters.clone()), &[&y]);
        t.scale(&y, BM_GAIN)
    }

    pub fn forward(&self, audio: &AudioBuffer) -> Result<FeatureMap> {
        if audio.sample_rate() != self.sample_rate {
            return Err(Error::invalid(format!(
                "cochlea runs at {} Hz, audio is at {} Hz",
                self.sample_rate,
                audio.sample_rate()
            )));
        }
        let x = FeatureMap::from_samples(audio.samples())?;
        FeatureMap::from_dyn(self.trace(&mut Eager, &x.data().clone().into_dyn()))
    }
}

pub fn cochlea_forward(audio: &AudioBuffer, grid: &CfGrid, profile: &HearingProfile) -> Result<FeatureMap> {
    Cochlea::new(grid, profile, audio.sample_rate()).forward(audio)
}

/// Half-wave rectification, 3 kHz one-pole smoothing and tanh saturation to a
/// non-positive potential.
pub fn trace_ihc<T: Tracer>(t: &mut T, bm: &T::V, sample_rate: f64) -> T::V {
    let lp: LtiFilter = OnePole::lowpass(IHC_CUTOFF_HZ, sample_rate).into();
    let y = t.map(bm, Activation::Relu);
    let y = t.apply(Op::FilterBank(Rc::new(vec![lp])), &[&y]);
    t.map(&y, MapFn::ScaledTanh { scale: -IHC_VMAX, width: IHC_USAT })
}

pub fn ihc_forward(bm: &FeatureMap) -> FeatureMap {
    ihc_forward_at(bm, DEFAULT_SAMPLE_RATE)
}

pub fn ihc_forward_at(bm: &FeatureMap, sample_rate: f64) -> FeatureMap {
    let y = trace_ihc(&mut Eager, &bm.data().clone().into_dyn(), sample_rate);
    FeatureMap::from_dyn(y).expect("finite input gives finite output")
}

/// Saturating rate map per fibre type followed by single-pole adaptation with onset emphasis.
pub fn trace_anf<T: Tracer>(t: &mut T, ihc: &T::V, sample_rate: f64) -> [T::V; 3] {
    let d = t.map(ihc, MapFn::Affine { a: -1.0 / IHC_VMAX, b: 0.0 });
    ANF_FIBERS.map(|f| {
        let rss = t.map(&d, MapFn::RateMap { spont: f.spont, rmax: f.rmax, theta: f.theta, q: f.q });
        let excess = t.map(&rss, MapFn::Affine { a: 1.0, b: -f.spont });
        let lp: LtiFilter = OnePole::from_time_constant(f.tau, sample_rate).into();
        let slow = t.apply(Op::FilterBank(Rc::new(vec![lp])), &[&excess]);
        let den = t.map(&slow, MapFn::Affine { a: 1.0, b: f.spont + f.k });
        let boost = t.map(&rss, MapFn::Affine { a: 1.0, b: f.k });
        let num = t.mul(&rss, &boost);
        t.div(&num, &den)
    })
}

/// HSR, MSR and LSR rates in spikes/s.
pub fn anf_forward(ihc: &FeatureMap) -> [FeatureMap; 3] {
    anf_forward_at(ihc, DEFAULT_SAMPLE_RATE)
}

pub fn anf_forward_at(ihc: &FeatureMap, sample_rate: f64) -> [FeatureMap; 3] {
    trace_anf(&mut Eager, &ihc.data().clone().into_dyn(), sample_rate)
        .map(|y| FeatureMap::from_dyn(y).expect("finite input gives finite output"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditory::make_profile;
    use crate::nn::{gradient_check, GradCheck};
    use crate::signal::tone;
    use ndarray::{Array2, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: f64 = DEFAULT_SAMPLE_RATE;

    fn nh() -> HearingProfile {
        make_profile("NH").unwrap()
    }

    fn rms_of(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn steady_rms(x: &[f64]) -> f64 {
        rms_of(&x[x.len() / 2..])
    }

    #[test]
    fn silence_maps_to_rest() {
        let grid = CfGrid::standard(5, FS).unwrap();
        let z = AudioBuffer::new(vec![0.0; 400], FS).unwrap();
        let bm = cochlea_forward(&z, &grid, &nh()).unwrap();
        assert!(bm.data().iter().all(|&v| v == 0.0));
        let v = ihc_forward(&bm);
        assert!(v.data().iter().all(|&x| x == 0.0));
        let [h, m, l] = anf_forward(&v);
        for (fm, f) in [&h, &m, &l].into_iter().zip(ANF_FIBERS) {
            assert!(fm.data().iter().all(|&r| (r - f.spont).abs() < 1e-12), "{}", f.name);
        }
        assert!(ANF_FIBERS[0].spont > ANF_FIBERS[1].spont && ANF_FIBERS[1].spont > ANF_FIBERS[2].spont);
    }

    #[test]
    fn tone_peaks_at_matching_cf() {
        let grid = CfGrid::standard(41, FS).unwrap();
        let bm = cochlea_forward(&tone(1000.0, 70.0, 4000, FS), &grid, &nh()).unwrap();
        let energy: Vec<f64> = (0..grid.len()).map(|c| steady_rms(&bm.channel(c))).collect();
        let best = (0..grid.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        assert_eq!(best, grid.nearest(1000.0));
    }

    #[test]
    fn compressive_growth_above_knee() {
        let grid = CfGrid::from_freqs(vec![1000.0]).unwrap();
        let level = |l: f64| {
            let y = cochlea_forward(&tone(1000.0, l, 6000, FS), &grid, &nh()).unwrap();
            20.0 * steady_rms(&y.channel(0)).log10()
        };
        let levels: Vec<f64> = (1..=9).map(|i| level(10.0 * i as f64)).collect();
        for w in levels[4..].windows(2) {
            assert!(((w[1] - w[0]) / 10.0 - 0.3).abs() < 0.05, "{levels:?}");
        }
        assert!(((levels[1] - levels[0]) / 10.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn gain_loss_only_attenuates() {
        let grid = CfGrid::standard(21, FS).unwrap();
        let hi = make_profile("Slope35-7,0,0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for level in [40.0, 70.0, 90.0] {
            let noise: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = crate::signal::scale_to_spl(&AudioBuffer::new(noise, FS).unwrap(), level).unwrap();
            let a = cochlea_forward(&x, &grid, &nh()).unwrap();
            let b = cochlea_forward(&x, &grid, &hi).unwrap();
            for c in 0..grid.len() {
                assert!(rms_of(&b.channel(c)) <= rms_of(&a.channel(c)) * (1.0 + 1e-12), "channel {c} at {level} dB");
            }
        }
    }

    #[test]
    fn ihc_is_linear_for_small_inputs() {
        let bm = FeatureMap::new(Array2::from_shape_fn((1, 200), |(_, t)| 1e-9 * (t as f64 * 0.3).sin())).unwrap();
        let bm2 = FeatureMap::new(bm.data() * 2.0).unwrap();
        let (a, b) = (ihc_forward(&bm), ihc_forward(&bm2));
        let ra = rms_of(&a.channel(0));
        assert!(((rms_of(&b.channel(0)) / ra) - 2.0).abs() < 0.1);
        assert!(a.data().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn ihc_growth_is_monotone_and_compressive() {
        let grid = CfGrid::from_freqs(vec![4000.0]).unwrap();
        let rms_at = |l: f64| {
            let bm = cochlea_forward(&tone(4000.0, l, 4000, FS), &grid, &nh()).unwrap();
            steady_rms(&ihc_forward(&bm).channel(0))
        };
        let curve: Vec<f64> = (0..=20).map(|i| rms_at(5.0 * i as f64)).collect();
        assert!(curve.windows(2).all(|w| w[1] > w[0]), "{curve:?}");
        let slope = 20.0 * (curve[20] / curve[18]).log10() / 10.0;
        assert!(slope < 1.0, "{slope}");
    }

    #[test]
    fn rates_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = FeatureMap::new(Array2::from_shape_fn((3, 500), |_| -rng.gen_range(0.0..IHC_VMAX))).unwrap();
        for fm in anf_forward(&v) {
            assert!(fm.data().iter().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn stage_gradients_match_differences() {
        let grid = CfGrid::standard(3, FS).unwrap();
        let coch = Cochlea::new(&grid, &make_profile("Slope35-7,0,0").unwrap(), FS);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[1, 120]), || rng.gen_range(-1.0..1.0));
        let e = gradient_check(std::slice::from_ref(&x), GradCheck::seed(1), |g, v| {
            let p = g.scale(&v[0], 0.05);
            let y = coch.trace(g, &p);
            g.scale(&y, 1e6)
        });
        assert!(e < 1e-4, "cochlea {e}");
        let e = gradient_check(std::slice::from_ref(&x), GradCheck::seed(2), |g, v| {
            let b = g.scale(&v[0], 2e-6);
            trace_ihc(g, &b, FS)
        });
        assert!(e < 1e-4, "ihc {e}");
        let v0 = ArrayD::from_shape_simple_fn(IxDyn(&[2, 80]), || rng.gen_range(0.05..1.0));
        let e = gradient_check(&[v0], GradCheck::seed(3), |g, v| {
            let ihc = g.scale(&v[0], -IHC_VMAX * 0.5);
            let [h, m, l] = trace_anf(g, &ihc, FS);
            let hm = g.add(&h, &m);
            g.add(&hm, &l)
        });
        assert!(e < 1e-4, "anf {e}");
    }
}
