use super::{band_energy, find_peaks, thd_fractional, ArtifactReport, Stimulus, StimulusKind, ENERGY_FLOOR_DB};
use crate::arch::{Model, Network};
use crate::auditory::{AuditoryChain, CfGrid, Cochlea};
use crate::error::{Error, Result};
use crate::nn::{strided_conv, FeatureMap};
use crate::signal::{
    design_lowpass, fir_filter, magnitude_spectrum, spl_to_pa, tone, AudioBuffer, Window, DEFAULT_LOWPASS_TAPS,
};
use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seconds of stimulus discarded before and after the analysed segment.
pub const PROBE_SETTLE_S: f64 = 0.05;
const STEP_LEN: usize = 16_384;
const ALIAS_LEN: usize = 81_920;
/// Aliasing energy below the input tone energy minus this is reported as that floor.
const ALIAS_FLOOR_REL_DB: f64 = 150.0;
const IMAGING_LEN: usize = 4000;
const IMAGING_HALF_BAND_HZ: f64 = 10.0;

type RunFn<'a> = Box<dyn Fn(&AudioBuffer) -> Result<FeatureMap> + 'a>;

/// A waveform-in system under test: a model, a surrogate stage or any closure.
pub struct System<'a> {
    pub name: String,
    run: RunFn<'a>,
    cfs: Option<CfGrid>,
    sample_rate: f64,
    rate_factor: usize,
    settle: usize,
}

impl<'a> System<'a> {
    /// `sample_rate` is the output rate.
    pub fn new(name: &str, sample_rate: f64, run: impl Fn(&AudioBuffer) -> Result<FeatureMap> + 'a) -> Self {
        Self {
            name: name.to_string(),
            run: Box::new(run),
            cfs: None,
            sample_rate,
            rate_factor: 1,
            settle: (PROBE_SETTLE_S * sample_rate).round() as usize,
        }
    }

    pub fn identity(sample_rate: f64) -> Self {
        Self::new("identity", sample_rate, |x| FeatureMap::from_samples(x.samples()))
    }

    /// Length-preserving inference with zero context; the settle time covers the receptive field.
    pub fn model(name: &str, model: &'a Model, sample_rate: f64) -> Self {
        let span = model.receptive_span();
        let mut s = Self::new(name, sample_rate, move |x| model.process(&FeatureMap::from_samples(x.samples())?));
        s.settle += span;
        s
    }

    pub fn cochlea(cochlea: &'a Cochlea) -> Self {
        Self::new("cochlea", cochlea.sample_rate(), move |x| cochlea.forward(x)).with_cfs(cochlea.grid().clone())
    }

    /// Weighted nerve response per CF.
    pub fn chain(chain: &'a AuditoryChain) -> Self {
        let cfs = chain.grid().cloned();
        let mut s = Self::new("chain", chain.sample_rate(), move |x| Ok(chain.run(x.samples())?.r));
        s.cfs = cfs;
        s
    }

    pub fn with_cfs(mut self, grid: CfGrid) -> Self {
        self.cfs = Some(grid);
        self
    }

    /// Output samples per input sample.
    pub fn with_rate_factor(mut self, factor: usize) -> Self {
        self.rate_factor = factor.max(1);
        self.settle /= self.rate_factor;
        self
    }

    /// Input samples discarded on each side of the analysed segment.
    pub fn with_settle(mut self, samples: usize) -> Self {
        self.settle = samples;
        self
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn cfs(&self) -> Option<&CfGrid> {
        self.cfs.as_ref()
    }

    pub fn settle(&self) -> usize {
        self.settle
    }

    pub fn rate_factor(&self) -> usize {
        self.rate_factor
    }

    pub fn input_rate(&self) -> f64 {
        self.sample_rate / self.rate_factor as f64
    }

    pub fn output(&self, x: &AudioBuffer) -> Result<FeatureMap> {
        let y = (self.run)(x)?;
        if y.time() != x.len() * self.rate_factor {
            return Err(Error::shape(format!(
                "system '{}' returned {} samples for {} input samples at rate factor {}",
                self.name,
                y.time(),
                x.len(),
                self.rate_factor
            )));
        }
        Ok(y)
    }

    /// The only channel, or the one whose CF is nearest `freq`.
    pub fn channel_for(&self, y: &FeatureMap, freq: f64) -> Result<usize> {
        if y.channels() == 1 {
            return Ok(0);
        }
        match &self.cfs {
            Some(g) if g.len() == y.channels() => Ok(g.nearest(freq)),
            _ => Err(Error::Config(format!(
                "system '{}' has {} output channels; attach a matching CF grid",
                self.name,
                y.channels()
            ))),
        }
    }
}

fn settled_output(system: &System, stimulus: &AudioBuffer, freq: f64, n_in: usize) -> Result<(usize, AudioBuffer)> {
    let y = system.output(stimulus)?;
    let ch = system.channel_for(&y, freq)?;
    let f = system.rate_factor;
    let row = y.channel(ch);
    let seg = row[system.settle * f..(system.settle + n_in) * f].to_vec();
    Ok((ch, AudioBuffer::new(seg, system.sample_rate)?))
}

/// Steady-state tone response with fractional harmonic distortion.
///
/// The analysed segment holds `duration` seconds of output; `freq / 4` must
/// fall on a bin centre of it.
pub fn tone_probe(system: &System, freq: f64, level_db: f64, duration: f64) -> Result<ArtifactReport> {
    let fs_in = system.input_rate();
    let n_in = (duration * fs_in).round() as usize;
    if n_in < 2 {
        return Err(Error::invalid(format!("probe duration {duration} s is too short")));
    }
    let total = 2 * system.settle + n_in;
    let (ch, seg) = settled_output(system, &tone(freq, level_db, total, fs_in), freq, n_in)?;
    let spec = magnitude_spectrum(&seg, Window::None)?;
    let thd = thd_fractional(&spec, freq)?;
    let mut r = ArtifactReport::new(&system.name, Stimulus { kind: StimulusKind::Tone, freq_hz: freq, level_db }, ch, spec);
    r.thd_db = Some(thd);
    r.band_energies.push(("sub500".into(), band_energy(&r.spectrum, 0.0, 500.0)?));
    r.band_energies.push(("total".into(), band_energy(&r.spectrum, 0.0, f64::INFINITY)?));
    Ok(r)
}

/// Spectral peaks of the response to a step switched on after one eighth of a
/// Hann-windowed analysis frame. The step height is the pressure of `level_db`.
pub fn step_probe(system: &System, level_db: f64) -> Result<ArtifactReport> {
    let n_in = STEP_LEN / system.rate_factor;
    let a = spl_to_pa(level_db);
    let x: Vec<f64> = (0..n_in).map(|i| if i >= n_in / 8 { a } else { 0.0 }).collect();
    let stim = AudioBuffer::new(x, system.input_rate())?;
    let y = system.output(&stim)?;
    let ch = system.channel_for(&y, 1000.0)?;
    let out = AudioBuffer::new(y.channel(ch), system.sample_rate)?;
    let spec = magnitude_spectrum(&out, Window::Hann)?;
    let mut r = ArtifactReport::new(&system.name, Stimulus { kind: StimulusKind::Step, freq_hz: 0.0, level_db }, ch, spec);
    r.peaks_hz = find_peaks(&r.spectrum);
    Ok(r)
}

/// Single-channel cascade of stride-2 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct StridedStack {
    pub stages: Vec<Vec<f64>>,
}

impl StridedStack {
    /// Plain decimators: keep every second sample.
    pub fn decimators(depth: usize) -> Self {
        Self { stages: vec![vec![1.0]; depth] }
    }

    /// Random taps uniform in `±1/sqrt(kernel)`, shifted to unit DC gain.
    pub fn random(depth: usize, kernel: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (kernel as f64).sqrt();
        let stages = (0..depth)
            .map(|_| {
                let mut t: Vec<f64> = (0..kernel).map(|_| rng.gen_range(-bound..bound)).collect();
                let shift = (1.0 - t.iter().sum::<f64>()) / kernel as f64;
                t.iter_mut().for_each(|v| *v += shift);
                t
            })
            .collect();
        Self { stages }
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    /// Runs the stack, with a half-band low-pass ahead of every stage when `antialias` is set.
    pub fn run(&self, x: &[f64], antialias: bool) -> Result<Vec<f64>> {
        let lp = if antialias { Some(design_lowpass(0.5, DEFAULT_LOWPASS_TAPS)?) } else { None };
        let mut h = FeatureMap::from_samples(x)?;
        for taps in &self.stages {
            let w = Array3::from_shape_vec((1, 1, taps.len()), taps.clone()).expect("kernel shape");
            h = strided_conv(&h, &w, None::<&Array1<f64>>, 2, lp.as_deref())?;
        }
        Ok(h.channel(0))
    }
}

/// Zero-stuffing followed by a windowed-sinc low-pass with gain `factor`.
/// Powers of two run as a cascade of half-band stages.
pub fn sinc_interpolate(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::invalid("interpolation factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(x.to_vec());
    }
    let stage = |x: &[f64], u: usize, taps: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; x.len() * u];
        for (i, v) in x.iter().enumerate() {
            z[i * u] = v * u as f64;
        }
        fir_filter(&z, taps)
    };
    if factor.is_power_of_two() {
        let taps = design_lowpass(0.5, DEFAULT_LOWPASS_TAPS)?;
        let mut y = x.to_vec();
        for _ in 0..factor.trailing_zeros() {
            y = stage(&y, 2, &taps);
        }
        Ok(y)
    } else {
        let taps = design_lowpass(1.0 / factor as f64, 64 * factor + 1)?;
        Ok(stage(x, factor, &taps))
    }
}

/// Sends a 1 kHz, 70 dB SPL tone through `encoder`, reconstructs the full rate
/// by windowed-sinc interpolation and reports the energy below 500 Hz.
///
/// The middle half of the reconstruction is analysed with a Hann window.
/// Energies more than 150 dB below the input tone are reported at that floor.
pub fn aliasing_probe(encoder: &StridedStack, antialias: bool, sample_rate: f64) -> Result<(ArtifactReport, f64)> {
    let freq = 1000.0;
    let level = 70.0;
    let x = tone(freq, level, ALIAS_LEN, sample_rate);
    let z = encoder.run(x.samples(), antialias)?;
    let y = sinc_interpolate(&z, 1 << encoder.depth())?;
    let seg = AudioBuffer::new(y[ALIAS_LEN / 4..3 * ALIAS_LEN / 4].to_vec(), sample_rate)?;
    let spec = magnitude_spectrum(&seg, Window::Hann)?;
    let reference = 20.0 * spl_to_pa(level).log10();
    let sub500 = band_energy(&spec, 0.0, 500.0)?.max(reference - ALIAS_FLOOR_REL_DB);
    let mut r = ArtifactReport::new(
        &format!("stride2x{}{}", encoder.depth(), if antialias { "+lowpass" } else { "" }),
        Stimulus { kind: StimulusKind::Aliasing, freq_hz: freq, level_db: level },
        0,
        spec,
    );
    r.band_energies.push(("sub500".into(), sub500));
    r.band_energies.push(("total".into(), band_energy(&r.spectrum, 0.0, f64::INFINITY)?));
    r.notes.push(format!("floor {:.1} dB", reference - ALIAS_FLOOR_REL_DB));
    Ok((r, sub500))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingResult {
    pub mirror_hz: f64,
    /// Output energy within 10 Hz of the mirror frequency, dB.
    pub mirror_db: f64,
    /// Output energy within 10 Hz of the input tone, dB.
    pub tone_db: f64,
    pub report: ArtifactReport,
}

/// Feeds a tone at `f0 <= fs / (2 * factor)` and measures the replica at `fs / factor - f0`,
/// where `fs` is the output rate and `factor` the system's total upsampling.
pub fn imaging_probe(system: &System, factor: usize, f0: f64, level_db: f64) -> Result<ImagingResult> {
    let fs = system.sample_rate;
    if factor == 0 || f0 <= 0.0 || f0 > fs / (2.0 * factor as f64) {
        return Err(Error::invalid(format!("tone {f0} Hz is not below fs / (2 * {factor})")));
    }
    let n_in = IMAGING_LEN / system.rate_factor;
    let total = 2 * system.settle + n_in;
    let (ch, seg) = settled_output(system, &tone(f0, level_db, total, system.input_rate()), f0, n_in)?;
    let spec = magnitude_spectrum(&seg, Window::None)?;
    let mirror_hz = fs / factor as f64 - f0;
    let around = |f: f64| band_energy(&spec, f - IMAGING_HALF_BAND_HZ, f + IMAGING_HALF_BAND_HZ);
    let mirror_db = if factor == 1 { ENERGY_FLOOR_DB } else { around(mirror_hz)? };
    let tone_db = around(f0)?;
    let mut report =
        ArtifactReport::new(&system.name, Stimulus { kind: StimulusKind::Imaging, freq_hz: f0, level_db }, ch, spec);
    report.band_energies.push(("mirror".into(), mirror_db));
    report.band_energies.push(("tone".into(), tone_db));
    Ok(ImagingResult { mirror_hz, mirror_db, tone_db, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::THD_FLOOR_DB;
    use crate::arch::{build_autoencoder_baseline, build_dconnear, AutoencoderSpec, ModelSpec, UpsamplingMode};
    use crate::nn::nearest_upsample;
    use crate::signal::DEFAULT_SAMPLE_RATE as FS;

    #[test]
    fn identity_tone_is_at_floor() {
        let r = tone_probe(&System::identity(FS), 1000.0, 70.0, 0.2).unwrap();
        assert_eq!(r.thd_db, Some(THD_FLOOR_DB));
        assert!(r.to_text().contains("thd_floor = true"));
    }

    #[test]
    fn cubic_distortion_matches_closed_form() {
        let c = 0.1;
        let sys = System::new("cubic", FS, move |x| {
            FeatureMap::from_samples(&x.samples().iter().map(|v| v + c * v * v * v).collect::<Vec<_>>())
        });
        let level = 110.0;
        let r = tone_probe(&sys, 1000.0, level, 0.2).unwrap();
        let a = spl_to_pa(level) * 2f64.sqrt();
        let h1 = a + 0.75 * c * a * a * a;
        let h3 = 0.25 * c * a * a * a;
        let expect = 20.0 * (h3 / h1).log10();
        assert!((r.thd_db.unwrap() - expect).abs() < 1e-6, "{} vs {expect}", r.thd_db.unwrap());
    }

    #[test]
    fn step_probe_identity_has_no_peaks() {
        let r = step_probe(&System::identity(FS), 70.0).unwrap();
        assert!(r.peaks_hz.is_empty(), "{:?}", r.peaks_hz);
    }

    #[test]
    fn step_probe_flags_transposed_lines_but_not_memory_blocks() {
        let ae = Model::Autoencoder(build_autoencoder_baseline(&AutoencoderSpec::default(), 3).unwrap());
        let r = step_probe(&System::model("transposed", &ae, FS), 70.0).unwrap();
        let line = FS / 16.0;
        assert!(
            r.peaks_hz.iter().any(|f| (f / line - (f / line).round()).abs() * line < 2.0),
            "{:?}",
            r.peaks_hz
        );
        let dc = Model::DConnear(build_dconnear(&ModelSpec { m: 4, r: 1, k1: 8, k2: 4, h: 16, ..ModelSpec::default() }, 3).unwrap());
        let r = step_probe(&System::model("dconnear", &dc, FS), 70.0).unwrap();
        assert!(r.peaks_hz.is_empty(), "{:?}", r.peaks_hz);
    }

    #[test]
    fn aliasing_examples() {
        let floor = 20.0 * spl_to_pa(70.0).log10() - ALIAS_FLOOR_REL_DB;
        let (_, e0) = aliasing_probe(&StridedStack::decimators(0), false, FS).unwrap();
        assert_eq!(e0, floor);
        let (_, raw) = aliasing_probe(&StridedStack::decimators(8), false, FS).unwrap();
        let (_, filt) = aliasing_probe(&StridedStack::decimators(8), true, FS).unwrap();
        assert!(raw > floor + 100.0, "{raw}");
        assert!(filt < raw - 20.0, "{filt} vs {raw}");
    }

    #[test]
    fn prefilter_never_increases_aliasing() {
        for depth in 1..=8 {
            for stack in [StridedStack::decimators(depth), StridedStack::random(depth, 4, depth as u64)] {
                let (_, raw) = aliasing_probe(&stack, false, FS).unwrap();
                let (_, filt) = aliasing_probe(&stack, true, FS).unwrap();
                assert!(raw >= filt, "depth {depth}: {raw} < {filt}");
            }
        }
    }

    fn nearest(fs: f64) -> System<'static> {
        System::new("nearest", fs, |x| nearest_upsample(&FeatureMap::from_samples(x.samples())?, 2)).with_rate_factor(2)
    }

    fn sinc(fs: f64) -> System<'static> {
        System::new("sinc", fs, |x| FeatureMap::from_samples(&sinc_interpolate(x.samples(), 2)?)).with_rate_factor(2)
    }

    #[test]
    fn imaging_examples() {
        let id = imaging_probe(&System::identity(FS), 1, 500.0, 70.0).unwrap();
        assert_eq!(id.mirror_db, ENERGY_FLOOR_DB);
        let nn = imaging_probe(&nearest(FS), 2, 500.0, 70.0).unwrap();
        assert_eq!(nn.mirror_hz, 9500.0);
        let expect = nn.tone_db + 20.0 * ((std::f64::consts::PI * 9500.0 / FS).cos() / (std::f64::consts::PI * 500.0 / FS).cos()).abs().log10();
        assert!((nn.mirror_db - expect).abs() < 0.01, "{} vs {expect}", nn.mirror_db);
        for f0 in [250.0, 500.0, 1000.0, 2000.0, 4000.0] {
            let a = imaging_probe(&nearest(FS), 2, f0, 70.0).unwrap();
            let b = imaging_probe(&sinc(FS), 2, f0, 70.0).unwrap();
            assert!(a.mirror_db > b.mirror_db, "{f0}");
            if f0 == 500.0 {
                assert!(b.mirror_db <= a.mirror_db - 40.0, "{} vs {}", b.mirror_db, a.mirror_db);
            }
        }
        assert!(imaging_probe(&nearest(FS), 2, 6000.0, 70.0).is_err());
    }

    #[test]
    fn nearest_autoencoder_images_while_memory_blocks_do_not() {
        let spec = AutoencoderSpec { mode: UpsamplingMode::Nearest, ..AutoencoderSpec::default() };
        let ae = Model::Autoencoder(build_autoencoder_baseline(&spec, 5).unwrap());
        let a = imaging_probe(&System::model("nearest", &ae, FS), 16, 500.0, 70.0).unwrap();
        let dc = Model::DConnear(build_dconnear(&ModelSpec { m: 4, r: 1, k1: 8, k2: 4, h: 16, ..ModelSpec::default() }, 5).unwrap());
        let b = imaging_probe(&System::model("dconnear", &dc, FS), 16, 500.0, 70.0).unwrap();
        assert!(a.mirror_db - a.tone_db > -60.0, "{} {}", a.mirror_db, a.tone_db);
        assert!(b.mirror_db - b.tone_db < -200.0, "{} {}", b.mirror_db, b.tone_db);
    }

    #[test]
    fn multichannel_needs_grid() {
        let sys = System::new("two", FS, |x| {
            FeatureMap::new(ndarray::Array2::from_shape_fn((2, x.len()), |(_, t)| x.samples()[t]))
        });
        assert!(matches!(tone_probe(&sys, 1000.0, 70.0, 0.2), Err(Error::Config(_))));
    }
}
