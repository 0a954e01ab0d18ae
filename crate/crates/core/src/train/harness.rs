use super::{adam_step, lr_schedule, trace_ha_loss, AdamState, EpochRecord, TrainConfig, TrainingRun};
use crate::arch::{Model, Network};
use crate::auditory::{anf_forward_at, ihc_forward_at, AuditoryChain, Cochlea};
use crate::error::{Error, Result};
use crate::nn::{Eager, FeatureMap, Graph, Tracer};
use crate::signal::{segment, AudioBuffer};
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Basilar-membrane targets are displacements times this factor.
pub const BM_SCALE: f64 = 1e6;
pub const IHC_SCALE: f64 = 10.0;
/// Applied to nerve rates, both as emulator targets and inside closed-loop losses.
pub const ANF_SCALE: f64 = 0.01;

/// Reference stage an emulator learns to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub enum EmulatorTarget {
    Identity,
    /// Audio in Pa to scaled displacement for every CF.
    Cochlea(Cochlea),
    /// Scaled displacement to scaled receptor potential, one example per CF channel.
    Ihc(Cochlea),
    /// Scaled receptor potential to scaled HSR, MSR and LSR rates, one example per CF channel.
    Anf(Cochlea),
}

impl EmulatorTarget {
    /// Whole-signal `(input, target)` pairs for one clip.
    pub fn pairs(&self, audio: &AudioBuffer) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
        let x = FeatureMap::from_samples(audio.samples())?.into_data();
        Ok(match self {
            EmulatorTarget::Identity => vec![(x.clone(), x)],
            EmulatorTarget::Cochlea(c) => vec![(x, c.forward(audio)?.into_data() * BM_SCALE)],
            EmulatorTarget::Ihc(c) => {
                let bm = c.forward(audio)?;
                let v = ihc_forward_at(&bm, c.sample_rate());
                rows(bm.data())
                    .zip(rows(v.data()))
                    .map(|(b, v)| (b * BM_SCALE, v * IHC_SCALE))
                    .collect()
            }
            EmulatorTarget::Anf(c) => {
                let v = ihc_forward_at(&c.forward(audio)?, c.sample_rate());
                let [h, m, l] = anf_forward_at(&v, c.sample_rate());
                (0..v.channels())
                    .map(|k| {
                        let inp = v.data().slice(s![k..k + 1, ..]).to_owned() * IHC_SCALE;
                        let tgt = ndarray::concatenate![
                            Axis(0),
                            h.data().slice(s![k..k + 1, ..]),
                            m.data().slice(s![k..k + 1, ..]),
                            l.data().slice(s![k..k + 1, ..])
                        ];
                        (inp, tgt * ANF_SCALE)
                    })
                    .collect()
            }
        })
    }
}

fn rows(a: &Array2<f64>) -> impl Iterator<Item = Array2<f64>> + '_ {
    a.outer_iter().map(|r| r.to_owned().insert_axis(Axis(0)))
}

/// One training frame: model input with context, and the target for its core.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

fn cut(x: &Array2<f64>, core: usize, left: usize, right: usize) -> Result<Vec<Array2<f64>>> {
    let per_row: Vec<Vec<Vec<f64>>> = x
        .outer_iter()
        .map(|r| Ok(segment(r.as_slice().expect("owned rows are contiguous"), core, left, right, core)?.iter().map(|f| f.to_vec()).collect()))
        .collect::<Result<_>>()?;
    let frames = per_row[0].len();
    Ok((0..frames)
        .map(|k| Array2::from_shape_fn((x.nrows(), left + core + right), |(c, t)| per_row[c][k][t]))
        .collect())
}

fn frame_geometry(model: &Model, frame_len: usize) -> Result<(usize, usize)> {
    let (l, r) = model.context();
    let m = model.length_multiple();
    if !(l + frame_len + r).is_multiple_of(m) {
        return Err(Error::Config(format!(
            "frame_len {frame_len} plus context {} must be a multiple of {m} for this model",
            l + r
        )));
    }
    Ok((l, r))
}

/// Frames of `frame_len` target samples with the model's input context.
pub fn emulator_frames(model: &Model, target: &EmulatorTarget, data: &[AudioBuffer], frame_len: usize) -> Result<Vec<Example>> {
    let (l, r) = frame_geometry(model, frame_len)?;
    let mut out = Vec::new();
    for clip in data {
        for (x, y) in target.pairs(clip)? {
            if x.nrows() != model.in_channels() || y.nrows() != model.out_channels() {
                return Err(Error::InvalidSpec(format!(
                    "target maps {} to {} channels but the model maps {} to {}",
                    x.nrows(),
                    y.nrows(),
                    model.in_channels(),
                    model.out_channels()
                )));
            }
            let xs = cut(&x, frame_len, l, r)?;
            let ys = cut(&y, frame_len, 0, 0)?;
            out.extend(xs.into_iter().zip(ys).map(|(input, target)| Example { input, target }));
        }
    }
    Ok(out)
}

/// Frames of `(input, reference)` clips: the model sees `input` with context,
/// the target is `chain` applied to the matching core of `reference`, scaled by [`ANF_SCALE`].
///
/// Each core is run through the chain from rest, as the processed path is during training.
pub fn closed_loop_frames(
    model: &Model,
    chain: &AuditoryChain,
    clips: &[(&AudioBuffer, &AudioBuffer)],
    frame_len: usize,
) -> Result<Vec<Example>> {
    let (l, r) = frame_geometry(model, frame_len)?;
    if model.in_channels() != 1 || model.out_channels() != 1 {
        return Err(Error::InvalidSpec("closed-loop models map one audio channel to one".into()));
    }
    let mut out = Vec::new();
    for (input, reference) in clips {
        if input.len() != reference.len() {
            return Err(Error::shape(format!("paired clips differ in length: {} vs {}", input.len(), reference.len())));
        }
        let xs = cut(&FeatureMap::from_samples(input.samples())?.into_data(), frame_len, l, r)?;
        let refs = segment(reference.samples(), frame_len, 0, 0, frame_len)?;
        for (x, core) in xs.into_iter().zip(refs) {
            let target = chain.run(&core.core)?.r.into_data() * ANF_SCALE;
            out.push(Example { input: x, target });
        }
    }
    Ok(out)
}

enum Objective<'a> {
    Emulate,
    Ha { hi: &'a AuditoryChain, alpha: f64, beta: f64 },
    Se { nh: &'a AuditoryChain },
}

impl Objective<'_> {
    fn loss<T: Tracer>(&self, t: &mut T, model: &Model, ex: &Example) -> T::V {
        let x = t.constant(ex.input.clone().into_dyn());
        let target = t.constant(ex.target.clone().into_dyn());
        let y = model.trace(t, &x);
        match self {
            Objective::Emulate => t.mae(&y, &target),
            Objective::Ha { hi, alpha, beta } => {
                let r = hi.trace(t, &y);
                let r = t.scale(&r, ANF_SCALE);
                trace_ha_loss(t, &target, &r, *alpha, *beta)
            }
            Objective::Se { nh } => {
                let r = nh.trace(t, &y);
                let r = t.scale(&r, ANF_SCALE);
                t.mae(&r, &target)
            }
        }
    }

    fn eval(&self, model: &Model, ex: &Example) -> f64 {
        self.loss(&mut Eager, model, ex)[[0]]
    }
}

fn fit(model: &mut Model, objective: &Objective, examples: &[Example], cfg: &TrainConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::NoFrames);
    }
    for ex in examples {
        model.check_input(ex.input.nrows(), ex.input.ncols())?;
    }
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_val = if n < 2 || cfg.val_fraction == 0.0 {
        0
    } else {
        ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1)
    };
    let (val, train) = order.split_at(n_val);
    let val = if val.is_empty() { train } else { val };
    let mut train = train.to_vec();

    let evaluate = |model: &Model| val.iter().map(|&i| objective.eval(model, &examples[i])).sum::<f64>() / val.len() as f64;
    let initial = evaluate(model);
    if !initial.is_finite() {
        return Err(Error::invalid("initial validation loss is not finite"));
    }
    let mut run = TrainingRun::new(cfg.lr, initial);
    let mut state = AdamState::new(model.params());
    let mut best: Option<(f64, crate::nn::ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(&run, cfg.patience);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train.chunks(cfg.batch) {
            model.params_mut().zero_grads();
            for &i in batch {
                let mut g = Graph::new();
                let loss = objective.loss(&mut g, model, &examples[i]);
                let v = g.value(&loss)[[0]];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("training loss became non-finite in epoch {epoch}")));
                }
                total += v;
                let grads = g.backward(loss);
                g.accumulate(&grads, model.params_mut());
            }
            let k = 1.0 / batch.len() as f64;
            let ids: Vec<_> = model.params().ids().collect();
            for id in ids {
                model.params_mut().grad_mut(id).mapv_inplace(|g| g * k);
            }
            adam_step(model.params_mut(), &mut state, lr)?;
        }
        let val_loss = evaluate(model);
        run.epochs.push(EpochRecord { epoch, train_loss: total / train.len() as f64, val_loss, lr });
        if val_loss < best.as_ref().map_or(initial, |b| b.0) {
            best = Some((val_loss, model.params().clone()));
        }
    }
    if cfg.keep_best {
        if let Some((_, store)) = best {
            *model.params_mut() = store;
        }
    }
    model.params_mut().zero_grads();
    Ok(run)
}

/// Fits `student` to `target` by MAE over frames of `cfg.frame_len` samples.
pub fn train_emulator(student: &mut Model, target: &EmulatorTarget, data: &[AudioBuffer], cfg: &TrainConfig) -> Result<TrainingRun> {
    if data.is_empty() {
        return Err(Error::invalid("emulator training needs at least one clip"));
    }
    let examples = emulator_frames(student, target, data, cfg.frame_len)?;
    fit(student, &Objective::Emulate, &examples, cfg)
}

/// Fits `ha` so the hearing-impaired pathway on processed audio matches the
/// normal-hearing pathway on the raw audio, under the combined per-CF and population loss.
pub fn train_ha_closed_loop(
    ha: &mut Model,
    nh: &AuditoryChain,
    hi: &AuditoryChain,
    data: &[AudioBuffer],
    cfg: &TrainConfig,
) -> Result<TrainingRun> {
    nh.require_frozen()?;
    hi.require_frozen()?;
    if data.is_empty() {
        return Err(Error::invalid("closed-loop training needs at least one clip"));
    }
    let clips: Vec<(&AudioBuffer, &AudioBuffer)> = data.iter().map(|a| (a, a)).collect();
    let examples = closed_loop_frames(ha, nh, &clips, cfg.frame_len)?;
    fit(ha, &Objective::Ha { hi, alpha: cfg.alpha, beta: cfg.beta }, &examples, cfg)
}

/// Fits `se` so the pathway's response to enhanced noisy audio matches its response to the clean audio, by MAE.
pub fn train_se_closed_loop(
    se: &mut Model,
    nh: &AuditoryChain,
    pairs: &[(AudioBuffer, AudioBuffer)],
    cfg: &TrainConfig,
) -> Result<TrainingRun> {
    nh.require_frozen()?;
    if pairs.is_empty() {
        return Err(Error::invalid("closed-loop training needs at least one pair"));
    }
    let clips: Vec<(&AudioBuffer, &AudioBuffer)> = pairs.iter().map(|(n, c)| (n, c)).collect();
    let examples = closed_loop_frames(se, nh, &clips, cfg.frame_len)?;
    fit(se, &Objective::Se { nh }, &examples, cfg)
}
