//! Losses, the Adam optimizer, the plateau learning-rate rule and the
//! training harnesses for emulators and closed-loop processors.

mod harness;

pub use harness::{
    closed_loop_frames, emulator_frames, train_emulator, train_ha_closed_loop, train_se_closed_loop, EmulatorTarget,
    Example, ANF_SCALE, BM_SCALE, IHC_SCALE,
};

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::{Eager, FeatureMap, ParamStore, Tracer};
use ndarray::ArrayD;
use std::fmt::Write as _;
use std::path::PathBuf;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Default weight of the per-CF term of [`ha_loss`].
pub const HA_ALPHA: f64 = 30.0;
/// Default weight of the population term of [`ha_loss`].
pub const HA_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Epochs without a new best validation loss before the rate is halved.
    pub patience: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    /// Output samples per training frame; inputs add the model context.
    pub frame_len: usize,
    pub val_fraction: f64,
    /// Restore the parameters of the best validation epoch when done.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 50,
            batch: 8,
            patience: 5,
            seed: 0,
            alpha: HA_ALPHA,
            beta: HA_BETA,
            frame_len: 2048,
            val_fraction: 0.1,
            keep_best: true,
        }
    }
}

const TRAIN_KEYS: [&str; 10] =
    ["lr", "epochs", "batch", "patience", "seed", "alpha", "beta", "frame_len", "val_fraction", "keep_best"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be > 0");
        }
        if self.patience < 1 {
            return fail("patience must be >= 1");
        }
        if self.batch < 1 {
            return fail("batch must be >= 1");
        }
        if self.frame_len < 1 {
            return fail("frame_len must be >= 1");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail("loss weights alpha and beta must be >= 0");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(section, "lr", self.lr);
        doc.set(section, "epochs", self.epochs);
        doc.set(section, "batch", self.batch);
        doc.set(section, "patience", self.patience);
        doc.set(section, "seed", self.seed);
        doc.set(section, "alpha", self.alpha);
        doc.set(section, "beta", self.beta);
        doc.set(section, "frame_len", self.frame_len);
        doc.set(section, "val_fraction", self.val_fraction);
        doc.set(section, "keep_best", self.keep_best);
    }

    /// Read from `section`; `extra` lists other keys tolerated there.
    pub fn read_kv(doc: &KvDoc, section: &str, extra: &[&str]) -> Result<Self> {
        let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(extra).copied().collect();
        doc.reject_unknown(section, &allowed)?;
        let d = Self::default();
        let cfg = Self {
            lr: doc.parsed_or(section, "lr", d.lr)?,
            epochs: doc.parsed_or(section, "epochs", d.epochs)?,
            batch: doc.parsed_or(section, "batch", d.batch)?,
            patience: doc.parsed_or(section, "patience", d.patience)?,
            seed: doc.parsed_or(section, "seed", d.seed)?,
            alpha: doc.parsed_or(section, "alpha", d.alpha)?,
            beta: doc.parsed_or(section, "beta", d.beta)?,
            frame_len: doc.parsed_or(section, "frame_len", d.frame_len)?,
            val_fraction: doc.parsed_or(section, "val_fraction", d.val_fraction)?,
            keep_best: doc.parsed_or(section, "keep_best", d.keep_best)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub initial_lr: f64,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainingRun {
    pub fn new(initial_lr: f64, initial_val_loss: f64) -> Self {
        Self { initial_lr, initial_val_loss, epochs: Vec::new(), checkpoint: None }
    }

    pub fn lr_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    /// Running minimum of the validation loss, starting with the initial value.
    pub fn best_val_trajectory(&self) -> Vec<f64> {
        let mut best = self.initial_val_loss;
        std::iter::once(best)
            .chain(self.epochs.iter().map(|e| {
                best = best.min(e.val_loss);
                best
            }))
            .collect()
    }

    pub fn best_val_loss(&self) -> f64 {
        *self.best_val_trajectory().last().expect("trajectory has the initial value")
    }

    /// `epoch,train_loss,val_loss,lr`, one row per epoch.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
        s
    }
}

/// Learning rate for the epoch after the last recorded one.
///
/// Replays the history: the rate halves each time `patience` consecutive
/// epochs pass without beating the best validation loss so far (the initial
/// loss included), and the counter restarts after every improvement or halving.
pub fn lr_schedule(run: &TrainingRun, patience: usize) -> f64 {
    let patience = patience.max(1);
    let mut lr = run.initial_lr;
    let mut best = run.initial_val_loss;
    let mut stall = 0;
    for e in &run.epochs {
        if e.val_loss < best || best.is_nan() {
            best = e.val_loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= patience {
                lr *= 0.5;
                stall = 0;
            }
        }
    }
    lr
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<ArrayD<f64>> = params.ids().map(|id| ArrayD::zeros(params.value(id).raw_dim())).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update using the gradients held in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::shape(format!("optimizer state covers {} tensors, store has {}", state.m.len(), params.len())));
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.step as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.step as f64);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = params.grad(id).clone();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        if m.shape() != g.shape() {
            return Err(Error::shape(format!("optimizer state for '{}' has the wrong shape", params.name(id))));
        }
        ndarray::Zip::from(&mut *m).and(&mut *v).and(&g).for_each(|m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        });
        ndarray::Zip::from(params.value_mut(id)).and(&*m).and(&*v).for_each(|p, &m, &v| {
            *p -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

fn check_aligned(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return Err(Error::shape(format!("loss inputs differ in shape: {:?} vs {:?}", a.data().dim(), b.data().dim())));
    }
    Ok(())
}

pub fn mae_loss(pred: &FeatureMap, target: &FeatureMap) -> Result<f64> {
    check_aligned(pred, target)?;
    Ok((pred.data() - target.data()).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// `alpha * MSE(r, r_hat) + beta * MSE(p, p_hat)` with `p` the sum over CF channels.
pub fn trace_ha_loss<T: Tracer>(t: &mut T, r: &T::V, r_hat: &T::V, alpha: f64, beta: f64) -> T::V {
    let per_cf = t.mse(r, r_hat);
    let p = t.sum_channels(r);
    let p_hat = t.sum_channels(r_hat);
    let pop = t.mse(&p, &p_hat);
    let a = t.scale(&per_cf, alpha);
    let b = t.scale(&pop, beta);
    t.add(&a, &b)
}

pub fn ha_loss(r: &FeatureMap, r_hat: &FeatureMap, alpha: f64, beta: f64) -> Result<f64> {
    check_aligned(r, r_hat)?;
    let a = r.data().clone().into_dyn();
    let b = r_hat.data().clone().into_dyn();
    Ok(trace_ha_loss(&mut Eager, &a, &b, alpha, beta)[[0]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, GradCheck};
    use ndarray::Array2;

    fn fm(c: usize, t: usize, f: impl Fn(usize, usize) -> f64) -> FeatureMap {
        FeatureMap::new(Array2::from_shape_fn((c, t), |(i, j)| f(i, j))).unwrap()
    }

    #[test]
    fn mae_examples() {
        let a = fm(3, 10, |c, t| (c * 7 + t) as f64 * 0.1);
        assert_eq!(mae_loss(&a, &a).unwrap(), 0.0);
        let b = FeatureMap::new(a.data() + 1.0).unwrap();
        assert!((mae_loss(&b, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(mae_loss(&a, &fm(3, 9, |_, _| 0.0)).is_err());
        let x = a.data().clone().into_dyn();
        let y = (b.data() * 0.7).into_dyn();
        let err = gradient_check(&[x, y], GradCheck::seed(3), |g, v| g.mae(&v[0], &v[1]));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn ha_loss_examples() {
        let r = fm(4, 12, |c, t| ((c + 1) * (t + 2)) as f64 % 5.0);
        let rh = fm(4, 12, |c, t| ((c + 3) * t) as f64 % 7.0 * 0.3);
        assert_eq!(ha_loss(&r, &r, HA_ALPHA, HA_BETA).unwrap(), 0.0);
        assert!(ha_loss(&r, &rh, HA_ALPHA, HA_BETA).unwrap() > 0.0);
        let pop = |m: &FeatureMap| m.data().sum_axis(ndarray::Axis(0));
        let pmse = (pop(&r) - pop(&rh)).mapv(|d| d * d).mean().unwrap();
        assert!((ha_loss(&r, &rh, 0.0, 2.0).unwrap() - 2.0 * pmse).abs() < 1e-9);
        let one = fm(1, 12, |_, t| t as f64);
        let two = fm(1, 12, |_, t| (t as f64).sqrt());
        let mse = (one.data() - two.data()).mapv(|d| d * d).mean().unwrap();
        assert!((ha_loss(&one, &two, HA_ALPHA, HA_BETA).unwrap() - 31.0 * mse).abs() < 1e-9);
    }

    #[test]
    fn ha_loss_gradient() {
        let r = Array2::from_shape_fn((3, 8), |(c, t)| ((c * 8 + t) as f64 * 0.37).sin()).into_dyn();
        let rh = Array2::from_shape_fn((3, 8), |(c, t)| ((c * 8 + t) as f64 * 0.11).cos()).into_dyn();
        let err = gradient_check(&[r, rh], GradCheck::seed(1), |g, v| trace_ha_loss(g, &v[0], &v[1], 30.0, 1.0));
        assert!(err < 1e-5, "{err}");
    }

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("a", Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 - 2.0).into_dyn());
        p.add("b", ndarray::arr1(&[0.5, -0.25]).into_dyn());
        p
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = store();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &mut st, 0.1).unwrap();
        assert!(p.bit_identical(&before));
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = store();
        let before = p.clone();
        let ids: Vec<_> = p.ids().collect();
        for (k, &id) in ids.iter().enumerate() {
            let n = p.grad(id).len();
            let g: Vec<f64> = (0..n).map(|i| (i as f64 - 1.0 + k as f64) * 0.3 + 0.05).collect();
            p.grad_mut(id).iter_mut().zip(&g).for_each(|(d, s)| *d = *s);
        }
        let mut st = AdamState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &mut st, lr).unwrap();
        for &id in &ids {
            for ((new, old), g) in p.value(id).iter().zip(before.value(id)).zip(p.grad(id)) {
                assert!(((old - new) - lr * g.signum()).abs() < 1e-6 * lr.max(1.0));
            }
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = store();
            let mut st = AdamState::new(&p);
            for step in 0..10 {
                let ids: Vec<_> = p.ids().collect();
                for id in ids {
                    let v = p.value(id).clone();
                    *p.grad_mut(id) = v.mapv(|x| (x * 1.3 + step as f64).sin());
                }
                adam_step(&mut p, &mut st, 0.01).unwrap();
            }
            p
        };
        assert!(run().bit_identical(&run()));
    }

    fn history(vals: &[f64]) -> TrainingRun {
        let mut run = TrainingRun::new(1e-3, 1.0);
        for (i, &v) in vals.iter().enumerate() {
            let lr = lr_schedule(&run, 5);
            run.epochs.push(EpochRecord { epoch: i + 1, train_loss: v, val_loss: v, lr });
        }
        run
    }

    #[test]
    fn lr_schedule_examples() {
        let down = history(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]);
        assert_eq!(lr_schedule(&down, 5), 1e-3);
        let flat = history(&[1.0; 5]);
        assert_eq!(flat.lr_trajectory(), vec![1e-3; 5]);
        assert_eq!(lr_schedule(&flat, 5), 5e-4);
        assert_eq!(lr_schedule(&history(&[1.0; 4]), 5), 1e-3);
        let reset = history(&[1.0, 1.0, 1.0, 0.9, 0.95]);
        assert_eq!(lr_schedule(&reset, 5), 1e-3);
        let long = history(&[1.0; 12]);
        assert_eq!(lr_schedule(&long, 5), 2.5e-4);
        assert!(long.lr_trajectory().windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(long.lr_trajectory()[5], 5e-4);
    }

    #[test]
    fn log_and_trajectory() {
        let run = history(&[0.9, 1.2, 0.7]);
        assert_eq!(run.best_val_trajectory(), vec![1.0, 0.9, 0.9, 0.7]);
        let csv = run.log_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TrainConfig { lr: 3e-3, epochs: 7, seed: 9, ..TrainConfig::default() };
        let mut doc = KvDoc::default();
        cfg.write_kv(&mut doc, "train");
        assert_eq!(TrainConfig::read_kv(&doc, "train", &[]).unwrap(), cfg);
        assert!(TrainConfig { lr: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..cfg }.validate().is_err());
    }
}
