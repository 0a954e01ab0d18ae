use super::{Graph, NodeId, Op, Tracer};
use ndarray::{ArrayD, IxDyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Settings for [`gradient_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub seed: u64,
    /// Per-input cap on the number of probed elements; larger inputs are subsampled.
    pub max_probes: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-4, seed: 0, max_probes: 64 }
    }
}

impl GradCheck {
    pub fn seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Maximum relative error between analytic and central-difference gradients.
///
/// The scalar checked is `sum(f(inputs) * P)` for a seeded random projection
/// `P`. Every entry of `inputs` is treated as a differentiable leaf.
pub fn gradient_check<F>(inputs: &[ArrayD<f64>], cfg: GradCheck, f: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut projection: Option<ArrayD<f64>> = None;

    let mut evaluate = |xs: &[ArrayD<f64>], rng: &mut ChaCha8Rng| -> (Graph, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = f(&mut g, &leaves);
        let p = projection
            .get_or_insert_with(|| ArrayD::from_shape_simple_fn(IxDyn(g.value(&out).shape()), || rng.gen_range(-1.0..1.0)))
            .clone();
        let pn = g.constant(p);
        let prod = g.mul(&out, &pn);
        let loss = g.apply(Op::SumAll, &[&prod]);
        (g, leaves, loss)
    };

    let (g, leaves, loss) = evaluate(inputs, &mut rng);
    let grads = g.backward(loss);
    let analytic: Vec<ArrayD<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(l, x)| grads.get(*l).cloned().unwrap_or_else(|| ArrayD::zeros(x.raw_dim())))
        .collect();
    let scale = analytic.iter().flat_map(|a| a.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-8 * scale.max(1e-300);

    let mut worst = 0.0f64;
    let mut xs: Vec<ArrayD<f64>> = inputs.iter().map(|x| x.as_standard_layout().into_owned()).collect();
    let analytic: Vec<ArrayD<f64>> = analytic.into_iter().map(|a| a.as_standard_layout().into_owned()).collect();
    for k in 0..inputs.len() {
        let n = inputs[k].len();
        let probes: Vec<usize> = if n <= cfg.max_probes {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.max_probes).into_vec();
            v.sort_unstable();
            v
        };
        for idx in probes {
            let orig = xs[k].as_slice().expect("standard layout")[idx];
            let mut at = |v: f64, xs: &mut Vec<ArrayD<f64>>, rng: &mut ChaCha8Rng| {
                xs[k].as_slice_mut().expect("standard layout")[idx] = v;
                let (g, _, l) = evaluate(xs, rng);
                g.value(&l)[[0]]
            };
            let plus = at(orig + cfg.step, &mut xs, &mut rng);
            let minus = at(orig - cfg.step, &mut xs, &mut rng);
            xs[k].as_slice_mut().expect("standard layout")[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[k].as_slice().expect("standard layout")[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Direction, MapFn};
    use std::rc::Rc;

    fn rand(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_passes() {
        let e = gradient_check(&[rand(&[3, 5], 1), rand(&[4, 3], 2), rand(&[4], 3)], GradCheck::seed(1), |g, v| {
            g.pointwise(&v[0], &v[1], Some(&v[2]))
        });
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn depthwise_passes() {
        for dir in [Direction::History, Direction::Future] {
            let e = gradient_check(&[rand(&[3, 40], 4), rand(&[3, 4], 5)], GradCheck::seed(2), |g, v| {
                g.depthwise(&v[0], &v[1], 4, dir)
            });
            assert!(e < 1e-5, "{e}");
        }
    }

    #[test]
    fn convolutions_pass() {
        let e = gradient_check(&[rand(&[2, 17], 6), rand(&[3, 2, 4], 7), rand(&[3], 8)], GradCheck::seed(3), |g, v| {
            g.conv(&v[0], &v[1], Some(&v[2]), 2)
        });
        assert!(e < 1e-5, "conv {e}");
        let e = gradient_check(&[rand(&[2, 9], 9), rand(&[2, 3, 4], 10), rand(&[3], 11)], GradCheck::seed(4), |g, v| {
            g.conv_transpose(&v[0], &v[1], Some(&v[2]), 2)
        });
        assert!(e < 1e-5, "transposed {e}");
        let e = gradient_check(&[rand(&[2, 9], 12), rand(&[4, 2, 5], 13)], GradCheck::seed(5), |g, v| {
            let c = g.conv(&v[0], &v[1], None, 1);
            g.apply(Op::PixelShuffle(2), &[&c])
        });
        assert!(e < 1e-5, "subpixel {e}");
    }

    fn u_first(g: &mut Graph, t: &NodeId) -> NodeId {
        let sq = g.mul(t, t);
        g.slice_channels(&sq, 0, 1)
    }

    #[test]
    fn elementwise_and_structural_ops_pass() {
        let taps = Rc::new(vec![0.25, 0.5, 0.25]);
        let e = gradient_check(&[rand(&[2, 12], 14), rand(&[2, 12], 15), rand(&[1], 16)], GradCheck::seed(6), |g, v| {
            let a = g.map(&v[0], Activation::Tanh);
            let b = g.map(&v[1], Activation::Sigmoid);
            let m = g.mul(&a, &b);
            let d = g.map(&v[1], MapFn::Affine { a: 0.5, b: 2.0 });
            let q = g.div(&m, &d);
            let s = g.scale_by(&q, &v[2]);
            let f = g.apply(Op::Fir(taps.clone()), &[&s]);
            let u = g.apply(Op::Upsample(3), &[&f]);
            let t = g.trim(&u, 2, 5);
            let t = g.pad(&t, 1, 3);
            let u = u_first(g, &t);
            let c = g.concat(&[&t, &u]);
            let sl = g.slice_channels(&c, 1, 2);
            g.sum_channels(&sl)
        });
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn losses_pass() {
        let e = gradient_check(&[rand(&[2, 8], 17), rand(&[2, 8], 18)], GradCheck::seed(7), |g, v| g.mae(&v[0], &v[1]));
        assert!(e < 1e-5, "{e}");
        let e = gradient_check(&[rand(&[2, 8], 19), rand(&[2, 8], 20)], GradCheck::seed(8), |g, v| g.mse(&v[0], &v[1]));
        assert!(e < 1e-5, "{e}");
    }
}
