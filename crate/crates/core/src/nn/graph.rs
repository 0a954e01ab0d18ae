//! Reverse-mode differentiation over a recorded tape, plus an eager evaluator
//! sharing the same operator set so models are written once.

use super::kernels::{self, Direction};
use super::{MapFn, ParamId, ParamStore};
use crate::signal::{fir_filter, fir_filter_adjoint, LtiFilter};
use ndarray::{s, Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayView3, Axis, Ix1, Ix2, Ix3, IxDyn};
use std::rc::Rc;

/// Differentiable operators. Time-series operands are `(channels, time)`.
#[derive(Debug, Clone)]
pub enum Op {
    /// `x, w[, b]`: `w` is `(c_out, c_in)`.
    Pointwise { bias: bool },
    /// `x, w[, b]`: `w` is `(c_out, c_in, k)`, "same" padding, output `ceil(t / stride)`.
    Conv { stride: usize, bias: bool },
    /// `x, w[, b]`: `w` is `(c_in, c_out, k)`, output `t * stride`.
    ConvTranspose { stride: usize, bias: bool },
    /// `x, coeffs`: `coeffs` is `(c, k)`.
    Depthwise { dilation: usize, direction: Direction },
    PixelShuffle(usize),
    Upsample(usize),
    /// Centred per-channel FIR.
    Fir(Rc<Vec<f64>>),
    Map(MapFn),
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    /// `x, s` with `s` a one-element array.
    ScaleBy,
    ChannelGain(Rc<Vec<f64>>),
    Trim { left: usize, right: usize },
    /// Zero padding in time.
    Pad { left: usize, right: usize },
    /// One filter per output channel; a single-channel input fans out, a single filter is shared.
    FilterBank(Rc<Vec<LtiFilter>>),
    SumChannels,
    /// Stack inputs along the channel axis.
    Concat,
    SliceChannels { start: usize, len: usize },
    SumAll,
    Mae,
    Mse,
}

fn v2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected a (channels, time) array")
}

fn v1(a: &ArrayD<f64>) -> ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("expected a vector")
}

fn v3(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("expected a 3-D kernel")
}

fn scalar(x: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[1]), x)
}

fn rows_map(x: ArrayView2<f64>, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> Array2<f64> {
    let (c, _) = x.dim();
    let rows: Vec<Vec<f64>> = (0..c).map(|ch| f(ch, &x.row(ch).to_vec())).collect();
    let t = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((c, t), |(i, j)| rows[i][j])
}

fn filter_bank(filters: &[LtiFilter], x: ArrayView2<f64>, adjoint: bool) -> Array2<f64> {
    let (c, t) = x.dim();
    let run = |f: &LtiFilter, row: &[f64]| if adjoint { f.adjoint(row) } else { f.apply(row) };
    if c == 1 && filters.len() > 1 && !adjoint {
        let row = x.row(0).to_vec();
        let mut y = Array2::zeros((filters.len(), t));
        for (i, f) in filters.iter().enumerate() {
            y.row_mut(i).assign(&Array1::from(run(f, &row)));
        }
        y
    } else {
        assert!(filters.len() == 1 || filters.len() == c, "filter bank size mismatch");
        rows_map(x, |ch, row| run(&filters[if filters.len() == 1 { 0 } else { ch }], row))
    }
}

impl Op {
    pub fn eval(&self, ins: &[&ArrayD<f64>]) -> ArrayD<f64> {
        let out: ArrayD<f64> = match self {
            Op::Pointwise { bias } => {
                kernels::pointwise(v2(ins[0]), v2(ins[1]), bias.then(|| v1(ins[2]))).into_dyn()
            }
            Op::Conv { stride, bias } => {
                let k = ins[1].shape()[2];
                let t_out = ins[0].shape()[1].div_ceil(*stride);
                kernels::conv(v2(ins[0]), v3(ins[1]), bias.then(|| v1(ins[2])), *stride, kernels::same_pad(k), t_out)
                    .into_dyn()
            }
            Op::ConvTranspose { stride, bias } => {
                kernels::conv_transpose(v2(ins[0]), v3(ins[1]), bias.then(|| v1(ins[2])), *stride).into_dyn()
            }
            Op::Depthwise { dilation, direction } => {
                kernels::depthwise(v2(ins[0]), v2(ins[1]), *dilation, *direction).into_dyn()
            }
            Op::PixelShuffle(r) => kernels::pixel_shuffle(v2(ins[0]), *r).into_dyn(),
            Op::Upsample(r) => kernels::upsample(v2(ins[0]), *r).into_dyn(),
            Op::Fir(taps) => rows_map(v2(ins[0]), |_, row| fir_filter(row, taps)).into_dyn(),
            Op::Map(f) => ins[0].mapv(|x| f.eval(x)),
            Op::Add => ins[0] + ins[1],
            Op::Sub => ins[0] - ins[1],
            Op::Mul => ins[0] * ins[1],
            Op::Div => ins[0] / ins[1],
            Op::Scale(c) => ins[0] * *c,
            Op::ScaleBy => ins[0] * ins[1][[0]],
            Op::ChannelGain(g) => {
                let g = ArrayView1::from(g.as_slice());
                (&v2(ins[0]) * &g.insert_axis(Axis(1))).into_dyn()
            }
            Op::Trim { left, right } => {
                let t = ins[0].shape()[1];
                v2(ins[0]).slice(s![.., *left..t - *right]).to_owned().into_dyn()
            }
            Op::Pad { left, right } => {
                let (c, t) = (ins[0].shape()[0], ins[0].shape()[1]);
                let mut y = Array2::zeros((c, left + t + right));
                y.slice_mut(s![.., *left..left + t]).assign(&v2(ins[0]));
                y.into_dyn()
            }
            Op::FilterBank(f) => filter_bank(f, v2(ins[0]), false).into_dyn(),
            Op::SumChannels => v2(ins[0]).sum_axis(Axis(0)).insert_axis(Axis(0)).into_dyn(),
            Op::Concat => {
                let views: Vec<ArrayView2<f64>> = ins.iter().map(|a| v2(a)).collect();
                ndarray::concatenate(Axis(0), &views).expect("equal time lengths").into_dyn()
            }
            Op::SliceChannels { start, len } => v2(ins[0]).slice(s![*start..*start + *len, ..]).to_owned().into_dyn(),
            Op::SumAll => scalar(ins[0].sum()),
            Op::Mae => scalar((ins[0] - ins[1]).mapv(f64::abs).mean().unwrap_or(0.0)),
            Op::Mse => scalar((ins[0] - ins[1]).mapv(|d| d * d).mean().unwrap_or(0.0)),
        };
        out
    }

    /// Vector-Jacobian products: one gradient per input.
    pub fn vjp(&self, ins: &[&ArrayD<f64>], g: &ArrayD<f64>) -> Vec<ArrayD<f64>> {
        match self {
            Op::Pointwise { bias } => {
                let (x, w, gy) = (v2(ins[0]), v2(ins[1]), v2(g));
                let mut out = vec![w.t().dot(&gy).into_dyn(), gy.dot(&x.t()).into_dyn()];
                if *bias {
                    out.push(kernels::sum_time(gy).into_dyn());
                }
                out
            }
            Op::Conv { stride, bias } => {
                let (x, w, gy) = (v2(ins[0]), v3(ins[1]), v2(g));
                let k = w.dim().2;
                let pad = kernels::same_pad(k);
                let mut out = vec![
                    kernels::conv_input_grad(gy, w, *stride, pad, x.dim().1).into_dyn(),
                    kernels::conv_weight_grad(x, gy, k, *stride, pad).into_dyn(),
                ];
                if *bias {
                    out.push(kernels::sum_time(gy).into_dyn());
                }
                out
            }
            Op::ConvTranspose { stride, bias } => {
                let (x, w, gy) = (v2(ins[0]), v3(ins[1]), v2(g));
                let k = w.dim().2;
                let pad = kernels::transpose_pad(k, *stride);
                let mut out = vec![
                    kernels::conv(gy, w, None, *stride, pad, x.dim().1).into_dyn(),
                    kernels::conv_weight_grad(gy, x, k, *stride, pad).into_dyn(),
                ];
                if *bias {
                    out.push(kernels::sum_time(gy).into_dyn());
                }
                out
            }
            Op::Depthwise { dilation, direction } => {
                let (dx, dc) = kernels::depthwise_backward(v2(ins[0]), v2(ins[1]), v2(g), *dilation, *direction);
                vec![dx.into_dyn(), dc.into_dyn()]
            }
            Op::PixelShuffle(r) => vec![kernels::pixel_unshuffle(v2(g), *r).into_dyn()],
            Op::Upsample(r) => vec![kernels::upsample_adjoint(v2(g), *r).into_dyn()],
            Op::Fir(taps) => vec![rows_map(v2(g), |_, row| fir_filter_adjoint(row, taps)).into_dyn()],
            Op::Map(f) => {
                let mut d = ins[0].mapv(|x| f.derivative(x));
                d *= g;
                vec![d]
            }
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), -g],
            Op::Mul => vec![g * ins[1], g * ins[0]],
            Op::Div => {
                let ga = g / ins[1];
                let gb = -(&ga * ins[0]) / ins[1];
                vec![ga, gb]
            }
            Op::Scale(c) => vec![g * *c],
            Op::ScaleBy => vec![g * ins[1][[0]], scalar((g * ins[0]).sum())],
            Op::ChannelGain(gains) => vec![Op::ChannelGain(gains.clone()).eval(&[g])],
            Op::Trim { left, right } => {
                let (c, t) = (ins[0].shape()[0], ins[0].shape()[1]);
                let mut dx = Array2::zeros((c, t));
                dx.slice_mut(s![.., *left..t - *right]).assign(&v2(g));
                vec![dx.into_dyn()]
            }
            Op::Pad { left, right } => vec![Op::Trim { left: *left, right: *right }.eval(&[g])],
            Op::FilterBank(f) => {
                let x = v2(ins[0]);
                let back = filter_bank(f, v2(g), true);
                if x.dim().0 == 1 && back.dim().0 > 1 {
                    vec![back.sum_axis(Axis(0)).insert_axis(Axis(0)).into_dyn()]
                } else {
                    vec![back.into_dyn()]
                }
            }
            Op::SumChannels => {
                let (c, t) = (ins[0].shape()[0], ins[0].shape()[1]);
                let row = v2(g).row(0).to_owned();
                vec![row.broadcast((c, t)).expect("broadcast").to_owned().into_dyn()]
            }
            Op::Concat => {
                let mut at = 0;
                ins.iter()
                    .map(|a| {
                        let c = a.shape()[0];
                        let part = v2(g).slice(s![at..at + c, ..]).to_owned().into_dyn();
                        at += c;
                        part
                    })
                    .collect()
            }
            Op::SliceChannels { start, len } => {
                let mut dx = Array2::zeros((ins[0].shape()[0], ins[0].shape()[1]));
                dx.slice_mut(s![*start..*start + *len, ..]).assign(&v2(g));
                vec![dx.into_dyn()]
            }
            Op::SumAll => vec![ArrayD::from_elem(ins[0].raw_dim(), g[[0]])],
            Op::Mae => {
                let n = ins[0].len().max(1) as f64;
                let c = g[[0]] / n;
                let da = (ins[0] - ins[1]).mapv(|d| if d > 0.0 { c } else if d < 0.0 { -c } else { 0.0 });
                let db = -&da;
                vec![da, db]
            }
            Op::Mse => {
                let n = ins[0].len().max(1) as f64;
                let da = (ins[0] - ins[1]) * (2.0 * g[[0]] / n);
                let db = -&da;
                vec![da, db]
            }
        }
    }
}

/// Evaluation context shared by the tape and the eager evaluator.
pub trait Tracer {
    type V: Clone;

    fn constant(&mut self, x: ArrayD<f64>) -> Self::V;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a ArrayD<f64>;
    fn apply(&mut self, op: Op, ins: &[&Self::V]) -> Self::V;

    /// Whether parameters traced from now on receive gradients.
    fn trainable(&self) -> bool {
        false
    }

    fn set_trainable(&mut self, _on: bool) {}

    fn constant2(&mut self, x: Array2<f64>) -> Self::V {
        self.constant(x.into_dyn())
    }

    fn pointwise(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Self::V {
        match b {
            Some(b) => self.apply(Op::Pointwise { bias: true }, &[x, w, b]),
            None => self.apply(Op::Pointwise { bias: false }, &[x, w]),
        }
    }

    fn conv(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, stride: usize) -> Self::V {
        match b {
            Some(b) => self.apply(Op::Conv { stride, bias: true }, &[x, w, b]),
            None => self.apply(Op::Conv { stride, bias: false }, &[x, w]),
        }
    }

    fn conv_transpose(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>, stride: usize) -> Self::V {
        match b {
            Some(b) => self.apply(Op::ConvTranspose { stride, bias: true }, &[x, w, b]),
            None => self.apply(Op::ConvTranspose { stride, bias: false }, &[x, w]),
        }
    }

    fn depthwise(&mut self, x: &Self::V, coeffs: &Self::V, dilation: usize, direction: Direction) -> Self::V {
        self.apply(Op::Depthwise { dilation, direction }, &[x, coeffs])
    }

    fn map(&mut self, x: &Self::V, f: impl Into<MapFn>) -> Self::V {
        self.apply(Op::Map(f.into()), &[x])
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Mul, &[a, b])
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Div, &[a, b])
    }

    fn scale(&mut self, x: &Self::V, c: f64) -> Self::V {
        self.apply(Op::Scale(c), &[x])
    }

    fn scale_by(&mut self, x: &Self::V, s: &Self::V) -> Self::V {
        self.apply(Op::ScaleBy, &[x, s])
    }

    fn trim(&mut self, x: &Self::V, left: usize, right: usize) -> Self::V {
        if left == 0 && right == 0 {
            return x.clone();
        }
        self.apply(Op::Trim { left, right }, &[x])
    }

    fn pad(&mut self, x: &Self::V, left: usize, right: usize) -> Self::V {
        if left == 0 && right == 0 {
            return x.clone();
        }
        self.apply(Op::Pad { left, right }, &[x])
    }

    fn sum_channels(&mut self, x: &Self::V) -> Self::V {
        self.apply(Op::SumChannels, &[x])
    }

    fn concat(&mut self, parts: &[&Self::V]) -> Self::V {
        self.apply(Op::Concat, parts)
    }

    fn slice_channels(&mut self, x: &Self::V, start: usize, len: usize) -> Self::V {
        self.apply(Op::SliceChannels { start, len }, &[x])
    }

    fn mae(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Mae, &[a, b])
    }

    fn mse(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        self.apply(Op::Mse, &[a, b])
    }
}

/// Immediate evaluation without recording; used for inference and targets.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Tracer for Eager {
    type V = ArrayD<f64>;

    fn constant(&mut self, x: ArrayD<f64>) -> ArrayD<f64> {
        x
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> ArrayD<f64> {
        store.value(id).clone()
    }

    fn value<'a>(&'a self, v: &'a ArrayD<f64>) -> &'a ArrayD<f64> {
        v
    }

    fn apply(&mut self, op: Op, ins: &[&ArrayD<f64>]) -> ArrayD<f64> {
        op.eval(ins)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
struct Node {
    value: ArrayD<f64>,
    op: Option<Op>,
    inputs: Vec<usize>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Recorded computation supporting one reverse sweep per loss.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    trainable: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), trainable: true }
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, x: ArrayD<f64>) -> NodeId {
        self.push(x, None, Vec::new(), None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Option<Op>, inputs: Vec<usize>, param: Option<ParamId>, rg: bool) -> NodeId {
        self.nodes.push(Node { value, op, inputs, param, requires_grad: rg });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));
        let mut leaves = vec![None; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                leaves[i] = Some(g);
                continue;
            };
            let ins: Vec<&ArrayD<f64>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            for (&j, gj) in node.inputs.iter().zip(op.vjp(&ins, &g)) {
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => *acc += &gj,
                    slot => *slot = Some(gj),
                }
            }
        }
        Gradients { leaves }
    }

    /// Add parameter gradients from `grads` into `store`'s gradient slots.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads.leaves[i]) {
                *store.grad_mut(id) += g;
            }
        }
    }
}

impl Tracer for Graph {
    type V = NodeId;

    fn trainable(&self) -> bool {
        self.trainable
    }

    /// Parameters read while this is false are treated as constants and never receive gradients.
    fn set_trainable(&mut self, on: bool) {
        self.trainable = on;
    }

    fn constant(&mut self, x: ArrayD<f64>) -> NodeId {
        self.push(x, None, Vec::new(), None, false)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let tr = self.trainable;
        self.push(store.value(id).clone(), None, Vec::new(), tr.then_some(id), tr)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a ArrayD<f64> {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Op, ins: &[&NodeId]) -> NodeId {
        let idx: Vec<usize> = ins.iter().map(|n| n.0).collect();
        let rg = idx.iter().any(|&j| self.nodes[j].requires_grad);
        let value = {
            let vals: Vec<&ArrayD<f64>> = idx.iter().map(|&j| &self.nodes[j].value).collect();
            op.eval(&vals)
        };
        self.push(value, Some(op), idx, None, rg)
    }
}

/// Leaf gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&ArrayD<f64>> {
        self.leaves.get(leaf.0).and_then(Option::as_ref)
    }
}
