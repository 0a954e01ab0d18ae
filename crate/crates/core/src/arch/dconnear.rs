use super::spec::ModelSpec;
use super::Network;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Direction, FeatureMap, MapFn, ParamId, ParamStore, Tracer};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter handles of one memory block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockIds {
    pub w: ParamId,
    pub b: ParamId,
    pub a: ParamId,
    pub future: Option<ParamId>,
    pub v: ParamId,
    pub u: ParamId,
    pub skip: ParamId,
    pub dilation: usize,
}

pub(crate) fn add_block(
    store: &mut ParamStore,
    prefix: &str,
    spec: &ModelSpec,
    dilation: usize,
    skip_init: f64,
    rng: &mut ChaCha8Rng,
) -> BlockIds {
    let h = spec.h;
    BlockIds {
        w: store.add_uniform(format!("{prefix}.W"), &[h, h], h, rng),
        b: store.add_const(format!("{prefix}.B"), &[h], 0.0),
        a: store.add_uniform(format!("{prefix}.a"), &[h, spec.k1], spec.k1, rng),
        future: (spec.k2 > 0).then(|| store.add_uniform(format!("{prefix}.b"), &[h, spec.k2], spec.k2, rng)),
        v: store.add_uniform(format!("{prefix}.V"), &[h, h], h, rng),
        u: store.add_const(format!("{prefix}.U"), &[h], 0.0),
        skip: store.add_const(format!("{prefix}.skip"), &[1], skip_init),
        dilation,
    }
}

/// Runs `blocks` on stream `h`, adding each block's post-residual stream into `skip`.
pub(crate) fn run_blocks<T: Tracer>(
    t: &mut T,
    store: &ParamStore,
    blocks: &[BlockIds],
    act: Activation,
    mut h: T::V,
    mut skip: Option<T::V>,
) -> (T::V, T::V) {
    for blk in blocks {
        let w = t.param(store, blk.w);
        let b = t.param(store, blk.b);
        let y = t.pointwise(&h, &w, Some(&b));
        let a = t.param(store, blk.a);
        let hist = t.depthwise(&y, &a, blk.dilation, Direction::History);
        let mut yt = t.add(&y, &hist);
        if let Some(fid) = blk.future {
            let f = t.param(store, fid);
            let fut = t.depthwise(&y, &f, blk.dilation, Direction::Future);
            yt = t.add(&yt, &fut);
        }
        let z = t.map(&yt, act);
        let v = t.param(store, blk.v);
        let u = t.param(store, blk.u);
        let out = t.pointwise(&z, &v, Some(&u));
        h = t.add(&h, &out);
        let s = t.param(store, blk.skip);
        let contrib = t.scale_by(&h, &s);
        skip = Some(match skip {
            Some(acc) => t.add(&acc, &contrib),
            None => contrib,
        });
    }
    let skip = skip.unwrap_or_else(|| h.clone());
    (h, skip)
}

/// Dilated memory-block network.
#[derive(Debug, Clone, PartialEq)]
pub struct DConnear {
    spec: ModelSpec,
    params: ParamStore,
    w_in: ParamId,
    b_in: ParamId,
    blocks: Vec<BlockIds>,
    w_out: ParamId,
    b_out: ParamId,
}

pub fn build_dconnear(spec: &ModelSpec, seed: u64) -> Result<DConnear> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let w_in = p.add_uniform("in.W", &[spec.h, spec.c_in], spec.c_in, &mut rng);
    let b_in = p.add_const("in.B", &[spec.h], 0.0);
    let n = spec.blocks();
    let blocks = (0..n)
        .map(|i| add_block(&mut p, &format!("block{i}"), spec, spec.dilation(i), 1.0 / n as f64, &mut rng))
        .collect();
    let (w_out, b_out) = if spec.passthrough {
        (p.add_const("out.W", &[spec.c_out, spec.h], 0.0), p.add_const("out.B", &[spec.c_out], 0.0))
    } else {
        (p.add_uniform("out.W", &[spec.c_out, spec.h], spec.h, &mut rng), p.add_const("out.B", &[spec.c_out], 0.0))
    };
    Ok(DConnear { spec: spec.clone(), params: p, w_in, b_in, blocks, w_out, b_out })
}

impl DConnear {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[BlockIds] {
        &self.blocks
    }

    /// Skip-path sum before the head, untrimmed.
    pub fn trace_trunk<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let w = t.param(&self.params, self.w_in);
        let b = t.param(&self.params, self.b_in);
        let h = t.pointwise(x, &w, Some(&b));
        run_blocks(t, &self.params, &self.blocks, self.spec.act_hidden, h, None).1
    }

    /// Standalone copy of block `i` for direct evaluation.
    pub fn memory_block(&self, i: usize) -> MemoryBlock {
        let blk = &self.blocks[i];
        let a2 = |id: ParamId| self.params.value(id).clone().into_dimensionality().expect("matrix");
        let a1 = |id: ParamId| self.params.value(id).clone().into_dimensionality().expect("vector");
        MemoryBlock {
            w: a2(blk.w),
            b: a1(blk.b),
            a: a2(blk.a),
            future: blk.future.map(a2),
            v: a2(blk.v),
            u: a1(blk.u),
            dilation: blk.dilation,
            act: self.spec.act_hidden,
        }
    }
}

impl Network for DConnear {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.spec.c_in
    }

    fn out_channels(&self) -> usize {
        self.spec.c_out
    }

    fn context(&self) -> (usize, usize) {
        (self.spec.l_l, self.spec.l_r)
    }

    fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let skip = self.trace_trunk(t, x);
        let z = t.map(&skip, self.spec.act_out);
        let w = t.param(&self.params, self.w_out);
        let b = t.param(&self.params, self.b_out);
        let mut y = t.pointwise(&z, &w, Some(&b));
        if self.spec.passthrough {
            y = t.add(&y, x);
        }
        t.trim(&y, self.spec.l_l, self.spec.l_r)
    }
}

/// One memory block as plain arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBlock {
    /// Input projection producing `Y`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// History taps, `(H, K1)`.
    pub a: Array2<f64>,
    /// Future taps, `(H, K2)`.
    pub future: Option<Array2<f64>>,
    pub v: Array2<f64>,
    pub u: Array1<f64>,
    pub dilation: usize,
    pub act: Activation,
}

/// `V f(Y + sum_i a_i Y[t - d i] + sum_j b_j Y[t + d j]) + U` for an already projected `y`.
pub fn memory_block_forward(y: &FeatureMap, block: &MemoryBlock) -> Result<FeatureMap> {
    let h = block.a.dim().0;
    if y.channels() != h {
        return Err(Error::shape(format!("memory block expects {h} channels, got {}", y.channels())));
    }
    let mut yt = y.data() + nn::dilated_depthwise_conv(y, &block.a, block.dilation, Direction::History)?.data();
    if let Some(f) = &block.future {
        yt += nn::dilated_depthwise_conv(y, f, block.dilation, Direction::Future)?.data();
    }
    let f = MapFn::Act(block.act);
    let z = FeatureMap::new(yt.mapv(|v| f.eval(v)))?;
    nn::pointwise_conv(&z, &block.v, &block.u)
}
