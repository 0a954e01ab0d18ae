use super::dconnear::{add_block, run_blocks, BlockIds};
use super::spec::ModelSpec;
use super::Network;
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Tracer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fibre types in output channel order.
pub const FIBER_TYPES: [&str; 3] = ["HSR", "MSR", "LSR"];

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    blocks: Vec<BlockIds>,
    w: ParamId,
    b: ParamId,
}

/// Shared trunk feeding three per-fibre-type branches.
#[derive(Debug, Clone, PartialEq)]
pub struct AnfThreeBranch {
    shared: ModelSpec,
    branch: ModelSpec,
    params: ParamStore,
    w_in: ParamId,
    b_in: ParamId,
    trunk: Vec<BlockIds>,
    branches: Vec<Branch>,
}

/// `shared` sets the input projection and trunk blocks; `branch` the blocks and head of each branch.
pub fn build_anf_threebranch(shared: &ModelSpec, branch: &ModelSpec, seed: u64) -> Result<AnfThreeBranch> {
    shared.validate()?;
    branch.validate()?;
    if shared.h != branch.h {
        return Err(Error::InvalidSpec(format!("trunk width {} differs from branch width {}", shared.h, branch.h)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let n = shared.blocks() + branch.blocks();
    let w_in = p.add_uniform("in.W", &[shared.h, shared.c_in], shared.c_in, &mut rng);
    let b_in = p.add_const("in.B", &[shared.h], 0.0);
    let trunk = (0..shared.blocks())
        .map(|i| add_block(&mut p, &format!("trunk{i}"), shared, shared.dilation(i), 1.0 / n as f64, &mut rng))
        .collect();
    let branches = FIBER_TYPES
        .iter()
        .map(|ty| {
            let blocks = (0..branch.blocks())
                .map(|i| add_block(&mut p, &format!("{ty}.block{i}"), branch, branch.dilation(i), 1.0 / n as f64, &mut rng))
                .collect();
            let w = p.add_uniform(format!("{ty}.out.W"), &[1, branch.h], branch.h, &mut rng);
            let b = p.add_const(format!("{ty}.out.B"), &[1], 0.0);
            Branch { blocks, w, b }
        })
        .collect();
    Ok(AnfThreeBranch { shared: shared.clone(), branch: branch.clone(), params: p, w_in, b_in, trunk, branches })
}

impl AnfThreeBranch {
    /// Splits a single spec: the first repeat is the trunk, the remaining `R - 1` repeats form each branch.
    pub fn from_spec(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.r < 2 {
            return Err(Error::InvalidSpec("three-branch model needs R >= 2".into()));
        }
        let shared = ModelSpec { r: 1, c_out: 1, ..spec.clone() };
        let branch = ModelSpec { r: spec.r - 1, ..shared.clone() };
        build_anf_threebranch(&shared, &branch, seed)
    }

    pub fn shared_spec(&self) -> &ModelSpec {
        &self.shared
    }

    pub fn branch_spec(&self) -> &ModelSpec {
        &self.branch
    }

    fn trunk<T: Tracer>(&self, t: &mut T, x: &T::V) -> (T::V, T::V) {
        let w = t.param(&self.params, self.w_in);
        let b = t.param(&self.params, self.b_in);
        let h = t.pointwise(x, &w, Some(&b));
        run_blocks(t, &self.params, &self.trunk, self.shared.act_hidden, h, None)
    }

    /// Untrimmed skip sum of one branch path before its head.
    pub fn trace_path<T: Tracer>(&self, t: &mut T, x: &T::V, branch: usize) -> T::V {
        let (h, skip) = self.trunk(t, x);
        run_blocks(t, &self.params, &self.branches[branch].blocks, self.branch.act_hidden, h, Some(skip)).1
    }
}

impl Network for AnfThreeBranch {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.shared.c_in
    }

    fn out_channels(&self) -> usize {
        FIBER_TYPES.len()
    }

    fn context(&self) -> (usize, usize) {
        (self.shared.l_l, self.shared.l_r)
    }

    fn trace<T: Tracer>(&self, t: &mut T, x: &T::V) -> T::V {
        let (h, skip) = self.trunk(t, x);
        let outs: Vec<T::V> = self
            .branches
            .iter()
            .map(|br| {
                let s = run_blocks(t, &self.params, &br.blocks, self.branch.act_hidden, h.clone(), Some(skip.clone())).1;
                let w = t.param(&self.params, br.w);
                let b = t.param(&self.params, br.b);
                let y = t.pointwise(&s, &w, Some(&b));
                t.map(&y, self.branch.act_out)
            })
            .collect();
        let refs: Vec<&T::V> = outs.iter().collect();
        let y = t.concat(&refs);
        t.trim(&y, self.shared.l_l, self.shared.l_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FeatureMap;

    fn small() -> ModelSpec {
        ModelSpec { m: 2, r: 2, k1: 3, k2: 2, h: 4, l_l: 5, l_r: 2, ..ModelSpec::anf() }
    }

    #[test]
    fn three_nonnegative_outputs() {
        let m = AnfThreeBranch::from_spec(&small(), 0).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = m.forward(&FeatureMap::from_samples(&x).unwrap()).unwrap();
        assert_eq!((y.channels(), y.time()), (3, 33));
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn branches_are_independent() {
        let mut m = AnfThreeBranch::from_spec(&small(), 1).unwrap();
        let x = FeatureMap::from_samples(&(0..40).map(|i| (i as f64 * 0.3).cos()).collect::<Vec<_>>()).unwrap();
        let before = m.forward(&x).unwrap();
        let id = m.params().find("LSR.block0.V").unwrap();
        m.params_mut().value_mut(id).mapv_inplace(|v| v * 3.0 + 0.1);
        let after = m.forward(&x).unwrap();
        assert_eq!(before.channel(0), after.channel(0));
        assert_eq!(before.channel(1), after.channel(1));
        assert_ne!(before.channel(2), after.channel(2));
    }

    #[test]
    fn needs_two_repeats() {
        assert!(AnfThreeBranch::from_spec(&ModelSpec { r: 1, ..small() }, 0).is_err());
    }

    #[test]
    fn zero_input_gives_rectified_head_bias() {
        let mut m = AnfThreeBranch::from_spec(&small(), 2).unwrap();
        for (i, ty) in FIBER_TYPES.iter().enumerate() {
            let id = m.params().find(&format!("{ty}.out.B")).unwrap();
            m.params_mut().value_mut(id).fill(i as f64 - 1.0);
        }
        let y = m.forward(&FeatureMap::from_samples(&[0.0; 30]).unwrap()).unwrap();
        for (c, expect) in [0.0, 0.0, 1.0].into_iter().enumerate() {
            assert!(y.channel(c).iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn identical_branches_give_identical_outputs() {
        let mut m = AnfThreeBranch::from_spec(&small(), 3).unwrap();
        let names: Vec<String> = m.params().iter().map(|(n, _)| n.to_string()).filter(|n| n.starts_with("HSR.")).collect();
        for n in names {
            let v = m.params().value(m.params().find(&n).unwrap()).clone();
            for ty in ["MSR", "LSR"] {
                let id = m.params().find(&n.replacen("HSR", ty, 1)).unwrap();
                m.params_mut().set(id, v.clone()).unwrap();
            }
        }
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.9).sin()).collect();
        let y = m.forward(&FeatureMap::from_samples(&x).unwrap()).unwrap();
        assert_eq!(y.channel(0), y.channel(1));
        assert_eq!(y.channel(0), y.channel(2));
    }
}
