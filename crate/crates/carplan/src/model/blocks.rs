//! Parameter bundles for the standard sublayers. Each struct owns ParamIds
//! registered at construction; forwards look the live values up through the
//! per-tape binding.

use rand_chacha::ChaCha8Rng;

use crate::numerics::{
    linear_op, mlp2, multi_head_attention, AttentionWeights, Binding, ParamId, ParamStore, Tape,
    ValueId,
};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LinearP {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearP {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, din: usize, dout: usize) -> Self {
        LinearP {
            w: ps.register(&format!("{name}.w"), din, dout, din, rng),
            b: ps.register(&format!("{name}.b"), 1, dout, din, rng),
        }
    }

    pub fn fwd(&self, t: &mut Tape, bind: &Binding, x: ValueId) -> ValueId {
        linear_op(t, x, bind.id(self.w), bind.id(self.b))
    }
}

/// Two linear layers with ReLU between.
#[derive(Debug, Clone)]
pub struct MlpP {
    pub l1: LinearP,
    pub l2: LinearP,
}

impl MlpP {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        din: usize,
        hidden: usize,
        dout: usize,
    ) -> Self {
        MlpP {
            l1: LinearP::new(ps, rng, &format!("{name}.l1"), din, hidden),
            l2: LinearP::new(ps, rng, &format!("{name}.l2"), hidden, dout),
        }
    }

    pub fn fwd(&self, t: &mut Tape, bind: &Binding, x: ValueId) -> ValueId {
        mlp2(
            t,
            x,
            bind.id(self.l1.w),
            bind.id(self.l1.b),
            bind.id(self.l2.w),
            bind.id(self.l2.b),
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormP {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormP {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNormP {
            gain: ps.register_const(&format!("{name}.gain"), 1, dim, 1.0),
            bias: ps.register_const(&format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn fwd(&self, t: &mut Tape, bind: &Binding, x: ValueId) -> ValueId {
        t.layer_norm(x, bind.id(self.gain), bind.id(self.bias), LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
    pub n_heads: usize,
}

impl AttnP {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, n_heads: usize) -> Self {
        AttnP {
            q: LinearP::new(ps, rng, &format!("{name}.q"), d, d),
            k: LinearP::new(ps, rng, &format!("{name}.k"), d, d),
            v: LinearP::new(ps, rng, &format!("{name}.v"), d, d),
            o: LinearP::new(ps, rng, &format!("{name}.o"), d, d),
            n_heads,
        }
    }

    pub fn weights(&self, bind: &Binding) -> AttentionWeights {
        AttentionWeights {
            wq: bind.id(self.q.w),
            bq: bind.id(self.q.b),
            wk: bind.id(self.k.w),
            bk: bind.id(self.k.b),
            wv: bind.id(self.v.w),
            bv: bind.id(self.v.b),
            wo: bind.id(self.o.w),
            bo: bind.id(self.o.b),
        }
    }

    pub fn fwd(
        &self,
        t: &mut Tape,
        bind: &Binding,
        q: ValueId,
        k: ValueId,
        v: ValueId,
        key_mask: Option<&[bool]>,
    ) -> ValueId {
        let w = self.weights(bind);
        multi_head_attention(t, q, k, v, &w, self.n_heads, key_mask)
    }
}
