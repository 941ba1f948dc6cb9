use ndarray::Array2;

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Affine layer `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: store.add(&format!("{name}.weight"), &[fan_in, fan_out], Init::FanIn)?,
            bias: store.add(&format!("{name}.bias"), &[fan_out], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Layer normalization with learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(&format!("{name}.gain"), &[dim], Init::Ones)?,
            shift: store.add(&format!("{name}.shift"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.layer_norm(x);
        let g = tape.param(self.gain);
        let b = tape.param(self.shift);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// A pre-normalized transformer block:
/// `x + Attn(LN(x), LN'(kv))`, then `+ FFN(LN(.))` with a ReLU hidden layer.
///
/// Self-attention blocks attend over their own normalized input; cross
/// blocks normalize the memory with a separate layer norm.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub dim: usize,
    pub heads: usize,
    pub norm_q: LayerNorm,
    pub norm_kv: Option<LayerNorm>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

pub struct Attended {
    pub out: Var,
    /// One `queries x keys` weight matrix per head.
    pub weights: Vec<Var>,
}

impl AttentionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        cross: bool,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Shape(format!("dimension {dim} not divisible by {heads} heads")));
        }
        Ok(AttentionBlock {
            dim,
            heads,
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), dim)?,
            norm_kv: if cross {
                Some(LayerNorm::new(store, &format!("{name}.norm_kv"), dim)?)
            } else {
                None
            },
            query: Linear::new(store, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), dim)?,
            ff_in: Linear::new(store, &format!("{name}.ff_in"), dim, ff_dim)?,
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff_dim, dim)?,
        })
    }

    /// `memory = None` means self-attention. `allowed[q][k]` false hides key
    /// `k` from query `q`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        memory: Option<Var>,
        allowed: Option<&Array2<bool>>,
    ) -> Result<Attended> {
        let (rows, cols) = tape.value(x).dim();
        if cols != self.dim {
            return Err(Error::Shape(format!("query width {cols}, block width {}", self.dim)));
        }
        let h = self.norm_q.forward(tape, x);
        let kv = match (memory, &self.norm_kv) {
            (Some(m), Some(norm)) => norm.forward(tape, m),
            (Some(m), None) => self.norm_q.forward(tape, m),
            (None, _) => h,
        };
        let (keys, kv_cols) = tape.value(kv).dim();
        if kv_cols != self.dim {
            return Err(Error::Shape(format!("key width {kv_cols}, block width {}", self.dim)));
        }
        if let Some(mask) = allowed {
            if mask.dim() != (rows, keys) {
                return Err(Error::Shape(format!(
                    "mask {:?} for {rows} queries and {keys} keys",
                    mask.dim()
                )));
            }
        }
        let q = self.query.forward(tape, h);
        let k = self.key.forward(tape, kv);
        let v = self.value.forward(tape, kv);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (a, b) = (head * head_dim, (head + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, a, b), tape.slice_cols(k, a, b), tape.slice_cols(v, a, b))
            };
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let p = tape.softmax(scores, allowed);
            outs.push(tape.matmul(p, vh));
            weights.push(p);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let attn = self.output.forward(tape, joined);
        let x1 = tape.add(x, attn);
        let f = self.norm_ff.forward(tape, x1);
        let f = self.ff_in.forward(tape, f);
        let f = tape.relu(f);
        let f = self.ff_out.forward(tape, f);
        Ok(Attended {
            out: tape.add(x1, f),
            weights,
        })
    }
}

/// Allowed-mask for causal self-attention over `n` positions.
pub fn causal_mask(n: usize) -> Array2<bool> {
    Array2::from_shape_fn((n, n), |(q, k)| k <= q)
}
