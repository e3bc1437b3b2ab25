//! Additive attention over encoder states, single- or multi-head.
//!
//! A head scores encoder position `t` as `v . tanh(W_h h_dec + W_s k_t)`
//! where `k_t` is the encoder state (single head) or its projection
//! `W_p^k h_t` (multi-head). Multi-head contexts are stacked and mapped back
//! to `d` dimensions by a `[d x K*d]` combiner.

use super::Initializer;
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug)]
pub(crate) struct Head {
    pub proj: Option<ParamId>,
    pub w_h: ParamId,
    pub w_s: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub heads: Vec<Head>,
    pub combiner: Option<ParamId>,
}

impl Attention {
    pub fn single(store: &mut ParamStore, d: usize, init: &mut Initializer) -> Self {
        let head = Head {
            proj: None,
            w_h: store.add("attn.w_h", init.matrix(d, d)),
            w_s: store.add("attn.w_s", init.matrix(d, d)),
            v: store.add("attn.v", init.matrix(d, 1)),
        };
        Self {
            heads: vec![head],
            combiner: None,
        }
    }

    pub fn multi(store: &mut ParamStore, d: usize, k: usize, init: &mut Initializer) -> Self {
        let heads = (0..k)
            .map(|i| Head {
                proj: Some(store.add(format!("attn.{i}.w_p"), init.matrix(d, d))),
                w_h: store.add(format!("attn.{i}.w_h"), init.matrix(d, d)),
                w_s: store.add(format!("attn.{i}.w_s"), init.matrix(d, d)),
                v: store.add(format!("attn.{i}.v"), init.matrix(d, 1)),
            })
            .collect();
        let combiner = Some(store.add("attn.combiner", init.matrix(d, k * d)));
        Self { heads, combiner }
    }

    /// Context `[d x 1]` for decoder state `h [d x 1]` over `enc [T x d]`,
    /// plus each head's `[1 x T]` attention weights.
    pub fn context(&self, g: &mut Graph, h: Var, enc: Var) -> Result<(Var, Vec<Var>)> {
        let mut contexts = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let keys = match head.proj {
                Some(p) => {
                    let wp = g.param(p);
                    let wpt = g.transpose(wp);
                    g.matmul(enc, wpt)?
                }
                None => enc,
            };
            let (w_h, w_s, v) = (g.param(head.w_h), g.param(head.w_s), g.param(head.v));
            let w_st = g.transpose(w_s);
            let key_part = g.matmul(keys, w_st)?;
            let query = g.matmul(w_h, h)?;
            let query = g.transpose(query);
            let pre = g.add_row(key_part, query)?;
            let act = g.tanh(pre);
            let scores = g.matmul(act, v)?;
            let scores = g.transpose(scores);
            let alpha = g.softmax_rows(scores);
            let ctx = g.matmul(alpha, keys)?;
            contexts.push(g.transpose(ctx));
            weights.push(alpha);
        }
        let ctx = match self.combiner {
            Some(comb) => {
                let stacked = g.concat_rows(&contexts)?;
                let comb = g.param(comb);
                g.matmul(comb, stacked)?
            }
            None => contexts[0],
        };
        Ok((ctx, weights))
    }
}
