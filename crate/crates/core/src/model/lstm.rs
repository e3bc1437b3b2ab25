use super::Initializer;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tensor, Var, Graph};

/// Gate rows are laid out as `[input; forget; candidate; output]`.
#[derive(Clone, Debug)]
pub(crate) struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn create(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init: &mut Initializer,
    ) -> Self {
        let w_ih = store.add(format!("{prefix}.w_ih"), init.matrix(4 * hidden, input_dim));
        let w_hh = store.add(format!("{prefix}.w_hh"), init.matrix(4 * hidden, hidden));
        let mut b = Tensor::zeros(4 * hidden, 1);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{prefix}.bias"), b);
        Self {
            w_ih,
            w_hh,
            bias,
            hidden,
        }
    }

    /// One step on column vectors `x [in x 1]`, `h, c [d x 1]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden;
        let (w_ih, w_hh, b) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        let xi = g.matmul(w_ih, x)?;
        let hh = g.matmul(w_hh, h)?;
        let pre = g.add(xi, hh)?;
        let pre = g.add(pre, b)?;

        let i = g.slice_rows(pre, 0, d)?;
        let f = g.slice_rows(pre, d, d)?;
        let cand = g.slice_rows(pre, 2 * d, d)?;
        let o = g.slice_rows(pre, 3 * d, d)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);

        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
