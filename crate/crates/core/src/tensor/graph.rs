use super::{gather_rows, log_softmax_rows, matmul, softmax_rows, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    SumAll(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Pick(Var, usize, usize),
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Value,
}

/// Tape of differentiable operations over a borrowed parameter store.
///
/// Nodes are appended in execution order; [`Graph::backward`] walks them in
/// reverse exactly once.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Result of one backward pass: per-parameter gradients plus the order in
/// which tape nodes were visited.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.index()].as_ref()
    }

    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn accumulate(slot: &mut Option<Tensor>, rows: usize, cols: usize, f: impl FnOnce(&mut Tensor)) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(rows, cols));
    f(t);
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// Leaf node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dims(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `[1 x n]` row to every row of an `[m x n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::dims("add_row", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.data()[i % c])
            .collect();
        let out = Tensor::new(ta.rows(), c, data)?;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log(a), out))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmaxRows(a), out)
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let out = gather_rows(self.value(table), indices)?;
        Ok(self.push(Op::GatherRows(table, indices.to_vec()), out))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(Error::dims("slice_rows", t.shape(), &[start, len]));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(len, c, data)?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    /// Stacks tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptySequence("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::dims("concat_rows", &[rows, cols], t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Scalar `[1 x 1]` node holding entry `(r, c)` of `a`.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() || c >= t.cols() {
            return Err(Error::dims("pick", t.shape(), &[r, c]));
        }
        let v = t.get(r, c);
        Ok(self.push(Op::Pick(a, r, c), Tensor::scalar(v)))
    }

    /// Reverse pass from a scalar node. Gradients of parameters reached by
    /// the pass are returned; the store itself is not modified.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::dims("backward", lt.shape(), &[1, 1]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut visited = Vec::with_capacity(loss.0 + 1);

        for idx in (0..=loss.0).rev() {
            visited.push(idx);
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, idx, &g, &mut grads, &mut param_grads);
        }
        Ok(Gradients {
            params: param_grads,
            visited,
        })
    }

    fn propagate(
        &self,
        op: &Op,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        param_grads: &mut [Option<Tensor>],
    ) {
        let out = self.value(Var(idx));
        let mut acc = |v: Var, f: &dyn Fn(&mut Tensor)| {
            let t = self.value(v);
            accumulate(&mut grads[v.0], t.rows(), t.cols(), |slot| f(slot));
        };
        match op {
            Op::Constant => {}
            Op::Param(id) => {
                accumulate(&mut param_grads[id.index()], g.rows(), g.cols(), |slot| {
                    slot.add_assign(g)
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = matmul(g, &tb.transpose()).expect("shapes checked on forward");
                let gb = matmul(&ta.transpose(), g).expect("shapes checked on forward");
                acc(*a, &|s| s.add_assign(&ga));
                acc(*b, &|s| s.add_assign(&gb));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.add_assign(g));
                acc(*b, &|s| s.add_assign(g));
            }
            Op::AddRow(a, r) => {
                acc(*a, &|s| s.add_assign(g));
                let c = g.cols();
                acc(*r, &|s| {
                    for (i, v) in g.data().iter().enumerate() {
                        s.data_mut()[i % c] += v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, &|s| zip_acc(s, g, tb, |gv, bv| gv * bv));
                acc(*b, &|s| zip_acc(s, g, ta, |gv, av| gv * av));
            }
            Op::Neg(a) => acc(*a, &|s| zip_acc(s, g, g, |gv, _| -gv)),
            Op::Scale(a, k) => {
                let k = *k;
                acc(*a, &|s| zip_acc(s, g, g, |gv, _| gv * k));
            }
            Op::Tanh(a) => acc(*a, &|s| zip_acc(s, g, out, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, &|s| zip_acc(s, g, out, |gv, y| gv * y * (1.0 - y))),
            Op::Log(a) => {
                let ta = self.value(*a);
                acc(*a, &|s| zip_acc(s, g, ta, |gv, x| gv / x));
            }
            Op::Exp(a) => acc(*a, &|s| zip_acc(s, g, out, |gv, y| gv * y)),
            Op::SumAll(a) => {
                let gv = g.item();
                acc(*a, &|s| s.data_mut().iter_mut().for_each(|x| *x += gv));
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                acc(*a, &|s| s.add_assign(&gt));
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                acc(*a, &|s| {
                    for r in 0..out.rows() {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            s.data_mut()[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let c = out.cols();
                acc(*a, &|s| {
                    for r in 0..out.rows() {
                        let y = out.row_slice(r);
                        let gr = g.row_slice(r);
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            s.data_mut()[r * c + j] += gr[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let d = g.cols();
                acc(*table, &|s| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut s.data_mut()[id * d..(id + 1) * d];
                        for (x, v) in dst.iter_mut().zip(g.row_slice(r)) {
                            *x += v;
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                let off = start * c;
                acc(*a, &|s| {
                    for (i, v) in g.data().iter().enumerate() {
                        s.data_mut()[off + i] += v;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut row = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    let chunk = &g.data()[row * c..(row + n) * c];
                    acc(p, &|s| {
                        for (x, v) in s.data_mut().iter_mut().zip(chunk) {
                            *x += v;
                        }
                    });
                    row += n;
                }
            }
            Op::Pick(a, r, c) => {
                let cols = self.value(*a).cols();
                let at = r * cols + c;
                let gv = g.item();
                acc(*a, &|s| s.data_mut()[at] += gv);
            }
        }
    }
}

fn zip_acc(slot: &mut Tensor, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((s, &gv), &o) in slot.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *s += f(gv, o);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
