//! Dense `f64` matrices and a small reverse-mode differentiation engine.
//!
//! Every tensor is two-dimensional; column vectors are `[n x 1]`. The
//! [`Graph`] records operations on a tape and replays them backward,
//! reading parameter values from a borrowed [`ParamStore`] without copying.

mod gradcheck;
mod graph;
mod init;
mod param;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use init::{glorot_bound, seeded_rng, SeededRng};
pub use param::{ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dims("tensor", &[rows, cols], &[data.len()]));
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            shape: [values.len(), 1],
            data: values,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: [1, values.len()],
            data: values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a `[1 x 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let [r, c] = self.shape;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: [c, r],
            data: out,
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub(crate) fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.shape;
    let [k2, n] = b.shape;
    if k != k2 {
        return Err(Error::dims("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: [m, n],
        data: out,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let [r, c] = logits.shape;
    let mut out = logits.data.clone();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor {
        shape: logits.shape,
        data: out,
    }
}

pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let [r, c] = logits.shape;
    let mut out = logits.data.clone();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor {
        shape: logits.shape,
        data: out,
    }
}

pub fn gather_rows(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let [n, d] = table.shape;
    let mut data = Vec::with_capacity(indices.len() * d);
    for &id in indices {
        if id >= n {
            return Err(Error::Index { id, bound: n });
        }
        data.extend_from_slice(table.row_slice(id));
    }
    Ok(Tensor {
        shape: [indices.len(), d],
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::row(vec![1.0, 2.0]);
        let b = Tensor::column(vec![3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().item(), 11.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&Tensor::row(vec![0.0; 3]));
        for &p in u.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Tensor::row(vec![1000.0, 0.0]));
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300);
        let l = softmax_rows(&Tensor::row(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
        for (p, want) in l.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gather_identity_and_errors() {
        let g = gather_rows(&Tensor::identity(3), &[2]).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let empty = gather_rows(&Tensor::identity(3), &[]).unwrap();
        assert_eq!(empty.shape(), &[0, 3]);
        match gather_rows(&Tensor::identity(3), &[5]) {
            Err(Error::Index { id: 5, bound: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
    }
}
