use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::{ParamStore, Tensor};

/// Applies the gradients held in a [`ParamStore`] to its values.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, params: &mut ParamStore);
}

#[derive(Debug)]
pub struct Sgd {
    lr: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut ParamStore) {
        for p in params.iter_mut() {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= self.lr * g;
            }
        }
    }
}

#[derive(Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    moments: Vec<(Tensor, Tensor)>,
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut ParamStore) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| {
                    let z = Tensor::zeros(p.value.rows(), p.value.cols());
                    (z.clone(), z)
                })
                .collect();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let g = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * g[k];
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub fn optimizer_registry() -> Registry<dyn Optimizer, OptimParams> {
    Registry::<dyn Optimizer, OptimParams>::new("optimizer")
        .with("sgd", |p| Ok(Box::new(Sgd { lr: p.lr })))
        .with("adam", |p| {
            if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) || !(p.eps > 0.0) {
                return Err(Error::config("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
            Ok(Box::new(Adam {
                lr: p.lr,
                beta1: p.beta1,
                beta2: p.beta2,
                eps: p.eps,
                t: 0,
                moments: Vec::new(),
            }))
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn build(&self, lr: f64) -> Result<Box<dyn Optimizer>> {
        let params = match *self {
            OptimizerKind::Sgd => OptimParams { lr, beta1: 0.0, beta2: 0.0, eps: 0.0 },
            OptimizerKind::Adam { beta1, beta2, eps } => OptimParams { lr, beta1, beta2, eps },
        };
        optimizer_registry().build(self.name(), &params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::row(vec![3.0, -2.0]));
        s
    }

    fn minimize(opt: &mut dyn Optimizer, steps: usize) -> Vec<f64> {
        let mut s = quad_store();
        for _ in 0..steps {
            let id = s.find("x").unwrap();
            let x = s.value(id).clone();
            let p = s.get_mut(id);
            p.grad = x.map(|v| 2.0 * v);
            opt.step(&mut s);
        }
        s.value(s.find("x").unwrap()).data().to_vec()
    }

    #[test]
    fn sgd_and_adam_descend_a_quadratic() {
        let mut sgd = OptimizerKind::Sgd.build(0.1).unwrap();
        assert!(minimize(sgd.as_mut(), 200).iter().all(|v| v.abs() < 1e-6));
        let mut adam = OptimizerKind::default().build(0.05).unwrap();
        assert!(minimize(adam.as_mut(), 2000).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut adam = OptimizerKind::default().build(0.01).unwrap();
        let x = minimize(adam.as_mut(), 1);
        assert!((x[0] - 2.99).abs() < 1e-9 && (x[1] - -1.99).abs() < 1e-9);
    }
}
