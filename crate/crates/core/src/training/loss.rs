//! Per-token training losses.
//!
//! All three share one interface so the training loop never branches on
//! the kind of loss:
//!
//! * `nll`: `-ln p[gold]`
//! * `confidence-penalty`: `-ln p[gold] - beta * H(p)`
//! * `label-smoothing`: `-sum_i q_i ln p_i` with `q = (1 - eps) onehot(gold) + eps / N`

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::{Graph, Var};

/// Shannon entropy (nats) of a probability vector, with `0 ln 0 = 0`.
pub fn step_entropy(dist: &[f64]) -> Result<f64> {
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || dist.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Normalization { sum });
    }
    let h: f64 = -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    Ok(if h > 0.0 { h } else { 0.0 })
}

pub trait TokenLoss: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Loss for a plain distribution.
    fn eval(&self, dist: &[f64], gold: usize) -> Result<f64>;

    /// Records the loss for `[1 x N]` logits on `g`.
    fn build(&self, g: &mut Graph, logits: Var, gold: usize) -> Result<Var>;
}

fn check_gold(dist_len: usize, gold: usize) -> Result<()> {
    if gold >= dist_len {
        return Err(Error::Index { id: gold, bound: dist_len });
    }
    Ok(())
}

fn gold_nll(g: &mut Graph, logp: Var, gold: usize) -> Result<Var> {
    check_gold(g.value(logp).cols(), gold)?;
    let picked = g.pick(logp, 0, gold)?;
    Ok(g.neg(picked))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Nll;

impl TokenLoss for Nll {
    fn name(&self) -> &'static str {
        "nll"
    }

    fn eval(&self, dist: &[f64], gold: usize) -> Result<f64> {
        check_gold(dist.len(), gold)?;
        Ok(-dist[gold].ln())
    }

    fn build(&self, g: &mut Graph, logits: Var, gold: usize) -> Result<Var> {
        let logp = g.log_softmax_rows(logits);
        gold_nll(g, logp, gold)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConfidencePenalty {
    pub beta: f64,
}

impl TokenLoss for ConfidencePenalty {
    fn name(&self) -> &'static str {
        "confidence-penalty"
    }

    fn eval(&self, dist: &[f64], gold: usize) -> Result<f64> {
        check_gold(dist.len(), gold)?;
        Ok(-dist[gold].ln() - self.beta * step_entropy(dist)?)
    }

    fn build(&self, g: &mut Graph, logits: Var, gold: usize) -> Result<Var> {
        let logp = g.log_softmax_rows(logits);
        let nll = gold_nll(g, logp, gold)?;
        let p = g.softmax_rows(logits);
        let plogp = g.mul(p, logp)?;
        // sum(p ln p) = -H, so nll - beta H = nll + beta * sum(p ln p).
        let neg_h = g.sum(plogp);
        let pen = g.scale(neg_h, self.beta);
        g.add(nll, pen)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LabelSmoothing {
    pub epsilon: f64,
}

impl TokenLoss for LabelSmoothing {
    fn name(&self) -> &'static str {
        "label-smoothing"
    }

    fn eval(&self, dist: &[f64], gold: usize) -> Result<f64> {
        check_gold(dist.len(), gold)?;
        let n = dist.len() as f64;
        let spread: f64 = dist.iter().map(|p| p.ln()).sum();
        Ok(-(1.0 - self.epsilon) * dist[gold].ln() - (self.epsilon / n) * spread)
    }

    fn build(&self, g: &mut Graph, logits: Var, gold: usize) -> Result<Var> {
        let n = g.value(logits).cols() as f64;
        let logp = g.log_softmax_rows(logits);
        let nll = gold_nll(g, logp, gold)?;
        let nll = g.scale(nll, 1.0 - self.epsilon);
        let total = g.sum(logp);
        let uniform = g.scale(total, -self.epsilon / n);
        g.add(nll, uniform)
    }
}

/// Hyper-parameters shared by the loss factories.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParams {
    pub beta: f64,
    pub epsilon: f64,
}

pub fn loss_registry() -> Registry<dyn TokenLoss, LossParams> {
    Registry::<dyn TokenLoss, LossParams>::new("loss")
        .with("nll", |_| Ok(Box::new(Nll)))
        .with("confidence-penalty", |p| {
            if !(p.beta >= 0.0) || !p.beta.is_finite() {
                return Err(Error::config(format!("beta {} must be >= 0", p.beta)));
            }
            Ok(Box::new(ConfidencePenalty { beta: p.beta }))
        })
        .with("label-smoothing", |p| {
            if !(0.0..1.0).contains(&p.epsilon) {
                return Err(Error::config(format!("epsilon {} must lie in [0, 1)", p.epsilon)));
            }
            Ok(Box::new(LabelSmoothing { epsilon: p.epsilon }))
        })
}

/// Serializable description of a loss, resolved through [`loss_registry`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    Nll,
    ConfidencePenalty { beta: f64 },
    LabelSmoothing { epsilon: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Nll => "nll",
            LossKind::ConfidencePenalty { .. } => "confidence-penalty",
            LossKind::LabelSmoothing { .. } => "label-smoothing",
        }
    }

    pub fn build(&self) -> Result<Box<dyn TokenLoss>> {
        let params = match *self {
            LossKind::Nll => LossParams::default(),
            LossKind::ConfidencePenalty { beta } => LossParams { beta, ..Default::default() },
            LossKind::LabelSmoothing { epsilon } => LossParams { epsilon, ..Default::default() },
        };
        loss_registry().build(self.name(), &params)
    }
}
