use std::cmp::Ordering;

use super::{Hypothesis, SequenceScorer};
use crate::corpus::{reverse_input, EOS};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Auxiliary models an objective may consult besides the forward model,
/// whose scores are already on each hypothesis.
#[derive(Clone, Copy, Default)]
pub struct ScoringModels<'a> {
    /// Unconditional language model `p(Y)`.
    pub lm: Option<&'a dyn SequenceScorer>,
    /// Reverse model `p(X | Y)`.
    pub reverse: Option<&'a dyn SequenceScorer>,
}

pub trait RerankObjective: Send + Sync {
    fn name(&self) -> &'static str;

    /// Fails with a configuration error when a needed model is missing.
    fn check(&self, models: &ScoringModels) -> Result<()>;

    fn score(&self, x: &[usize], hyp: &Hypothesis, models: &ScoringModels) -> Result<f64>;
}

fn require<'a>(m: Option<&'a dyn SequenceScorer>, what: &str, obj: &str) -> Result<&'a dyn SequenceScorer> {
    m.ok_or_else(|| Error::config(format!("objective '{obj}' needs a {what}")))
}

/// `log p(Y | X)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MapObjective;

impl RerankObjective for MapObjective {
    fn name(&self) -> &'static str {
        "map"
    }

    fn check(&self, _: &ScoringModels) -> Result<()> {
        Ok(())
    }

    fn score(&self, _: &[usize], hyp: &Hypothesis, _: &ScoringModels) -> Result<f64> {
        Ok(hyp.log_prob)
    }
}

/// `log p(Y | X) - lambda log p(Y) + gamma |Y|`.
#[derive(Clone, Copy, Debug)]
pub struct MmiAntiLm {
    pub lambda: f64,
    pub gamma: f64,
}

impl RerankObjective for MmiAntiLm {
    fn name(&self) -> &'static str {
        "mmi-antilm"
    }

    fn check(&self, models: &ScoringModels) -> Result<()> {
        require(models.lm, "language model", self.name()).map(|_| ())
    }

    fn score(&self, _: &[usize], hyp: &Hypothesis, models: &ScoringModels) -> Result<f64> {
        let lm = require(models.lm, "language model", self.name())?;
        let lm_score = lm.log_prob(&[], &hyp.tokens)?;
        Ok(hyp.log_prob - self.lambda * lm_score + self.gamma * hyp.len() as f64)
    }
}

/// `(1 - lambda) log p(Y | X) + lambda log p(X | Y) + gamma |Y|`.
#[derive(Clone, Copy, Debug)]
pub struct MmiBidi {
    pub lambda: f64,
    pub gamma: f64,
}

impl RerankObjective for MmiBidi {
    fn name(&self) -> &'static str {
        "mmi-bidi"
    }

    fn check(&self, models: &ScoringModels) -> Result<()> {
        require(models.reverse, "reverse model", self.name()).map(|_| ())
    }

    fn score(&self, x: &[usize], hyp: &Hypothesis, models: &ScoringModels) -> Result<f64> {
        let fwd = (1.0 - self.lambda) * hyp.log_prob + self.gamma * hyp.len() as f64;
        // Skip the reverse pass entirely at lambda = 0 so the score is
        // exactly the scaled forward score.
        if self.lambda == 0.0 {
            return Ok(fwd);
        }
        let rev = require(models.reverse, "reverse model", self.name())?;
        let mut target = x.to_vec();
        target.push(EOS);
        let back = rev.log_prob(&reverse_input(&hyp.tokens), &target)?;
        Ok(fwd + self.lambda * back)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveParams {
    pub lambda: f64,
    pub gamma: f64,
}

pub fn objective_registry() -> Registry<dyn RerankObjective, ObjectiveParams> {
    fn finite(p: &ObjectiveParams) -> Result<()> {
        if !p.lambda.is_finite() || !p.gamma.is_finite() {
            return Err(Error::config("lambda and gamma must be finite"));
        }
        Ok(())
    }
    Registry::<dyn RerankObjective, ObjectiveParams>::new("objective")
        .with("map", |_| Ok(Box::new(MapObjective)))
        .with("mmi-antilm", |p| {
            finite(p)?;
            if p.lambda < 0.0 {
                return Err(Error::config(format!("lambda {} must be >= 0", p.lambda)));
            }
            Ok(Box::new(MmiAntiLm { lambda: p.lambda, gamma: p.gamma }))
        })
        .with("mmi-bidi", |p| {
            finite(p)?;
            if !(0.0..=1.0).contains(&p.lambda) {
                return Err(Error::config(format!("lambda {} must lie in [0, 1]", p.lambda)));
            }
            Ok(Box::new(MmiBidi { lambda: p.lambda, gamma: p.gamma }))
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredHypothesis {
    pub hyp: Hypothesis,
    pub score: f64,
}

pub fn score_hypothesis(
    objective: &dyn RerankObjective,
    x: &[usize],
    hyp: &Hypothesis,
    models: &ScoringModels,
) -> Result<f64> {
    objective.score(x, hyp, models)
}

/// Finished before truncated, then descending score, then token ids.
fn rerank_order(a: &ScoredHypothesis, b: &ScoredHypothesis) -> Ordering {
    a.hyp
        .truncated
        .cmp(&b.hyp.truncated)
        .then_with(|| b.score.total_cmp(&a.score))
        .then_with(|| a.hyp.tokens.cmp(&b.hyp.tokens))
}

/// Scores every hypothesis and sorts the list best first, so the selected
/// response is element 0.
pub fn rerank(
    objective: &dyn RerankObjective,
    x: &[usize],
    hyps: &[Hypothesis],
    models: &ScoringModels,
) -> Result<Vec<ScoredHypothesis>> {
    objective.check(models)?;
    if hyps.is_empty() {
        return Err(Error::EmptySequence("n-best list"));
    }
    let mut out = hyps
        .iter()
        .map(|h| {
            Ok(ScoredHypothesis {
                hyp: h.clone(),
                score: objective.score(x, h, models)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(rerank_order);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores looked up from a fixed table of `(x, y, log p)` rows.
    struct Table(Vec<(Vec<usize>, Vec<usize>, f64)>);

    impl SequenceScorer for Table {
        fn log_prob(&self, x: &[usize], y: &[usize]) -> Result<f64> {
            self.0
                .iter()
                .find(|(tx, ty, _)| tx == x && ty == y)
                .map(|r| r.2)
                .ok_or(Error::Undefined("table entry"))
        }
    }

    fn hyp(tokens: &[usize], log_prob: f64) -> Hypothesis {
        Hypothesis {
            tokens: tokens.to_vec(),
            log_prob,
            finished: true,
            truncated: false,
        }
    }

    #[test]
    fn antilm_demotes_generic_candidate() {
        let hyps = vec![hyp(&[4, 2], -1.0), hyp(&[5, 2], -1.2), hyp(&[6, 2], -2.0)];
        let lm = Table(vec![
            (vec![], vec![4, 2], -0.5),
            (vec![], vec![5, 2], -3.0),
            (vec![], vec![6, 2], -3.5),
        ]);
        let models = ScoringModels { lm: Some(&lm), reverse: None };
        let map = rerank(&MapObjective, &[7], &hyps, &models).unwrap();
        assert_eq!(map[0].hyp.tokens, vec![4, 2]);
        let obj = MmiAntiLm { lambda: 0.5, gamma: 0.0 };
        let mmi = rerank(&obj, &[7], &hyps, &models).unwrap();
        // -1.2 + 1.5 = 0.3 beats -1.0 + 0.25 = -0.75.
        assert_eq!(mmi[0].hyp.tokens, vec![5, 2]);
        assert!((mmi[0].score - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bidi_uses_reversed_pair() {
        let rev = Table(vec![(vec![4], vec![7, EOS], -0.25)]);
        let models = ScoringModels { lm: None, reverse: Some(&rev) };
        let obj = MmiBidi { lambda: 0.4, gamma: 0.1 };
        let s = obj.score(&[7], &hyp(&[4, 2], -1.0), &models).unwrap();
        assert!((s - (0.6 * -1.0 + 0.4 * -0.25 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn missing_models_are_config_errors() {
        let none = ScoringModels::default();
        let hyps = vec![hyp(&[2], -0.1)];
        let anti = MmiAntiLm { lambda: 0.5, gamma: 0.0 };
        assert!(matches!(rerank(&anti, &[4], &hyps, &none), Err(Error::Config(_))));
        let bidi = MmiBidi { lambda: 0.5, gamma: 0.0 };
        assert!(matches!(rerank(&bidi, &[4], &hyps, &none), Err(Error::Config(_))));
    }

    #[test]
    fn truncated_rank_last() {
        let mut t = hyp(&[4, 4], -0.1);
        t.finished = false;
        t.truncated = true;
        let hyps = vec![t, hyp(&[2], -5.0)];
        let r = rerank(&MapObjective, &[4], &hyps, &ScoringModels::default()).unwrap();
        assert_eq!(r[0].hyp.tokens, vec![2]);
    }

    #[test]
    fn registry_validates_lambda() {
        let reg = objective_registry();
        assert!(reg.build("mmi-bidi", &ObjectiveParams { lambda: 1.5, gamma: 0.0 }).is_err());
        assert!(reg.build("mmi-antilm", &ObjectiveParams { lambda: -0.1, gamma: 0.0 }).is_err());
        assert_eq!(reg.build("map", &ObjectiveParams::default()).unwrap().name(), "map");
    }
}
