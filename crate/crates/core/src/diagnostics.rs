//! Over-confidence and diversity measurements.
//!
//! "Over-confidence" has no standard numeric definition; here it is read
//! off two quantities per decode: the entropy of each step's full
//! distribution and the snowball index, the fraction of consecutive steps
//! whose maximum probability strictly grows.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{Vocabulary, EOS, START};
use crate::decoding::{greedy_decode, DecodePipeline, StepModel};
use crate::error::{Error, Result};
use crate::model::Seq2SeqModel;
use crate::training::step_entropy;

/// Top-k view of one decoding step. `step` is 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    pub step: usize,
    pub entries: Vec<(String, f64)>,
    pub full_entropy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfidenceTrajectory {
    pub max_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub tokens: Vec<usize>,
}

impl ConfidenceTrajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn snowball_index(&self) -> Option<f64> {
        snowball_index(&self.max_probs)
    }

    fn record(&mut self, dist: &[f64], token: usize) -> Result<()> {
        self.max_probs.push(dist.iter().copied().fold(0.0, f64::max));
        self.entropies.push(step_entropy(dist)?);
        self.tokens.push(token);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub steps: Vec<StepDistribution>,
    pub trajectory: ConfidenceTrajectory,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    step: usize,
    topk: Vec<(&'a str, f64)>,
    entropy: f64,
    emitted: &'a str,
}

impl Trace {
    /// One JSON object per step: `{step, topk: [[token, prob], ...], entropy, emitted}`.
    pub fn to_jsonl(&self, vocab: &Vocabulary) -> Result<String> {
        let mut out = String::new();
        for (s, &tok) in self.steps.iter().zip(&self.trajectory.tokens) {
            let rec = TraceRecord {
                step: s.step,
                topk: s.entries.iter().map(|(t, p)| (t.as_str(), *p)).collect(),
                entropy: s.full_entropy,
                emitted: vocab.token(tok),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Indices of the `k` most probable entries, descending, smaller id first
/// on ties.
fn top_k(dist: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Greedy decode that records the top-`k` distribution at every step.
///
/// The emitted tokens are exactly those of
/// [`greedy_decode`](crate::decoding::greedy_decode).
pub fn trace_decode<M: StepModel>(
    model: &M,
    vocab: &Vocabulary,
    x: &[usize],
    k: usize,
    max_len: usize,
) -> Result<Trace> {
    let n = model.vocab_size();
    if k == 0 || k > n {
        return Err(Error::config(format!("k = {k} must lie in [1, {n}]")));
    }
    let hyp = greedy_decode(model, x, max_len)?;
    let mut steps = Vec::with_capacity(hyp.len());
    let mut traj = ConfidenceTrajectory::default();
    for_each_step(model, x, &hyp.tokens, |i, dist, tok| {
        steps.push(StepDistribution {
            step: i + 1,
            entries: top_k(dist, k)
                .into_iter()
                .map(|j| (vocab.token(j).to_string(), dist[j]))
                .collect(),
            full_entropy: step_entropy(dist)?,
        });
        traj.record(dist, tok)
    })?;
    Ok(Trace {
        steps,
        trajectory: traj,
    })
}

fn for_each_step<M, F>(model: &M, x: &[usize], tokens: &[usize], mut f: F) -> Result<()>
where
    M: StepModel,
    F: FnMut(usize, &[f64], usize) -> Result<()>,
{
    let mut state = model.start(x)?;
    let mut prev = START;
    for (i, &tok) in tokens.iter().enumerate() {
        let (next, dist) = model.step(&state, prev)?;
        f(i, &dist, tok)?;
        state = next;
        prev = tok;
    }
    Ok(())
}

/// Confidence along a given response by teacher forcing, so responses
/// from any decoder can be measured the same way.
pub fn trajectory<M: StepModel>(model: &M, x: &[usize], tokens: &[usize]) -> Result<ConfidenceTrajectory> {
    let mut traj = ConfidenceTrajectory::default();
    for_each_step(model, x, tokens, |_, dist, tok| traj.record(dist, tok))?;
    Ok(traj)
}

/// Fraction of consecutive pairs where the value strictly increases;
/// `None` for fewer than two values.
pub fn snowball_index(max_probs: &[f64]) -> Option<f64> {
    if max_probs.len() < 2 {
        return None;
    }
    let ups = max_probs.windows(2).filter(|w| w[1] > w[0]).count();
    Some(ups as f64 / (max_probs.len() - 1) as f64)
}

/// Unique n-grams over total n-grams across `responses`, with `_EOS_`
/// removed first. `None` when there are no n-grams at all.
pub fn distinct_n(responses: &[Vec<usize>], n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<usize> = r.iter().copied().filter(|&t| t != EOS).collect();
        for gram in toks.windows(n) {
            total += 1;
            seen.insert(gram.to_vec());
        }
    }
    (total > 0).then(|| seen.len() as f64 / total as f64)
}

/// Corpus-level summary of the responses selected for a set of inputs.
/// Undefined values serialize as JSON `null` and CSV `NA`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiversityReport {
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    /// Tokens per response, `_EOS_` excluded.
    pub mean_response_length: f64,
    /// Averaged over every decoding step, including the `_EOS_` step.
    pub mean_step_entropy: f64,
    /// Mean over responses with at least two steps.
    pub snowball_index: Option<f64>,
}

pub const REPORT_CSV_HEADER: &str =
    "distinct_1,distinct_2,mean_response_length,mean_step_entropy,snowball_index";

fn csv_field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl DiversityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            csv_field(self.distinct_1),
            csv_field(self.distinct_2),
            self.mean_response_length,
            self.mean_step_entropy,
            csv_field(self.snowball_index),
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Selected response and its confidence trajectory for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub tokens: Vec<usize>,
    pub trajectory: ConfidenceTrajectory,
}

pub fn select_responses(
    model: &Seq2SeqModel,
    inputs: &[Vec<usize>],
    pipeline: &DecodePipeline,
) -> Result<Vec<Selection>> {
    inputs
        .iter()
        .map(|x| {
            let ranked = pipeline.run(model, x)?;
            let best = ranked.into_iter().next().ok_or(Error::EmptySequence("n-best list"))?;
            let trajectory = trajectory(model, x, &best.hyp.tokens)?;
            Ok(Selection {
                tokens: best.hyp.tokens,
                trajectory,
            })
        })
        .collect()
}

pub fn summarize(selections: &[Selection]) -> Result<DiversityReport> {
    if selections.is_empty() {
        return Err(Error::EmptySequence("evaluation inputs"));
    }
    let responses: Vec<Vec<usize>> = selections.iter().map(|s| s.tokens.clone()).collect();
    let content: usize = responses
        .iter()
        .map(|r| r.iter().filter(|&&t| t != EOS).count())
        .sum();
    let entropies: Vec<f64> = selections
        .iter()
        .flat_map(|s| s.trajectory.entropies.iter().copied())
        .collect();
    let snowballs: Vec<f64> = selections
        .iter()
        .filter_map(|s| s.trajectory.snowball_index())
        .collect();
    Ok(DiversityReport {
        distinct_1: distinct_n(&responses, 1),
        distinct_2: distinct_n(&responses, 2),
        mean_response_length: content as f64 / selections.len() as f64,
        mean_step_entropy: mean(&entropies),
        snowball_index: (!snowballs.is_empty()).then(|| mean(&snowballs)),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Decodes every input through `pipeline` and summarizes the selections.
pub fn corpus_report(
    model: &Seq2SeqModel,
    inputs: &[Vec<usize>],
    pipeline: &DecodePipeline,
) -> Result<DiversityReport> {
    summarize(&select_responses(model, inputs, pipeline)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{Greedy, MapObjective, ScoringModels};
    use crate::model::{Init, ModelConfig};

    #[test]
    fn snowball_examples() {
        assert_eq!(snowball_index(&[0.1, 0.2, 0.3]), Some(1.0));
        assert_eq!(snowball_index(&[0.3, 0.2, 0.1]), Some(0.0));
        let s = snowball_index(&[0.3, 0.5, 0.4, 0.6]).unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(snowball_index(&[0.9]), None);
        // Ties are not increases.
        assert_eq!(snowball_index(&[0.5, 0.5]), Some(0.0));
    }

    #[test]
    fn snowball_ignores_monotone_rescaling() {
        let p = [0.2, 0.6, 0.3, 0.35, 0.9];
        let q: Vec<f64> = p.iter().map(|v: &f64| v.ln() * 3.0 + 1.0).collect();
        assert_eq!(snowball_index(&p), snowball_index(&q));
    }

    #[test]
    fn distinct_examples() {
        let mut v = Vocabulary::new();
        let r = |s: &str, v: &mut Vocabulary| -> Vec<usize> {
            let mut ids: Vec<usize> = s.split(' ').map(|t| v.insert(t)).collect();
            ids.push(EOS);
            ids
        };
        let ab = r("a b", &mut v);
        let ac = r("a c", &mut v);
        assert_eq!(distinct_n(&[ab.clone(), ac], 1), Some(0.75));
        let aaa = r("a a a", &mut v);
        assert_eq!(distinct_n(&[aaa], 2), Some(0.5));
        let m = 4;
        let copies = vec![ab; m];
        assert_eq!(distinct_n(&copies, 1), Some(2.0 / (2 * m) as f64));
        assert_eq!(distinct_n(&copies, 2), Some(1.0 / m as f64));
        assert_eq!(distinct_n(&[vec![4, EOS]], 2), None);
        assert_eq!(distinct_n(&[], 1), None);
    }

    fn small_model() -> (Seq2SeqModel, Vocabulary) {
        let mut vocab = Vocabulary::new();
        for t in ["a", "b", "c", "d"] {
            vocab.insert(t);
        }
        let cfg = ModelConfig::new(vocab.len(), 5, 6);
        (Seq2SeqModel::new(cfg, 11).unwrap(), vocab)
    }

    #[test]
    fn trace_matches_greedy_and_full_entropy() {
        let (m, vocab) = small_model();
        let x = [4, 5, 6];
        let n = vocab.len();
        let t = trace_decode(&m, &vocab, &x, n, 6).unwrap();
        let g = greedy_decode(&m, &x, 6).unwrap();
        assert_eq!(t.trajectory.tokens, g.tokens);
        assert_eq!(t.steps.len(), g.tokens.len());
        for s in &t.steps {
            let total: f64 = s.entries.iter().map(|e| e.1).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(s.entries.windows(2).all(|w| w[0].1 >= w[1].1));
            assert!(s.full_entropy >= 0.0 && s.full_entropy <= (n as f64).ln() + 1e-12);
        }
        let tf = trajectory(&m, &x, &g.tokens).unwrap();
        assert_eq!(tf, t.trajectory);
        assert!(trace_decode(&m, &vocab, &x, 0, 6).is_err());
        let lines = t.to_jsonl(&vocab).unwrap();
        assert_eq!(lines.lines().count(), t.steps.len());
    }

    #[test]
    fn constant_model_gives_minimal_distinct_2() {
        // All-zero weights give the same distribution everywhere, so every
        // input decodes to one fixed response.
        let mut vocab = Vocabulary::new();
        for t in ["a", "b"] {
            vocab.insert(t);
        }
        let cfg = ModelConfig::new(vocab.len(), 3, 4);
        let m = Seq2SeqModel::with_init(cfg, Init::Zeros).unwrap();
        let inputs: Vec<Vec<usize>> = vec![vec![4], vec![5], vec![4, 5]];
        let dec = Greedy { max_len: 3 };
        let pipe = DecodePipeline {
            decoder: &dec,
            objective: &MapObjective,
            models: ScoringModels::default(),
        };
        let r = corpus_report(&m, &inputs, &pipe).unwrap();
        // Uniform distribution: smallest emittable id (EOS) wins every tie.
        assert_eq!(r.mean_response_length, 0.0);
        assert_eq!(r.distinct_1, None);
        assert_eq!(r.snowball_index, None);
        assert!(r.csv_row().starts_with("NA,NA,0,"));
        assert!(r.to_json().unwrap().contains("\"distinct_2\": null"));
    }
}
