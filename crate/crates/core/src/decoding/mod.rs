//! Greedy and beam decoding, and N-best reranking.
//!
//! Decoders only need next-token distributions, so they run against any
//! [`StepModel`]; the trained [`Seq2SeqModel`] is one implementation and the
//! tests use hand-written probability tables as another. `_PAD_` and
//! `_START_` are never emitted: they stay in every distribution's
//! normalizer but are not expanded.

mod rerank;
mod search;

pub use rerank::{
    objective_registry, rerank, score_hypothesis, MapObjective, MmiAntiLm, MmiBidi,
    ObjectiveParams, RerankObjective, ScoredHypothesis, ScoringModels,
};
pub use search::{
    beam_search, decoder_registry, greedy_decode, BeamSearch, DecodeParams, DecodeStrategy,
    Greedy,
};

use serde::Serialize;
use std::collections::BTreeMap;

use crate::corpus::{Vocabulary, PAD, START};
use crate::error::{Error, Result};
use crate::model::{DecoderState, Seq2SeqModel};

/// Source of next-token distributions.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Decoder state before the first token, conditioned on `x`.
    fn start(&self, x: &[usize]) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

impl StepModel for Seq2SeqModel {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn start(&self, x: &[usize]) -> Result<DecoderState> {
        self.initial_state(x)
    }

    fn step(&self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        self.decode_step(state, prev)
    }
}

/// Teacher-forced `log p(y | x)`.
pub trait SequenceScorer {
    fn log_prob(&self, x: &[usize], y: &[usize]) -> Result<f64>;
}

impl<M: StepModel> SequenceScorer for M {
    fn log_prob(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        let mut state = self.start(x)?;
        let mut prev = START;
        let mut total = 0.0;
        for &tok in y {
            let (next, dist) = self.step(&state, prev)?;
            let p = *dist.get(tok).ok_or(Error::Index {
                id: tok,
                bound: dist.len(),
            })?;
            total += p.ln();
            state = next;
            prev = tok;
        }
        Ok(total)
    }
}

pub fn emittable(token: usize) -> bool {
    token != PAD && token != START
}

/// A decoded (possibly partial) response.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, without the leading `_START_`.
    pub tokens: Vec<usize>,
    /// Cumulative `ln p(y_t | y_<t, X)`.
    pub log_prob: f64,
    /// Ends in `_EOS_`.
    pub finished: bool,
    /// Cut off at the length limit without `_EOS_`.
    pub truncated: bool,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
            truncated: false,
        }
    }

    /// `|Y|`, counting `_EOS_` when present.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Descending log-probability, then lexicographic token ids.
pub(crate) fn rank_order(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// One JSON-lines record of an N-best list.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct NBestRecord {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub objective_scores: BTreeMap<String, f64>,
    pub truncated: bool,
}

impl NBestRecord {
    pub fn new(hyp: &Hypothesis, vocab: &Vocabulary, scores: BTreeMap<String, f64>) -> Self {
        Self {
            tokens: vocab.decode(&hyp.tokens),
            log_prob: hyp.log_prob,
            objective_scores: scores,
            truncated: hyp.truncated,
        }
    }
}

/// Serializes records as JSON lines.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// A decoder followed by a rerank objective: the full path from an input
/// to a ranked N-best list.
pub struct DecodePipeline<'a> {
    pub decoder: &'a dyn DecodeStrategy,
    pub objective: &'a dyn RerankObjective,
    pub models: ScoringModels<'a>,
}

impl DecodePipeline<'_> {
    /// Ranked N-best list for `x`; the first entry is the selected response.
    pub fn run(&self, model: &Seq2SeqModel, x: &[usize]) -> Result<Vec<ScoredHypothesis>> {
        let hyps = self.decoder.decode(model, x)?;
        rerank(self.objective, x, &hyps, &self.models)
    }
}
