use super::{emittable, rank_order, Hypothesis, StepModel};
use crate::corpus::{EOS, START};
use crate::error::{Error, Result};
use crate::model::Seq2SeqModel;
use crate::registry::Registry;

/// Picks the most probable emittable token at every step (smallest id on
/// ties) until `_EOS_` or `max_len` tokens.
pub fn greedy_decode<M: StepModel>(model: &M, x: &[usize], max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::config("max_len must be >= 1"));
    }
    let mut state = model.start(x)?;
    let mut hyp = Hypothesis::empty();
    let mut prev = START;
    while hyp.tokens.len() < max_len {
        let (next, dist) = model.step(&state, prev)?;
        let tok = argmax_emittable(&dist);
        hyp.tokens.push(tok);
        hyp.log_prob += dist[tok].ln();
        if tok == EOS {
            hyp.finished = true;
            return Ok(hyp);
        }
        state = next;
        prev = tok;
    }
    hyp.truncated = true;
    Ok(hyp)
}

pub(crate) fn argmax_emittable(dist: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &p) in dist.iter().enumerate() {
        if emittable(i) && p > dist[best] {
            best = i;
        }
    }
    // Equal probability at a smaller emittable id than EOS wins the tie.
    (0..best)
        .find(|&i| emittable(i) && dist[i] == dist[best])
        .unwrap_or(best)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Beam search returning up to `width` hypotheses.
///
/// Each step expands every live hypothesis over all emittable tokens and
/// keeps the best `width` candidates overall; candidates ending in `_EOS_`
/// leave the beam as finished. Finished hypotheses come first, sorted by
/// log-probability (ties by token ids); any remaining slots are filled by
/// live hypotheses cut off at `max_len`, flagged as truncated.
pub fn beam_search<M: StepModel>(
    model: &M,
    x: &[usize],
    width: usize,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    if width == 0 || max_len == 0 {
        return Err(Error::config("beam width and max_len must be >= 1"));
    }
    let mut live = vec![Live {
        hyp: Hypothesis::empty(),
        state: model.start(x)?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<(Hypothesis, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (li, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(START);
            let (next, dist) = model.step(&l.state, prev)?;
            for (tok, &p) in dist.iter().enumerate().filter(|(t, _)| emittable(*t)) {
                let mut tokens = l.hyp.tokens.clone();
                tokens.push(tok);
                let hyp = Hypothesis {
                    tokens,
                    log_prob: l.hyp.log_prob + p.ln(),
                    finished: tok == EOS,
                    truncated: false,
                };
                candidates.push((hyp, li));
            }
            next_states.push(next);
        }
        candidates.sort_by(|a, b| rank_order(&a.0, &b.0));
        candidates.truncate(width);

        live = Vec::new();
        for (hyp, li) in candidates {
            if hyp.finished {
                finished.push(hyp);
            } else {
                live.push(Live {
                    hyp,
                    state: next_states[li].clone(),
                });
            }
        }
        if live.is_empty() {
            break;
        }
    }

    finished.sort_by(rank_order);
    let mut truncated: Vec<Hypothesis> = live
        .into_iter()
        .map(|l| Hypothesis {
            truncated: true,
            ..l.hyp
        })
        .collect();
    truncated.sort_by(rank_order);
    finished.extend(truncated);
    finished.truncate(width);
    Ok(finished)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeParams {
    pub width: usize,
    pub max_len: usize,
}

/// Produces an N-best list for one input.
pub trait DecodeStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn decode(&self, model: &Seq2SeqModel, x: &[usize]) -> Result<Vec<Hypothesis>>;
}

#[derive(Clone, Copy, Debug)]
pub struct Greedy {
    pub max_len: usize,
}

impl DecodeStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decode(&self, model: &Seq2SeqModel, x: &[usize]) -> Result<Vec<Hypothesis>> {
        Ok(vec![greedy_decode(model, x, self.max_len)?])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BeamSearch {
    pub width: usize,
    pub max_len: usize,
}

impl DecodeStrategy for BeamSearch {
    fn name(&self) -> &'static str {
        "beam"
    }

    fn decode(&self, model: &Seq2SeqModel, x: &[usize]) -> Result<Vec<Hypothesis>> {
        beam_search(model, x, self.width, self.max_len)
    }
}

pub fn decoder_registry() -> Registry<dyn DecodeStrategy, DecodeParams> {
    Registry::<dyn DecodeStrategy, DecodeParams>::new("decoder")
        .with("greedy", |p| {
            if p.max_len == 0 {
                return Err(Error::config("max_len must be >= 1"));
            }
            Ok(Box::new(Greedy { max_len: p.max_len }))
        })
        .with("beam", |p| {
            if p.max_len == 0 || p.width == 0 {
                return Err(Error::config("beam width and max_len must be >= 1"));
            }
            Ok(Box::new(BeamSearch {
                width: p.width,
                max_len: p.max_len,
            }))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::SequenceScorer;

    /// Fixed distribution at every step.
    struct Constant(Vec<f64>);

    impl StepModel for Constant {
        type State = ();
        fn vocab_size(&self) -> usize {
            self.0.len()
        }
        fn start(&self, _: &[usize]) -> Result<()> {
            Ok(())
        }
        fn step(&self, _: &(), _: usize) -> Result<((), Vec<f64>)> {
            Ok(((), self.0.clone()))
        }
    }

    #[test]
    fn eos_first_gives_single_token() {
        let m = Constant(vec![0.05, 0.05, 0.6, 0.1, 0.2]);
        let h = greedy_decode(&m, &[4], 5).unwrap();
        assert_eq!(h.tokens, vec![EOS]);
        assert!(h.finished && !h.truncated);
        assert_eq!(h.log_prob, 0.6f64.ln());
    }

    #[test]
    fn greedy_truncates_and_skips_reserved() {
        // _START_ is the most probable entry but is never emitted.
        let m = Constant(vec![0.0, 0.5, 0.1, 0.1, 0.3]);
        let h = greedy_decode(&m, &[4], 3).unwrap();
        assert_eq!(h.tokens, vec![4, 4, 4]);
        assert!(h.truncated && !h.finished);
        assert!((h.log_prob - m.log_prob(&[4], &h.tokens).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        assert_eq!(argmax_emittable(&[0.0, 0.0, 0.25, 0.25, 0.5]), 4);
        assert_eq!(argmax_emittable(&[0.0, 0.0, 0.3, 0.35, 0.35]), 3);
        assert_eq!(argmax_emittable(&[0.0, 0.0, 0.4, 0.4, 0.2]), 2);
        assert_eq!(argmax_emittable(&[0.5, 0.0, 0.1, 0.2, 0.2]), 3);
    }

    #[test]
    fn beam_width_one_is_greedy() {
        let m = Constant(vec![0.01, 0.01, 0.3, 0.28, 0.4]);
        let g = greedy_decode(&m, &[4], 6).unwrap();
        let b = beam_search(&m, &[4], 1, 6).unwrap();
        assert_eq!(b, vec![g]);
    }

    #[test]
    fn beam_pads_with_truncated() {
        let m = Constant(vec![0.0, 0.0, 0.1, 0.45, 0.45]);
        let b = beam_search(&m, &[4], 4, 2).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b[0].finished);
        assert!(b.iter().skip_while(|h| h.finished).all(|h| h.truncated));
        for w in b.windows(2) {
            if w[0].finished == w[1].finished {
                assert!(w[0].log_prob >= w[1].log_prob);
            }
        }
    }

    #[test]
    fn registry_builds_decoders() {
        let reg = decoder_registry();
        let p = DecodeParams { width: 3, max_len: 4 };
        assert_eq!(reg.build("beam", &p).unwrap().name(), "beam");
        assert_eq!(reg.build("greedy", &p).unwrap().name(), "greedy");
        assert!(reg.build("beam", &DecodeParams { width: 0, max_len: 4 }).is_err());
    }
}
