use rand::Rng;
use seqdiv::corpus::{Vocabulary, EOS, START};
use seqdiv::decoding::{
    beam_search, greedy_decode, rerank, score_hypothesis, to_jsonl, Hypothesis, MapObjective, MmiAntiLm,
    MmiBidi, NBestRecord, RerankObjective, ScoringModels, SequenceScorer,
};
use seqdiv::model::{AttentionMode, ModelConfig, Seq2SeqModel};
use seqdiv::tensor::seeded_rng;
use seqdiv::Error;

fn model(n: usize, seed: u64) -> Seq2SeqModel {
    Seq2SeqModel::new(ModelConfig::new(n, 5, 6).with_attention(AttentionMode::Single), seed).unwrap()
}

fn lm(n: usize, seed: u64) -> Seq2SeqModel {
    Seq2SeqModel::new(ModelConfig::new(n, 5, 6).language_model(), seed).unwrap()
}

/// All emittable responses up to `len` tokens, split into terminated and
/// cut-off ones.
fn enumerate(n: usize, len: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let emit: Vec<usize> = (0..n).filter(|&t| t != 0 && t != START).collect();
    let (mut done, mut open) = (Vec::new(), vec![vec![]]);
    for _ in 0..len {
        let mut next = Vec::new();
        for p in &open {
            for &t in &emit {
                let mut s: Vec<usize> = p.clone();
                s.push(t);
                if t == EOS {
                    done.push(s)
                } else {
                    next.push(s)
                }
            }
        }
        open = next;
    }
    (done, open)
}

fn ranked(m: &Seq2SeqModel, x: &[usize], ys: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut v: Vec<(Vec<usize>, f64)> = ys.into_iter().map(|y| {
        let lp = m.sequence_log_prob(x, &y).unwrap();
        (y, lp)
    }).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|p| p.0).collect()
}

#[test]
fn wide_beam_matches_enumeration() {
    // {a, b} plus the reserved ids: _EOS_, _UNK_, a, b are emittable.
    let n = 6;
    for (len, width) in [(3, 64), (4, 256)] {
        let m = model(n, len as u64);
        let x = [4, 5, 4];
        let (done, open) = enumerate(n, len);
        let mut want = ranked(&m, &x, done);
        want.extend(ranked(&m, &x, open));
        let got: Vec<Vec<usize>> = beam_search(&m, &x, width, len).unwrap().into_iter().map(|h| h.tokens).collect();
        assert_eq!(got, want, "L={len}");
    }
}

#[test]
fn hypotheses_rescore_and_are_monotone() {
    let m = model(9, 4);
    let mut rng = seeded_rng(8);
    for _ in 0..10 {
        let x: Vec<usize> = (0..3).map(|_| rng.gen_range(3..9)).collect();
        for h in beam_search(&m, &x, 6, 7).unwrap() {
            assert!(h.log_prob <= 0.0);
            assert_eq!(h.finished, h.tokens.last() == Some(&EOS));
            assert!((m.log_prob(&x, &h.tokens).unwrap() - h.log_prob).abs() < 1e-9);
            let prefixes: Vec<f64> = (1..=h.len()).map(|k| m.log_prob(&x, &h.tokens[..k]).unwrap()).collect();
            assert!(prefixes.windows(2).all(|w| w[1] <= w[0]));
        }
        let g = greedy_decode(&m, &x, 7).unwrap();
        assert!((m.log_prob(&x, &g.tokens).unwrap() - g.log_prob).abs() < 1e-9);
    }
}

#[test]
fn objective_reductions() {
    let (fwd, lang, rev) = (model(8, 1), lm(8, 2), model(8, 3));
    let models = ScoringModels { lm: Some(&lang), reverse: Some(&rev) };
    let x = [5, 6, 7];
    for h in beam_search(&fwd, &x, 5, 6).unwrap() {
        let map = score_hypothesis(&MapObjective, &x, &h, &models).unwrap();
        assert_eq!(map, h.log_prob);
        let bidi = score_hypothesis(&MmiBidi { lambda: 0.0, gamma: 0.0 }, &x, &h, &models).unwrap();
        assert_eq!(bidi, map);
        let anti = score_hypothesis(&MmiAntiLm { lambda: 0.0, gamma: 1.0 }, &x, &h, &models).unwrap();
        assert_eq!(anti, h.log_prob + h.len() as f64);
    }
}

#[test]
fn rerank_edge_cases() {
    let (fwd, lang) = (model(8, 1), lm(8, 2));
    let models = ScoringModels { lm: Some(&lang), reverse: None };
    let x = [4, 4];
    let nbest = beam_search(&fwd, &x, 5, 6).unwrap();

    let map = rerank(&MapObjective, &x, &nbest, &models).unwrap();
    assert_eq!(map[0].hyp, nbest[0]);

    let single = vec![nbest[3].clone()];
    let anti = MmiAntiLm { lambda: 0.9, gamma: -3.0 };
    assert_eq!(rerank(&anti, &x, &single, &models).unwrap()[0].hyp, nbest[3]);

    assert!(matches!(rerank(&MapObjective, &x, &[], &models), Err(Error::EmptySequence(_))));
    let none = ScoringModels::default();
    assert!(matches!(rerank(&anti, &x, &nbest, &none), Err(Error::Config(_))));
}

#[test]
fn length_bonus_is_a_constant_shift_at_fixed_length() {
    let (fwd, lang) = (model(8, 6), lm(8, 7));
    let models = ScoringModels { lm: Some(&lang), reverse: None };
    let x = [5, 4, 7];
    let (done, _) = enumerate(8, 3);
    let fixed: Vec<Hypothesis> = done
        .into_iter()
        .filter(|y| y.len() == 3)
        .map(|tokens| Hypothesis {
            log_prob: fwd.log_prob(&x, &tokens).unwrap(),
            tokens,
            finished: true,
            truncated: false,
        })
        .collect();
    let order = |obj: &dyn RerankObjective| -> Vec<Vec<usize>> {
        rerank(obj, &x, &fixed, &models).unwrap().into_iter().map(|s| s.hyp.tokens).collect()
    };
    let base = order(&MmiAntiLm { lambda: 0.5, gamma: 0.0 });
    assert_eq!(base, order(&MmiAntiLm { lambda: 0.5, gamma: 2.5 }));
    assert_eq!(base, order(&MmiAntiLm { lambda: 0.5, gamma: -1.0 }));
}

#[test]
fn nbest_jsonl_is_deterministic() {
    let mut vocab = Vocabulary::new();
    for t in ["a", "b", "c", "d"] {
        vocab.insert(t);
    }
    let run = || {
        let m = model(vocab.len(), 12);
        let recs: Vec<NBestRecord> = beam_search(&m, &[4, 6], 4, 5)
            .unwrap()
            .iter()
            .map(|h| NBestRecord::new(h, &vocab, [("map".to_string(), h.log_prob)].into()))
            .collect();
        to_jsonl(&recs).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let first: serde_json::Value = serde_json::from_str(a.lines().next().unwrap()).unwrap();
    for key in ["tokens", "log_prob", "objective_scores", "truncated"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn concurrent_decoding_over_a_shared_model() {
    let m = model(10, 2);
    let inputs: Vec<Vec<usize>> = (3..10).map(|t| vec![t, 9 - t % 3]).collect();
    let serial: Vec<_> = inputs.iter().map(|x| beam_search(&m, x, 3, 6).unwrap()).collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = inputs.iter().map(|x| s.spawn(|| beam_search(&m, x, 3, 6).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}
