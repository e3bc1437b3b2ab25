use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{parse_corpus, Corpus, VocabPolicy, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::seeded_rng;

/// Non-committal replies used as the generic response set, in order.
pub const GENERIC_RESPONSES: [&str; 5] = [
    "i don't know",
    "i'm not sure",
    "i am sorry",
    "i have no idea",
    "that is fine",
];

/// Parameters of a message/response corpus whose responses are dominated
/// by a few generic replies.
///
/// Messages are built from templates over the words `w0..w{base_vocab-1}`:
/// two template keywords followed by one or two random filler words. With
/// probability `generic_skew` the response is one of the first
/// `generic_responses` entries of [`GENERIC_RESPONSES`]; otherwise it is a
/// three-word reply fixed by the template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub base_vocab: usize,
    pub templates: usize,
    pub generic_skew: f64,
    pub generic_responses: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            base_vocab: 40,
            templates: 20,
            generic_skew: 0.8,
            generic_responses: 2,
            seed: 17,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.generic_skew) {
            return Err(Error::config(format!(
                "generic_skew {} must lie in [0, 1)",
                self.generic_skew
            )));
        }
        if self.generic_responses == 0 || self.generic_responses > GENERIC_RESPONSES.len() {
            return Err(Error::config(format!(
                "generic response set size must be in 1..={}",
                GENERIC_RESPONSES.len()
            )));
        }
        if self.templates == 0 || self.templates > self.base_vocab {
            return Err(Error::config("templates must be in 1..=base_vocab"));
        }
        Ok(())
    }

    pub fn generic_set(&self) -> &'static [&'static str] {
        &GENERIC_RESPONSES[..self.generic_responses]
    }

    fn word(&self, i: usize) -> String {
        format!("w{}", i % self.base_vocab)
    }

    fn template_message(&self, t: usize) -> [String; 2] {
        [self.word(t * 7 + 3), self.word(t * 13 + 1)]
    }

    /// The template's specific reply; its first word `w{t}` makes it unique.
    pub fn template_response(&self, t: usize) -> String {
        [self.word(t), self.word(t * 5 + 2), self.word(t * 11 + 5)].join(" ")
    }
}

/// Generated text pairs plus which of them carry a generic response.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub pairs: Vec<(String, String)>,
    pub generic: Vec<bool>,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn generic_fraction(&self) -> f64 {
        self.generic.iter().filter(|&&g| g).count() as f64 / self.generic.len() as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (m, r) in &self.pairs {
            out.push_str(m);
            out.push('\t');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn messages(&self) -> Vec<String> {
        self.pairs.iter().map(|(m, _)| m.clone()).collect()
    }

    pub fn to_corpus(&self, policy: VocabPolicy) -> Result<(Corpus, Vocabulary)> {
        parse_corpus(&self.to_tsv(), policy)
    }
}

/// Seeded generation; a pure function of `(spec, size)`.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec, size: usize) -> Result<SyntheticCorpus> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::config("synthetic corpus size must be at least 1"));
    }
    let mut rng = seeded_rng(spec.seed);
    let mut pairs = Vec::with_capacity(size);
    let mut generic = Vec::with_capacity(size);
    for _ in 0..size {
        let t = rng.gen_range(0..spec.templates);
        let mut words: Vec<String> = spec.template_message(t).to_vec();
        let fillers = rng.gen_range(1..=2);
        for _ in 0..fillers {
            words.push(spec.word(rng.gen_range(0..spec.base_vocab)));
        }
        let is_generic = rng.gen::<f64>() < spec.generic_skew;
        let response = if is_generic {
            spec.generic_set()[rng.gen_range(0..spec.generic_responses)].to_string()
        } else {
            spec.template_response(t)
        };
        pairs.push((words.join(" "), response));
        generic.push(is_generic);
    }
    Ok(SyntheticCorpus { pairs, generic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn no_skew_gives_one_response_per_template() {
        let spec = SyntheticCorpusSpec {
            generic_skew: 0.0,
            ..Default::default()
        };
        let c = generate_synthetic(&spec, 500).unwrap();
        assert_eq!(c.generic_fraction(), 0.0);
        let mut by_template: HashMap<String, HashSet<String>> = HashMap::new();
        for (m, r) in &c.pairs {
            let key = m.split(' ').take(2).collect::<Vec<_>>().join(" ");
            by_template.entry(key).or_default().insert(r.clone());
        }
        assert!(by_template.values().all(|rs| rs.len() == 1));
        let distinct: HashSet<_> = c.pairs.iter().map(|(_, r)| r.clone()).collect();
        assert_eq!(distinct.len(), by_template.len());
    }

    #[test]
    fn heavy_skew_concentrates_responses() {
        let spec = SyntheticCorpusSpec {
            generic_skew: 0.9,
            generic_responses: 2,
            ..Default::default()
        };
        let c = generate_synthetic(&spec, 2000).unwrap();
        let hits = c
            .pairs
            .iter()
            .filter(|(_, r)| spec.generic_set().contains(&r.as_str()))
            .count();
        let frac = hits as f64 / c.len() as f64;
        // Binomial(2000, 0.9) has sd ~0.0067; 0.87 is more than four sd away.
        assert!(frac > 0.87 && frac < 0.93, "{frac}");
        assert_eq!(frac, c.generic_fraction());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = SyntheticCorpusSpec::default();
        assert_eq!(
            generate_synthetic(&spec, 50).unwrap(),
            generate_synthetic(&spec, 50).unwrap()
        );
        let other = SyntheticCorpusSpec { seed: 18, ..spec.clone() };
        assert_ne!(
            generate_synthetic(&spec, 50).unwrap(),
            generate_synthetic(&other, 50).unwrap()
        );
    }

    #[test]
    fn invalid_specs() {
        let bad = SyntheticCorpusSpec { generic_skew: 1.0, ..Default::default() };
        assert!(generate_synthetic(&bad, 1).is_err());
        let bad = SyntheticCorpusSpec { generic_responses: 0, ..Default::default() };
        assert!(generate_synthetic(&bad, 1).is_err());
        assert!(generate_synthetic(&SyntheticCorpusSpec::default(), 0).is_err());
    }
}
