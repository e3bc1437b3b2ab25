//! Vocabulary, tokenization, message/response pair files and checkpoints.

mod checkpoint;
mod synthetic;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticCorpusSpec, GENERIC_RESPONSES};

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["_PAD_", "_START_", "_EOS_", "_UNK_"];

/// Lowercases and splits on whitespace. Punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bijective token/id map with ids 0..4 fixed to the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Rebuilds a vocabulary from its full token list (reserved tokens first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(Error::Corpus("vocabulary does not start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate vocabulary entry '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("_UNK_", String::as_str)
    }

    /// Returns the id of `token`, adding it if unseen.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Maps tokens to ids, sending unknown ones to `_UNK_`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Space-joined tokens with a trailing `_EOS_` dropped.
    pub fn render(&self, ids: &[usize]) -> String {
        let ids = ids.strip_suffix(&[EOS]).unwrap_or(ids);
        self.decode(ids).join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialoguePair {
    pub message: Vec<usize>,
    pub response: Vec<usize>,
}

impl DialoguePair {
    /// `message` must be non-empty; `response` must end in its only `_EOS_`.
    pub fn new(message: Vec<usize>, response: Vec<usize>) -> Result<Self> {
        if message.is_empty() {
            return Err(Error::Corpus("empty message".into()));
        }
        check_terminated(&response)?;
        Ok(Self { message, response })
    }
}

pub(crate) fn check_terminated(response: &[usize]) -> Result<()> {
    if response.last() != Some(&EOS) {
        return Err(Error::Corpus("response is not terminated by _EOS_".into()));
    }
    if response.iter().filter(|&&t| t == EOS).count() != 1 {
        return Err(Error::Corpus("response contains more than one _EOS_".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<DialoguePair>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn responses(&self) -> Vec<Vec<usize>> {
        self.pairs.iter().map(|p| p.response.clone()).collect()
    }

    /// Renders the corpus back into the TSV pair format.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&vocab.render(&p.message));
            out.push('\t');
            out.push_str(&vocab.render(&p.response));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum VocabPolicy {
    /// Build the vocabulary from the corpus, content tokens in sorted
    /// order so ids do not depend on line or column order.
    Build,
    /// Use a fixed vocabulary; unknown tokens become `_UNK_`.
    Fixed(Vocabulary),
}

pub fn load_corpus(path: impl AsRef<Path>, policy: VocabPolicy) -> Result<(Corpus, Vocabulary)> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, policy)
}

/// Parses `message<TAB>response` lines.
pub fn parse_corpus(text: &str, policy: VocabPolicy) -> Result<(Corpus, Vocabulary)> {
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split('\t');
        let (Some(msg), Some(resp), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: line_no,
                detail: "expected exactly one tab".into(),
            });
        };
        let (msg, resp) = (tokenize(msg), tokenize(resp));
        if msg.is_empty() || resp.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                detail: "empty message or response".into(),
            });
        }
        lines.push((line_no, msg, resp));
    }
    let vocab = match policy {
        VocabPolicy::Fixed(v) => v,
        VocabPolicy::Build => {
            let mut v = Vocabulary::new();
            let all: BTreeSet<&str> = lines
                .iter()
                .flat_map(|(_, m, r)| m.iter().chain(r))
                .map(String::as_str)
                .collect();
            for t in all {
                v.insert(t);
            }
            v
        }
    };
    let mut pairs = Vec::with_capacity(lines.len());
    for (line_no, msg, resp) in &lines {
        let message = vocab.encode(msg);
        let mut response = vocab.encode(resp);
        response.push(EOS);
        let pair = DialoguePair::new(message, response).map_err(|e| Error::Parse {
            line: *line_no,
            detail: e.to_string(),
        })?;
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    Ok((Corpus { pairs }, vocab))
}

/// Swaps every `(X, Y)` into `(Y without _EOS_, X + _EOS_)`.
pub fn reverse_pairs(corpus: &Corpus) -> Corpus {
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| {
            let mut response = p.message.clone();
            response.push(EOS);
            DialoguePair {
                message: reverse_input(&p.response),
                response,
            }
        })
        .collect();
    Corpus { pairs }
}

/// Encoder input for a reverse model: the response without its `_EOS_`,
/// or a lone `_EOS_` when nothing else is left.
pub fn reverse_input(response: &[usize]) -> Vec<usize> {
    let stripped = response.strip_suffix(&[EOS]).unwrap_or(response);
    if stripped.is_empty() {
        vec![EOS]
    } else {
        stripped.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I don't know"), vec!["i", "don't", "know"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  B"), vec!["a", "b"]);
    }

    #[test]
    fn one_line_corpus() {
        let (c, v) = parse_corpus("hi\thello\n", VocabPolicy::Build).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(v.len(), 6);
        // Content ids follow sorted token order.
        assert_eq!(v.id("hello"), Some(4));
        assert_eq!(v.id("hi"), Some(5));
        assert_eq!(c.pairs[0].message, vec![5]);
        assert_eq!(c.pairs[0].response, vec![4, EOS]);
    }

    #[test]
    fn fixed_policy_maps_oov_to_unk() {
        let mut v = Vocabulary::new();
        v.insert("hi");
        let (c, _) = parse_corpus("hi\thello", VocabPolicy::Fixed(v)).unwrap();
        assert_eq!(c.pairs[0].response, vec![UNK, EOS]);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        match parse_corpus("a\tb\nno tab here\n", VocabPolicy::Build) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_corpus("a\tb\tc", VocabPolicy::Build) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_corpus("", VocabPolicy::Build), Err(Error::Corpus(_))));
    }

    #[test]
    fn reverse_is_an_involution() {
        let (c, _) = parse_corpus("a b\tc d\ne\tf\n", VocabPolicy::Build).unwrap();
        let r = reverse_pairs(&c);
        assert_eq!(r.len(), c.len());
        for p in &r.pairs {
            check_terminated(&p.response).unwrap();
        }
        assert_eq!(reverse_pairs(&r), c);
    }

    #[test]
    fn pair_invariants() {
        assert!(DialoguePair::new(vec![], vec![EOS]).is_err());
        assert!(DialoguePair::new(vec![4], vec![4]).is_err());
        assert!(DialoguePair::new(vec![4], vec![EOS, 4, EOS]).is_err());
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i));
        }
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-z]{1,5}", 0..20)) {
            let mut v = Vocabulary::new();
            let ids: Vec<usize> = words.iter().map(|w| v.insert(w)).collect();
            prop_assert!(ids.iter().all(|&i| i >= RESERVED.len()));
            prop_assert_eq!(v.decode(&v.encode(&words)), words);
        }
    }
}
