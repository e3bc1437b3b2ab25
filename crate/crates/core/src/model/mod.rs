//! LSTM encoder-decoder with an MLP/bilinear softmax output layer.
//!
//! The encoder starts from a zero state and its final `(h, c)` seeds the
//! decoder. Each decoder step embeds the previous token (concatenated with
//! an attention context when attention is enabled), advances the LSTM and
//! scores every vocabulary entry as `c_i . mlp(h)`, where `c_i` are rows of
//! the candidate embedding table and `mlp(h) = W2 tanh(W1 h + b1) + b2`.

mod attention;
mod lstm;

use serde::{Deserialize, Serialize};

use crate::corpus::START;
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, softmax_rows, Graph, ParamId, ParamStore, SeededRng, Tensor, Var};
use attention::Attention;
use lstm::LstmCell;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    None,
    Single,
    Multi(usize),
}

impl AttentionMode {
    pub fn heads(self) -> usize {
        match self {
            AttentionMode::None => 0,
            AttentionMode::Single => 1,
            AttentionMode::Multi(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention: AttentionMode,
    pub tie_output_embeddings: bool,
    /// Language-model mode: no encoder, the decoder starts from zeros.
    pub decoder_only: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            attention: AttentionMode::None,
            tie_output_embeddings: false,
            decoder_only: false,
        }
    }

    pub fn with_attention(mut self, attention: AttentionMode) -> Self {
        self.attention = attention;
        self
    }

    pub fn tied(mut self, tie: bool) -> Self {
        self.tie_output_embeddings = tie;
        self
    }

    pub fn language_model(mut self) -> Self {
        self.decoder_only = true;
        self.attention = AttentionMode::None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::config("vocab_size must be at least 4 (reserved tokens)"));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config("embed_dim and hidden_dim must be positive"));
        }
        if let AttentionMode::Multi(k) = self.attention {
            if k < 2 {
                return Err(Error::config("multi-head attention needs at least 2 heads"));
            }
        }
        if self.decoder_only && self.attention != AttentionMode::None {
            return Err(Error::config("a decoder-only model cannot use attention"));
        }
        Ok(())
    }
}

/// Parameter initialization scheme.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Glorot-uniform matrices from a seeded ChaCha8 stream.
    Glorot(u64),
    /// All weights zero (forget-gate biases still 1).
    Zeros,
}

pub(crate) enum Initializer {
    Glorot(SeededRng),
    Zeros,
}

impl Initializer {
    fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Initializer::Glorot(rng) => Tensor::glorot(rows, cols, rng),
            Initializer::Zeros => Tensor::zeros(rows, cols),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: ParamId,
    candidates: ParamId,
    encoder: Option<LstmCell>,
    decoder: LstmCell,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
    attention: Option<Attention>,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Encoder states `[|X| x d]` and the final `(h, c)` as `[d x 1]` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub states: Tensor,
    pub h: Tensor,
    pub c: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
    /// Encoder states, kept only when attention is enabled.
    pub enc: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub context: Tensor,
    /// One weight vector over encoder positions per head.
    pub weights: Vec<Vec<f64>>,
}

/// Decoder state inside a recording graph.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub h: Var,
    pub c: Var,
    pub enc: Option<Var>,
}

impl Seq2SeqModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, Init::Glorot(seed))
    }

    pub fn with_init(config: ModelConfig, init: Init) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, init))
    }

    fn build(config: ModelConfig, init: Init) -> Self {
        let mut init = match init {
            Init::Glorot(seed) => Initializer::Glorot(seeded_rng(seed)),
            Init::Zeros => Initializer::Zeros,
        };
        let (n, e, d) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", init.matrix(n, e));
        let candidates = if config.tie_output_embeddings {
            embedding
        } else {
            store.add("output_embedding", init.matrix(n, e))
        };
        let encoder =
            (!config.decoder_only).then(|| LstmCell::create(&mut store, "encoder", e, d, &mut init));
        let dec_input = if config.attention == AttentionMode::None { e } else { e + d };
        let decoder = LstmCell::create(&mut store, "decoder", dec_input, d, &mut init);
        let mlp_w1 = store.add("mlp.w1", init.matrix(d, d));
        let mlp_b1 = store.add("mlp.b1", Tensor::zeros(d, 1));
        let mlp_w2 = store.add("mlp.w2", init.matrix(e, d));
        let mlp_b2 = store.add("mlp.b2", Tensor::zeros(e, 1));
        let attention = match config.attention {
            AttentionMode::None => None,
            AttentionMode::Single => Some(Attention::single(&mut store, d, &mut init)),
            AttentionMode::Multi(k) => Some(Attention::multi(&mut store, d, k, &mut init)),
        };
        Self {
            config,
            params: store,
            layout: Layout {
                embedding,
                candidates,
                encoder,
                decoder,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
                attention,
            },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding_id(&self) -> ParamId {
        self.layout.embedding
    }

    /// Table of candidate embeddings scored by the output layer; the same
    /// parameter as the input embedding when tied.
    pub fn candidate_id(&self) -> ParamId {
        self.layout.candidates
    }

    fn embed(&self, g: &mut Graph, token: usize) -> Result<Var> {
        let table = g.param(self.layout.embedding);
        let row = g.gather_rows(table, &[token])?;
        Ok(g.transpose(row))
    }

    fn zero_column(&self, g: &mut Graph) -> Var {
        g.constant(Tensor::zeros(self.config.hidden_dim, 1))
    }

    /// Runs the encoder over `x`; returns stacked states and the final `(h, c)`.
    pub fn encode_graph(&self, g: &mut Graph, x: &[usize]) -> Result<(Var, Var, Var)> {
        let enc = self
            .layout
            .encoder
            .as_ref()
            .ok_or_else(|| Error::config("decoder-only model has no encoder"))?;
        if x.is_empty() {
            return Err(Error::EmptySequence("encoder input"));
        }
        let mut h = self.zero_column(g);
        let mut c = self.zero_column(g);
        let mut rows = Vec::with_capacity(x.len());
        for &tok in x {
            let e = self.embed(g, tok)?;
            (h, c) = enc.step(g, e, h, c)?;
            rows.push(g.transpose(h));
        }
        let states = g.concat_rows(&rows)?;
        Ok((states, h, c))
    }

    /// Decoder start state for input `x` (ignored by decoder-only models).
    pub fn initial_state_graph(&self, g: &mut Graph, x: &[usize]) -> Result<GraphState> {
        if self.config.decoder_only {
            let h = self.zero_column(g);
            let c = self.zero_column(g);
            return Ok(GraphState { h, c, enc: None });
        }
        let (states, h, c) = self.encode_graph(g, x)?;
        let enc = (self.config.attention != AttentionMode::None).then_some(states);
        Ok(GraphState { h, c, enc })
    }

    /// One decoder step; returns the next state and `[1 x N]` logits.
    pub fn step_graph(&self, g: &mut Graph, st: &GraphState, prev: usize) -> Result<(GraphState, Var)> {
        let mut input = self.embed(g, prev)?;
        if let Some(attn) = &self.layout.attention {
            let enc = st
                .enc
                .ok_or_else(|| Error::config("attention model state lacks encoder states"))?;
            let (ctx, _) = attn.context(g, st.h, enc)?;
            input = g.concat_rows(&[input, ctx])?;
        }
        let (h, c) = self.layout.decoder.step(g, input, st.h, st.c)?;
        let logits = self.output_logits(g, h)?;
        Ok((GraphState { h, c, enc: st.enc }, logits))
    }

    fn output_logits(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let l = &self.layout;
        let (w1, b1, w2, b2) = (g.param(l.mlp_w1), g.param(l.mlp_b1), g.param(l.mlp_w2), g.param(l.mlp_b2));
        let z = g.matmul(w1, h)?;
        let z = g.add(z, b1)?;
        let z = g.tanh(z);
        let u = g.matmul(w2, z)?;
        let u = g.add(u, b2)?;
        let cands = g.param(l.candidates);
        let logits = g.matmul(cands, u)?;
        Ok(g.transpose(logits))
    }

    pub fn encode(&self, x: &[usize]) -> Result<EncoderOutput> {
        let mut g = Graph::new(&self.params);
        let (states, h, c) = self.encode_graph(&mut g, x)?;
        Ok(EncoderOutput {
            states: g.value(states).clone(),
            h: g.value(h).clone(),
            c: g.value(c).clone(),
        })
    }

    pub fn decoder_init(&self, enc: &EncoderOutput) -> DecoderState {
        DecoderState {
            h: enc.h.clone(),
            c: enc.c.clone(),
            enc: (self.config.attention != AttentionMode::None).then(|| enc.states.clone()),
        }
    }

    pub fn initial_state(&self, x: &[usize]) -> Result<DecoderState> {
        if self.config.decoder_only {
            let z = Tensor::zeros(self.config.hidden_dim, 1);
            return Ok(DecoderState {
                h: z.clone(),
                c: z,
                enc: None,
            });
        }
        Ok(self.decoder_init(&self.encode(x)?))
    }

    /// Advances the decoder by one token and returns the next-token
    /// distribution over all `N` vocabulary entries.
    pub fn decode_step(&self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let mut g = Graph::new(&self.params);
        let st = GraphState {
            h: g.constant(state.h.clone()),
            c: g.constant(state.c.clone()),
            enc: state.enc.as_ref().map(|e| g.constant(e.clone())),
        };
        let (next, logits) = self.step_graph(&mut g, &st, prev)?;
        let dist = softmax_rows(g.value(logits)).into_data();
        let next = DecoderState {
            h: g.value(next.h).clone(),
            c: g.value(next.c).clone(),
            enc: state.enc.clone(),
        };
        Ok((next, dist))
    }

    /// Attention context for the decoder's current hidden state.
    pub fn attention_context(&self, state: &DecoderState, enc_states: &Tensor) -> Result<AttentionOutput> {
        let attn = self
            .layout
            .attention
            .as_ref()
            .ok_or_else(|| Error::config("model has no attention"))?;
        let mut g = Graph::new(&self.params);
        let h = g.constant(state.h.clone());
        let enc = g.constant(enc_states.clone());
        let (ctx, weights) = attn.context(&mut g, h, enc)?;
        Ok(AttentionOutput {
            context: g.value(ctx).clone(),
            weights: weights.iter().map(|w| g.value(*w).data().to_vec()).collect(),
        })
    }

    /// Teacher-forced `log p(y | x)`, starting from `_START_`.
    pub fn sequence_log_prob(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        let mut state = self.initial_state(x)?;
        let mut prev = START;
        let mut total = 0.0;
        for &tok in y {
            let (next, dist) = self.decode_step(&state, prev)?;
            if tok >= dist.len() {
                return Err(Error::Index { id: tok, bound: dist.len() });
            }
            total += dist[tok].ln();
            state = next;
            prev = tok;
        }
        Ok(total)
    }
}
