//! Sequence-to-sequence response generation lab.
//!
//! LSTM encoder-decoder models with optional additive or multi-head
//! attention, trained under negative log-likelihood, confidence-penalty or
//! label-smoothing losses; greedy and beam decoding with MMI reranking; and
//! diagnostics for over-confident, low-diversity output.
//!
//! Interchangeable pieces (token losses, optimizers, decoders, rerank
//! objectives) sit behind traits and are resolved by name through a
//! [`registry::Registry`], which is how the `seqdiv` binary selects them.

pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod registry;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
