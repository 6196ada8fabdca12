//! Zero-shot triple extraction over pretrained language-model attention.
//!
//! Sentences arrive as [`bundle::SentenceBundle`]s exported from a language
//! model. The [`search`] stage beam-searches the head-averaged attention
//! matrix between argument anchors to generate candidate triples, the
//! [`rank`] stage orders them by sentence/triple embedding similarity, and
//! [`tasks`] turns the top triples into open extractions, relation labels or
//! factual-probe answers. [`eval`] holds the metrics and [`pipeline`] the
//! dataset-level commands behind the `attnex` binary.

pub mod alias;
pub mod bundle;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod par;
pub mod pipeline;
pub mod rank;
pub mod search;
pub mod tasks;
pub mod triple;

pub use error::{Error, Result};
pub use triple::{ArgumentPair, PositionMode, TokenSpan, Triple, TripleCandidate};
