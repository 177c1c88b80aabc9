//! Pragmatic caption decoding.
//!
//! A *speaker* scores next tokens for one item; a *listener* scores items
//! given a (partial) caption. The decoders in [`decoding`] combine the two to
//! produce captions that single out a target item among similar distractors.
//! [`evaluation`] measures informativeness with a held-out listener and
//! fluency with a language model, and [`tuning`] picks the informativity
//! weight by coarse-to-fine grid search.
//!
//! All probability arithmetic runs in natural-log space.

pub mod audit;
pub mod bench;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod listeners;
pub mod logspace;
pub mod speakers;
pub mod tuning;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Caption, DecodeConfig, ItemId, LogDistribution, RefGameContext, Token, Vocabulary,
};
