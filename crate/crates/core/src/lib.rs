//! Graph-conditioned text generation with relation-aware multi-segment attention.
//!
//! Text segments attached to the nodes of a graph are concatenated and processed by
//! a single transformer. The attention score between two tokens is the sum of a
//! content term, a segment term selected by the relation between the two tokens'
//! segments, and a relative-position term where tokens from different segments are
//! placed as if the key's segment directly preceded the query's segment. Target
//! segments are decoded autoregressively with paired query/content streams.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and the
//! command-line tools live in the `segrel` crate.
//!
//! Module map:
//!
//! - [`schema`]: segments, relation presets, the Levi transform, relation matrices
//!   and the flattened baseline.
//! - [`tokenizer`]: word-level vocabulary.
//! - [`tensor`]: dense tensors and a reverse-mode tape.
//! - [`attention`]: token layout, relative positions, visibility masks and the
//!   three-component attention score.
//! - [`model`]: embeddings, the two-stream transformer and the loss.
//! - [`train`]: Adam, schedules, the training loop, few-shot subsampling and the
//!   synthetic direction task.
//! - [`decode`]: greedy and beam generation with incremental evaluation.
//! - [`eval`]: BLEU-4 and ROUGE.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod decode;
pub mod eval;
pub mod model;
pub mod real;
pub mod schema;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use real::Real;
