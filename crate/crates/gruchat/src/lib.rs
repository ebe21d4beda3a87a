//! Character-level GRU dialogue workbench.
//!
//! The crate trains a character-level recurrent (GRU) language model,
//! generates two-agent dialogues with a beam search that can rank
//! candidates under four objectives (plain network log-probability,
//! mutual information, and two entropy-normalized variants), and scores
//! the resulting transcripts with four sentence-pair distance metrics
//! plus descriptive statistics.
//!
//! Modules follow the pipeline order:
//!
//! - [`corpus`]: character vocabulary, frequency table, batching.
//! - [`grunet`]: the GRU stack, training loop, checkpoints.
//! - [`decode`]: beam search and the scoring objectives.
//! - [`dialogue`]: the two-agent conversation protocol and transcripts.
//! - [`metrics`]: sentence-pair distances and transcript statistics.
//! - [`cli`]: the `gruchat` command-line front end.
//!
//! See the crate `examples/` directory for runnable end-to-end demos.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod dialogue;
mod error;
pub mod grunet;
pub mod metrics;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
