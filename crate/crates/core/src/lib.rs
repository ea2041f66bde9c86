//! Expectation-realization (ER) metaphor detection.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`corpus`] ingests VUA-20, LCC and TroFi style sources into one
//!   canonical [`corpus::TargetInstance`] record type.
//! * [`splits`] builds within-distribution, lemma-disjoint and novel
//!   evaluation protocols.
//! * [`encoding`] turns an instance into the aligned marked / masked
//!   token sequences consumed by the model.
//! * [`model`] holds the transformer encoder, the ER interaction head and the
//!   realization-only baseline, plus checkpointing.
//! * [`training`] implements the anchored loss, the warmup/decay schedule and
//!   the fold x seed training loop.
//! * [`evaluation`] pools confusion counts, ensembles, runs paired t-tests and
//!   renders reports.
//! * [`llm_baseline`] is the zero-shot chat-model feature pipeline.
//! * [`cli`] wires everything into the `metaphor-er` command.

pub mod cli;
pub mod corpus;
pub mod encoding;
pub mod evaluation;
pub mod llm_baseline;
pub mod model;
pub mod splits;
pub mod training;

pub use corpus::{DatasetId, DatasetStats, TargetInstance};
pub use encoding::{EncodedPair, WordPieceTokenizer};
pub use evaluation::{ConfusionCounts, Prediction};
pub use model::{Architecture, MetaphorModel};
pub use splits::{FoldPlan, NovelSubset, SplitMode};
