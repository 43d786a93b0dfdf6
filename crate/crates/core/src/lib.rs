//! dp-core: schema-driven, entity-parallel online data curation.
//!
//! The pipeline: a YAML task descriptor plus a CSV of entities
//! ([`task`]) drive one model call per entity through a [`provider`],
//! with retries, rate limiting, and per-entity checkpoints ([`engine`]).
//! Results compile into a curated table ([`compile`]), get priced
//! ([`ledger`]), and are scored against ground truth with exact binomial
//! intervals ([`eval`]). [`bootstrap`] turns a natural-language request
//! into new task files using the same provider abstraction.

pub mod bootstrap;
pub mod compile;
pub mod engine;
pub mod eval;
pub mod ledger;
pub mod provider;
pub mod task;
pub mod util;

pub use compile::{CuratedTable, OverrideEntry, OverrideSet};
pub use engine::{EntityResult, RunSummary};
pub use eval::{EvalReport, GroundTruth, MatchRule};
pub use ledger::{CostRecord, CostReport, Money, PricingTable};
pub use provider::{
    CurationRequest, Provider, ProviderError, ProviderResponse, Usage,
};
pub use task::{EntityRecord, EntitySet, TaskSpec};
