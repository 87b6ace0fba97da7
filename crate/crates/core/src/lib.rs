//! Coverage-guided fuzzing engine with Shapley-value attribution of byte
//! positions, a family system that shares attributions across seeds, and
//! a LinUCB contextual bandit that turns attributions into a byte
//! selection policy.

pub mod bandit;
pub mod corpus;
pub mod coverage;
pub mod engine;
pub mod error;
pub mod family;
pub mod mutation;
pub mod shapley;
pub mod targets;

pub use coverage::{CoverageMap, EdgeId, EdgeSet};
pub use engine::{Campaign, EngineConfig, ModePolicy, StatsRow};
pub use error::{Error, Result};
pub use family::{Family, FamilyId, Seed, SeedId};
pub use shapley::ShapleyVector;
