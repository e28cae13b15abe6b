//! Reward shaping, group-relative advantage estimation with hierarchical
//! (domain x cluster) temperature scaling, and a residual view-conditioned
//! bias module for visual token grids.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`] and [`text_metrics`] are the scoring primitives.
//! - [`reward`] parses responses per task kind and combines sub-rewards.
//! - [`kmeans`] and [`advantage`] turn grouped rewards into advantages.
//! - [`vcmn`] is the token-grid bias injector with analytic gradients.
//! - [`sim`] is a tabular policy-optimisation harness used to compare
//!   advantage strategies on synthetic imbalanced task mixes.
//! - [`records`] holds the JSONL record schemas shared with the CLI.

pub mod advantage;
pub mod error;
pub mod geometry;
pub mod kmeans;
pub mod records;
pub mod reward;
pub mod sim;
pub mod text_metrics;
pub mod vcmn;

pub use advantage::{
    compute_arpo, AdvantageRecord, ArpoConfig, ArpoOutput, CurriculumSchedule, DampeningConfig,
    RenormScope, RolloutGroup, SkipReport,
};
pub use error::{Error, Result};
pub use geometry::{Box2D, BoxVariant};
pub use reward::{
    score_rollout, CognitiveDomain, GroundTruth, ParsedResponse, RewardBreakdown, RewardConfig,
    RewardWeights, TaskKind,
};
pub use sim::{Strategy, TrainConfig};
pub use vcmn::{MetaNetParams, TokenMatrix};
