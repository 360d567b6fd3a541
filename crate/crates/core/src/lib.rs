//! Behavioral analysis of software-engineering agent trajectories.
//!
//! The crate turns heterogeneous agent logs into a canonical turn model,
//! annotates every turn (action category, error type, error cascades),
//! extracts behavioral and motif-graph features, evaluates binary behavioral
//! patterns, and runs a per-configuration random-effects meta-analysis with
//! moderator meta-regression and resampling diagnostics. A PCA + k-means
//! taxonomy groups configurations into trajectory types, and a seeded
//! synthetic generator supplies planted ground truth for validation.

pub mod annotate;
pub mod effects;
pub mod error;
pub mod features;
pub mod ingest;
pub mod meta;
pub mod model;
pub mod motif;
pub mod patterns;
pub mod report;
pub mod pipeline;
pub mod rng;
pub mod robustness;
pub mod stats;
pub mod synth;
pub mod table;
pub mod taxonomy;

pub use error::{Error, Result};
pub use model::{
    validate_trajectory, Action, ActionCategory, ConfigurationId, Observation, Outcome, Trajectory,
    Turn,
};
