//! Escalation forecasting from actor-dyad conflict events and news text.
//!
//! The pipeline ingests events and articles, extracts per-dyad fatality
//! trends with a Gaussian process, discretizes the trend derivative into
//! escalation states, assembles topic and retrieval digests per dyad-month,
//! trains step-shifted softmax classifiers, and evaluates them against a
//! bootstrap baseline.

pub mod ann;
pub mod digest;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod gp;
pub mod ingest;
pub mod labeler;
pub mod month;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use month::{Month, MonthRange};
