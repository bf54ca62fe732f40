//! Task-level performance prediction for instruction-following models.
//!
//! The pipeline runs in this order:
//!
//! 1. [`corpus`] loads task corpora and model generation logs (JSONL).
//! 2. [`metrics`] scores every task (Exact Match, ROUGE-L, average token loss).
//! 3. [`perfdata`] pairs each instruction with its task score and draws seeded
//!    80/10/10 train/validation/test splits over tasks.
//! 4. [`predictors`] fits instruction → score regressors (mean baseline,
//!    TF-IDF ridge, k-NN, externally produced predictions).
//! 5. [`runner`] tunes on validation, measures test RMSE per split, and
//!    aggregates mean ± sample std across splits and conditions.
//!
//! [`collector`] gathers generations from a chat-completions endpoint and
//! [`report`] renders tables and SVG scatter plots. [`cli`] ties it together.

pub mod cli;
pub mod collector;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod perfdata;
pub mod predictors;
pub mod report;
pub mod rng;
pub mod runner;
mod util;

pub use error::{Error, Result};
