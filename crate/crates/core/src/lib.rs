//! Synthetic context-attribution data factory and evaluation bench.
//!
//! Modules follow the pipeline: [`corpus`] ingestion, [`contextselect`]
//! evidence selection, [`synthesis`] of QA pairs through [`llmgate`],
//! [`distractor`] mining, [`leakage`] checks, [`datasets`] assembly, then
//! [`attribution`] baselines scored by [`eval`]. [`study`] holds the
//! verification-study logic served over HTTP by the study crate.

pub mod attribution;
pub mod contextselect;
pub mod corpus;
pub mod datasets;
pub mod distractor;
pub mod eval;
pub mod leakage;
pub mod llmgate;
pub mod offline;
pub mod prompts;
pub mod sample;
pub mod seeds;
pub mod study;
pub mod synthesis;
