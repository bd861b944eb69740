//! Reading-order serialization of OCR output for text-only document QA,
//! together with the benchmark metrics and diagnostics used to evaluate it.
//!
//! The pipeline is: [`geometry`] loads OCR words, [`ordering`] picks a
//! reading order, [`serialize`] builds the context and prompt, [`llmclient`]
//! obtains predictions, [`metrics`] scores them and [`analysis`] relates the
//! scores to properties of the input. [`datasets`] holds QA records,
//! per-benchmark configuration and the multi-task mixture sampler.

pub mod analysis;
pub mod datasets;
pub mod error;
pub mod geometry;
pub mod jsonl;
pub mod llmclient;
pub mod metrics;
pub mod ordering;
pub mod serialize;

pub use error::{Error, Result};
