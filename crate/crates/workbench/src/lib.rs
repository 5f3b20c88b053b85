//! Dataset ingestion, the synthetic oracle benchmark, metrics, persistence and
//! the pipeline stages behind the `surfel` CLI.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod imageio;
pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod remote;

pub use error::{WbResult, WorkbenchError};
