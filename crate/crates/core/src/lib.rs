//! Data-model-hardware co-design toolkit for multi-object-tracking (MOT)
//! video pipelines.
//!
//! The crate is split along the pipeline:
//!
//! * [`frame`], [`scenario`], [`archive`], [`rng`]: shared domain types,
//!   synthetic scenarios and the `TRIW`/`TRIM` binary formats.
//! * [`metrics`]: greedy IoU tracker plus IDSw, MOTA and IDF1.
//! * [`temporal`]: policy-gradient frame filtering.
//! * [`spatial`]: Sobel patch saliency and feature-map masks.
//! * [`pruning`]: magnitude, kernel-wise and pattern-aware pruning.
//! * [`accel`]: analytical tile-based accelerator cost model.
//! * [`pipeline`]: multi-device dataflow simulation and Table-style reports.
//! * [`cli`]: JSON-configured command surface used by the `trivid` binary.

pub mod accel;
pub mod archive;
pub mod cli;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod pipeline;
pub mod pruning;
pub mod rng;
pub mod scenario;
pub mod spatial;
pub mod temporal;
mod util;

pub use error::{Error, Result};
