//! Stream-coordination runtime with a tuple-space engine and four
//! interchangeable tiled Cholesky factorizations built on top of them.
//!
//! * [`record`], [`combinators`], [`runtime`]: records and type patterns,
//!   the combinator algebra (serial, parallel, star, split, feedback,
//!   synchrocells) and a work-stealing executor for compiled networks.
//! * [`cnc`]: a tuple-space engine of single-assignment item collections,
//!   tag collections and prescribed step collections, with optional
//!   dependency functions for scheduling.
//! * [`cholesky`]: tile kernels, tiling, and the serial and dense
//!   references.
//! * [`barrier`], [`dataflow`]: the two stream-network factorizations.
//! * [`bench`]: the measurement harness behind the `streamcoord-bench` CLI.

pub mod barrier;
pub mod bench;
pub mod cholesky;
pub mod cnc;
pub mod combinators;
pub mod dataflow;
pub mod error;
mod fields;
pub mod pool;
pub mod record;
pub mod runtime;

pub use error::{BoxError, CholeskyError, CncError, CompileError, FactorError, NumericError, RecordError, RunError, StepError};
pub use record::{best_match, matches, merge_records, BoxSignature, Record, TypePattern};
