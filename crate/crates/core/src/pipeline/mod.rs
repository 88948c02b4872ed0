//! Stream/event ordering, SM contention and a 1F1B pipeline scheduler
//! comparing kernel-based and offloaded point-to-point transfers.

mod schedule;
mod sm;
mod streams;

pub use schedule::{
    one_f_one_b_order, p2p_duration, run_1f1b, training_throughput_proxy, P2pMode, Phase,
    PipelineConfig, PipelineResult, TimelineEntry,
};
pub use sm::{gemm_duration, SmPool, SM_FRACTION_INTER_HOST, SM_FRACTION_INTRA_HOST};
pub use streams::{
    enforce_order, EventId, ExecutionTrace, OpKind, Stream, StreamKind, StreamOp, TraceEntry,
};

use thiserror::Error;

use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("no SM capacity left for compute")]
    NoSmAvailable,
    #[error("SM reservations exceed the pool: {0}")]
    Oversubscribed(f64),
    #[error("dependency cycle or missing event: {0}")]
    DependencyCycle(String),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("ordering violated: {0}")]
    OrderViolation(String),
    #[error(transparent)]
    Transport(#[from] SimError),
}

#[cfg(test)]
mod tests;
