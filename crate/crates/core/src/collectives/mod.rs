//! Collective primitives over the transport, topology-aware ring
//! construction and hostfile sorting.

mod exec;
mod plan;
mod ring;

pub use exec::{CollectiveResult, CollectiveStatus, Communicator, RankResult};
pub use plan::CollectiveOp;
pub use ring::{
    build_ring, sort_hostfile, CommGroup, FlipPolicy, Hostfile, RingChannel, RingEdge, RingMode,
};

use thiserror::Error;

use crate::error::SimError;
use crate::netsim::GpuId;
use crate::time::SimTime;
use crate::transport::TransportEngine;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CollectiveError {
    #[error("collective needs at least {need} ranks, got {got}")]
    GroupTooSmall { need: usize, got: usize },
    #[error("rank list repeats {0}")]
    DuplicateRank(GpuId),
    #[error("cannot build a ring: {0}")]
    InfeasibleRing(String),
    #[error("invalid collective: {0}")]
    InvalidOp(String),
    #[error("collective did not finish by {0}")]
    Timeout(SimTime),
    #[error(transparent)]
    Transport(#[from] SimError),
}

/// Runs one op on a fresh communicator.
pub fn run_collective(
    eng: &mut TransportEngine,
    group: &CommGroup,
    op: CollectiveOp,
    horizon: SimTime,
) -> Result<CollectiveResult, CollectiveError> {
    Communicator::new(group.clone()).run(eng, op, horizon)
}

pub fn ring_allreduce(
    eng: &mut TransportEngine,
    group: &CommGroup,
    nbytes: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(eng, group, CollectiveOp::AllReduce { nbytes }, SimTime::MAX)
}

pub fn allgather(
    eng: &mut TransportEngine,
    group: &CommGroup,
    nbytes_per_rank: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(
        eng,
        group,
        CollectiveOp::AllGather { nbytes_per_rank },
        SimTime::MAX,
    )
}

pub fn reducescatter(
    eng: &mut TransportEngine,
    group: &CommGroup,
    nbytes: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(
        eng,
        group,
        CollectiveOp::ReduceScatter { nbytes },
        SimTime::MAX,
    )
}

pub fn broadcast(
    eng: &mut TransportEngine,
    group: &CommGroup,
    root: usize,
    nbytes: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(
        eng,
        group,
        CollectiveOp::Broadcast { root, nbytes },
        SimTime::MAX,
    )
}

pub fn send_recv(
    eng: &mut TransportEngine,
    group: &CommGroup,
    nbytes: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(eng, group, CollectiveOp::SendRecv { nbytes }, SimTime::MAX)
}

pub fn alltoall(
    eng: &mut TransportEngine,
    group: &CommGroup,
    nbytes_per_pair: u64,
) -> Result<CollectiveResult, CollectiveError> {
    run_collective(
        eng,
        group,
        CollectiveOp::AllToAll { nbytes_per_pair },
        SimTime::MAX,
    )
}

#[cfg(test)]
mod tests;
