use thiserror::Error;

use crate::netsim::NicPortId;
use crate::time::SimTime;
use crate::verbs::{QpId, WrId};

/// Errors raised by the network, verb and transport layers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock is already {clock}")]
    SchedulingInPast { at: SimTime, clock: SimTime },
    #[error("unknown NIC port {0}")]
    UnknownPort(NicPortId),
    #[error("unknown GPU {0}")]
    UnknownGpu(usize),
    #[error("no route between {0} and {1}")]
    NoRoute(String, String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid fault script: {0}")]
    InvalidFaultScript(String),
    #[error("queue pair {0} is in error state")]
    QpInErrorState(QpId),
    #[error("memory region {0} is not registered")]
    UnregisteredRegion(usize),
    #[error(
        "work request exceeds region bounds (offset {offset} + length {length} > {region_len})"
    )]
    RegionOutOfBounds {
        offset: u64,
        length: u64,
        region_len: u64,
    },
    #[error("completion queue {0} overflowed")]
    CqOverflow(usize),
    #[error("zero-length message")]
    ZeroLengthMessage,
    #[error("work completion {0:?} does not match an outstanding request")]
    UnknownWr(WrId),
    #[error("switch target queue pair is dead")]
    TargetQpDead,
    #[error("connection {0} failed: both queue pairs are unusable")]
    ConnectionFailed(usize),
    #[error("unknown connection {0}")]
    UnknownConnection(usize),
    #[error("unknown transfer {0}")]
    UnknownTransfer(usize),
    #[error("invalid transport configuration: {0}")]
    InvalidConfig(String),
    #[error("message needs {0} chunks, more than the protocol can index")]
    TooManyChunks(u64),
    #[error("protocol invariant violated: {0}")]
    Invariant(String),
}
