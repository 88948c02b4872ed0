//! Chunked point-to-point transfers with primary/backup QP failover.

mod engine;
mod mode;
mod msg;
mod protocol;
mod state;
#[cfg(test)]
mod tests;

pub use engine::{
    ConnId, Connection, Event, Integrity, LogEvent, LogRecord, MessageRecord, QpPair, SwitchReason,
    SwitchRecord, Transfer, TransferId, TransferStatus, TransportConfig, TransportEngine,
    TransportEvent, MAX_CHUNKS,
};
pub use mode::{PipelineMode, Stage, StageCost, StageCosts};
pub use state::{switch_qp, Action, ReceiverProgress, ReceiverTimer, Role, SenderProgress};
