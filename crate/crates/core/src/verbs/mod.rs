//! Verb-layer abstraction: queue pairs, work requests, completion queues and
//! registered memory.

mod fabric;
mod types;

pub use fabric::{Fabric, FabricEvent, FabricOutput, Scheduler, SendRequest};
pub use types::*;
