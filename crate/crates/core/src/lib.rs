//! Deterministic simulator for collective communication with CPU-offloaded
//! zero-copy P2P, primary/backup queue-pair failover and window-based
//! throughput monitoring.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collectives;
pub mod error;
pub mod harness;
pub mod monitor;
pub mod netsim;
pub mod pipeline;
pub mod time;
pub mod transport;
pub mod verbs;

pub use error::SimError;
pub use time::SimTime;
