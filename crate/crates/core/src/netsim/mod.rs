//! Discrete-event engine and fluid network model of a leaf/spine cluster.

mod engine;
mod fairshare;
mod fault;
mod flows;
mod sim;
mod topology;
mod trace;

pub use engine::{EventHandle, EventQueue};
pub use fairshare::allocate_bandwidth;
pub use fault::{FaultEntry, FaultScript};
pub use flows::{FaultEffect, Flow, FlowId, FlowNetwork};
pub use sim::{FlowDone, NetEvent, NetworkSim};
pub use topology::{
    ClosConfig, GpuId, Host, HostId, Link, LinkId, LinkKind, NicPortId, Node, Path, PortState,
    Switch, SwitchId, SwitchTier, Topology,
};
pub use trace::{Trace, TraceLevel, TraceRecord};
