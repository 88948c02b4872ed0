//! Flow-level network simulation without the verb layer: flows, scripted
//! port faults and a deterministic trace.

use super::engine::{EventHandle, EventQueue};
use super::fault::FaultScript;
use super::flows::{FlowId, FlowNetwork};
use super::topology::{LinkId, NicPortId, PortState, Topology};
use super::trace::Trace;
use crate::error::SimError;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub enum NetEvent {
    StartFlow {
        path: Vec<LinkId>,
        bytes: u64,
        tag: u64,
    },
    Fault {
        port: NicPortId,
        state: PortState,
    },
    /// A flow may have finished; stale ticks are ignored via the generation.
    Tick {
        generation: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowDone {
    pub tag: u64,
    pub flow: FlowId,
    pub start: SimTime,
    pub end: SimTime,
    pub bytes: u64,
}

pub struct NetworkSim {
    queue: EventQueue<NetEvent>,
    net: FlowNetwork,
    trace: Trace,
    tags: std::collections::BTreeMap<FlowId, u64>,
    generation: u64,
    completed: Vec<FlowDone>,
}

impl NetworkSim {
    pub fn new(topo: Topology) -> Self {
        NetworkSim {
            queue: EventQueue::new(),
            net: FlowNetwork::new(topo),
            trace: Trace::new(true),
            tags: Default::default(),
            generation: 0,
            completed: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn network(&self) -> &FlowNetwork {
        &self.net
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn completed(&self) -> &[FlowDone] {
        &self.completed
    }

    pub fn schedule(&mut self, event: NetEvent, at: SimTime) -> Result<EventHandle, SimError> {
        self.queue.schedule(event, at)
    }

    pub fn add_flow(
        &mut self,
        path: Vec<LinkId>,
        bytes: u64,
        tag: u64,
        at: SimTime,
    ) -> Result<EventHandle, SimError> {
        self.schedule(NetEvent::StartFlow { path, bytes, tag }, at)
    }

    pub fn apply_fault(
        &mut self,
        port: NicPortId,
        new_state: PortState,
        at: SimTime,
    ) -> Result<EventHandle, SimError> {
        self.net.port_state(port)?;
        self.schedule(
            NetEvent::Fault {
                port,
                state: new_state,
            },
            at,
        )
    }

    pub fn load_faults(&mut self, script: &FaultScript) -> Result<(), SimError> {
        script.validate(self.net.topology())?;
        for e in &script.entries {
            self.apply_fault(e.port, e.state, e.at)?;
        }
        Ok(())
    }

    fn rearm(&mut self) {
        self.generation += 1;
        if let Some((at, _)) = self.net.next_completion() {
            let at = at.max(self.queue.now());
            self.queue
                .schedule(
                    NetEvent::Tick {
                        generation: self.generation,
                    },
                    at,
                )
                .expect("not in the past");
        }
    }

    fn handle(&mut self, now: SimTime, ev: NetEvent) {
        match ev {
            NetEvent::StartFlow { path, bytes, tag } => {
                let id = self.net.start_flow(path, bytes, now);
                self.tags.insert(id, tag);
                self.trace.detail(
                    now,
                    "flow_start",
                    format!("flow{}", id.0),
                    format!("bytes={bytes};tag={tag}"),
                );
            }
            NetEvent::Fault { port, state } => {
                let eff = self
                    .net
                    .apply_fault(port, state, now)
                    .expect("validated port");
                self.trace.push(
                    now,
                    "port_state",
                    port.to_string(),
                    format!(
                        "{state:?};suspended={};resumed={}",
                        eff.suspended.len(),
                        eff.resumed.len()
                    ),
                );
            }
            NetEvent::Tick { generation } => {
                if generation != self.generation {
                    return;
                }
                while let Some((at, id)) = self.net.next_completion() {
                    if at > now {
                        break;
                    }
                    let f = self.net.complete_flow(id, now).expect("active");
                    let tag = self.tags.remove(&id).unwrap_or(0);
                    self.trace.detail(
                        now,
                        "flow_done",
                        format!("flow{}", id.0),
                        format!("bytes={}", f.demand_bytes),
                    );
                    self.completed.push(FlowDone {
                        tag,
                        flow: id,
                        start: f.start_time,
                        end: now,
                        bytes: f.demand_bytes,
                    });
                }
            }
        }
        self.rearm();
    }

    /// Processes every event with time `<= t`; returns the final clock.
    pub fn run_until(&mut self, t: SimTime) -> Result<SimTime, SimError> {
        if t < self.queue.now() {
            return Err(SimError::SchedulingInPast {
                at: t,
                clock: self.queue.now(),
            });
        }
        while let Some((at, ev)) = self.queue.pop_until(t) {
            self.handle(at, ev);
        }
        self.queue.advance_to(t);
        self.net.advance(t);
        Ok(t)
    }
}
