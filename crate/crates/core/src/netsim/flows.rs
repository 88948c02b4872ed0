//! Fluid flow model: active flows progress at their max-min rate, which is
//! recomputed whenever the flow set or a link state changes.

use std::collections::BTreeMap;

use super::fairshare::allocate_bandwidth;
use super::topology::{LinkId, NicPortId, PortState, Topology};
use crate::error::SimError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u64);

#[derive(Debug, Clone)]
pub struct Flow {
    pub id: FlowId,
    pub path: Vec<LinkId>,
    pub demand_bytes: u64,
    pub bytes_remaining: f64,
    /// Bytes moved so far in the current attempt.
    pub delivered: f64,
    pub rate_bps: f64,
    pub start_time: SimTime,
    /// True while some link on the path is down.
    pub suspended: bool,
}

/// Flows whose state changed because of a port fault.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FaultEffect {
    pub suspended: Vec<FlowId>,
    pub resumed: Vec<FlowId>,
}

#[derive(Debug, Clone)]
pub struct FlowNetwork {
    topo: Topology,
    flows: BTreeMap<FlowId, Flow>,
    next_id: u64,
    last_update: SimTime,
    link_bytes: Vec<u64>,
}

impl FlowNetwork {
    pub fn new(topo: Topology) -> Self {
        let n = topo.links.len();
        FlowNetwork {
            topo,
            flows: BTreeMap::new(),
            next_id: 0,
            last_update: SimTime::ZERO,
            link_bytes: vec![0; n],
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flows.get(&id)
    }

    pub fn flows(&self) -> impl Iterator<Item = &Flow> {
        self.flows.values()
    }

    pub fn active_count(&self) -> usize {
        self.flows.len()
    }

    /// Bytes of completed flows that crossed each link.
    pub fn link_bytes(&self) -> &[u64] {
        &self.link_bytes
    }

    /// Integrates progress of every flow up to `now`.
    pub fn advance(&mut self, now: SimTime) {
        if now <= self.last_update {
            return;
        }
        let dt = (now - self.last_update).as_secs_f64();
        for f in self.flows.values_mut() {
            if f.rate_bps > 0.0 {
                let moved = (f.rate_bps / 8.0 * dt).min(f.bytes_remaining);
                f.bytes_remaining -= moved;
                f.delivered += moved;
            }
        }
        self.last_update = now;
    }

    fn path_up(&self, path: &[LinkId]) -> bool {
        path.iter()
            .all(|l| self.topo.link(*l).state == PortState::Up)
    }

    fn reallocate(&mut self) {
        let active: Vec<(FlowId, &[LinkId])> = self
            .flows
            .values()
            .filter(|f| !f.suspended)
            .map(|f| (f.id, f.path.as_slice()))
            .collect();
        let topo = &self.topo;
        let rates = allocate_bandwidth(&active, |l| topo.link(l).capacity_bps);
        for f in self.flows.values_mut() {
            f.rate_bps = rates.get(&f.id).copied().unwrap_or(0.0);
        }
    }

    pub fn start_flow(&mut self, path: Vec<LinkId>, bytes: u64, now: SimTime) -> FlowId {
        self.advance(now);
        let id = FlowId(self.next_id);
        self.next_id += 1;
        let suspended = !self.path_up(&path);
        self.flows.insert(
            id,
            Flow {
                id,
                path,
                demand_bytes: bytes,
                bytes_remaining: bytes as f64,
                delivered: 0.0,
                rate_bps: 0.0,
                start_time: now,
                suspended,
            },
        );
        self.reallocate();
        id
    }

    pub fn cancel_flow(&mut self, id: FlowId, now: SimTime) -> Option<Flow> {
        self.advance(now);
        let f = self.flows.remove(&id);
        if f.is_some() {
            self.reallocate();
        }
        f
    }

    /// Removes a finished flow and credits its bytes to every link it used.
    pub fn complete_flow(&mut self, id: FlowId, now: SimTime) -> Option<Flow> {
        self.advance(now);
        let mut f = self.flows.remove(&id)?;
        f.delivered = f.demand_bytes as f64;
        f.bytes_remaining = 0.0;
        for l in &f.path {
            self.link_bytes[l.0] += f.demand_bytes;
        }
        self.reallocate();
        Some(f)
    }

    /// Earliest flow completion, ties broken by flow id.
    pub fn next_completion(&self) -> Option<(SimTime, FlowId)> {
        self.flows
            .values()
            .filter(|f| f.rate_bps > 0.0)
            .map(|f| {
                let secs = f.bytes_remaining * 8.0 / f.rate_bps;
                (self.last_update + SimTime::from_secs_f64(secs), f.id)
            })
            .min()
    }

    pub fn port_state(&self, port: NicPortId) -> Result<PortState, SimError> {
        self.topo.port_state(port)
    }

    /// Changes a port's state at `now`. Flows crossing a downed port lose the
    /// progress of their current attempt and are suspended; suspended flows
    /// whose whole path is up again resume.
    pub fn apply_fault(
        &mut self,
        port: NicPortId,
        state: PortState,
        now: SimTime,
    ) -> Result<FaultEffect, SimError> {
        self.advance(now);
        let links = self.topo.set_port_state(port, state)?;
        let mut effect = FaultEffect::default();
        let ids: Vec<FlowId> = self.flows.keys().copied().collect();
        for id in ids {
            let up = self.path_up(&self.flows[&id].path);
            let f = self.flows.get_mut(&id).expect("present");
            match state {
                PortState::Down if f.path.iter().any(|l| links.contains(l)) => {
                    if !f.suspended {
                        effect.suspended.push(id);
                    }
                    f.suspended = true;
                    f.bytes_remaining = f.demand_bytes as f64;
                    f.delivered = 0.0;
                }
                PortState::Up if f.suspended && up => {
                    f.suspended = false;
                    effect.resumed.push(id);
                }
                _ => {}
            }
        }
        self.reallocate();
        Ok(effect)
    }

    /// Instantaneous allocated load per link.
    pub fn link_load(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.topo.links.len()];
        for f in self.flows.values() {
            for l in &f.path {
                load[l.0] += f.rate_bps;
            }
        }
        load
    }
}
