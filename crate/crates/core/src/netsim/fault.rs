use serde::{Deserialize, Serialize};

use super::topology::{NicPortId, PortState, Topology};
use crate::error::SimError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub at: SimTime,
    pub port: NicPortId,
    pub state: PortState,
}

/// Timed NIC port state changes. Ports start Up, so each port's entries
/// must alternate Down, Up, Down, ...
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultScript {
    pub entries: Vec<FaultEntry>,
}

impl FaultScript {
    pub fn new(entries: Vec<FaultEntry>) -> Self {
        FaultScript { entries }
    }

    /// Convenience for the common down-then-up window.
    pub fn outage(port: NicPortId, down: SimTime, up: Option<SimTime>) -> Self {
        let mut entries = vec![FaultEntry {
            at: down,
            port,
            state: PortState::Down,
        }];
        if let Some(up) = up {
            entries.push(FaultEntry {
                at: up,
                port,
                state: PortState::Up,
            });
        }
        FaultScript { entries }
    }

    pub fn validate(&self, topo: &Topology) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidFaultScript(m));
        let mut last: std::collections::BTreeMap<NicPortId, PortState> = Default::default();
        for (i, w) in self.entries.iter().enumerate() {
            if i > 0 && self.entries[i - 1].at > w.at {
                return bad(format!("entry {i} is out of time order"));
            }
            if w.port.0 >= topo.nic_count() {
                return Err(SimError::UnknownPort(w.port));
            }
            let prev = last.get(&w.port).copied().unwrap_or(PortState::Up);
            if prev == w.state {
                return bad(format!("entry {i}: {} is already {:?}", w.port, w.state));
            }
            last.insert(w.port, w.state);
        }
        Ok(())
    }

    /// Whether `port` is down at time `t` (changes at `t` included).
    pub fn is_down_at(&self, port: NicPortId, t: SimTime) -> bool {
        self.entries
            .iter()
            .rfind(|e| e.port == port && e.at <= t)
            .is_some_and(|e| e.state == PortState::Down)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::topology::ClosConfig;

    #[test]
    fn validation_rules() {
        let topo = Topology::clos(&ClosConfig::default()).unwrap();
        let p = NicPortId(0);
        assert!(
            FaultScript::outage(p, SimTime::from_secs(4), Some(SimTime::from_secs(19)))
                .validate(&topo)
                .is_ok()
        );
        let twice_down = FaultScript::new(vec![
            FaultEntry {
                at: SimTime(1),
                port: p,
                state: PortState::Down,
            },
            FaultEntry {
                at: SimTime(2),
                port: p,
                state: PortState::Down,
            },
        ]);
        assert!(twice_down.validate(&topo).is_err());
        let unsorted = FaultScript::new(vec![
            FaultEntry {
                at: SimTime(5),
                port: p,
                state: PortState::Down,
            },
            FaultEntry {
                at: SimTime(2),
                port: NicPortId(1),
                state: PortState::Down,
            },
        ]);
        assert!(unsorted.validate(&topo).is_err());
        let unknown = FaultScript::outage(NicPortId(999), SimTime(1), None);
        assert_eq!(
            unknown.validate(&topo),
            Err(SimError::UnknownPort(NicPortId(999)))
        );
    }

    #[test]
    fn down_window_lookup() {
        let s = FaultScript::outage(NicPortId(2), SimTime(10), Some(SimTime(20)));
        assert!(!s.is_down_at(NicPortId(2), SimTime(9)));
        assert!(s.is_down_at(NicPortId(2), SimTime(10)));
        assert!(!s.is_down_at(NicPortId(2), SimTime(20)));
        assert!(!s.is_down_at(NicPortId(3), SimTime(15)));
    }
}
