//! Builtin scenarios.

mod failover;
mod fuzz;
mod monitor;
mod p2p;
mod pipeline;
mod ring;
mod trigger;

pub use failover::{failover_figure10, FailoverReport};
pub use fuzz::{fuzz_failover, ClassCount, FuzzClass, FuzzReport, FuzzTrial, Outage};
pub use monitor::{monitor_figure11, MonitorReport, WindowResult};
pub use p2p::{p2p_modes, P2pModesReport, SweepRow};
pub use pipeline::{
    hand_oracle, oracle_config, oracle_timeline, pipeline_1f1b, PipelineReport, SweepPoint,
    P2P_RATIOS,
};
pub use ring::{ring_construction, RingAudit, RingReport};
pub use trigger::{trigger_discrimination, TriggerReport, TriggerRun, Variant};

use super::{HarnessError, Outcome, ScenarioParams};

#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    run: fn(&ScenarioParams) -> Result<Outcome, HarnessError>,
}

impl Scenario {
    pub fn run(&self, params: &ScenarioParams) -> Result<Outcome, HarnessError> {
        (self.run)(params)
    }
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "p2p-modes",
        description: "1 GiB P2P in staged-copy and zero-copy modes, plus a message-size sweep",
        run: p2p::run,
    },
    Scenario {
        name: "failover-figure10",
        description: "allreduce with one NIC port down from 4 s to 19 s: retry, backup QP, switch back",
        run: failover::run,
    },
    Scenario {
        name: "monitor-figure11",
        description: "closed-loop P2P stream hit by a disturbance flow at 100 us, sampled with windows 1, 8, 32",
        run: monitor::run,
    },
    Scenario {
        name: "ring-construction",
        description: "hop audit of default and topology-aware rings on 4 servers x 8 GPUs, spine bytes, hostfile sort",
        run: ring::run,
    },
    Scenario {
        name: "pipeline-1f1b",
        description: "1F1B makespans with kernel-based and offloaded P2P over a P2P-time sweep",
        run: pipeline::run,
    },
    Scenario {
        name: "fuzz-failover",
        description: "randomized port faults and message sizes, checking exactly-once in-order delivery",
        run: fuzz::run,
    },
    Scenario {
        name: "trigger-discrimination",
        description: "seeded runs of sender-detected, receiver-detected and innocent stalls",
        run: trigger::run,
    },
];

pub fn list_scenarios() -> &'static [Scenario] {
    SCENARIOS
}

pub fn run_scenario(name: &str, params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    SCENARIOS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| HarnessError::UnknownScenario(name.to_string()))?
        .run(params)
}
