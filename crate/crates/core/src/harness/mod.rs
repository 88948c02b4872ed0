//! Batch harness: run configs and builtin scenarios, write CSV/JSON outputs.

mod config;
mod phases;
mod scenarios;

pub use config::{
    load_run_config, run_config, run_loaded_config, validate_config, validate_loaded_config,
    Diagnostic, FaultFile, FaultSpec, Overrides, RingWorkload, RunConfig, Severity, Workload,
};
pub use phases::{binned_throughput, phase_throughput, PhaseThroughput};
pub use scenarios::{
    failover_figure10, fuzz_failover, hand_oracle, list_scenarios, monitor_figure11, oracle_config,
    oracle_timeline, p2p_modes, pipeline_1f1b, ring_construction, run_scenario,
    trigger_discrimination, ClassCount, FailoverReport, FuzzClass, FuzzReport, FuzzTrial,
    MonitorReport, Outage, P2pModesReport, PipelineReport, RingAudit, RingReport, Scenario,
    SweepPoint, SweepRow, TriggerReport, TriggerRun, Variant, WindowResult, P2P_RATIOS,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::monitor::SeriesStats;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}", render(.0))]
    Config(Vec<Diagnostic>),
    #[error("scenario failed: {0}")]
    Scenario(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn render(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

macro_rules! scenario_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Scenario(e.to_string())
            }
        }
    )*};
}
scenario_from!(
    crate::SimError,
    crate::collectives::CollectiveError,
    crate::pipeline::PipelineError,
    crate::monitor::MonitorError
);

/// Knobs shared by every scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioParams {
    pub seed: u64,
    /// Monitor windows; each scenario has its own default.
    pub window_sizes: Option<Vec<usize>>,
    pub overrides: Overrides,
    /// Trial count for randomized scenarios.
    pub trials: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { reason: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        *self == RunStatus::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
    pub makespan_ns: Option<u64>,
    pub phases: Vec<PhaseThroughput>,
    /// Receiver checksums and delivery order for every data transfer.
    pub integrity: Option<bool>,
    /// Keyed by window size.
    pub monitor: BTreeMap<String, SeriesStats>,
    pub metrics: serde_json::Value,
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn new(scenario: &str, seed: u64) -> Self {
        RunSummary {
            scenario: scenario.to_string(),
            seed,
            status: RunStatus::Completed,
            makespan_ns: None,
            phases: Vec::new(),
            integrity: None,
            monitor: BTreeMap::new(),
            metrics: serde_json::Value::Null,
            files: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        OutputFile {
            name: name.into(),
            contents: contents.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: RunSummary,
    pub files: Vec<OutputFile>,
}

impl Outcome {
    /// Writes every file plus `summary.json` under `dir`; returns the paths.
    pub fn write(&mut self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        self.summary.files = self.files.iter().map(|f| f.name.clone()).collect();
        let mut written = Vec::new();
        for f in &self.files {
            let p = dir.join(&f.name);
            std::fs::write(&p, &f.contents).map_err(io(&p))?;
            written.push(p);
        }
        let p = dir.join("summary.json");
        std::fs::write(&p, self.summary.to_json()).map_err(io(&p))?;
        written.push(p);
        Ok(written)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            RunStatus::Completed => write!(f, "{}: completed", self.scenario)?,
            RunStatus::Aborted { reason } => write!(f, "{}: aborted ({reason})", self.scenario)?,
        }
        if let Some(ns) = self.makespan_ns {
            write!(f, " in {:.6} s simulated", ns as f64 * 1e-9)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
