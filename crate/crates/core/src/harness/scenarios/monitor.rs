use std::collections::BTreeMap;

use serde::Serialize;

use crate::harness::{HarnessError, Outcome, OutputFile, RunStatus, RunSummary, ScenarioParams};
use crate::monitor::{
    probe_stream, records_csv, sample_series, samples_csv, stats, ProbeStreamConfig,
    ThroughputSample,
};
use crate::time::SimTime;

const TOL: f64 = 0.05;
const REACH_LIMIT: usize = 8;
const TRANSITION: (SimTime, SimTime) = (SimTime::from_micros(60), SimTime::from_micros(200));

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowResult {
    pub window: usize,
    pub samples: usize,
    /// Over the transition window.
    pub variance: f64,
    /// 1-based count of post-disturbance samples until the first one within
    /// tolerance of half capacity.
    pub reach: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    /// Configured capacity in bytes per second.
    pub capacity: f64,
    pub disturbance_ns: u64,
    pub messages: usize,
    /// Largest relative error of W=8 samples before the disturbance.
    pub steady_max_error: f64,
    pub steady_ok: bool,
    /// W=8 reach index, see `WindowResult::reach`.
    pub reach_w8: Option<usize>,
    pub reach_ok: bool,
    pub variance_ordered: bool,
    pub windows: Vec<WindowResult>,
}

fn in_transition(s: &[ThroughputSample]) -> Vec<ThroughputSample> {
    s.iter()
        .filter(|x| x.time >= TRANSITION.0 && x.time <= TRANSITION.1)
        .copied()
        .collect()
}

fn reach(s: &[ThroughputSample], from: SimTime, target: f64) -> Option<usize> {
    s.iter()
        .filter(|x| x.time >= from)
        .position(|x| (x.value - target).abs() <= TOL * target)
        .map(|i| i + 1)
}

struct Measured {
    report: MonitorReport,
    files: Vec<OutputFile>,
    stats: BTreeMap<String, crate::monitor::SeriesStats>,
}

fn measure(params: &ScenarioParams) -> Result<Measured, HarnessError> {
    let cfg = ProbeStreamConfig::default();
    let capacity = cfg.topology.nic_gbps * 1e9 / 8.0;
    let dist = SimTime(cfg.disturbance_at_ns.unwrap_or(0));
    let records = probe_stream(&cfg)?;
    let mut windows = params
        .window_sizes
        .clone()
        .unwrap_or_else(|| params.overrides.windows(&[1, 8, 32]));
    for w in [1, 8, 32] {
        if !windows.contains(&w) {
            windows.push(w);
        }
    }
    windows.sort_unstable();
    windows.dedup();
    let mut files = vec![OutputFile::new("records.csv", records_csv(&records))];
    let mut results = Vec::new();
    let mut st = BTreeMap::new();
    let mut w8 = Vec::new();
    for &w in &windows {
        let s = sample_series(&records, w)?;
        files.push(OutputFile::new(
            format!("samples_w{w}.csv"),
            samples_csv(&s),
        ));
        if let Some(x) = stats(&s) {
            st.insert(w.to_string(), x);
        }
        results.push(WindowResult {
            window: w,
            samples: s.len(),
            variance: stats(&in_transition(&s)).map_or(0.0, |x| x.variance),
            reach: reach(&s, dist, capacity / 2.0),
        });
        if w == 8 {
            w8 = s;
        }
    }
    let steady_max_error = w8
        .iter()
        .filter(|x| x.time < dist)
        .map(|x| (x.value - capacity).abs() / capacity)
        .fold(0.0, f64::max);
    let steady_ok = w8.iter().any(|x| x.time < dist) && steady_max_error <= TOL;
    let reach_w8 = reach(&w8, dist, capacity / 2.0);
    let var = |w: usize| {
        results
            .iter()
            .find(|r| r.window == w)
            .map_or(0.0, |r| r.variance)
    };
    let report = MonitorReport {
        capacity,
        disturbance_ns: dist.0,
        messages: records.len(),
        steady_max_error,
        steady_ok,
        reach_w8,
        reach_ok: reach_w8.is_some_and(|r| r <= REACH_LIMIT),
        variance_ordered: var(1) >= var(8) && var(8) >= var(32),
        windows: results,
    };
    Ok(Measured {
        report,
        files,
        stats: st,
    })
}

pub fn monitor_figure11(params: &ScenarioParams) -> Result<MonitorReport, HarnessError> {
    Ok(measure(params)?.report)
}

pub(super) fn run(params: &ScenarioParams) -> Result<Outcome, HarnessError> {
    let m = measure(params)?;
    let r = &m.report;
    let mut summary = RunSummary::new("monitor-figure11", params.seed);
    summary.makespan_ns = Some(ProbeStreamConfig::default().duration_ns);
    summary.monitor = m.stats;
    if !(r.steady_ok && r.reach_ok && r.variance_ordered) {
        summary.status = RunStatus::Aborted {
            reason: "monitor series outside tolerance".into(),
        };
    }
    summary.metrics = serde_json::to_value(r).expect("plain data");
    Ok(Outcome {
        summary,
        files: m.files,
    })
}
