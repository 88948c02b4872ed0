use serde::Serialize;

use crate::time::SimTime;
use crate::transport::MessageRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseThroughput {
    pub name: String,
    pub start_ns: u64,
    pub end_ns: u64,
    pub bytes: u64,
    pub gbps: f64,
}

fn gbps(bytes: u64, span: SimTime) -> f64 {
    if span == SimTime::ZERO {
        0.0
    } else {
        bytes as f64 * 8.0 / span.as_secs_f64() / 1e9
    }
}

/// Delivered rate per phase, bytes credited at completion time. Each phase
/// runs until the next one starts, the last until `end`.
pub fn phase_throughput(
    records: &[MessageRecord],
    phases: &[(&str, SimTime)],
    end: SimTime,
) -> Vec<PhaseThroughput> {
    phases
        .iter()
        .enumerate()
        .map(|(i, &(name, start))| {
            let stop = phases.get(i + 1).map_or(end, |p| p.1);
            let bytes = records
                .iter()
                .filter(|r| r.t2 >= start && r.t2 < stop)
                .map(|r| r.size)
                .sum();
            PhaseThroughput {
                name: name.to_string(),
                start_ns: start.0,
                end_ns: stop.0,
                bytes,
                gbps: gbps(bytes, stop.saturating_sub(start)),
            }
        })
        .collect()
}

/// Gb/s per fixed-width bin from zero to `end`.
pub fn binned_throughput(
    records: &[MessageRecord],
    bin: SimTime,
    end: SimTime,
) -> Vec<(SimTime, f64)> {
    assert!(bin > SimTime::ZERO);
    let n = end.0.div_ceil(bin.0) as usize;
    let mut bytes = vec![0u64; n];
    for r in records {
        if let Some(b) = bytes.get_mut((r.t2.0 / bin.0) as usize) {
            *b += r.size;
        }
    }
    bytes
        .into_iter()
        .enumerate()
        .map(|(i, b)| (SimTime(i as u64 * bin.0), gbps(b, bin)))
        .collect()
}

pub(crate) fn throughput_csv(bins: &[(SimTime, f64)]) -> String {
    let mut s = String::from("time_ns,gbps\n");
    for (t, g) in bins {
        s.push_str(&format!("{},{:.6}\n", t.0, g));
    }
    s
}
