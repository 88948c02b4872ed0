//! Window-based transient throughput estimation from WR/WC timestamps, and
//! opCount-based lagging-rank detection.

mod probe;

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::time::SimTime;
pub use crate::transport::MessageRecord;
pub use probe::{probe_stream, ProbeStreamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("completion does not follow its post (t2 <= t1)")]
    NonPositiveDuration,
    #[error("window holds {have} of {want} records")]
    WindowNotFull { have: usize, want: usize },
    #[error("window size must be at least 1")]
    ZeroWindow,
}

/// Instant throughput `ω / (t2 − t1)` in bytes per second.
pub fn per_message_throughput(r: &MessageRecord) -> Result<f64, MonitorError> {
    if r.t2 <= r.t1 {
        return Err(MonitorError::NonPositiveDuration);
    }
    Ok(r.size as f64 / (r.t2 - r.t1).as_secs_f64())
}

/// Sliding window over the most recent `size` completions.
#[derive(Debug, Clone)]
pub struct ThroughputWindow {
    size: usize,
    records: VecDeque<MessageRecord>,
    bytes: u64,
}

impl ThroughputWindow {
    pub fn new(size: usize) -> Result<Self, MonitorError> {
        if size == 0 {
            return Err(MonitorError::ZeroWindow);
        }
        Ok(ThroughputWindow {
            size,
            records: VecDeque::with_capacity(size),
            bytes: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.size
    }

    /// Slides the window by one completion.
    pub fn push(&mut self, r: MessageRecord) {
        if self.records.len() == self.size {
            let old = self.records.pop_front().expect("full");
            self.bytes -= old.size;
        }
        self.bytes += r.size;
        self.records.push_back(r);
    }

    /// `Σ ω / (t2 of the last WC − t1 of the first WR)`.
    pub fn throughput(&self) -> Result<f64, MonitorError> {
        if !self.is_full() {
            return Err(MonitorError::WindowNotFull {
                have: self.records.len(),
                want: self.size,
            });
        }
        let first = self.records.front().expect("full").t1;
        let last = self.records.back().expect("full").t2;
        if last <= first {
            return Err(MonitorError::NonPositiveDuration);
        }
        Ok(self.bytes as f64 / (last - first).as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub time: SimTime,
    pub value: f64,
    pub window_size: usize,
}

/// One sample per completion once `w` records have been seen, stamped at
/// the triggering completion. Records are taken in completion order.
pub fn sample_series(
    records: &[MessageRecord],
    w: usize,
) -> Result<Vec<ThroughputSample>, MonitorError> {
    let mut sorted: Vec<MessageRecord> = records.to_vec();
    sorted.sort_by_key(|r| r.t2);
    let mut win = ThroughputWindow::new(w)?;
    let mut out = Vec::with_capacity(sorted.len().saturating_sub(w - 1));
    for r in sorted {
        win.push(r);
        if win.is_full() {
            out.push(ThroughputSample {
                time: r.t2,
                value: win.throughput()?,
                window_size: w,
            });
        }
    }
    Ok(out)
}

/// Holds the latest sample value at every `interval` grid point in
/// `[from, to]`. Grid points before the first sample are skipped.
pub fn resample(
    samples: &[ThroughputSample],
    interval: SimTime,
    from: SimTime,
    to: SimTime,
) -> Vec<ThroughputSample> {
    assert!(interval > SimTime::ZERO);
    let mut out = Vec::new();
    let mut i = 0;
    let mut cur: Option<&ThroughputSample> = None;
    let mut t = from;
    while t <= to {
        while i < samples.len() && samples[i].time <= t {
            cur = Some(&samples[i]);
            i += 1;
        }
        if let Some(s) = cur {
            out.push(ThroughputSample {
                time: t,
                value: s.value,
                window_size: s.window_size,
            });
        }
        t += interval;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesStats {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub p99: f64,
    pub variance: f64,
}

pub fn stats(samples: &[ThroughputSample]) -> Option<SeriesStats> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mut v: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let mean = v.iter().sum::<f64>() / n;
    let variance = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    v.sort_by(f64::total_cmp);
    let rank = ((0.99 * n).ceil() as usize).clamp(1, v.len()) - 1;
    Some(SeriesStats {
        count: v.len(),
        min: v[0],
        mean,
        max: v[v.len() - 1],
        p99: v[rank],
        variance,
    })
}

/// First index from which every sample stays within `tol` (relative) of
/// `target`.
pub fn settle_index(samples: &[ThroughputSample], target: f64, tol: f64) -> Option<usize> {
    let ok = |s: &ThroughputSample| (s.value - target).abs() <= tol * target;
    let mut idx = None;
    for (i, s) in samples.iter().enumerate().rev() {
        if ok(s) {
            idx = Some(i);
        } else {
            break;
        }
    }
    idx
}

pub fn samples_csv(samples: &[ThroughputSample]) -> String {
    let mut out = String::from("time_ns,throughput_bytes_per_s,window_size\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{}\n",
            s.time.as_nanos(),
            s.value,
            s.window_size
        ));
    }
    out
}

pub fn records_csv(records: &[MessageRecord]) -> String {
    let mut out = String::from("wr_id,size,t1_ns,t2_ns\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.wr_id.0,
            r.size,
            r.t1.as_nanos(),
            r.t2.as_nanos()
        ));
    }
    out
}

/// min/mean/max/p99 per window size, keyed by window size.
pub fn summary_json(series: &BTreeMap<usize, Vec<ThroughputSample>>) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for (w, s) in series {
        m.insert(
            w.to_string(),
            serde_json::to_value(stats(s)).expect("plain data"),
        );
    }
    serde_json::Value::Object(m)
}

/// Invocation count of one collective API per rank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OpCountVector {
    pub op_counts: BTreeMap<usize, u64>,
}

impl OpCountVector {
    pub fn new(op_counts: BTreeMap<usize, u64>) -> Self {
        OpCountVector { op_counts }
    }
}

impl FromIterator<(usize, u64)> for OpCountVector {
    fn from_iter<I: IntoIterator<Item = (usize, u64)>>(iter: I) -> Self {
        OpCountVector {
            op_counts: iter.into_iter().collect(),
        }
    }
}

pub const DEFAULT_LAG_THRESHOLD: u64 = 1;

/// The unique rank with the smallest count, if it trails the second
/// smallest by more than `threshold`.
pub fn detect_lagging_rank(v: &OpCountVector, threshold: u64) -> Option<usize> {
    if v.op_counts.len() < 2 {
        return None;
    }
    let mut by_count: Vec<(u64, usize)> = v.op_counts.iter().map(|(&r, &c)| (c, r)).collect();
    by_count.sort();
    let (low, rank) = by_count[0];
    let second = by_count[1].0;
    (second - low > threshold).then_some(rank)
}
