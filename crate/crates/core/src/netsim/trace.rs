//! Line-oriented event trace: `time_ns,event_kind,subject,detail`.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub subject: String,
    pub detail: String,
}

/// How much the simulator records.
#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Default,
    serde::Serialize,
    serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    Off,
    /// State changes only: faults, QP transitions, protocol decisions.
    #[default]
    Events,
    /// Also every work request and flow.
    Full,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    level: TraceLevel,
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Self::with_level(if enabled {
            TraceLevel::Full
        } else {
            TraceLevel::Off
        })
    }

    pub fn with_level(level: TraceLevel) -> Self {
        Trace {
            level,
            records: Vec::new(),
        }
    }

    pub fn level(&self) -> TraceLevel {
        self.level
    }

    pub fn is_enabled(&self) -> bool {
        self.level > TraceLevel::Off
    }

    /// Records a per-request detail line; kept only at [`TraceLevel::Full`].
    pub fn detail(
        &mut self,
        time: SimTime,
        kind: &'static str,
        subject: impl Into<String>,
        detail: impl Into<String>,
    ) {
        if self.level == TraceLevel::Full {
            self.records.push(TraceRecord {
                time,
                kind,
                subject: subject.into(),
                detail: detail.into(),
            });
        }
    }

    pub fn push(
        &mut self,
        time: SimTime,
        kind: &'static str,
        subject: impl Into<String>,
        detail: impl Into<String>,
    ) {
        if self.level > TraceLevel::Off {
            self.records.push(TraceRecord {
                time,
                kind,
                subject: subject.into(),
                detail: detail.into(),
            });
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns,event_kind,subject,detail\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.time.as_nanos(),
                r.kind,
                r.subject,
                r.detail
            );
        }
        out
    }

    /// SHA-256 of the CSV rendering, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_csv().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
