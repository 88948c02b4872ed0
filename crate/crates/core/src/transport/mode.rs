//! P2P pipeline modes and per-stage cost models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// GPU kernel copies each chunk into a staging buffer before the proxy
    /// transmits it.
    StagedCopy,
    /// The proxy transmits straight from the registered application buffer.
    ZeroCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DataPreparation,
    BufferCopy,
    Transmission,
}

/// `fixed + bytes / bytes_per_sec`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub fixed: SimTime,
    pub bytes_per_sec: Option<f64>,
}

impl StageCost {
    pub const FREE: StageCost = StageCost {
        fixed: SimTime::ZERO,
        bytes_per_sec: None,
    };

    pub fn duration(&self, bytes: u64) -> SimTime {
        let var = match self.bytes_per_sec {
            Some(r) if r > 0.0 => SimTime::from_secs_f64(bytes as f64 / r),
            _ => SimTime::ZERO,
        };
        self.fixed + var
    }

    pub fn is_free(&self) -> bool {
        self.fixed == SimTime::ZERO && self.bytes_per_sec.is_none()
    }
}

/// Stage costs for one mode. Transmission time always comes from the
/// network model, so only the two GPU-side stages carry costs here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    pub mode: PipelineMode,
    costs: BTreeMap<Stage, StageCost>,
}

impl Default for StageCosts {
    fn default() -> Self {
        StageCosts::zero_copy()
    }
}

impl StageCosts {
    pub fn new(mode: PipelineMode) -> Self {
        StageCosts {
            mode,
            costs: BTreeMap::new(),
        }
    }

    pub fn zero_copy() -> Self {
        Self::new(PipelineMode::ZeroCopy)
    }

    /// Staged copy whose BufferCopy stage takes `copy_fraction` of a chunk's
    /// copy-plus-transmit cycle on an idle link of `link_bps`.
    pub fn staged_calibrated(copy_fraction: f64, link_bps: f64) -> Self {
        assert!((0.0..1.0).contains(&copy_fraction));
        // copy / (copy + tx) = f  =>  copy rate = link rate · (1 - f) / f
        let copy_bytes_per_sec = link_bps / 8.0 * (1.0 - copy_fraction) / copy_fraction;
        StageCosts::new(PipelineMode::StagedCopy).with(
            Stage::BufferCopy,
            StageCost {
                fixed: SimTime::ZERO,
                bytes_per_sec: Some(copy_bytes_per_sec),
            },
        )
    }

    pub fn with(mut self, stage: Stage, cost: StageCost) -> Self {
        assert!(
            stage != Stage::Transmission,
            "transmission time comes from the network"
        );
        self.costs.insert(stage, cost);
        self
    }

    /// Same costs, other mode. Switching to ZeroCopy drops BufferCopy.
    pub fn in_mode(&self, mode: PipelineMode) -> Self {
        let mut c = self.clone();
        c.mode = mode;
        c
    }

    pub fn cost(&self, stage: Stage) -> StageCost {
        if self.mode == PipelineMode::ZeroCopy && stage == Stage::BufferCopy {
            return StageCost::FREE;
        }
        self.costs.get(&stage).copied().unwrap_or(StageCost::FREE)
    }

    pub fn has_copy_stage(&self) -> bool {
        self.mode == PipelineMode::StagedCopy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_copy_never_has_a_copy_stage() {
        let staged = StageCosts::staged_calibrated(0.25, 400e9);
        let zc = staged.in_mode(PipelineMode::ZeroCopy);
        assert!(zc.cost(Stage::BufferCopy).is_free());
        assert!(!zc.has_copy_stage());
        assert!(!staged.cost(Stage::BufferCopy).is_free());
    }

    #[test]
    fn calibration_hits_the_fraction() {
        let c = StageCosts::staged_calibrated(0.25, 400e9);
        let chunk = 4u64 << 20;
        let copy = c.cost(Stage::BufferCopy).duration(chunk).as_secs_f64();
        let tx = chunk as f64 * 8.0 / 400e9;
        assert!((copy / (copy + tx) - 0.25).abs() < 1e-4);
    }
}
