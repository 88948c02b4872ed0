use std::collections::BTreeMap;

use serde::Serialize;

use super::PipelineError;
use crate::time::SimTime;

/// Measured SM share of a kernel-based intra-host P2P.
pub const SM_FRACTION_INTRA_HOST: f64 = 0.231;
/// Measured SM share of a kernel-based inter-host P2P.
pub const SM_FRACTION_INTER_HOST: f64 = 0.032;

const EPS: f64 = 1e-9;

/// SMs of one GPU and the fractions currently held by communication ops.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SmPool {
    pub total_sm: u32,
    reservations: BTreeMap<u64, f64>,
}

impl SmPool {
    pub fn new(total_sm: u32) -> Self {
        SmPool {
            total_sm,
            reservations: BTreeMap::new(),
        }
    }

    pub fn reserve(&mut self, op: u64, fraction: f64) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(PipelineError::InvalidConfig(format!(
                "SM fraction {fraction} outside [0, 1]"
            )));
        }
        let total = self.reserved() - self.reservations.get(&op).copied().unwrap_or(0.0) + fraction;
        if total > 1.0 + EPS {
            return Err(PipelineError::Oversubscribed(total));
        }
        self.reservations.insert(op, fraction);
        Ok(())
    }

    pub fn release(&mut self, op: u64) -> Option<f64> {
        self.reservations.remove(&op)
    }

    pub fn reserved(&self) -> f64 {
        self.reservations.values().sum()
    }

    pub fn available(&self) -> f64 {
        (1.0 - self.reserved()).max(0.0)
    }

    pub fn reserved_sms(&self) -> u32 {
        (self.reserved() * self.total_sm as f64).round() as u32
    }
}

/// Linear slowdown: `base / available`.
pub fn gemm_duration(base: SimTime, pool: &SmPool) -> Result<SimTime, PipelineError> {
    let a = pool.available();
    if a <= EPS {
        return Err(PipelineError::NoSmAvailable);
    }
    Ok(SimTime((base.0 as f64 / a).round() as u64))
}
