use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::netsim::{GpuId, HostId, Node, Path};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QpId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CqId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MrId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WrId(pub u64);

impl fmt::Display for QpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "qp{}", self.0)
    }
}

/// `ibv_modify_qp(.., IBV_QPS_ERR)`-style timeout: 4.096 µs · 2^exponent per
/// attempt, `retry_count + 1` attempts.
pub fn retry_timeout(timeout_exponent: u32, retry_count: u32) -> SimTime {
    let per_attempt = 4_096u64 << timeout_exponent.min(40);
    SimTime(per_attempt.saturating_mul(retry_count as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionOwner {
    Gpu(GpuId),
    Host(HostId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    ApplicationBuffer,
    ChunkBuffer,
}

/// Registered memory. Contents are not materialised: bytes at
/// `[offset, offset+len)` of a source region are identified by a digest of
/// `(seed, offset, len)`, and receivers record the digests written into them.
#[derive(Debug, Clone)]
pub struct MemoryRegion {
    pub id: MrId,
    pub owner: RegionOwner,
    pub length: u64,
    pub kind: RegionKind,
    pub registered: bool,
    pub seed: u64,
    written: BTreeMap<u64, (u64, u64)>,
}

impl MemoryRegion {
    pub fn new(id: MrId, owner: RegionOwner, length: u64, kind: RegionKind, seed: u64) -> Self {
        MemoryRegion {
            id,
            owner,
            length,
            kind,
            registered: true,
            seed,
            written: BTreeMap::new(),
        }
    }

    /// Digest of the region's own content over a byte range.
    pub fn source_digest(&self, offset: u64, len: u64) -> u64 {
        content_digest(self.seed, offset, len)
    }

    pub fn write(&mut self, offset: u64, len: u64, digest: u64) {
        self.written.insert(offset, (len, digest));
    }

    /// Extents written by incoming transfers, in offset order.
    pub fn written(&self) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        self.written.iter().map(|(&o, &(l, d))| (o, l, d))
    }

    pub fn written_bytes(&self) -> u64 {
        self.written.values().map(|(l, _)| *l).sum()
    }

    /// Checksum over the written extents.
    pub fn received_checksum(&self) -> u64 {
        fold_checksum(self.written())
    }

    /// Checksum the region would have if it held its own content, written in
    /// `chunk`-sized pieces.
    pub fn source_checksum(&self, len: u64, chunk: u64) -> u64 {
        let chunk = chunk.max(1);
        fold_checksum((0..len.div_ceil(chunk)).map(|k| {
            let off = k * chunk;
            let l = chunk.min(len - off);
            (off, l, self.source_digest(off, l))
        }))
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn content_digest(seed: u64, offset: u64, len: u64) -> u64 {
    mix(mix(seed ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(offset) ^ mix(len))
}

/// Order-sensitive checksum of `(offset, len, digest)` extents.
pub fn fold_checksum(extents: impl Iterator<Item = (u64, u64, u64)>) -> u64 {
    extents.fold(0xcbf2_9ce4_8422_2325u64, |h, (o, l, d)| {
        mix(h ^ mix(o) ^ mix(l.rotate_left(17)) ^ d)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrDirection {
    Send,
    Recv,
    /// Zero-payload clear-to-send control message.
    Cts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkRequest {
    pub wr_id: WrId,
    pub qp: QpId,
    pub direction: WrDirection,
    pub region: Option<MrId>,
    pub offset: u64,
    pub length: u64,
    /// Immediate data carried to the remote side.
    pub imm: u64,
    pub post_time: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WcStatus {
    Success,
    RetryExceeded,
    Flushed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkCompletion {
    pub wr_id: WrId,
    pub qp: QpId,
    pub direction: WrDirection,
    pub status: WcStatus,
    pub post_time: SimTime,
    pub completion_time: SimTime,
    pub bytes: u64,
    pub imm: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpRole {
    Primary,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpState {
    Init,
    Connected,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub host: HostId,
    pub node: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpConfig {
    pub timeout_exponent: u32,
    pub retry_count: u32,
}

impl Default for QpConfig {
    fn default() -> Self {
        QpConfig {
            timeout_exponent: 18,
            retry_count: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueuePair {
    pub id: QpId,
    pub local: Endpoint,
    pub remote: Endpoint,
    pub remote_qp: QpId,
    pub role: QpRole,
    pub state: QpState,
    pub cq: CqId,
    pub config: QpConfig,
    /// Route to the remote endpoint.
    pub path: Path,
}

impl QueuePair {
    pub fn retry_timeout(&self) -> SimTime {
        retry_timeout(self.config.timeout_exponent, self.config.retry_count)
    }
}

#[derive(Debug, Clone)]
pub struct CompletionQueue {
    pub id: CqId,
    pub capacity: usize,
    entries: VecDeque<WorkCompletion>,
}

pub const DEFAULT_CQ_CAPACITY: usize = 4096;

impl CompletionQueue {
    pub fn new(id: CqId, capacity: usize) -> Self {
        CompletionQueue {
            id,
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, wc: WorkCompletion) -> Result<(), SimError> {
        if self.entries.len() >= self.capacity {
            return Err(SimError::CqOverflow(self.id.0));
        }
        self.entries.push_back(wc);
        Ok(())
    }

    /// Removes up to `max` completions in FIFO order.
    pub fn poll(&mut self, max: usize) -> Vec<WorkCompletion> {
        let n = max.min(self.entries.len());
        self.entries.drain(..n).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_timeout_formula() {
        // 4.096 µs · 2^18 · 8 = 8.589934592 s
        assert_eq!(retry_timeout(18, 7), SimTime(8_589_934_592));
        assert_eq!(retry_timeout(0, 0), SimTime(4_096));
        // 4.096 µs · 2^18 = 1.073741824 s
        assert_eq!(retry_timeout(18, 0), SimTime(1_073_741_824));
    }

    fn wc(id: u64) -> WorkCompletion {
        WorkCompletion {
            wr_id: WrId(id),
            qp: QpId(0),
            direction: WrDirection::Send,
            status: WcStatus::Success,
            post_time: SimTime::ZERO,
            completion_time: SimTime(1),
            bytes: 1,
            imm: 0,
        }
    }

    #[test]
    fn cq_poll_is_fifo_and_bounded() {
        let mut cq = CompletionQueue::new(CqId(0), 4);
        for i in 0..3 {
            cq.push(wc(i)).unwrap();
        }
        let got: Vec<_> = cq.poll(2).into_iter().map(|w| w.wr_id.0).collect();
        assert_eq!(got, vec![0, 1]);
        assert_eq!(cq.poll(8).len(), 1);
        assert!(cq.poll(1).is_empty());
    }

    #[test]
    fn cq_overflow_is_an_error() {
        let mut cq = CompletionQueue::new(CqId(3), 1);
        cq.push(wc(0)).unwrap();
        assert_eq!(cq.push(wc(1)), Err(SimError::CqOverflow(3)));
    }

    #[test]
    fn checksums_depend_on_content_and_order() {
        let r = MemoryRegion::new(
            MrId(0),
            RegionOwner::Host(HostId(0)),
            100,
            RegionKind::ApplicationBuffer,
            9,
        );
        let mut dst = MemoryRegion::new(
            MrId(1),
            RegionOwner::Host(HostId(1)),
            100,
            RegionKind::ApplicationBuffer,
            0,
        );
        for k in 0..4 {
            dst.write(k * 25, 25, r.source_digest(k * 25, 25));
        }
        assert_eq!(dst.received_checksum(), r.source_checksum(100, 25));
        dst.write(25, 25, r.source_digest(50, 25));
        assert_ne!(dst.received_checksum(), r.source_checksum(100, 25));
    }
}
