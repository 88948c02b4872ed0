//! Drives a message plan through the transport engine.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::plan::{build, CollectiveOp, TagOp};
use super::ring::CommGroup;
use super::CollectiveError;
use crate::error::SimError;
use crate::netsim::GpuId;
use crate::time::SimTime;
use crate::transport::{ConnId, TransferId, TransportEngine, TransportEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CollectiveStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankResult {
    pub rank: usize,
    pub gpu: GpuId,
    pub start: SimTime,
    pub end: Option<SimTime>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveResult {
    pub op: CollectiveOp,
    pub ranks: usize,
    pub status: CollectiveStatus,
    pub start: SimTime,
    pub end: Option<SimTime>,
    pub per_rank: Vec<RankResult>,
    /// Bytes carried per link during this op, links with traffic only.
    pub link_bytes: BTreeMap<usize, u64>,
    pub spine_bytes: u64,
    /// Slice provenance matches the collective's definition.
    pub correct: bool,
    /// Every transfer's landed bytes match its source.
    pub integrity: bool,
    pub transfers: usize,
    pub switches: usize,
    pub failed_connection: Option<ConnId>,
}

impl CollectiveResult {
    pub fn duration(&self) -> Option<SimTime> {
        self.end.map(|e| e - self.start)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

/// A group plus its lazily opened connections, reused across ops.
#[derive(Debug, Clone)]
pub struct Communicator {
    pub group: CommGroup,
    conns: BTreeMap<(usize, usize, usize), ConnId>,
    /// Completed invocations per rank.
    pub op_counts: Vec<u64>,
}

impl Communicator {
    pub fn new(group: CommGroup) -> Self {
        let n = group.len();
        Communicator {
            group,
            conns: BTreeMap::new(),
            op_counts: vec![0; n],
        }
    }

    pub fn connections(&self) -> impl Iterator<Item = ConnId> + '_ {
        self.conns.values().copied()
    }

    fn conn(
        &mut self,
        eng: &mut TransportEngine,
        ch: usize,
        src: usize,
        dst: usize,
    ) -> Result<ConnId, SimError> {
        if let Some(&c) = self.conns.get(&(ch, src, dst)) {
            return Ok(c);
        }
        let c = eng.open_connection(self.group.ranks[src], self.group.ranks[dst])?;
        self.conns.insert((ch, src, dst), c);
        Ok(c)
    }

    fn check(&self, op: &CollectiveOp) -> Result<(), CollectiveError> {
        let n = self.group.len();
        if n < op.min_ranks() {
            return Err(CollectiveError::GroupTooSmall {
                need: op.min_ranks(),
                got: n,
            });
        }
        match *op {
            CollectiveOp::SendRecv { .. } if n != 2 => Err(CollectiveError::InvalidOp(format!(
                "send_recv needs exactly 2 ranks, got {n}"
            ))),
            CollectiveOp::Broadcast { root, .. } if root >= n => Err(CollectiveError::InvalidOp(
                format!("root {root} outside {n} ranks"),
            )),
            _ => Ok(()),
        }
    }

    /// Runs `op` to completion, connection failure or `horizon`.
    pub fn run(
        &mut self,
        eng: &mut TransportEngine,
        op: CollectiveOp,
        horizon: SimTime,
    ) -> Result<CollectiveResult, CollectiveError> {
        self.check(&op)?;
        let n = self.group.len();
        let plan = build(op, &self.group.channels, n);
        let mut tags = plan.tags.clone();
        let m = plan.msgs.len();
        let mut waiting: Vec<usize> = plan.msgs.iter().map(|x| x.deps.len()).collect();
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (i, msg) in plan.msgs.iter().enumerate() {
            for &d in &msg.deps {
                dependents[d].push(i);
            }
        }
        eng.take_events();
        let start = eng.now();
        let links_before = eng.fabric().link_bytes().to_vec();
        let switches_before: usize = eng.connections().iter().map(|c| c.switches.len()).sum();

        let mut landed = vec![false; m];
        let mut acked = vec![false; m];
        let mut snap: Vec<Vec<u32>> = vec![Vec::new(); m];
        let mut by_transfer: HashMap<TransferId, usize> = HashMap::new();
        let mut last_recv = vec![start; n];
        let mut last_send = vec![start; n];
        let mut sent = vec![0u64; n];
        let mut recvd = vec![0u64; n];
        let mut outstanding = m;
        let mut failed: Option<ConnId> = None;
        let mut ready: Vec<usize> = (0..m).filter(|&i| waiting[i] == 0).collect();
        ready.reverse();

        let slice_of = |op: TagOp| match op {
            TagOp::Reduce(j) | TagOp::Copy(j) => j,
        };
        let apply =
            |tags: &mut Vec<Vec<Vec<Vec<u32>>>>, ch: usize, dst: usize, op: TagOp, s: &[u32]| {
                match op {
                    TagOp::Reduce(j) => {
                        for (a, b) in tags[ch][dst][j].iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                    TagOp::Copy(j) => tags[ch][dst][j] = s.to_vec(),
                }
            };

        'outer: loop {
            while let Some(i) = ready.pop() {
                let msg = &plan.msgs[i];
                snap[i] = tags[msg.channel][msg.src][slice_of(msg.op)].clone();
                sent[msg.src] += msg.bytes;
                if msg.bytes == 0 {
                    apply(&mut tags, msg.channel, msg.dst, msg.op, &snap[i]);
                    landed[i] = true;
                    acked[i] = true;
                    outstanding -= 1;
                    for &d in &dependents[i] {
                        waiting[d] -= 1;
                        if waiting[d] == 0 {
                            ready.push(d);
                        }
                    }
                    continue;
                }
                let conn = self.conn(eng, msg.channel, msg.src, msg.dst)?;
                match eng.send_message(conn, msg.bytes) {
                    Ok(t) => {
                        by_transfer.insert(t, i);
                    }
                    Err(SimError::ConnectionFailed(_)) => {
                        failed = Some(conn);
                        break 'outer;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if outstanding == 0 {
                break;
            }
            if eng.step(horizon)?.is_none() {
                break;
            }
            for ev in eng.take_events() {
                match ev {
                    TransportEvent::Received { transfer, at } => {
                        let Some(&i) = by_transfer.get(&transfer) else {
                            continue;
                        };
                        let msg = &plan.msgs[i];
                        apply(&mut tags, msg.channel, msg.dst, msg.op, &snap[i]);
                        landed[i] = true;
                        recvd[msg.dst] += msg.bytes;
                        last_recv[msg.dst] = last_recv[msg.dst].max(at);
                        for &d in &dependents[i] {
                            waiting[d] -= 1;
                            if waiting[d] == 0 {
                                ready.push(d);
                            }
                        }
                    }
                    TransportEvent::Completed { transfer, at } => {
                        let Some(&i) = by_transfer.get(&transfer) else {
                            continue;
                        };
                        acked[i] = true;
                        outstanding -= 1;
                        let src = plan.msgs[i].src;
                        last_send[src] = last_send[src].max(at);
                    }
                    TransportEvent::ConnectionFailed { conn, .. } => {
                        if self.conns.values().any(|&c| c == conn) {
                            failed = Some(conn);
                            break 'outer;
                        }
                    }
                    TransportEvent::Wake { .. } => {}
                }
            }
        }

        let done = failed.is_none() && outstanding == 0;
        if failed.is_none() && !done {
            return Err(CollectiveError::Timeout(eng.now()));
        }
        let mut rank_done = vec![true; n];
        for (i, msg) in plan.msgs.iter().enumerate() {
            if !landed[i] {
                rank_done[msg.dst] = false;
            }
            if !acked[i] {
                rank_done[msg.src] = false;
            }
        }
        let per_rank: Vec<RankResult> = (0..n)
            .map(|r| RankResult {
                rank: r,
                gpu: self.group.ranks[r],
                start,
                end: rank_done[r].then(|| last_recv[r].max(last_send[r])),
                bytes_sent: sent[r],
                bytes_received: recvd[r],
            })
            .collect();
        if done {
            for c in &mut self.op_counts {
                *c += 1;
            }
        }
        let correct = done
            && plan
                .expect
                .iter()
                .enumerate()
                .all(|(ch, ex)| ex.iter().all(|(r, j, want)| &tags[ch][*r][*j] == want));
        let integrity = by_transfer
            .iter()
            .filter(|(_, &i)| landed[i])
            .all(|(&t, _)| eng.verify(t).ok());
        let topo = eng.topology();
        let mut link_bytes = BTreeMap::new();
        let mut spine_bytes = 0;
        for (l, (&after, &before)) in eng
            .fabric()
            .link_bytes()
            .iter()
            .zip(&links_before)
            .enumerate()
        {
            let d = after - before;
            if d > 0 {
                link_bytes.insert(l, d);
                if topo.is_spine_link(crate::netsim::LinkId(l)) {
                    spine_bytes += d;
                }
            }
        }
        let switches: usize = eng
            .connections()
            .iter()
            .map(|c| c.switches.len())
            .sum::<usize>()
            - switches_before;
        Ok(CollectiveResult {
            op,
            ranks: n,
            status: if done {
                CollectiveStatus::Completed
            } else {
                CollectiveStatus::Failed
            },
            start,
            end: done.then(|| per_rank.iter().filter_map(|r| r.end).max().unwrap_or(start)),
            per_rank,
            link_bytes,
            spine_bytes,
            correct,
            integrity,
            transfers: by_transfer.len(),
            switches,
            failed_connection: failed,
        })
    }
}
