//! Collectives as message plans: who sends how much to whom, after which
//! receptions, and what the message does to the receiver's slice tags.
//!
//! Reductions are not computed. Each rank holds, per slice, a vector of
//! contribution counts indexed by rank; a reduce adds the sender's vector,
//! a copy replaces it. A correct allreduce leaves every slice at all-ones.

use serde::{Deserialize, Serialize};

use super::ring::RingChannel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CollectiveOp {
    AllReduce { nbytes: u64 },
    AllGather { nbytes_per_rank: u64 },
    ReduceScatter { nbytes: u64 },
    Broadcast { root: usize, nbytes: u64 },
    SendRecv { nbytes: u64 },
    AllToAll { nbytes_per_pair: u64 },
}

impl CollectiveOp {
    pub fn name(&self) -> &'static str {
        match self {
            CollectiveOp::AllReduce { .. } => "allreduce",
            CollectiveOp::AllGather { .. } => "allgather",
            CollectiveOp::ReduceScatter { .. } => "reducescatter",
            CollectiveOp::Broadcast { .. } => "broadcast",
            CollectiveOp::SendRecv { .. } => "send_recv",
            CollectiveOp::AllToAll { .. } => "alltoall",
        }
    }

    pub fn min_ranks(&self) -> usize {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TagOp {
    Reduce(usize),
    Copy(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct PlanMsg {
    pub channel: usize,
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
    /// Messages that must have landed at `src` first.
    pub deps: Vec<usize>,
    pub op: TagOp,
}

pub(crate) type Tags = Vec<Vec<Vec<u32>>>; // [rank][slice][contributor]

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub msgs: Vec<PlanMsg>,
    /// Initial tags per channel.
    pub tags: Vec<Tags>,
    /// Expected final `(rank, slice) -> tag` per channel.
    pub expect: Vec<Vec<(usize, usize, Vec<u32>)>>,
}

fn unit(n: usize, i: usize) -> Vec<u32> {
    let mut v = vec![0; n];
    v[i] = 1;
    v
}

fn split(total: u64, parts: usize) -> Vec<u64> {
    let base = total / parts as u64;
    let extra = (total % parts as u64) as usize;
    (0..parts).map(|i| base + u64::from(i < extra)).collect()
}

pub(crate) fn build(op: CollectiveOp, rings: &[RingChannel], n: usize) -> Plan {
    let mut plan = Plan {
        msgs: Vec::new(),
        tags: Vec::new(),
        expect: Vec::new(),
    };
    let total = match op {
        CollectiveOp::AllReduce { nbytes } | CollectiveOp::ReduceScatter { nbytes } => nbytes,
        CollectiveOp::AllGather { nbytes_per_rank } => nbytes_per_rank,
        CollectiveOp::Broadcast { nbytes, .. } | CollectiveOp::SendRecv { nbytes } => nbytes,
        CollectiveOp::AllToAll { nbytes_per_pair } => nbytes_per_pair,
    };
    for (ch, (ring, part)) in rings.iter().zip(split(total, rings.len())).enumerate() {
        let o = &ring.order;
        let at = |p: usize| o[p % n];
        let mut tags: Tags = vec![vec![vec![0; n]; n]; n];
        let mut expect = Vec::new();
        let push = |plan: &mut Plan, src, dst, bytes, deps, op| {
            plan.msgs.push(PlanMsg {
                channel: ch,
                src,
                dst,
                bytes,
                deps,
                op,
            });
            plan.msgs.len() - 1
        };
        match op {
            CollectiveOp::AllReduce { .. } | CollectiveOp::ReduceScatter { .. } => {
                let slice = part.div_ceil(n as u64);
                let steps = if matches!(op, CollectiveOp::AllReduce { .. }) {
                    2 * (n - 1)
                } else {
                    n - 1
                };
                for (r, rt) in tags.iter_mut().enumerate() {
                    for t in rt.iter_mut() {
                        *t = unit(n, r);
                    }
                }
                let mut prev: Vec<Option<usize>> = vec![None; n];
                for s in 0..steps {
                    let mut cur = vec![None; n];
                    for p in 0..n {
                        let tag = if s < n - 1 {
                            TagOp::Reduce((p + n * 2 - s) % n)
                        } else {
                            TagOp::Copy((p + 1 + n * 2 - (s - (n - 1))) % n)
                        };
                        // The message from p-1 at the previous step landed at p.
                        let deps = prev[(p + n - 1) % n].into_iter().collect();
                        cur[p] = Some(push(&mut plan, at(p), at(p + 1), slice, deps, tag));
                    }
                    prev = cur;
                }
                for p in 0..n {
                    if matches!(op, CollectiveOp::AllReduce { .. }) {
                        for j in 0..n {
                            expect.push((at(p), j, vec![1; n]));
                        }
                    } else {
                        expect.push((at(p), (p + 1) % n, vec![1; n]));
                    }
                }
            }
            CollectiveOp::AllGather { .. } => {
                for p in 0..n {
                    tags[at(p)][p] = unit(n, at(p));
                }
                let mut prev: Vec<Option<usize>> = vec![None; n];
                for s in 0..n - 1 {
                    let mut cur = vec![None; n];
                    for p in 0..n {
                        let deps = prev[(p + n - 1) % n].into_iter().collect();
                        cur[p] = Some(push(
                            &mut plan,
                            at(p),
                            at(p + 1),
                            part,
                            deps,
                            TagOp::Copy((p + n - s) % n),
                        ));
                    }
                    prev = cur;
                }
                for p in 0..n {
                    for j in 0..n {
                        expect.push((at(p), j, unit(n, at(j))));
                    }
                }
            }
            CollectiveOp::Broadcast { root, .. } => {
                let rp = ring.position(root);
                tags[root][0] = unit(n, root);
                let mut prev = None;
                for k in 0..n - 1 {
                    let deps = prev.into_iter().collect();
                    prev = Some(push(
                        &mut plan,
                        at(rp + k),
                        at(rp + k + 1),
                        part,
                        deps,
                        TagOp::Copy(0),
                    ));
                }
                for r in 0..n {
                    expect.push((r, 0, unit(n, root)));
                }
            }
            CollectiveOp::SendRecv { .. } => {
                tags[0][0] = unit(n, 0);
                push(&mut plan, 0, 1, part, vec![], TagOp::Copy(0));
                expect.push((1, 0, unit(n, 0)));
            }
            CollectiveOp::AllToAll { .. } => {
                for (a, row) in tags.iter_mut().enumerate() {
                    row[a] = unit(n, a);
                }
                for a in 0..n {
                    for b in 0..n {
                        if a != b {
                            push(&mut plan, a, b, part, vec![], TagOp::Copy(a));
                            expect.push((b, a, unit(n, a)));
                        }
                    }
                }
            }
        }
        plan.tags.push(tags);
        plan.expect.push(expect);
    }
    plan
}
