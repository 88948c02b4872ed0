//! Wire encoding of protocol messages in the 64-bit immediate.
//!
//! `kind:4 | epoch:20 | seq:16 | value:24`. Sequence numbers are per
//! connection and compared modulo 2^16.

use super::engine::TransferId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Msg {
    Data {
        epoch: u32,
        seq: u16,
        chunk: u64,
    },
    Cts {
        epoch: u32,
        seq: u16,
        chunk: u64,
    },
    Probe {
        epoch: u32,
    },
    /// Receiver-driven switch into `epoch`; `done` is for transfer `seq`.
    Notice {
        epoch: u32,
        seq: u16,
        done: u64,
    },
    /// Sender asks the receiver to leave `epoch`.
    Request {
        epoch: u32,
    },
}

const EPOCH_MASK: u64 = (1 << 20) - 1;
const SEQ_MASK: u64 = (1 << 16) - 1;
const VALUE_MASK: u64 = (1 << 24) - 1;

fn pack(kind: u64, epoch: u32, seq: u16, value: u64) -> u64 {
    debug_assert!(value <= VALUE_MASK);
    kind << 60 | (epoch as u64 & EPOCH_MASK) << 40 | (seq as u64) << 24 | (value & VALUE_MASK)
}

impl Msg {
    pub(crate) fn encode(self) -> u64 {
        match self {
            Msg::Data { epoch, seq, chunk } => pack(1, epoch, seq, chunk),
            Msg::Cts { epoch, seq, chunk } => pack(2, epoch, seq, chunk),
            Msg::Probe { epoch } => pack(3, epoch, 0, 0),
            Msg::Notice { epoch, seq, done } => pack(4, epoch, seq, done),
            Msg::Request { epoch } => pack(5, epoch, 0, 0),
        }
    }

    pub(crate) fn decode(imm: u64) -> Option<Msg> {
        let epoch = ((imm >> 40) & EPOCH_MASK) as u32;
        let seq = ((imm >> 24) & SEQ_MASK) as u16;
        let value = imm & VALUE_MASK;
        Some(match imm >> 60 {
            1 => Msg::Data {
                epoch,
                seq,
                chunk: value,
            },
            2 => Msg::Cts {
                epoch,
                seq,
                chunk: value,
            },
            3 => Msg::Probe { epoch },
            4 => Msg::Notice {
                epoch,
                seq,
                done: value,
            },
            5 => Msg::Request { epoch },
            _ => return None,
        })
    }
}

/// What a posted work request stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WrTag {
    Data {
        transfer: TransferId,
        chunk: u64,
        epoch: u32,
    },
    Recv {
        transfer: TransferId,
        chunk: u64,
        epoch: u32,
    },
    Cts {
        epoch: u32,
    },
    Probe {
        epoch: u32,
    },
    Notice {
        epoch: u32,
    },
    /// Sent over `via` by a sender that lost its active QP.
    Request {
        via: crate::verbs::QpRole,
    },
}

pub(crate) fn epoch_bits(epoch: u32) -> u32 {
    epoch & EPOCH_MASK as u32
}
