use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::simcore::SimTime;
use crate::topology::{HostId, VirtualLane};

pub type MsgId = u64;
pub type GroupId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketKind {
    Data,
    Ack,
    Cnp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Short,
    Long,
}

impl FlowClass {
    pub fn of_size(size: u64, short_flow_max: u64) -> Self {
        if size <= short_flow_max {
            FlowClass::Short
        } else {
            FlowClass::Long
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Short => "short",
            FlowClass::Long => "long",
        }
    }
}

/// Sender list an application attaches to incast messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookahead {
    pub group_id: GroupId,
    pub senders: Vec<HostId>,
}

impl Lookahead {
    /// Two bytes per sender id on the wire.
    pub fn wire_bytes(&self) -> u32 {
        2 * self.senders.len() as u32
    }
}

/// An RDMA message (flow).
#[derive(Debug, Clone)]
pub struct Message {
    pub id: MsgId,
    pub src: HostId,
    pub dst: HostId,
    pub size: u64,
    pub class: FlowClass,
    pub start_time: SimTime,
    pub group: Option<GroupId>,
    pub lookahead: Option<Arc<Lookahead>>,
}

impl Message {
    pub fn num_packets(&self, mtu: u32) -> u32 {
        self.size.div_ceil(mtu as u64).max(1) as u32
    }

    /// Payload bytes of packet `seq`.
    pub fn payload_of(&self, seq: u32, mtu: u32) -> u32 {
        let n = self.num_packets(mtu);
        if seq + 1 < n {
            mtu
        } else {
            (self.size - (n as u64 - 1) * mtu as u64) as u32
        }
    }
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub flow_id: MsgId,
    pub src: HostId,
    pub dst: HostId,
    pub seq: u32,
    /// Bytes on the wire.
    pub size: u32,
    pub kind: PacketKind,
    pub class: FlowClass,
    pub ecn_ce: bool,
    pub start: bool,
    pub end: bool,
    pub deflection_tokens: u8,
    pub lane: VirtualLane,
    /// ACK only.
    pub piggyback_n: u32,
    /// ACK only: the acknowledged packet carried ECN-CE and the receiver let it through.
    pub ecn_echo: bool,
    /// DATA start packet only.
    pub lookahead: Option<Arc<Lookahead>>,
    pub group: Option<GroupId>,
    pub hop_count: u16,
    pub deflections: u8,
    /// When the DATA packet left the sender (echoed on its ACK for RTT samples).
    pub sent_at: SimTime,
    /// Data payload bytes (ACK: bytes acknowledged).
    pub payload: u32,
}

impl Packet {
    #[inline]
    pub fn is_control(&self) -> bool {
        self.kind != PacketKind::Data
    }

    /// Build DATA packet `seq` of `msg`.
    pub fn data(msg: &Message, seq: u32, mtu: u32, tokens: u8, attach_lookahead: bool) -> Self {
        let n = msg.num_packets(mtu);
        let start = seq == 0;
        let payload = msg.payload_of(seq, mtu);
        let lookahead = if start && attach_lookahead {
            msg.lookahead.clone()
        } else {
            None
        };
        let extra = lookahead.as_ref().map_or(0, |l| l.wire_bytes());
        Packet {
            flow_id: msg.id,
            src: msg.src,
            dst: msg.dst,
            seq,
            size: payload + extra,
            kind: PacketKind::Data,
            class: msg.class,
            ecn_ce: false,
            start,
            end: seq + 1 == n,
            deflection_tokens: tokens,
            lane: VirtualLane::Deflect,
            piggyback_n: 0,
            ecn_echo: false,
            lookahead,
            group: if start { msg.group } else { None },
            hop_count: 0,
            deflections: 0,
            sent_at: SimTime::ZERO,
            payload,
        }
    }

    /// Control packet from `data.dst` back to `data.src`.
    pub fn control_for(data: &Packet, kind: PacketKind, size: u32) -> Self {
        Packet {
            flow_id: data.flow_id,
            src: data.dst,
            dst: data.src,
            seq: data.seq,
            size,
            kind,
            class: data.class,
            ecn_ce: false,
            start: false,
            end: data.end,
            deflection_tokens: 0,
            lane: VirtualLane::Escape,
            piggyback_n: 1,
            ecn_echo: false,
            lookahead: None,
            group: None,
            hop_count: 0,
            deflections: 0,
            sent_at: data.sent_at,
            payload: data.payload,
        }
    }
}
