//! Simulated datagrams.

use crate::time::SimTime;

pub type FlowId = usize;

/// Wire size of a TCP/IP header in this model; acks are header-only.
pub const HEADER_BYTES: u32 = 40;

/// A simulated packet. Data packets carry the sender's current smoothed RTT
/// as metadata, standing in for an in-band RTT notification carried in the
/// packet header.
#[derive(Clone, Debug)]
pub struct Packet {
    pub flow_id: FlowId,
    /// Data: segment sequence number. Acks: unused (0).
    pub seq_no: u64,
    /// Wire size in bytes, including header.
    pub size: u32,
    pub is_ack: bool,
    /// Acks: cumulative next-expected segment number.
    pub ack_seq: u64,
    pub ecn_capable: bool,
    /// Congestion-experienced mark set by an AQM on the forward path.
    pub ecn_marked: bool,
    /// Acks: echo of a congestion mark back to the sender.
    pub ecn_echo: bool,
    /// Data: sender signals that it has reacted to an echoed mark.
    pub cwr: bool,
    /// Data: the sending flow's current RTT estimate in milliseconds.
    pub rtt_annotation_ms: f64,
    /// Set on queue admission; used for sojourn accounting.
    pub enqueue_time: SimTime,
    pub retransmit: bool,
}

impl Packet {
    pub fn data(
        flow_id: FlowId,
        seq_no: u64,
        size: u32,
        ecn_capable: bool,
        rtt_annotation_ms: f64,
    ) -> Packet {
        debug_assert!(rtt_annotation_ms > 0.0, "data packets carry a positive RTT");
        Packet {
            flow_id,
            seq_no,
            size,
            is_ack: false,
            ack_seq: 0,
            ecn_capable,
            ecn_marked: false,
            ecn_echo: false,
            cwr: false,
            rtt_annotation_ms,
            enqueue_time: SimTime::ZERO,
            retransmit: false,
        }
    }

    pub fn ack(flow_id: FlowId, ack_seq: u64, ecn_echo: bool) -> Packet {
        Packet {
            flow_id,
            seq_no: 0,
            size: HEADER_BYTES,
            is_ack: true,
            ack_seq,
            ecn_capable: false,
            ecn_marked: false,
            ecn_echo,
            cwr: false,
            rtt_annotation_ms: 0.0,
            enqueue_time: SimTime::ZERO,
            retransmit: false,
        }
    }

    pub fn mark(&mut self) {
        debug_assert!(self.ecn_capable, "marking requires ECN capability");
        self.ecn_marked = true;
    }
}
