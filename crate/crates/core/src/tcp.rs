//! Packet-level TCP New-Reno sender and receiver.
//!
//! Flows are long-lived bulk transfers: the sender always has data while
//! active, segments are one MSS each, and the receiver acks every data
//! packet immediately. ECN echoes and triple duplicate acks both halve the
//! window, but a flow reduces multiplicatively at most once per smoothed
//! RTT regardless of how many signals arrive inside that window.

use std::collections::{BTreeMap, BTreeSet};

use crate::packet::{FlowId, Packet, HEADER_BYTES};
use crate::time::SimTime;

pub const DEFAULT_MSS: u32 = 536;
pub const RTO_FLOOR: SimTime = SimTime::from_millis(200);
pub const RTO_CAP: SimTime = SimTime::from_secs(60);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcpState {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

#[derive(Clone, Copy, Debug)]
struct SentInfo {
    sent_at: SimTime,
    retransmitted: bool,
}

/// Result of processing one ack.
#[derive(Debug, Default)]
pub struct AckOutcome {
    pub new_data_acked: bool,
    /// Segment to retransmit right away (fast retransmit or a partial-ack
    /// hole fill).
    pub retransmit: Option<Packet>,
}

pub struct TcpFlow {
    pub flow_id: FlowId,
    pub state: TcpState,
    /// Congestion window in bytes of payload.
    pub cwnd: f64,
    pub ssthresh: f64,
    mss: u32,
    pub srtt: SimTime,
    pub rttvar: SimTime,
    pub rto: SimTime,
    has_rtt_sample: bool,
    pub ecn_capable: bool,
    /// Configured two-way propagation delay; seeds the RTT annotation until
    /// the first measurement.
    base_rtt: SimTime,
    next_seq: u64,
    cum_ack: u64,
    dup_ack_count: u32,
    /// One past the highest segment sent when recovery was entered.
    recover: u64,
    last_reduction: Option<SimTime>,
    cwr_pending: bool,
    outstanding: BTreeMap<u64, SentInfo>,
    pub active: bool,
}

impl TcpFlow {
    pub fn new(flow_id: FlowId, mss: u32, base_rtt: SimTime, ecn_capable: bool) -> TcpFlow {
        let rttvar = SimTime::from_nanos(base_rtt.as_nanos() / 2);
        let mut flow = TcpFlow {
            flow_id,
            state: TcpState::SlowStart,
            cwnd: 2.0 * mss as f64,
            ssthresh: f64::INFINITY,
            mss,
            srtt: base_rtt,
            rttvar,
            rto: SimTime::ZERO,
            has_rtt_sample: false,
            ecn_capable,
            base_rtt,
            next_seq: 0,
            cum_ack: 0,
            dup_ack_count: 0,
            recover: 0,
            last_reduction: None,
            cwr_pending: false,
            outstanding: BTreeMap::new(),
            active: false,
        };
        flow.refresh_rto();
        flow
    }

    pub fn mss(&self) -> u32 {
        self.mss
    }

    pub fn bytes_in_flight(&self) -> u64 {
        (self.next_seq - self.cum_ack) * self.mss as u64
    }

    pub fn has_outstanding(&self) -> bool {
        !self.outstanding.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn cum_ack(&self) -> u64 {
        self.cum_ack
    }

    pub fn srtt_ms(&self) -> f64 {
        self.srtt.as_millis_f64()
    }

    pub fn can_send(&self) -> bool {
        self.active && (self.bytes_in_flight() as f64) < self.cwnd
    }

    /// Emits the next new segment. Callers check [`TcpFlow::can_send`]
    /// first; in-flight bytes never exceed cwnd by more than one segment.
    pub fn emit_packet(&mut self, now: SimTime) -> Packet {
        debug_assert!(
            (self.bytes_in_flight() as f64) < self.cwnd,
            "emit without window room"
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.outstanding.insert(
            seq,
            SentInfo {
                sent_at: now,
                retransmitted: false,
            },
        );
        self.build_packet(seq, false)
    }

    fn build_packet(&mut self, seq: u64, retransmit: bool) -> Packet {
        let mut pkt = Packet::data(
            self.flow_id,
            seq,
            self.mss + HEADER_BYTES,
            self.ecn_capable,
            self.srtt_ms(),
        );
        pkt.retransmit = retransmit;
        if self.cwr_pending {
            pkt.cwr = true;
            self.cwr_pending = false;
        }
        pkt
    }

    fn build_retransmit(&mut self, seq: u64) -> Packet {
        if let Some(info) = self.outstanding.get_mut(&seq) {
            info.retransmitted = true;
        }
        self.build_packet(seq, true)
    }

    /// Multiplicative decrease, absorbed if one already happened within the
    /// current smoothed RTT. Returns whether the reduction was applied.
    fn congestion_event(&mut self, now: SimTime) -> bool {
        if let Some(t) = self.last_reduction {
            if now.saturating_sub(t) < self.srtt {
                return false;
            }
        }
        self.ssthresh = (self.cwnd / 2.0).max(2.0 * self.mss as f64);
        self.cwnd = self.ssthresh;
        self.last_reduction = Some(now);
        if self.state == TcpState::SlowStart {
            self.state = TcpState::CongestionAvoidance;
        }
        true
    }

    pub fn on_ack(&mut self, ack: &Packet, now: SimTime) -> AckOutcome {
        debug_assert!(ack.is_ack && ack.flow_id == self.flow_id);
        assert!(
            ack.ack_seq <= self.next_seq,
            "flow {}: ack {} for unsent data (next_seq {})",
            self.flow_id,
            ack.ack_seq,
            self.next_seq
        );
        let mut outcome = AckOutcome::default();

        if ack.ecn_echo {
            // React (at most once per RTT) and tell the receiver to stop
            // echoing; no retransmission is implied.
            self.cwr_pending = true;
            self.congestion_event(now);
        }

        if ack.ack_seq > self.cum_ack {
            outcome.new_data_acked = true;
            if let Some(info) = self.outstanding.get(&(ack.ack_seq - 1)) {
                if !info.retransmitted {
                    self.update_rtt(now.saturating_sub(info.sent_at));
                }
            }
            self.cum_ack = ack.ack_seq;
            self.outstanding = self.outstanding.split_off(&ack.ack_seq);
            self.dup_ack_count = 0;

            if self.state == TcpState::FastRecovery {
                if self.cum_ack >= self.recover {
                    self.state = TcpState::CongestionAvoidance;
                    self.cwnd = self.ssthresh;
                } else {
                    // Partial ack: fill the next hole immediately.
                    outcome.retransmit = Some(self.build_retransmit(self.cum_ack));
                }
            } else {
                match self.state {
                    TcpState::SlowStart => {
                        self.cwnd += self.mss as f64;
                        if self.cwnd >= self.ssthresh {
                            self.state = TcpState::CongestionAvoidance;
                        }
                    }
                    TcpState::CongestionAvoidance => {
                        self.cwnd += self.mss as f64 * self.mss as f64 / self.cwnd;
                    }
                    TcpState::FastRecovery => unreachable!(),
                }
            }
        } else if ack.ack_seq == self.cum_ack && !self.outstanding.is_empty() {
            self.dup_ack_count += 1;
            if self.dup_ack_count == 3 && self.state != TcpState::FastRecovery {
                self.congestion_event(now);
                self.state = TcpState::FastRecovery;
                self.recover = self.next_seq;
                outcome.retransmit = Some(self.build_retransmit(self.cum_ack));
            }
        }
        outcome
    }

    /// Retransmission timeout: collapse to one segment and resend the
    /// earliest unacked. Returns None when everything is already acked.
    pub fn on_timeout(&mut self, now: SimTime) -> Option<Packet> {
        if self.outstanding.is_empty() {
            return None;
        }
        self.ssthresh = (self.cwnd / 2.0).max(2.0 * self.mss as f64);
        self.cwnd = self.mss as f64;
        self.state = TcpState::SlowStart;
        self.dup_ack_count = 0;
        self.last_reduction = Some(now);
        self.rto = SimTime::from_nanos(self.rto.as_nanos() * 2).min(RTO_CAP);
        Some(self.build_retransmit(self.cum_ack))
    }

    fn update_rtt(&mut self, sample: SimTime) {
        let sample_ns = sample.as_nanos();
        if !self.has_rtt_sample {
            self.srtt = sample;
            self.rttvar = SimTime::from_nanos(sample_ns / 2);
            self.has_rtt_sample = true;
        } else {
            let srtt_ns = self.srtt.as_nanos();
            let err = srtt_ns.abs_diff(sample_ns);
            // Standard exponential estimators with gains 1/4 and 1/8.
            self.rttvar = SimTime::from_nanos((3 * self.rttvar.as_nanos() + err) / 4);
            self.srtt = SimTime::from_nanos((7 * srtt_ns + sample_ns) / 8);
        }
        self.refresh_rto();
    }

    fn refresh_rto(&mut self) {
        let raw = self.srtt + self.rttvar.mul_u64(4);
        self.rto = raw.max(RTO_FLOOR).min(RTO_CAP);
    }
}

/// Receiver half: immediate cumulative acks, out-of-order buffering, and
/// ECN echo that persists until the sender signals its reaction.
pub struct TcpReceiver {
    pub flow_id: FlowId,
    expected: u64,
    buffered: BTreeSet<u64>,
    echo_pending: bool,
    /// Wire bytes delivered in order, the goodput numerator.
    pub delivered_bytes: u64,
    pub delivered_packets: u64,
}

impl TcpReceiver {
    pub fn new(flow_id: FlowId) -> TcpReceiver {
        TcpReceiver {
            flow_id,
            expected: 0,
            buffered: BTreeSet::new(),
            echo_pending: false,
            delivered_bytes: 0,
            delivered_packets: 0,
        }
    }

    pub fn on_data(&mut self, pkt: &Packet) -> Packet {
        debug_assert!(!pkt.is_ack && pkt.flow_id == self.flow_id);
        if pkt.cwr {
            self.echo_pending = false;
        }
        if pkt.ecn_marked {
            self.echo_pending = true;
        }
        if pkt.seq_no == self.expected {
            self.deliver(pkt.size);
            while self.buffered.remove(&self.expected) {
                self.deliver(pkt.size);
            }
        } else if pkt.seq_no > self.expected {
            self.buffered.insert(pkt.seq_no);
        }
        Packet::ack(self.flow_id, self.expected, self.echo_pending)
    }

    fn deliver(&mut self, size: u32) {
        self.expected += 1;
        self.delivered_bytes += size as u64;
        self.delivered_packets += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MSS: f64 = 536.0;

    fn flow() -> TcpFlow {
        let mut f = TcpFlow::new(0, 536, SimTime::from_millis(100), true);
        f.active = true;
        f
    }

    fn send_n(f: &mut TcpFlow, n: u64, now: SimTime) {
        for _ in 0..n {
            f.emit_packet(now);
        }
    }

    fn ack(seq: u64) -> Packet {
        Packet::ack(0, seq, false)
    }

    fn echo_ack(seq: u64) -> Packet {
        Packet::ack(0, seq, true)
    }

    #[test]
    fn slow_start_adds_one_segment_per_ack() {
        let mut f = flow();
        assert_eq!(f.cwnd, 2.0 * MSS);
        send_n(&mut f, 2, SimTime::ZERO);
        f.on_ack(&ack(1), SimTime::from_millis(100));
        assert_eq!(f.cwnd, 3.0 * MSS);
        assert_eq!(f.state, TcpState::SlowStart);
    }

    #[test]
    fn congestion_avoidance_adds_reciprocal_increment() {
        let mut f = flow();
        f.state = TcpState::CongestionAvoidance;
        f.cwnd = 10.0 * MSS;
        f.ssthresh = 5.0 * MSS;
        send_n(&mut f, 2, SimTime::ZERO);
        f.on_ack(&ack(1), SimTime::from_millis(100));
        assert!((f.cwnd - (10.0 * MSS + MSS / 10.0)).abs() < 1e-9);
    }

    #[test]
    fn ecn_echo_within_one_rtt_is_absorbed() {
        let mut f = flow();
        f.cwnd = 10.0 * MSS;
        send_n(&mut f, 4, SimTime::ZERO);
        let now = SimTime::from_secs(10);
        f.last_reduction = Some(now.saturating_sub(SimTime::from_millis(50))); // srtt/2 ago
        f.on_ack(&echo_ack(0), now);
        assert_eq!(f.cwnd, 10.0 * MSS);
    }

    #[test]
    fn ecn_echo_halves_once() {
        let mut f = flow();
        f.cwnd = 10.0 * MSS;
        send_n(&mut f, 4, SimTime::ZERO);
        let now = SimTime::from_secs(10);
        f.on_ack(&echo_ack(0), now);
        assert_eq!(f.cwnd, 5.0 * MSS);
        assert_eq!(f.ssthresh, 5.0 * MSS);
        assert_eq!(f.state, TcpState::CongestionAvoidance);
        // The reaction flag rides on the next data packet.
        let pkt = f.emit_packet(now);
        assert!(pkt.cwr);
    }

    #[test]
    fn third_duplicate_ack_enters_fast_recovery() {
        let mut f = flow();
        f.cwnd = 10.0 * MSS;
        f.state = TcpState::CongestionAvoidance;
        send_n(&mut f, 10, SimTime::ZERO);
        let now = SimTime::from_secs(5);
        f.on_ack(&ack(0), now);
        f.on_ack(&ack(0), now);
        let out = f.on_ack(&ack(0), now);
        assert_eq!(f.state, TcpState::FastRecovery);
        assert_eq!(f.ssthresh, 5.0 * MSS);
        assert_eq!(f.cwnd, 5.0 * MSS);
        let rtx = out.retransmit.expect("fast retransmit");
        assert_eq!(rtx.seq_no, 0);
        assert!(rtx.retransmit);
    }

    #[test]
    fn full_ack_leaves_recovery_partial_ack_refills() {
        let mut f = flow();
        f.cwnd = 8.0 * MSS;
        f.state = TcpState::CongestionAvoidance;
        send_n(&mut f, 8, SimTime::ZERO);
        let now = SimTime::from_secs(5);
        for _ in 0..3 {
            f.on_ack(&ack(0), now);
        }
        assert_eq!(f.state, TcpState::FastRecovery);
        assert_eq!(f.recover, 8);
        // Partial ack up to 4: still in recovery, retransmits segment 4.
        let out = f.on_ack(&ack(4), now + SimTime::from_millis(100));
        assert_eq!(f.state, TcpState::FastRecovery);
        assert_eq!(out.retransmit.unwrap().seq_no, 4);
        // Full ack exits to congestion avoidance at ssthresh.
        f.on_ack(&ack(8), now + SimTime::from_millis(200));
        assert_eq!(f.state, TcpState::CongestionAvoidance);
        assert_eq!(f.cwnd, f.ssthresh);
    }

    #[test]
    fn timeout_collapses_window() {
        let mut f = flow();
        f.cwnd = 8.0 * MSS;
        f.state = TcpState::CongestionAvoidance;
        send_n(&mut f, 4, SimTime::ZERO);
        let rtx = f.on_timeout(SimTime::from_secs(1)).expect("retransmit");
        assert_eq!(rtx.seq_no, 0);
        assert_eq!(f.ssthresh, 4.0 * MSS);
        assert_eq!(f.cwnd, MSS);
        assert_eq!(f.state, TcpState::SlowStart);
    }

    #[test]
    fn consecutive_timeouts_double_rto() {
        let mut f = TcpFlow::new(0, 536, SimTime::from_millis(10), true);
        f.active = true;
        assert_eq!(f.rto, SimTime::from_millis(200)); // floored
        send_n(&mut f, 2, SimTime::ZERO);
        f.on_timeout(SimTime::from_millis(200));
        assert_eq!(f.rto, SimTime::from_millis(400));
        f.on_timeout(SimTime::from_millis(600));
        assert_eq!(f.rto, SimTime::from_millis(800));
    }

    #[test]
    fn timeout_with_nothing_outstanding_is_noop() {
        let mut f = flow();
        send_n(&mut f, 1, SimTime::ZERO);
        f.on_ack(&ack(1), SimTime::from_millis(100));
        assert!(f.on_timeout(SimTime::from_secs(1)).is_none());
    }

    #[test]
    fn annotation_tracks_srtt() {
        let mut f = TcpFlow::new(0, 536, SimTime::from_millis(80), true);
        f.active = true;
        // Bootstrap: configured two-way propagation delay.
        let pkt = f.emit_packet(SimTime::ZERO);
        assert_eq!(pkt.rtt_annotation_ms, 80.0);
        // After a measurement the annotation follows the estimator.
        f.on_ack(&ack(1), SimTime::from_millis(96));
        let pkt = f.emit_packet(SimTime::from_millis(100));
        assert_eq!(pkt.rtt_annotation_ms, 96.0);
    }

    #[test]
    fn ecn_disabled_flows_emit_uncapable_packets() {
        let mut f = TcpFlow::new(0, 536, SimTime::from_millis(80), false);
        f.active = true;
        assert!(!f.emit_packet(SimTime::ZERO).ecn_capable);
    }

    #[test]
    fn srtt_converges_on_fixed_delay_path() {
        let mut f = TcpFlow::new(0, 536, SimTime::from_millis(80), true);
        f.active = true;
        let true_rtt = SimTime::from_millis(100);
        let mut now = SimTime::ZERO;
        for round in 0..20 {
            // A handful of packets per round trip, acked one RTT later.
            let base = f.next_seq();
            for _ in 0..4 {
                f.emit_packet(now);
            }
            now = now + true_rtt;
            for k in 1..=4 {
                f.on_ack(&ack(base + k), now);
            }
            let _ = round;
        }
        assert!(
            f.srtt.as_millis_f64() - 100.0 < 1.0 && 100.0 - f.srtt.as_millis_f64() < 1.0,
            "srtt {}",
            f.srtt
        );
    }

    #[test]
    #[should_panic(expected = "unsent data")]
    fn ack_beyond_next_seq_is_fatal() {
        let mut f = flow();
        send_n(&mut f, 1, SimTime::ZERO);
        f.on_ack(&ack(5), SimTime::from_millis(1));
    }

    #[test]
    fn receiver_acks_cumulatively_and_buffers_gaps() {
        let mut rx = TcpReceiver::new(0);
        let mk = |seq| Packet::data(0, seq, 576, true, 50.0);
        assert_eq!(rx.on_data(&mk(0)).ack_seq, 1);
        // Gap: 2 arrives before 1.
        assert_eq!(rx.on_data(&mk(2)).ack_seq, 1);
        let a = rx.on_data(&mk(1));
        assert_eq!(a.ack_seq, 3);
        assert_eq!(rx.delivered_packets, 3);
        assert_eq!(rx.delivered_bytes, 3 * 576);
    }

    #[test]
    fn receiver_echo_persists_until_cwr() {
        let mut rx = TcpReceiver::new(0);
        let mut marked = Packet::data(0, 0, 576, true, 50.0);
        marked.mark();
        assert!(rx.on_data(&marked).ecn_echo);
        // Unmarked follow-up still echoes.
        assert!(rx.on_data(&Packet::data(0, 1, 576, true, 50.0)).ecn_echo);
        // Sender's reaction clears the echo.
        let mut cwr = Packet::data(0, 2, 576, true, 50.0);
        cwr.cwr = true;
        assert!(!rx.on_data(&cwr).ecn_echo);
    }

    proptest! {
        /// Reductions are at least one smoothed RTT apart no matter how
        /// marks arrive.
        #[test]
        fn at_most_one_reduction_per_rtt(
            echoes in proptest::collection::vec((1u64..50, proptest::bool::ANY), 1..300)
        ) {
            let mut f = flow();
            f.cwnd = 64.0 * MSS;
            f.state = TcpState::CongestionAvoidance;
            let mut now = SimTime::ZERO;
            let mut reductions: Vec<(SimTime, SimTime)> = Vec::new();
            for (gap_ms, echo) in echoes {
                now = now + SimTime::from_millis(gap_ms);
                while f.can_send() {
                    f.emit_packet(now);
                }
                let before = f.cwnd;
                let seq = f.cum_ack() + 1;
                let mut a = ack(seq);
                a.ecn_echo = echo;
                f.on_ack(&a, now);
                if f.cwnd < before {
                    reductions.push((now, f.srtt));
                }
            }
            for pair in reductions.windows(2) {
                let gap = pair[1].0.saturating_sub(pair[0].0);
                prop_assert!(gap >= pair[1].1, "reductions {}Δ within srtt {}", gap, pair[1].1);
            }
        }

        /// In-flight bytes never exceed the window by more than one segment.
        #[test]
        fn in_flight_bounded_by_window(acks in proptest::collection::vec(proptest::bool::ANY, 1..200)) {
            let mut f = flow();
            let mut now = SimTime::ZERO;
            for new_data in acks {
                now = now + SimTime::from_millis(10);
                while f.can_send() {
                    f.emit_packet(now);
                    prop_assert!(f.bytes_in_flight() as f64 <= f.cwnd + MSS);
                }
                let seq = if new_data { f.cum_ack() + 1 } else { f.cum_ack() };
                if seq <= f.next_seq() {
                    f.on_ack(&ack(seq), now);
                }
            }
        }
    }
}
