//! Pluggable active queue management behind a single verdict interface.

mod codel;
mod fuzzyrtt;
mod red;

pub use codel::CodelAqm;
pub use fuzzyrtt::{CategoryController, FlowCountMode, FuzzyRttAqm, FuzzyRttConfig};
pub use red::RedAqm;

use rand::RngCore;

use crate::packet::Packet;
use crate::time::SimTime;

/// Per-packet decision of an AQM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Mark,
    Drop,
}

/// Queue manager interface. Enqueue-side schemes decide on arrival;
/// dequeue-side schemes (CoDel) decide when a packet reaches the head.
/// Backlog observations and periodic timers feed schemes that sample the
/// queue over time.
pub trait Aqm {
    fn name(&self) -> &'static str;

    /// Verdict for an arriving data packet. `backlog_pkts` is the queue
    /// length before admission.
    fn enqueue_verdict(
        &mut self,
        _pkt: &Packet,
        _backlog_pkts: usize,
        _now: SimTime,
        _rng: &mut dyn RngCore,
    ) -> Verdict {
        Verdict::Forward
    }

    /// Verdict for the packet leaving the queue head. `remaining_bytes` is
    /// the queue occupancy after removing this packet.
    fn dequeue_verdict(
        &mut self,
        _pkt: &Packet,
        _sojourn: SimTime,
        _remaining_bytes: u64,
        _now: SimTime,
    ) -> Verdict {
        Verdict::Forward
    }

    /// Called after every enqueue and dequeue with the new backlog.
    fn observe_backlog(&mut self, _backlog_pkts: usize, _now: SimTime) {}

    /// Periodic update intervals this scheme wants; `on_timer` fires with
    /// the matching index.
    fn timer_periods(&self) -> Vec<SimTime> {
        Vec::new()
    }

    fn on_timer(&mut self, _timer_idx: usize, _backlog_pkts: usize, _now: SimTime) {}

    /// Current number of active flows, pushed by the harness as flows start
    /// and stop.
    fn set_active_flows(&mut self, _n: usize) {}

    /// Internal drop probabilities for time-series export (p1..p5 for the
    /// category scheme, zeros otherwise).
    fn probabilities(&self) -> [f64; 5] {
        [0.0; 5]
    }
}

/// Plain FIFO tail-drop: every verdict is Forward.
#[derive(Debug, Default)]
pub struct NoAqm;

impl Aqm for NoAqm {
    fn name(&self) -> &'static str {
        "none"
    }
}
