//! CoDel: controlled-delay queue management, drop-only.
//!
//! Sojourn time is the congestion signal. When the minimum standing delay
//! stays above the target for a full interval, the queue enters a dropping
//! state whose cadence accelerates with the inverse square root of the
//! drop count. Verdicts are issued at dequeue time (head drop); this
//! scheme never marks, because replacing its drops with marks would let
//! queuing delay grow unchecked.

use crate::aqm::{Aqm, Verdict};
use crate::packet::Packet;
use crate::time::SimTime;

#[derive(Clone, Debug)]
pub struct CodelConfig {
    pub target: SimTime,
    pub interval: SimTime,
    /// Queues holding less than one MTU are never considered congested.
    pub mtu_bytes: u32,
}

impl Default for CodelConfig {
    fn default() -> Self {
        CodelConfig {
            target: SimTime::from_millis(5),
            interval: SimTime::from_millis(100),
            mtu_bytes: 576,
        }
    }
}

pub struct CodelAqm {
    cfg: CodelConfig,
    /// When the standing delay first exceeded the target plus one interval;
    /// None while below target.
    first_above: Option<SimTime>,
    dropping: bool,
    drop_next: SimTime,
    count: u64,
    last_count: u64,
}

impl CodelAqm {
    pub fn new(cfg: CodelConfig) -> CodelAqm {
        CodelAqm {
            cfg,
            first_above: None,
            dropping: false,
            drop_next: SimTime::ZERO,
            count: 0,
            last_count: 0,
        }
    }

    pub fn dropping(&self) -> bool {
        self.dropping
    }

    pub fn drop_count(&self) -> u64 {
        self.count
    }

    /// interval / sqrt(count), the inter-drop spacing while dropping.
    fn control_law_step(&self) -> SimTime {
        let sqrt = (self.count.max(1) as f64).sqrt();
        SimTime::from_nanos((self.cfg.interval.as_nanos() as f64 / sqrt).round() as u64)
    }

    /// Updates the standing-delay tracker; true when the current packet may
    /// be dropped (delay has been above target for a full interval).
    fn ok_to_drop(&mut self, sojourn: SimTime, remaining_bytes: u64, now: SimTime) -> bool {
        if sojourn < self.cfg.target || remaining_bytes < self.cfg.mtu_bytes as u64 {
            self.first_above = None;
            false
        } else {
            match self.first_above {
                None => {
                    self.first_above = Some(now + self.cfg.interval);
                    false
                }
                Some(t) => now >= t,
            }
        }
    }
}

impl Aqm for CodelAqm {
    fn name(&self) -> &'static str {
        "codel"
    }

    fn dequeue_verdict(
        &mut self,
        _pkt: &Packet,
        sojourn: SimTime,
        remaining_bytes: u64,
        now: SimTime,
    ) -> Verdict {
        let ok = self.ok_to_drop(sojourn, remaining_bytes, now);
        if self.dropping {
            if !ok {
                self.dropping = false;
                Verdict::Forward
            } else if now >= self.drop_next {
                self.count += 1;
                self.drop_next = self.drop_next + self.control_law_step();
                Verdict::Drop
            } else {
                Verdict::Forward
            }
        } else if ok {
            self.dropping = true;
            // Resume near the drop rate that last controlled the queue if
            // we were dropping recently, otherwise re-arm from one.
            let delta = self.count.saturating_sub(self.last_count);
            self.count = if delta > 1
                && now.saturating_sub(self.drop_next) < self.cfg.interval.mul_u64(16)
            {
                delta
            } else {
                1
            };
            self.drop_next = now + self.control_law_step();
            self.last_count = self.count;
            Verdict::Drop
        } else {
            Verdict::Forward
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt() -> Packet {
        Packet::data(0, 0, 576, false, 100.0)
    }

    const MS: u64 = 1;

    fn verdict(aqm: &mut CodelAqm, sojourn_ms: u64, now_ms: u64) -> Verdict {
        aqm.dequeue_verdict(
            &pkt(),
            SimTime::from_millis(sojourn_ms * MS),
            10_000,
            SimTime::from_millis(now_ms),
        )
    }

    #[test]
    fn below_target_never_drops() {
        let mut aqm = CodelAqm::new(CodelConfig::default());
        for t in 0..2000 {
            assert_eq!(verdict(&mut aqm, 3, t), Verdict::Forward);
        }
        assert!(!aqm.dropping());
    }

    #[test]
    fn sustained_excess_drops_at_interval_expiry() {
        // Trace oracle: 8 ms standing delay from t = 0, dequeues every 1 ms.
        // The first above-target observation arms the interval; the first
        // drop is the first dequeue at or after 100 ms.
        let mut aqm = CodelAqm::new(CodelConfig::default());
        let mut first_drop = None;
        for t in 0..200 {
            if verdict(&mut aqm, 8, t) == Verdict::Drop {
                first_drop = Some(t);
                break;
            }
        }
        assert_eq!(first_drop, Some(100));
        assert!(aqm.dropping());
    }

    #[test]
    fn drop_cadence_follows_inverse_sqrt() {
        let mut aqm = CodelAqm::new(CodelConfig::default());
        let mut drops = Vec::new();
        for t in 0..1000 {
            if verdict(&mut aqm, 9, t) == Verdict::Drop {
                drops.push(t as f64);
            }
        }
        assert!(drops.len() >= 4, "drops: {:?}", drops);
        // Second gap = interval / sqrt(2), third = interval / sqrt(3)...
        for (k, gap) in drops.windows(2).enumerate() {
            let expected = 100.0 / ((k + 2) as f64).sqrt();
            let got = gap[1] - gap[0];
            assert!(
                (got - expected).abs() <= 1.0,
                "gap {k}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn leaving_drop_state_rearms() {
        let mut aqm = CodelAqm::new(CodelConfig::default());
        for t in 0..150 {
            verdict(&mut aqm, 9, t);
        }
        assert!(aqm.dropping());
        // A single below-target sojourn ends the dropping state.
        assert_eq!(verdict(&mut aqm, 1, 150), Verdict::Forward);
        assert!(!aqm.dropping());
        assert!(aqm.first_above.is_none());
        // Re-entry requires a fresh full interval above target.
        let mut first_drop = None;
        for t in 151..400 {
            if verdict(&mut aqm, 9, t) == Verdict::Drop {
                first_drop = Some(t);
                break;
            }
        }
        assert_eq!(first_drop, Some(251));
    }

    #[test]
    fn tiny_queue_is_never_congested() {
        let mut aqm = CodelAqm::new(CodelConfig::default());
        for t in 0..500 {
            let v = aqm.dequeue_verdict(
                &pkt(),
                SimTime::from_millis(50),
                100, // less than one MTU remains
                SimTime::from_millis(t),
            );
            assert_eq!(v, Verdict::Forward);
        }
    }
}
