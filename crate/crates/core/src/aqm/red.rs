//! Random Early Detection with ECN support.
//!
//! Classic gentle-less control law: an EWMA of the queue length selects
//! between forwarding, probabilistic marking/dropping on the linear ramp
//! between the two thresholds, and forced dropping above the upper
//! threshold. The inter-mark count inflates the ramp probability so marks
//! spread out instead of clustering.

use rand::{Rng, RngCore};

use crate::aqm::{Aqm, Verdict};
use crate::packet::Packet;
use crate::time::SimTime;

#[derive(Clone, Debug)]
pub struct RedConfig {
    pub min_th_pkts: f64,
    pub max_th_pkts: f64,
    pub max_p: f64,
    pub w_q: f64,
    /// Typical time to transmit one packet, used to age the average across
    /// idle periods.
    pub mean_pkt_time: SimTime,
}

impl RedConfig {
    /// Conventional defaults anchored to the queue-length target:
    /// thresholds at half and twice the target.
    pub fn from_target(qlen_target_pkts: f64, mtu_bytes: u32, bandwidth_bps: u64) -> RedConfig {
        RedConfig {
            min_th_pkts: qlen_target_pkts / 2.0,
            max_th_pkts: qlen_target_pkts * 2.0,
            max_p: 0.1,
            w_q: 0.002,
            mean_pkt_time: SimTime::serialization(mtu_bytes, bandwidth_bps),
        }
    }
}

pub struct RedAqm {
    cfg: RedConfig,
    avg: f64,
    /// Packets since the last mark/drop while on the ramp; -1 after a
    /// below-threshold spell.
    count: i64,
    idle_since: Option<SimTime>,
}

impl RedAqm {
    pub fn new(cfg: RedConfig) -> RedAqm {
        assert!(cfg.min_th_pkts < cfg.max_th_pkts, "min_th must be below max_th");
        assert!(cfg.max_p > 0.0 && cfg.max_p <= 1.0);
        RedAqm {
            cfg,
            avg: 0.0,
            count: -1,
            idle_since: None,
        }
    }

    pub fn average(&self) -> f64 {
        self.avg
    }

    fn update_average(&mut self, backlog: usize, now: SimTime) {
        if backlog == 0 {
            if let Some(idle_start) = self.idle_since {
                // Age the average as if empty-queue samples had arrived
                // once per typical transmission time.
                let idle = now.saturating_sub(idle_start);
                let m = idle.as_nanos() as f64 / self.cfg.mean_pkt_time.as_nanos().max(1) as f64;
                self.avg *= (1.0 - self.cfg.w_q).powf(m);
                self.idle_since = None;
            }
        }
        self.avg = (1.0 - self.cfg.w_q) * self.avg + self.cfg.w_q * backlog as f64;
    }
}

impl Aqm for RedAqm {
    fn name(&self) -> &'static str {
        "red"
    }

    fn enqueue_verdict(
        &mut self,
        pkt: &Packet,
        backlog_pkts: usize,
        now: SimTime,
        rng: &mut dyn RngCore,
    ) -> Verdict {
        self.update_average(backlog_pkts, now);
        if self.avg < self.cfg.min_th_pkts {
            self.count = -1;
            Verdict::Forward
        } else if self.avg > self.cfg.max_th_pkts {
            self.count = 0;
            Verdict::Drop
        } else {
            self.count += 1;
            let ramp = (self.avg - self.cfg.min_th_pkts)
                / (self.cfg.max_th_pkts - self.cfg.min_th_pkts);
            let p_b = self.cfg.max_p * ramp;
            let inflation = 1.0 - self.count.max(0) as f64 * p_b;
            let p_a = if inflation > 0.0 {
                (p_b / inflation).min(1.0)
            } else {
                1.0
            };
            if rng.random::<f64>() < p_a {
                self.count = 0;
                if pkt.ecn_capable {
                    Verdict::Mark
                } else {
                    Verdict::Drop
                }
            } else {
                Verdict::Forward
            }
        }
    }

    fn observe_backlog(&mut self, backlog_pkts: usize, now: SimTime) {
        if backlog_pkts == 0 {
            if self.idle_since.is_none() {
                self.idle_since = Some(now);
            }
        } else {
            self.idle_since = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn red() -> RedAqm {
        RedAqm::new(RedConfig::from_target(20.0, 576, 10_000_000))
    }

    #[test]
    fn below_min_threshold_forwards() {
        let mut aqm = red();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pkt = Packet::data(0, 0, 576, true, 100.0);
        for _ in 0..100 {
            assert_eq!(
                aqm.enqueue_verdict(&pkt, 2, SimTime::ZERO, &mut rng),
                Verdict::Forward
            );
        }
    }

    #[test]
    fn above_max_threshold_drops_even_ecn() {
        let mut aqm = red();
        aqm.avg = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pkt = Packet::data(0, 0, 576, true, 100.0);
        assert_eq!(
            aqm.enqueue_verdict(&pkt, 60, SimTime::ZERO, &mut rng),
            Verdict::Drop
        );
    }

    #[test]
    fn midway_ramp_probability() {
        let cfg = RedConfig::from_target(20.0, 576, 10_000_000);
        // min 10, max 40, midway avg 25: p_b = 0.1 * 0.5 = 0.05.
        let ramp = (25.0 - cfg.min_th_pkts) / (cfg.max_th_pkts - cfg.min_th_pkts);
        assert!((cfg.max_p * ramp - 0.05).abs() < 1e-12);
    }

    #[test]
    fn average_converges_geometrically() {
        let mut aqm = red();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pkt = Packet::data(0, 0, 576, false, 100.0);
        for _ in 0..5000 {
            aqm.enqueue_verdict(&pkt, 8, SimTime::ZERO, &mut rng);
        }
        assert!((aqm.average() - 8.0).abs() < 0.01, "avg {}", aqm.average());
    }

    #[test]
    fn idle_period_decays_average() {
        let mut aqm = red();
        aqm.avg = 30.0;
        aqm.observe_backlog(0, SimTime::from_secs(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pkt = Packet::data(0, 0, 576, false, 100.0);
        // 10k packet times of idle wipe the average down.
        aqm.enqueue_verdict(&pkt, 0, SimTime::from_secs(6), &mut rng);
        assert!(aqm.average() < 1.0, "avg {}", aqm.average());
    }

    #[test]
    fn uncapable_packets_get_dropped_on_the_ramp() {
        let mut aqm = red();
        aqm.avg = 39.9;
        aqm.idle_since = None;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pkt = Packet::data(0, 0, 576, false, 100.0);
        let mut saw_drop = false;
        for _ in 0..200 {
            aqm.avg = 39.9;
            if aqm.enqueue_verdict(&pkt, 39, SimTime::ZERO, &mut rng) == Verdict::Drop {
                saw_drop = true;
                break;
            }
        }
        assert!(saw_drop);
    }
}
