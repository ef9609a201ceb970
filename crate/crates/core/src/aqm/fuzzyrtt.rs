//! RTT-aware fuzzy queue manager.
//!
//! Five category controllers maintain drop probabilities for RTT bands of
//! 40, 80, 160, 320, and 640 ms. Each category runs the shared Mamdani
//! controller over the minimum queue length observed during its own
//! RTT-matched update interval, scales the output by a power-of-two
//! multiplier that compensates for its slower update rate, and leaks a
//! small fraction of the faster neighbor's probability into its own so
//! that short-RTT flows are not the only ones notified under sustained
//! congestion. Per packet, the applied probability is a linear blend of
//! the two categories surrounding the packet's RTT annotation.

use std::collections::HashSet;

use rand::{Rng, RngCore};

use crate::aqm::{Aqm, Verdict};
use crate::flc::MisoFlc;
use crate::packet::{FlowId, Packet};
use crate::time::SimTime;

pub const DEFAULT_CATEGORY_RTTS_MS: [f64; 5] = [40.0, 80.0, 160.0, 320.0, 640.0];
pub const DEFAULT_ALPHAS: [f64; 4] = [0.002, 0.004, 0.012, 0.024];
pub const DEFAULT_K0: f64 = 1e-3;

/// Source of the active-flow count N used by the output scaling factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowCountMode {
    /// The harness pushes the true count of active flows.
    Exact,
    /// Distinct flow ids observed over trailing epochs of the given length.
    Windowed(SimTime),
}

#[derive(Clone, Debug)]
pub struct FuzzyRttConfig {
    pub qlen_target_pkts: f64,
    pub mss_bytes: u32,
    pub bandwidth_bps: u64,
    /// Base gain mapping the controller output in [-1, 1] to a probability
    /// increment per update.
    pub k0: f64,
    /// Propagation weights for categories 2..5; category 1 has none.
    pub alphas: [f64; 4],
    pub category_rtts_ms: [f64; 5],
    pub flow_count_mode: FlowCountMode,
}

impl FuzzyRttConfig {
    pub fn new(qlen_target_pkts: f64, mss_bytes: u32, bandwidth_bps: u64) -> FuzzyRttConfig {
        assert!(qlen_target_pkts > 0.0);
        assert!(bandwidth_bps > 0);
        FuzzyRttConfig {
            qlen_target_pkts,
            mss_bytes,
            bandwidth_bps,
            k0: DEFAULT_K0,
            alphas: DEFAULT_ALPHAS,
            category_rtts_ms: DEFAULT_CATEGORY_RTTS_MS,
            flow_count_mode: FlowCountMode::Exact,
        }
    }
}

/// One RTT band's drop-probability controller.
#[derive(Clone, Debug)]
pub struct CategoryController {
    /// Representative RTT of the band, also its update interval in ms.
    pub rtt_ms: f64,
    /// Output gain multiplier compensating the slower update frequency.
    pub output_multiplier: f64,
    /// Weight on the faster neighbor's probability; 0 for the first band.
    pub alpha: f64,
    /// Current drop probability, always in [0, 1].
    pub p: f64,
    /// Minimum backlog observed since the last update; None until the
    /// first observation of the window.
    qlen_min: Option<usize>,
    prev_error: f64,
}

impl CategoryController {
    fn new(rtt_ms: f64, output_multiplier: f64, alpha: f64) -> CategoryController {
        CategoryController {
            rtt_ms,
            output_multiplier,
            alpha,
            p: 0.0,
            qlen_min: None,
            prev_error: 0.0,
        }
    }

    fn observe(&mut self, backlog: usize) {
        self.qlen_min = Some(match self.qlen_min {
            Some(m) => m.min(backlog),
            None => backlog,
        });
    }

    /// Minimum of the closing window, falling back to the instantaneous
    /// backlog when the window saw no queue activity.
    fn take_window_min(&mut self, backlog_now: usize) -> usize {
        self.qlen_min.take().unwrap_or(backlog_now)
    }
}

enum FlowCounter {
    Exact(usize),
    Windowed {
        window: SimTime,
        epoch_start: SimTime,
        current: HashSet<FlowId>,
        last_epoch: usize,
    },
}

impl FlowCounter {
    fn active(&self) -> usize {
        match self {
            FlowCounter::Exact(n) => *n,
            FlowCounter::Windowed {
                current, last_epoch, ..
            } => (*last_epoch).max(current.len()),
        }
    }

    fn record(&mut self, flow: FlowId, now: SimTime) {
        if let FlowCounter::Windowed {
            window,
            epoch_start,
            current,
            last_epoch,
        } = self
        {
            if now.saturating_sub(*epoch_start) >= *window {
                *last_epoch = current.len();
                current.clear();
                *epoch_start = now;
            }
            current.insert(flow);
        }
    }
}

/// The RTT-category AQM. Holds no per-flow state: memory use is constant
/// in the number of flows.
pub struct FuzzyRttAqm {
    cfg: FuzzyRttConfig,
    flc: MisoFlc,
    categories: Vec<CategoryController>,
    /// Scaling for the error-delta input: one unit is a packet of change
    /// against 10 ms worth of packets at line rate.
    sf_delta: f64,
    flows: FlowCounter,
}

impl FuzzyRttAqm {
    pub fn new(cfg: FuzzyRttConfig) -> FuzzyRttAqm {
        assert!(
            cfg.category_rtts_ms.windows(2).all(|w| w[0] < w[1]),
            "category RTTs must be strictly increasing"
        );
        let categories = cfg
            .category_rtts_ms
            .iter()
            .enumerate()
            .map(|(i, &rtt)| {
                let alpha = if i == 0 { 0.0 } else { cfg.alphas[i - 1] };
                CategoryController::new(rtt, (1u32 << i) as f64, alpha)
            })
            .collect();
        let sf_delta = 800.0 * cfg.mss_bytes as f64 / cfg.bandwidth_bps as f64;
        let flows = match cfg.flow_count_mode {
            FlowCountMode::Exact => FlowCounter::Exact(0),
            FlowCountMode::Windowed(w) => FlowCounter::Windowed {
                window: w,
                epoch_start: SimTime::ZERO,
                current: HashSet::new(),
                last_epoch: 0,
            },
        };
        FuzzyRttAqm {
            cfg,
            flc: MisoFlc::standard(),
            categories,
            sf_delta,
            flows,
        }
    }

    pub fn categories(&self) -> &[CategoryController] {
        &self.categories
    }

    /// Error-delta scaling factor (per packet of queue-length change).
    pub fn sf_delta(&self) -> f64 {
        self.sf_delta
    }

    /// Experiment hook: force a category's probability.
    pub fn set_category_probability(&mut self, idx: usize, p: f64) {
        self.categories[idx].p = p.clamp(0.0, 1.0);
    }

    /// Blend weights over the two categories surrounding `rtt_ms`:
    /// `(lower category index, lower weight, upper weight)`. RTTs at or
    /// below the first band, or at or beyond the last, map entirely to
    /// that band.
    pub fn blend_weights(category_rtts_ms: &[f64; 5], rtt_ms: f64) -> (usize, f64, f64) {
        if rtt_ms <= category_rtts_ms[0] {
            return (0, 1.0, 0.0);
        }
        if rtt_ms >= category_rtts_ms[4] {
            return (3, 0.0, 1.0);
        }
        let mut i = 0;
        while rtt_ms > category_rtts_ms[i + 1] {
            i += 1;
        }
        let span = category_rtts_ms[i + 1] - category_rtts_ms[i];
        let w_hi = (rtt_ms - category_rtts_ms[i]) / span;
        (i, 1.0 - w_hi, w_hi)
    }

    /// Drop probability applied to a packet with the given RTT annotation.
    pub fn blended_probability(&self, rtt_ms: f64) -> f64 {
        let (i, w_lo, w_hi) = Self::blend_weights(&self.cfg.category_rtts_ms, rtt_ms);
        w_lo * self.categories[i].p + w_hi * self.categories[i + 1].p
    }

    fn update_category(&mut self, idx: usize, backlog_now: usize, _now: SimTime) {
        let n = self.flows.active().max(1) as f64;
        let gain = self.cfg.k0 * n.ln();
        let target = self.cfg.qlen_target_pkts;
        let prev_p = if idx > 0 {
            self.categories[idx - 1].p
        } else {
            0.0
        };

        let cat = &mut self.categories[idx];
        let qmin = cat.take_window_min(backlog_now) as f64;
        let error = qmin - target;
        let delta = error - cat.prev_error;
        let e_norm = (error / target).clamp(-1.0, 1.0);
        let de_norm = (delta * self.sf_delta).clamp(-1.0, 1.0);
        let u = self.flc.evaluate(e_norm, de_norm);

        cat.p = (cat.p + u * gain * cat.output_multiplier).clamp(0.0, 1.0);
        if idx > 0 {
            cat.p = cat.p * (1.0 - cat.alpha) + prev_p * cat.alpha;
        }
        cat.prev_error = error;
    }
}

impl Aqm for FuzzyRttAqm {
    fn name(&self) -> &'static str {
        "fuzzyrtt"
    }

    fn enqueue_verdict(
        &mut self,
        pkt: &Packet,
        _backlog_pkts: usize,
        now: SimTime,
        rng: &mut dyn RngCore,
    ) -> Verdict {
        debug_assert!(!pkt.is_ack && pkt.rtt_annotation_ms > 0.0);
        self.flows.record(pkt.flow_id, now);
        let p = self.blended_probability(pkt.rtt_annotation_ms);
        if p > 0.0 && rng.random::<f64>() < p {
            if pkt.ecn_capable {
                Verdict::Mark
            } else {
                Verdict::Drop
            }
        } else {
            Verdict::Forward
        }
    }

    fn observe_backlog(&mut self, backlog_pkts: usize, _now: SimTime) {
        for cat in &mut self.categories {
            cat.observe(backlog_pkts);
        }
    }

    fn timer_periods(&self) -> Vec<SimTime> {
        self.categories
            .iter()
            .map(|c| SimTime::from_millis_f64(c.rtt_ms))
            .collect()
    }

    fn on_timer(&mut self, timer_idx: usize, backlog_pkts: usize, now: SimTime) {
        self.update_category(timer_idx, backlog_pkts, now);
    }

    fn set_active_flows(&mut self, n: usize) {
        if let FlowCounter::Exact(count) = &mut self.flows {
            *count = n;
        }
    }

    fn probabilities(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (slot, cat) in out.iter_mut().zip(&self.categories) {
            *slot = cat.p;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_aqm(qlen_target: f64) -> FuzzyRttAqm {
        FuzzyRttAqm::new(FuzzyRttConfig::new(qlen_target, 536, 10_000_000))
    }

    #[test]
    fn window_minimum_tracks_samples() {
        let mut aqm = test_aqm(20.0);
        for backlog in [5, 2, 7] {
            aqm.observe_backlog(backlog, SimTime::ZERO);
        }
        assert_eq!(aqm.categories[0].qlen_min, Some(2));
    }

    #[test]
    fn empty_window_uses_instantaneous_backlog() {
        let mut aqm = test_aqm(20.0);
        aqm.set_active_flows(4);
        // No observations: the update reads the backlog at the update
        // instant. backlog == target keeps the error at zero, and a zero
        // first delta keeps the probability unchanged.
        aqm.set_category_probability(0, 0.25);
        aqm.on_timer(0, 20, SimTime::from_millis(40));
        assert!((aqm.categories[0].p - 0.25).abs() < 1e-12);
        assert_eq!(aqm.categories[0].prev_error, 0.0);
    }

    #[test]
    fn zero_backlog_window_min_is_zero() {
        let mut aqm = test_aqm(20.0);
        aqm.observe_backlog(3, SimTime::ZERO);
        aqm.observe_backlog(0, SimTime::ZERO);
        assert_eq!(aqm.categories[0].qlen_min, Some(0));
    }

    #[test]
    fn zero_error_is_a_fixed_point_before_propagation() {
        let mut aqm = test_aqm(20.0);
        aqm.set_active_flows(8);
        aqm.set_category_probability(0, 0.1);
        aqm.observe_backlog(20, SimTime::ZERO);
        aqm.on_timer(0, 20, SimTime::from_millis(40));
        assert!((aqm.categories[0].p - 0.1).abs() < 1e-12);
    }

    #[test]
    fn propagation_blends_toward_faster_neighbor() {
        let mut aqm = test_aqm(20.0);
        aqm.set_active_flows(4);
        aqm.set_category_probability(0, 0.2);
        aqm.set_category_probability(1, 0.1);
        // Zero error and zero delta: only the propagation step acts.
        aqm.observe_backlog(20, SimTime::ZERO);
        aqm.on_timer(1, 20, SimTime::from_millis(80));
        let expected = 0.1 * 0.998 + 0.2 * 0.002;
        assert!(
            (aqm.categories[1].p - expected).abs() < 1e-12,
            "got {}",
            aqm.categories[1].p
        );
    }

    #[test]
    fn propagation_fixed_point_when_neighbors_agree() {
        let mut aqm = test_aqm(20.0);
        aqm.set_active_flows(4);
        aqm.set_category_probability(0, 0.3);
        aqm.set_category_probability(1, 0.3);
        aqm.observe_backlog(20, SimTime::ZERO);
        aqm.on_timer(1, 20, SimTime::from_millis(80));
        assert!((aqm.categories[1].p - 0.3).abs() < 1e-12);
    }

    #[test]
    fn delta_scaling_matches_line_rate() {
        let aqm = test_aqm(23.0);
        assert!((aqm.sf_delta() - 0.04288).abs() < 1e-12);
    }

    #[test]
    fn blend_weights_quarter_between_second_and_third() {
        let (i, w_lo, w_hi) =
            FuzzyRttAqm::blend_weights(&DEFAULT_CATEGORY_RTTS_MS, 100.0);
        assert_eq!(i, 1);
        assert_eq!(w_lo, 0.75);
        assert_eq!(w_hi, 0.25);
    }

    #[test]
    fn boundary_rtts_select_pure_categories() {
        let mut aqm = test_aqm(20.0);
        for (idx, p) in [(0, 0.11), (1, 0.23), (2, 0.37), (3, 0.53), (4, 0.71)] {
            aqm.set_category_probability(idx, p);
        }
        for (rtt, expected) in [
            (40.0, 0.11),
            (80.0, 0.23),
            (160.0, 0.37),
            (320.0, 0.53),
            (640.0, 0.71),
        ] {
            assert_eq!(aqm.blended_probability(rtt), expected, "rtt {rtt}");
        }
        // Below the first and beyond the last band.
        assert_eq!(aqm.blended_probability(10.0), 0.11);
        assert_eq!(aqm.blended_probability(700.0), 0.71);
    }

    #[test]
    fn quarter_blend_probability() {
        let mut aqm = test_aqm(20.0);
        aqm.set_category_probability(1, 0.2);
        aqm.set_category_probability(2, 0.6);
        let p = aqm.blended_probability(100.0);
        assert!((p - (0.75 * 0.2 + 0.25 * 0.6)).abs() < 1e-15);
    }

    #[test]
    fn zero_flow_count_freezes_probabilities() {
        let mut aqm = test_aqm(10.0);
        aqm.set_active_flows(0);
        aqm.set_category_probability(0, 0.4);
        // Saturated positive error, but ln(max(N,1)) = 0 kills the gain.
        aqm.observe_backlog(100, SimTime::ZERO);
        aqm.on_timer(0, 100, SimTime::from_millis(40));
        assert!((aqm.categories[0].p - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_link_drives_probabilities_to_zero() {
        let mut aqm = test_aqm(20.0);
        aqm.set_active_flows(10);
        for (idx, p) in [(0, 0.9), (1, 0.5), (2, 0.3), (3, 0.2), (4, 0.1)] {
            aqm.set_category_probability(idx, p);
        }
        let mut now = SimTime::ZERO;
        for _ in 0..4000 {
            now += SimTime::from_millis(40);
            aqm.observe_backlog(0, now);
            for idx in 0..5 {
                aqm.on_timer(idx, 0, now);
            }
        }
        for cat in aqm.categories() {
            assert!(cat.p < 1e-9, "category {} stuck at {}", cat.rtt_ms, cat.p);
        }
    }

    #[test]
    fn verdict_marks_capable_and_drops_the_rest() {
        let mut aqm = test_aqm(20.0);
        aqm.set_category_probability(0, 1.0);
        for idx in 1..5 {
            aqm.set_category_probability(idx, 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let capable = Packet::data(0, 0, 576, true, 100.0);
        let plain = Packet::data(1, 0, 576, false, 100.0);
        assert_eq!(
            aqm.enqueue_verdict(&capable, 5, SimTime::ZERO, &mut rng),
            Verdict::Mark
        );
        assert_eq!(
            aqm.enqueue_verdict(&plain, 5, SimTime::ZERO, &mut rng),
            Verdict::Drop
        );
    }

    #[test]
    fn windowed_flow_counter_tracks_distinct_ids() {
        let mut cfg = FuzzyRttConfig::new(20.0, 536, 10_000_000);
        cfg.flow_count_mode = FlowCountMode::Windowed(SimTime::from_secs(1));
        let mut aqm = FuzzyRttAqm::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for flow in 0..6 {
            let pkt = Packet::data(flow, 0, 576, true, 80.0);
            aqm.enqueue_verdict(&pkt, 1, SimTime::from_millis(10 * flow as u64), &mut rng);
        }
        assert_eq!(aqm.flows.active(), 6);
        // Next epoch starts fresh but reports the completed epoch's count.
        let pkt = Packet::data(9, 0, 576, true, 80.0);
        aqm.enqueue_verdict(&pkt, 1, SimTime::from_millis(1100), &mut rng);
        assert_eq!(aqm.flows.active(), 6);
    }

    proptest! {
        #[test]
        fn probabilities_stay_in_unit_interval(
            trace in proptest::collection::vec((0usize..200, 0usize..5), 1..400),
            seed in 0u64..,
        ) {
            let mut aqm = test_aqm(23.3);
            aqm.set_active_flows((seed % 40) as usize);
            let mut now = SimTime::ZERO;
            for (backlog, cat) in trace {
                now += SimTime::from_millis(7);
                aqm.observe_backlog(backlog, now);
                aqm.on_timer(cat, backlog, now);
                for c in aqm.categories() {
                    prop_assert!((0.0..=1.0).contains(&c.p));
                }
            }
        }

        #[test]
        fn blend_weights_are_convex(rtt in 40.0f64..640.0) {
            let (i, w_lo, w_hi) = FuzzyRttAqm::blend_weights(&DEFAULT_CATEGORY_RTTS_MS, rtt);
            prop_assert!(i < 4);
            prop_assert!((0.0..=1.0).contains(&w_lo));
            prop_assert!((0.0..=1.0).contains(&w_hi));
            prop_assert!((w_lo + w_hi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blended_probability_monotone_when_categories_ordered() {
        let mut decreasing = test_aqm(20.0);
        for (idx, p) in [(0, 0.5), (1, 0.4), (2, 0.3), (3, 0.2), (4, 0.1)] {
            decreasing.set_category_probability(idx, p);
        }
        let mut prev = f64::INFINITY;
        for step in 0..=600 {
            let rtt = 40.0 + step as f64;
            let p = decreasing.blended_probability(rtt);
            assert!(p <= prev + 1e-15, "not antitone at rtt {rtt}");
            prev = p;
        }
    }
}
