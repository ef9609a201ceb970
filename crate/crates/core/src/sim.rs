//! Dumbbell-topology simulation: links, routing, and the event loop.
//!
//! n senders feed a left router over per-flow access links; one bottleneck
//! link (the only congested element, with the AQM under test) carries data
//! to the right router, which delivers to the receivers. Acks return over
//! a reverse bottleneck and per-flow reverse access links, all lossless
//! and uncongested. Each flow's access delay is sized so its round-trip
//! propagation matches the configured RTT.

use rand_chacha::ChaCha8Rng;

use crate::aqm::{
    Aqm, CodelAqm, CodelConfig, FuzzyRttAqm, FuzzyRttConfig, NoAqm, RedAqm, RedConfig,
};
use crate::engine::EventQueue;
use crate::metrics::{Collector, SeriesPoint};
use crate::packet::{FlowId, Packet};
use crate::queue::{Admission, Queue};
use crate::scenario::{aqm_rng, AqmKind, ResolvedScenario};
use crate::tcp::{TcpFlow, TcpReceiver};
use crate::time::SimTime;

/// Cadence of the backlog/probability/utilization time series.
pub const SERIES_INTERVAL: SimTime = SimTime::from_millis(10);

#[derive(Clone, Copy, Debug)]
enum NextHop {
    /// Forward into another link's queue.
    Link(usize),
    /// Data packet reaches its receiver; the ack enters the reverse path.
    Deliver,
    /// Reverse bottleneck fans out to per-flow reverse access links.
    ReverseFanout,
    /// Ack reaches its sender.
    AckSender,
}

struct Link {
    bandwidth_bps: u64,
    delay: SimTime,
    queue: Queue,
    next_hop: NextHop,
    transmitting: Option<Packet>,
    tx_started: SimTime,
    busy_completed: SimTime,
}

impl Link {
    fn new(bandwidth_bps: u64, delay: SimTime, queue: Queue, next_hop: NextHop) -> Link {
        Link {
            bandwidth_bps,
            delay,
            queue,
            next_hop,
            transmitting: None,
            tx_started: SimTime::ZERO,
            busy_completed: SimTime::ZERO,
        }
    }

    /// Exact busy time accumulated up to `now`, including the transmission
    /// in progress.
    fn busy_integral_ns(&self, now: SimTime) -> u64 {
        let mut total = self.busy_completed.as_nanos();
        if self.transmitting.is_some() {
            total += now.saturating_sub(self.tx_started).as_nanos();
        }
        total
    }
}

#[derive(Debug)]
enum Event {
    Arrival { link: usize, pkt: Packet },
    TxDone { link: usize },
    FlowStart { flow: FlowId },
    FlowStop { flow: FlowId },
    Rto { flow: FlowId, generation: u64 },
    AqmTimer { timer: usize },
    Sample,
    WarmupSnapshot,
}

/// Static dumbbell geometry, derived from a resolved scenario.
#[derive(Clone, Debug)]
pub struct Dumbbell {
    pub flow_count: usize,
    /// One-way propagation delay of each flow's access link (applied on
    /// both the forward data path and the reverse ack path).
    pub access_one_way_delays: Vec<SimTime>,
    pub bottleneck_delay: SimTime,
    pub bottleneck_bw_bps: u64,
    pub access_bw_bps: u64,
    /// Buffer: bandwidth-delay product at the mean flow RTT, in packets.
    pub bottleneck_capacity_pkts: usize,
    pub qlen_target_pkts: f64,
}

/// Computes the dumbbell geometry: per-flow access delays with the delay
/// budget `(rtt - 2 * bottleneck_delay) / 2` on each access link, and the
/// bottleneck buffer sized to the bandwidth-delay product.
pub fn build_dumbbell(r: &ResolvedScenario) -> Dumbbell {
    assert!(!r.flows.is_empty(), "a dumbbell needs at least one flow");
    let s = &r.scenario;
    let access_one_way_delays = r
        .flows
        .iter()
        .map(|f| {
            assert!(
                f.rtt_ms > 2.0 * s.bottleneck_delay_ms,
                "flow RTT {} ms does not exceed twice the bottleneck delay",
                f.rtt_ms
            );
            SimTime::from_millis_f64((f.rtt_ms - 2.0 * s.bottleneck_delay_ms) / 2.0)
        })
        .collect();
    Dumbbell {
        flow_count: r.flows.len(),
        access_one_way_delays,
        bottleneck_delay: SimTime::from_millis_f64(s.bottleneck_delay_ms),
        bottleneck_bw_bps: s.bottleneck_bw_bps,
        access_bw_bps: r.access_bw_bps,
        bottleneck_capacity_pkts: r.bottleneck_capacity_pkts,
        qlen_target_pkts: r.qlen_target_pkts,
    }
}

fn build_aqm(r: &ResolvedScenario) -> Box<dyn Aqm> {
    let s = &r.scenario;
    match s.aqm {
        AqmKind::None => Box::new(NoAqm),
        AqmKind::FuzzyRtt => {
            let mut cfg = FuzzyRttConfig::new(r.qlen_target_pkts, s.mss_bytes, s.bottleneck_bw_bps);
            cfg.k0 = s.k0;
            cfg.alphas = s.alphas;
            cfg.category_rtts_ms = s.category_rtts_ms;
            cfg.flow_count_mode = s.flow_count_mode;
            Box::new(FuzzyRttAqm::new(cfg))
        }
        AqmKind::Red => {
            let mut cfg =
                RedConfig::from_target(r.qlen_target_pkts, r.mtu_bytes, s.bottleneck_bw_bps);
            cfg.max_p = s.red_max_p;
            cfg.w_q = s.red_wq;
            Box::new(RedAqm::new(cfg))
        }
        AqmKind::Codel => Box::new(CodelAqm::new(CodelConfig {
            target: SimTime::from_millis_f64(s.codel_target_ms),
            interval: SimTime::from_millis_f64(s.codel_interval_ms),
            mtu_bytes: r.mtu_bytes,
        })),
    }
}

pub struct Simulation {
    events: EventQueue<Event>,
    links: Vec<Link>,
    flows: Vec<TcpFlow>,
    receivers: Vec<TcpReceiver>,
    rto_gen: Vec<u64>,
    rto_armed: Vec<bool>,
    in_network: Vec<i64>,
    rng: ChaCha8Rng,
    collector: Collector,
    aqm_periods: Vec<SimTime>,
    duration: SimTime,
    bneck_fwd: usize,
    bneck_rev: usize,
    access_rev_base: usize,
    active_flows: usize,
    last_busy_ns: u64,
    dumbbell: Dumbbell,
}

impl Simulation {
    pub fn new(resolved: &ResolvedScenario) -> Simulation {
        let dumbbell = build_dumbbell(resolved);
        let s = &resolved.scenario;
        let n = dumbbell.flow_count;
        let bneck_fwd = n;
        let bneck_rev = n + 1;
        let access_rev_base = n + 2;

        let mut links = Vec::with_capacity(2 * n + 2);
        for delay in &dumbbell.access_one_way_delays {
            links.push(Link::new(
                dumbbell.access_bw_bps,
                *delay,
                Queue::new(usize::MAX, Box::new(NoAqm)),
                NextHop::Link(bneck_fwd),
            ));
        }
        links.push(Link::new(
            s.bottleneck_bw_bps,
            dumbbell.bottleneck_delay,
            Queue::new(dumbbell.bottleneck_capacity_pkts, build_aqm(resolved)),
            NextHop::Deliver,
        ));
        links.push(Link::new(
            s.bottleneck_bw_bps,
            dumbbell.bottleneck_delay,
            Queue::new(usize::MAX, Box::new(NoAqm)),
            NextHop::ReverseFanout,
        ));
        for delay in &dumbbell.access_one_way_delays {
            links.push(Link::new(
                dumbbell.access_bw_bps,
                *delay,
                Queue::new(usize::MAX, Box::new(NoAqm)),
                NextHop::AckSender,
            ));
        }

        let flows: Vec<TcpFlow> = resolved
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| TcpFlow::new(i, s.mss_bytes, SimTime::from_millis_f64(f.rtt_ms), s.ecn))
            .collect();
        let receivers = (0..n).map(TcpReceiver::new).collect();

        let mut events = EventQueue::new();
        for (i, f) in resolved.flows.iter().enumerate() {
            events.schedule(f.start, Event::FlowStart { flow: i });
            if let Some(stop) = f.stop {
                events.schedule(stop, Event::FlowStop { flow: i });
            }
        }
        let aqm_periods = links[bneck_fwd].queue.aqm().timer_periods();
        for (t, period) in aqm_periods.iter().enumerate() {
            events.schedule(*period, Event::AqmTimer { timer: t });
        }
        events.schedule(SERIES_INTERVAL, Event::Sample);
        events.schedule(resolved.warmup, Event::WarmupSnapshot);

        Simulation {
            events,
            links,
            flows,
            receivers,
            rto_gen: vec![0; n],
            rto_armed: vec![false; n],
            in_network: vec![0; n],
            rng: aqm_rng(s.seed),
            collector: Collector::new(n, resolved.warmup),
            aqm_periods,
            duration: resolved.duration,
            bneck_fwd,
            bneck_rev,
            access_rev_base,
            active_flows: 0,
            last_busy_ns: 0,
            dumbbell,
        }
    }

    pub fn dumbbell(&self) -> &Dumbbell {
        &self.dumbbell
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    pub fn collector_mut(&mut self) -> &mut Collector {
        &mut self.collector
    }

    pub fn flows(&self) -> &[TcpFlow] {
        &self.flows
    }

    pub fn receivers(&self) -> &[TcpReceiver] {
        &self.receivers
    }

    pub fn duration(&self) -> SimTime {
        self.duration
    }

    pub fn bottleneck_backlog(&self) -> usize {
        self.links[self.bneck_fwd].queue.len()
    }

    pub fn in_network(&self) -> &[i64] {
        &self.in_network
    }

    /// Runs the event loop to the configured duration.
    pub fn run(&mut self) {
        let limit = self.duration;
        self.run_to(limit);
    }

    /// Runs the event loop up to `limit`, which may exceed the configured
    /// duration (useful for draining in-flight traffic after sources stop).
    pub fn run_to(&mut self, limit: SimTime) {
        while let Some((now, ev)) = self.events.pop_until(limit) {
            self.handle(now, ev);
        }
    }

    fn handle(&mut self, now: SimTime, ev: Event) {
        match ev {
            Event::FlowStart { flow } => {
                self.flows[flow].active = true;
                self.active_flows += 1;
                let n = self.active_flows;
                self.links[self.bneck_fwd].queue.aqm_mut().set_active_flows(n);
                self.try_send(flow, now);
            }
            Event::FlowStop { flow } => {
                if self.flows[flow].active {
                    self.flows[flow].active = false;
                    self.active_flows -= 1;
                    let n = self.active_flows;
                    self.links[self.bneck_fwd].queue.aqm_mut().set_active_flows(n);
                }
                self.cancel_rto(flow);
            }
            Event::Arrival { link, pkt } => self.on_arrival(link, pkt, now),
            Event::TxDone { link } => self.on_tx_done(link, now),
            Event::Rto { flow, generation } => {
                if generation != self.rto_gen[flow] {
                    return;
                }
                self.rto_armed[flow] = false;
                if let Some(rtx) = self.flows[flow].on_timeout(now) {
                    self.dispatch_data(flow, rtx, now);
                    self.arm_rto(flow, now);
                }
            }
            Event::AqmTimer { timer } => {
                let backlog = self.links[self.bneck_fwd].queue.len();
                self.links[self.bneck_fwd]
                    .queue
                    .aqm_mut()
                    .on_timer(timer, backlog, now);
                self.events
                    .schedule(now + self.aqm_periods[timer], Event::AqmTimer { timer });
            }
            Event::Sample => self.on_sample(now),
            Event::WarmupSnapshot => self.collector.take_snapshot(now),
        }
        #[cfg(debug_assertions)]
        {
            // Work conservation: the bottleneck never idles with a backlog.
            let l = &self.links[self.bneck_fwd];
            debug_assert!(l.transmitting.is_some() || l.queue.is_empty());
        }
    }

    fn on_arrival(&mut self, link: usize, pkt: Packet, now: SimTime) {
        match self.links[link].next_hop {
            NextHop::Link(next) => self.enqueue_packet(next, pkt, now),
            NextHop::Deliver => {
                debug_assert!(!pkt.is_ack);
                let flow = pkt.flow_id;
                self.in_network[flow] -= 1;
                let ack = self.receivers[flow].on_data(&pkt);
                self.collector
                    .record_arrival(flow, self.receivers[flow].delivered_bytes);
                let rev = self.bneck_rev;
                self.enqueue_packet(rev, ack, now);
            }
            NextHop::ReverseFanout => {
                let idx = self.access_rev_base + pkt.flow_id;
                self.enqueue_packet(idx, pkt, now);
            }
            NextHop::AckSender => {
                debug_assert!(pkt.is_ack);
                let flow = pkt.flow_id;
                let outcome = self.flows[flow].on_ack(&pkt, now);
                if let Some(rtx) = outcome.retransmit {
                    self.dispatch_data(flow, rtx, now);
                }
                if outcome.new_data_acked {
                    if self.flows[flow].has_outstanding() {
                        self.arm_rto(flow, now);
                    } else {
                        self.cancel_rto(flow);
                    }
                }
                self.try_send(flow, now);
            }
        }
    }

    fn on_tx_done(&mut self, link: usize, now: SimTime) {
        let l = &mut self.links[link];
        let pkt = l.transmitting.take().expect("TxDone without a transmission");
        l.busy_completed += now - l.tx_started;
        let delay = l.delay;
        self.events.schedule(now + delay, Event::Arrival { link, pkt });
        self.try_start_tx(link, now);
    }

    fn enqueue_packet(&mut self, link: usize, pkt: Packet, now: SimTime) {
        let flow = pkt.flow_id;
        let is_ack = pkt.is_ack;
        let admission = self.links[link].queue.enqueue(pkt, now, &mut self.rng);
        match admission {
            Admission::Admitted => {}
            Admission::AdmittedMarked => {
                debug_assert!(!is_ack);
                self.collector.record_mark(flow);
            }
            Admission::Dropped => {
                debug_assert!(!is_ack, "the reverse path is lossless");
                self.collector.record_drop(flow);
                self.in_network[flow] -= 1;
            }
        }
        if link == self.bneck_fwd {
            let backlog = self.links[link].queue.len();
            self.collector.record_backlog(backlog, now);
        }
        self.try_start_tx(link, now);
    }

    fn try_start_tx(&mut self, link: usize, now: SimTime) {
        if self.links[link].transmitting.is_some() {
            return;
        }
        let is_bneck = link == self.bneck_fwd;
        let (head, head_drops) = self.links[link].queue.dequeue(now);
        for dropped in head_drops {
            debug_assert!(!dropped.is_ack);
            self.collector.record_drop(dropped.flow_id);
            self.in_network[dropped.flow_id] -= 1;
        }
        if is_bneck {
            let backlog = self.links[link].queue.len();
            self.collector.record_backlog(backlog, now);
        }
        if let Some((pkt, sojourn)) = head {
            if is_bneck {
                self.collector.record_sojourn(sojourn, now);
                self.collector.record_departure(now);
            }
            let ser = SimTime::serialization(pkt.size, self.links[link].bandwidth_bps);
            let l = &mut self.links[link];
            l.tx_started = now;
            l.transmitting = Some(pkt);
            self.events.schedule(now + ser, Event::TxDone { link });
        }
    }

    fn dispatch_data(&mut self, flow: FlowId, pkt: Packet, now: SimTime) {
        debug_assert!(!pkt.is_ack);
        self.collector.record_sent(flow);
        self.in_network[flow] += 1;
        if !self.rto_armed[flow] {
            self.arm_rto(flow, now);
        }
        self.enqueue_packet(flow, pkt, now);
    }

    fn try_send(&mut self, flow: FlowId, now: SimTime) {
        while self.flows[flow].can_send() {
            let pkt = self.flows[flow].emit_packet(now);
            self.dispatch_data(flow, pkt, now);
        }
    }

    fn arm_rto(&mut self, flow: FlowId, now: SimTime) {
        self.rto_gen[flow] += 1;
        self.rto_armed[flow] = true;
        let deadline = now + self.flows[flow].rto;
        self.events.schedule(
            deadline,
            Event::Rto {
                flow,
                generation: self.rto_gen[flow],
            },
        );
    }

    fn cancel_rto(&mut self, flow: FlowId) {
        self.rto_gen[flow] += 1;
        self.rto_armed[flow] = false;
    }

    fn on_sample(&mut self, now: SimTime) {
        let busy = self.links[self.bneck_fwd].busy_integral_ns(now);
        let utilization = (busy - self.last_busy_ns) as f64 / SERIES_INTERVAL.as_nanos() as f64;
        self.last_busy_ns = busy;
        self.collector.record_util_bin(utilization, now);

        let (cum_sent, cum_dropped, cum_marked) = self.collector.totals();
        let (cum_sojourn_ms_sum, cum_sojourn_count) = self.collector.cumulative_sojourn();
        let link = &self.links[self.bneck_fwd];
        let point = SeriesPoint {
            time_s: now.as_secs_f64(),
            backlog_pkts: link.queue.len(),
            probabilities: link.queue.aqm().probabilities(),
            utilization,
            cum_sent,
            cum_dropped,
            cum_marked,
            cum_sojourn_ms_sum,
            cum_sojourn_count,
        };
        self.collector.push_series(point);
        self.events.schedule(now + SERIES_INTERVAL, Event::Sample);

        #[cfg(debug_assertions)]
        debug_assert!(
            self.collector.conservation_holds(&self.in_network),
            "packet conservation violated at {now}"
        );
    }
}
