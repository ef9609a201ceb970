//! Per-flow and per-link statistics collection and summarization.

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("throughput list is empty")]
    EmptyInput,
    #[error("all throughputs are zero")]
    AllZero,
    #[error("negative throughput")]
    Negative,
    #[error("measurement window is empty (warmup >= duration)")]
    EmptyWindow,
}

/// Jain's fairness index: the squared sum over n times the sum of squares.
/// 1 means perfectly equal shares; 1/n means a single flow takes all.
pub fn jain_index(throughputs: &[f64]) -> Result<f64, MetricsError> {
    if throughputs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if throughputs.iter().any(|&x| x < 0.0) {
        return Err(MetricsError::Negative);
    }
    let sum: f64 = throughputs.iter().sum();
    if sum == 0.0 {
        return Err(MetricsError::AllZero);
    }
    let sum_sq: f64 = throughputs.iter().map(|&x| x * x).sum();
    Ok(sum * sum / (throughputs.len() as f64 * sum_sq))
}

/// Full-run per-flow statistics.
#[derive(Clone, Debug)]
pub struct FlowStats {
    pub flow_id: usize,
    pub bytes_delivered: u64,
    pub packets_sent: u64,
    pub packets_dropped: u64,
    pub packets_marked: u64,
    /// Over the measurement window.
    pub goodput_bps: f64,
}

/// One 10 ms time-series sample of the bottleneck. The cumulative fields
/// support windowed post-processing (phase statistics in transient runs)
/// and are not part of the CSV schema.
#[derive(Clone, Debug)]
pub struct SeriesPoint {
    pub time_s: f64,
    pub backlog_pkts: usize,
    pub probabilities: [f64; 5],
    /// Busy fraction of the bottleneck within this bin.
    pub utilization: f64,
    pub cum_sent: u64,
    pub cum_dropped: u64,
    pub cum_marked: u64,
    pub cum_sojourn_ms_sum: f64,
    pub cum_sojourn_count: u64,
}

/// Measurement-window aggregates of a finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub jain: f64,
    pub goodputs_bps: Vec<f64>,
    pub utilization_mean: f64,
    pub utilization_std: f64,
    pub sojourn_mean_ms: f64,
    pub sojourn_std_ms: f64,
    /// Dropped data packets over sent, within the window.
    pub loss_ratio: f64,
    /// Marked data packets over sent, within the window.
    pub mark_ratio: f64,
    /// Drops plus marks over sent: the congestion-notification ratio that
    /// the flow-sizing model targets (marks replace drops under ECN).
    pub signal_ratio: f64,
    pub packets_sent: u64,
    pub packets_dropped: u64,
    pub packets_marked: u64,
    pub mean_backlog_pkts: f64,
    pub departures: u64,
    pub window_s: f64,
}

#[derive(Clone, Debug, Default)]
struct Snapshot {
    time: SimTime,
    delivered_bytes: Vec<u64>,
    sent: u64,
    dropped: u64,
    marked: u64,
    backlog_integral: f64,
}

/// Accumulates counters during a run. Owned by one simulation instance;
/// summarization afterwards is pure.
pub struct Collector {
    warmup: SimTime,
    // Per-flow, full run.
    sent: Vec<u64>,
    dropped: Vec<u64>,
    marked: Vec<u64>,
    delivered_bytes: Vec<u64>,
    arrived: Vec<u64>,
    // Bottleneck aggregates.
    sojourn_sum_ms: f64,
    sojourn_sq_ms: f64,
    sojourn_count: u64,
    cum_sojourn_ms_sum: f64,
    cum_sojourn_count: u64,
    util_sum: f64,
    util_sq: f64,
    util_bins: u64,
    backlog_integral_pkt_s: f64,
    last_backlog_change: SimTime,
    cur_backlog: usize,
    departures_in_window: u64,
    snapshot: Option<Snapshot>,
    series: Vec<SeriesPoint>,
}

impl Collector {
    pub fn new(n_flows: usize, warmup: SimTime) -> Collector {
        Collector {
            warmup,
            sent: vec![0; n_flows],
            dropped: vec![0; n_flows],
            marked: vec![0; n_flows],
            delivered_bytes: vec![0; n_flows],
            arrived: vec![0; n_flows],
            sojourn_sum_ms: 0.0,
            sojourn_sq_ms: 0.0,
            sojourn_count: 0,
            cum_sojourn_ms_sum: 0.0,
            cum_sojourn_count: 0,
            util_sum: 0.0,
            util_sq: 0.0,
            util_bins: 0,
            backlog_integral_pkt_s: 0.0,
            last_backlog_change: SimTime::ZERO,
            cur_backlog: 0,
            departures_in_window: 0,
            snapshot: None,
            series: Vec::new(),
        }
    }

    pub fn warmup(&self) -> SimTime {
        self.warmup
    }

    pub fn record_sent(&mut self, flow: usize) {
        self.sent[flow] += 1;
    }

    pub fn record_drop(&mut self, flow: usize) {
        self.dropped[flow] += 1;
    }

    pub fn record_mark(&mut self, flow: usize) {
        self.marked[flow] += 1;
    }

    pub fn record_arrival(&mut self, flow: usize, cumulative_delivered_bytes: u64) {
        self.arrived[flow] += 1;
        self.delivered_bytes[flow] = cumulative_delivered_bytes;
    }

    pub fn record_sojourn(&mut self, sojourn: SimTime, now: SimTime) {
        let ms = sojourn.as_millis_f64();
        self.cum_sojourn_ms_sum += ms;
        self.cum_sojourn_count += 1;
        if now >= self.warmup {
            self.sojourn_sum_ms += ms;
            self.sojourn_sq_ms += ms * ms;
            self.sojourn_count += 1;
        }
    }

    pub fn record_departure(&mut self, now: SimTime) {
        if now >= self.warmup {
            self.departures_in_window += 1;
        }
    }

    /// Advances the bottleneck backlog integral to `now`, then records the
    /// new backlog.
    pub fn record_backlog(&mut self, backlog: usize, now: SimTime) {
        let dt = now.saturating_sub(self.last_backlog_change).as_secs_f64();
        self.backlog_integral_pkt_s += self.cur_backlog as f64 * dt;
        self.last_backlog_change = now;
        self.cur_backlog = backlog;
    }

    pub fn record_util_bin(&mut self, utilization: f64, now: SimTime) {
        if now >= self.warmup {
            self.util_sum += utilization;
            self.util_sq += utilization * utilization;
            self.util_bins += 1;
        }
    }

    pub fn push_series(&mut self, point: SeriesPoint) {
        self.series.push(point);
    }

    pub fn series(&self) -> &[SeriesPoint] {
        &self.series
    }

    pub fn totals(&self) -> (u64, u64, u64) {
        (
            self.sent.iter().sum(),
            self.dropped.iter().sum(),
            self.marked.iter().sum(),
        )
    }

    pub fn cumulative_sojourn(&self) -> (f64, u64) {
        (self.cum_sojourn_ms_sum, self.cum_sojourn_count)
    }

    /// Freezes counters at the warmup instant; everything reported by
    /// [`Collector::summarize`] measures from here.
    pub fn take_snapshot(&mut self, now: SimTime) {
        self.record_backlog(self.cur_backlog, now);
        let (sent, dropped, marked) = self.totals();
        self.snapshot = Some(Snapshot {
            time: now,
            delivered_bytes: self.delivered_bytes.clone(),
            sent,
            dropped,
            marked,
            backlog_integral: self.backlog_integral_pkt_s,
        });
    }

    /// Conservation audit: sent packets are delivered, dropped, or still in
    /// the network.
    pub fn conservation_holds(&self, in_network: &[i64]) -> bool {
        (0..self.sent.len()).all(|i| {
            self.sent[i] == self.arrived[i] + self.dropped[i] + in_network[i].max(0) as u64
                && in_network[i] >= 0
        })
    }

    pub fn flow_stats(&self, end: SimTime) -> Vec<FlowStats> {
        let snap = self.snapshot.as_ref();
        let window_s = snap
            .map(|s| end.saturating_sub(s.time).as_secs_f64())
            .unwrap_or_else(|| end.as_secs_f64());
        (0..self.sent.len())
            .map(|i| {
                let base = snap.map(|s| s.delivered_bytes[i]).unwrap_or(0);
                let delta = self.delivered_bytes[i].saturating_sub(base);
                FlowStats {
                    flow_id: i,
                    bytes_delivered: self.delivered_bytes[i],
                    packets_sent: self.sent[i],
                    packets_dropped: self.dropped[i],
                    packets_marked: self.marked[i],
                    goodput_bps: if window_s > 0.0 {
                        delta as f64 * 8.0 / window_s
                    } else {
                        0.0
                    },
                }
            })
            .collect()
    }

    /// Measurement-window summary over `[warmup, end]`.
    pub fn summarize(&mut self, end: SimTime) -> Result<RunSummary, MetricsError> {
        let snap = self.snapshot.clone().ok_or(MetricsError::EmptyWindow)?;
        if end <= snap.time {
            return Err(MetricsError::EmptyWindow);
        }
        self.record_backlog(self.cur_backlog, end);
        let window_s = (end - snap.time).as_secs_f64();

        let goodputs: Vec<f64> = self
            .delivered_bytes
            .iter()
            .zip(&snap.delivered_bytes)
            .map(|(&cur, &base)| cur.saturating_sub(base) as f64 * 8.0 / window_s)
            .collect();
        let jain = jain_index(&goodputs).unwrap_or(0.0);

        let (sent_total, dropped_total, marked_total) = self.totals();
        let sent = sent_total - snap.sent;
        let dropped = dropped_total - snap.dropped;
        let marked = marked_total - snap.marked;
        let ratio = |num: u64| if sent > 0 { num as f64 / sent as f64 } else { 0.0 };

        let (util_mean, util_std) = mean_std(self.util_sum, self.util_sq, self.util_bins);
        let (soj_mean, soj_std) = mean_std(self.sojourn_sum_ms, self.sojourn_sq_ms, self.sojourn_count);

        Ok(RunSummary {
            jain,
            goodputs_bps: goodputs,
            utilization_mean: util_mean,
            utilization_std: util_std,
            sojourn_mean_ms: soj_mean,
            sojourn_std_ms: soj_std,
            loss_ratio: ratio(dropped),
            mark_ratio: ratio(marked),
            signal_ratio: ratio(dropped + marked),
            packets_sent: sent,
            packets_dropped: dropped,
            packets_marked: marked,
            mean_backlog_pkts: (self.backlog_integral_pkt_s - snap.backlog_integral) / window_s,
            departures: self.departures_in_window,
            window_s,
        })
    }
}

fn mean_std(sum: f64, sum_sq: f64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, var.sqrt())
}
