//! Experiment descriptions: a line-oriented `key = value` format, flow
//! sizing for the three congestion levels, and deterministic resolution of
//! per-flow RTTs and start/stop times from the scenario seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::aqm::FlowCountMode;
use crate::packet::HEADER_BYTES;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}`: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("missing required key `{key}`")]
    MissingKey { key: &'static str },
    #[error("`{field}`: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AqmKind {
    FuzzyRtt,
    Red,
    Codel,
    None,
}

impl AqmKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AqmKind::FuzzyRtt => "fuzzyrtt",
            AqmKind::Red => "red",
            AqmKind::Codel => "codel",
            AqmKind::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CongestionLevel {
    Light,
    Medium,
    Heavy,
}

impl CongestionLevel {
    /// Target loss (congestion-notification) ratio for the level.
    pub fn target_loss(&self) -> f64 {
        match self {
            CongestionLevel::Light => 0.001,
            CongestionLevel::Medium => 0.005,
            CongestionLevel::Heavy => 0.01,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CongestionLevel::Light => "light",
            CongestionLevel::Medium => "medium",
            CongestionLevel::Heavy => "heavy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CongestionSpec {
    Level(CongestionLevel),
    ExplicitFlows(usize),
}

impl CongestionSpec {
    pub fn as_str(&self) -> &'static str {
        match self {
            CongestionSpec::Level(l) => l.as_str(),
            CongestionSpec::ExplicitFlows(_) => "explicit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RttSpec {
    Explicit(Vec<f64>),
    UniformCategories,
    LogNormal { median_ms: f64, sigma: f64 },
}

impl RttSpec {
    pub fn as_str(&self) -> &'static str {
        match self {
            RttSpec::Explicit(_) => "explicit",
            RttSpec::UniformCategories => "uniform",
            RttSpec::LogNormal { .. } => "lognormal",
        }
    }
}

/// A batch of flows sharing a start window and an optional stop window.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGroup {
    pub flows: usize,
    pub start_s: (f64, f64),
    pub stop_s: Option<(f64, f64)>,
}

/// Declarative experiment description. `resolve` turns it into concrete
/// per-flow parameters; everything random is drawn from streams derived
/// from the mandatory seed.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub bottleneck_bw_bps: u64,
    pub bottleneck_delay_ms: f64,
    pub access_bw_factor: f64,
    pub mss_bytes: u32,
    pub target_delay_ms: f64,
    pub qlen_target_override_pkts: Option<f64>,
    pub aqm: AqmKind,
    pub ecn: bool,
    pub rtt_spec: RttSpec,
    pub congestion: CongestionSpec,
    pub duration_s: f64,
    pub seed: u64,
    pub warmup_frac: f64,
    pub k0: f64,
    pub alphas: [f64; 4],
    pub category_rtts_ms: [f64; 5],
    pub flow_count_mode: FlowCountMode,
    pub start_jitter_s: f64,
    pub groups: Vec<FlowGroup>,
    pub red_max_p: f64,
    pub red_wq: f64,
    pub codel_target_ms: f64,
    pub codel_interval_ms: f64,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            name: "scenario".to_string(),
            bottleneck_bw_bps: 10_000_000,
            bottleneck_delay_ms: 1.0,
            access_bw_factor: 10.0,
            mss_bytes: 536,
            target_delay_ms: 10.0,
            qlen_target_override_pkts: None,
            aqm: AqmKind::FuzzyRtt,
            ecn: true,
            rtt_spec: RttSpec::UniformCategories,
            congestion: CongestionSpec::Level(CongestionLevel::Light),
            duration_s: 120.0,
            seed: 1,
            warmup_frac: 0.2,
            k0: crate::aqm::FuzzyRttAqm::DEFAULT_K0_GAIN,
            alphas: [0.002, 0.004, 0.012, 0.024],
            category_rtts_ms: [40.0, 80.0, 160.0, 320.0, 640.0],
            flow_count_mode: FlowCountMode::Exact,
            start_jitter_s: 2.0,
            groups: Vec::new(),
            red_max_p: 0.1,
            red_wq: 0.002,
            codel_target_ms: 5.0,
            codel_interval_ms: 100.0,
        }
    }
}

/// Flow count for a congestion level: size flows so the shared bottleneck
/// settles near the level's loss ratio, using the square-root throughput
/// model B(rtt) = (MSS*8/rtt) * sqrt(3 / (2 p)).
pub fn size_flow_count(
    level: CongestionLevel,
    bandwidth_bps: u64,
    rtts_ms: &[f64],
    mss_bytes: u32,
) -> usize {
    assert!(bandwidth_bps > 0 && !rtts_ms.is_empty());
    let p = level.target_loss();
    let factor = (3.0 / (2.0 * p)).sqrt();
    let mean_rate: f64 = rtts_ms
        .iter()
        .map(|&rtt_ms| mss_bytes as f64 * 8.0 / (rtt_ms / 1000.0) * factor)
        .sum::<f64>()
        / rtts_ms.len() as f64;
    ((bandwidth_bps as f64 / mean_rate).round() as usize).max(2)
}

/// Fully resolved per-flow parameters.
#[derive(Clone, Debug)]
pub struct FlowSpec {
    pub rtt_ms: f64,
    pub start: SimTime,
    pub stop: Option<SimTime>,
}

#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub flows: Vec<FlowSpec>,
    /// Bottleneck buffer: bandwidth-delay product at the mean flow RTT,
    /// in MSS-sized packets.
    pub bottleneck_capacity_pkts: usize,
    /// Queue-length target in MSS-sized packets (10 ms of line rate unless
    /// overridden).
    pub qlen_target_pkts: f64,
    pub mtu_bytes: u32,
    pub access_bw_bps: u64,
    pub duration: SimTime,
    pub warmup: SimTime,
}

impl Scenario {
    /// Parses the line-oriented `key = value` format. `#` starts a comment;
    /// blank lines are ignored; `group` may repeat.
    pub fn parse_str(text: &str, default_name: &str) -> Result<Scenario, ConfigError> {
        let mut s = Scenario {
            name: default_name.to_string(),
            ..Scenario::default()
        };
        let mut saw = Saw::default();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::InvalidValue {
                line: line_no,
                key: line.to_string(),
                msg: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            apply_key(&mut s, &mut saw, key, value, line_no)?;
        }

        if !saw.bottleneck_bw {
            return Err(ConfigError::MissingKey { key: "bottleneck_bw" });
        }
        if !saw.seed {
            return Err(ConfigError::MissingKey { key: "seed" });
        }
        if !saw.duration {
            return Err(ConfigError::MissingKey { key: "duration_s" });
        }
        if !saw.ecn {
            s.ecn = s.aqm != AqmKind::Codel && s.aqm != AqmKind::None;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bottleneck_bw_bps == 0 {
            return Err(invalid("bottleneck_bw", "must be positive"));
        }
        if self.bottleneck_delay_ms <= 0.0 {
            return Err(invalid("bottleneck_delay_ms", "must be positive"));
        }
        if self.access_bw_factor < 1.0 {
            return Err(invalid("access_bw_factor", "must be at least 1"));
        }
        if self.mss_bytes == 0 {
            return Err(invalid("mss", "must be positive"));
        }
        if self.target_delay_ms <= 0.0 {
            return Err(invalid("target_delay_ms", "must be positive"));
        }
        if self.duration_s <= 0.0 {
            return Err(invalid("duration_s", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(invalid("warmup_frac", "must be in [0, 1)"));
        }
        if self.aqm == AqmKind::Codel && self.ecn {
            return Err(invalid(
                "ecn",
                "codel is drop-only; marking would defeat its delay control",
            ));
        }
        if !self.category_rtts_ms.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("category_rtts_ms", "must be strictly increasing"));
        }
        if let CongestionSpec::ExplicitFlows(n) = self.congestion {
            if n == 0 {
                return Err(invalid("flows", "at least one flow is required"));
            }
        }
        if let RttSpec::Explicit(rtts) = &self.rtt_spec {
            if rtts.is_empty() {
                return Err(invalid("rtts_ms", "at least one RTT is required"));
            }
            let floor = 2.0 * self.bottleneck_delay_ms;
            if let Some(bad) = rtts.iter().find(|&&r| r <= floor) {
                return Err(invalid(
                    "rtts_ms",
                    format!("RTT {bad} ms is not above twice the bottleneck delay ({floor} ms)"),
                ));
            }
        }
        if let RttSpec::LogNormal { median_ms, sigma } = self.rtt_spec {
            if median_ms <= 0.0 || sigma <= 0.0 {
                return Err(invalid("lognormal", "median and sigma must be positive"));
            }
        }
        for g in &self.groups {
            if g.flows == 0 {
                return Err(invalid("group", "group flow count must be positive"));
            }
            if g.start_s.1 < g.start_s.0 || g.start_s.0 < 0.0 {
                return Err(invalid("group", "invalid start window"));
            }
            if let Some((lo, hi)) = g.stop_s {
                if hi < lo || lo < g.start_s.1 {
                    return Err(invalid("group", "stop window must follow the start window"));
                }
            }
        }
        Ok(())
    }

    /// Queue-length target in packets: 10 ms (or the configured target
    /// delay) worth of MSS-sized packets at line rate.
    pub fn qlen_target_pkts(&self) -> f64 {
        self.qlen_target_override_pkts.unwrap_or_else(|| {
            self.bottleneck_bw_bps as f64 * (self.target_delay_ms / 1000.0)
                / (8.0 * self.mss_bytes as f64)
        })
    }

    /// Resolves flow counts, RTTs, and start/stop schedules.
    pub fn resolve(&self) -> Result<ResolvedScenario, ConfigError> {
        self.validate()?;
        let mut rtt_rng = stream_rng(self.seed, streams::RTT);
        let mut start_rng = stream_rng(self.seed, streams::START);

        let flow_count = self.flow_count(stream_rng(self.seed, streams::SIZING))?;
        let rtts = self.draw_rtts(flow_count, &mut rtt_rng);

        // Start/stop schedule.
        let mut flows = Vec::with_capacity(flow_count);
        if self.groups.is_empty() {
            for rtt_ms in rtts {
                let start = start_rng.random_range(0.0..=self.start_jitter_s.max(0.0));
                flows.push(FlowSpec {
                    rtt_ms,
                    start: SimTime::from_secs_f64(start),
                    stop: None,
                });
            }
        } else {
            let total: usize = self.groups.iter().map(|g| g.flows).sum();
            debug_assert_eq!(total, flow_count);
            let mut idx = 0;
            for g in &self.groups {
                for _ in 0..g.flows {
                    let start = start_rng.random_range(g.start_s.0..=g.start_s.1);
                    let stop = g
                        .stop_s
                        .map(|(lo, hi)| SimTime::from_secs_f64(start_rng.random_range(lo..=hi)));
                    flows.push(FlowSpec {
                        rtt_ms: rtts[idx],
                        start: SimTime::from_secs_f64(start),
                        stop,
                    });
                    idx += 1;
                }
            }
        }

        let mean_rtt_ms = flows.iter().map(|f| f.rtt_ms).sum::<f64>() / flows.len() as f64;
        let capacity = ((self.bottleneck_bw_bps as f64 * (mean_rtt_ms / 1000.0)
            / (8.0 * self.mss_bytes as f64))
            .floor() as usize)
            .max(1);

        let duration = SimTime::from_secs_f64(self.duration_s);
        Ok(ResolvedScenario {
            flows,
            bottleneck_capacity_pkts: capacity,
            qlen_target_pkts: self.qlen_target_pkts(),
            mtu_bytes: self.mss_bytes + HEADER_BYTES,
            access_bw_bps: (self.bottleneck_bw_bps as f64 * self.access_bw_factor) as u64,
            duration,
            warmup: SimTime::from_secs_f64(self.duration_s * self.warmup_frac),
            scenario: self.clone(),
        })
    }

    fn flow_count(&self, mut sizing_rng: ChaCha8Rng) -> Result<usize, ConfigError> {
        if !self.groups.is_empty() {
            return Ok(self.groups.iter().map(|g| g.flows).sum());
        }
        match self.congestion {
            CongestionSpec::ExplicitFlows(n) => Ok(n),
            CongestionSpec::Level(level) => {
                let sample: Vec<f64> = match &self.rtt_spec {
                    RttSpec::Explicit(rtts) => rtts.clone(),
                    RttSpec::UniformCategories => self.category_rtts_ms.to_vec(),
                    RttSpec::LogNormal { median_ms, sigma } => {
                        // A fixed pilot sample stands in for the distribution
                        // mean; deterministic per seed.
                        let dist = LogNormal::new(median_ms.ln(), *sigma)
                            .map_err(|e| invalid("lognormal", e.to_string()))?;
                        (0..512).map(|_| dist.sample(&mut sizing_rng)).collect()
                    }
                };
                Ok(size_flow_count(
                    level,
                    self.bottleneck_bw_bps,
                    &sample,
                    self.mss_bytes,
                ))
            }
        }
    }

    fn draw_rtts(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let floor = 2.0 * self.bottleneck_delay_ms + 0.5;
        match &self.rtt_spec {
            RttSpec::Explicit(rtts) => (0..n).map(|i| rtts[i % rtts.len()]).collect(),
            RttSpec::UniformCategories => {
                // Cycle the categories; jitter each draw within its band,
                // bounded by the midpoints to the neighboring categories.
                let cats = &self.category_rtts_ms;
                let mut edges = [0.0; 6];
                edges[0] = cats[0] - (cats[1] - cats[0]) / 2.0;
                for i in 1..5 {
                    edges[i] = (cats[i - 1] + cats[i]) / 2.0;
                }
                edges[5] = cats[4] + (cats[4] - cats[3]) / 2.0;
                (0..n)
                    .map(|i| {
                        let c = i % 5;
                        rng.random_range(edges[c]..edges[c + 1]).max(floor)
                    })
                    .collect()
            }
            RttSpec::LogNormal { median_ms, sigma } => {
                let dist = LogNormal::new(median_ms.ln(), *sigma).expect("validated");
                (0..n).map(|_| dist.sample(rng).max(floor)).collect()
            }
        }
    }
}

mod streams {
    pub const RTT: u64 = 1;
    pub const START: u64 = 2;
    pub const AQM: u64 = 3;
    pub const SIZING: u64 = 4;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The verdict-draw stream handed to the simulation.
pub fn aqm_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, streams::AQM)
}

#[derive(Default)]
struct Saw {
    bottleneck_bw: bool,
    seed: bool,
    duration: bool,
    ecn: bool,
    flows: bool,
    congestion: bool,
}

fn apply_key(
    s: &mut Scenario,
    saw: &mut Saw,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let bad = |msg: &str| ConfigError::InvalidValue {
        line,
        key: key.to_string(),
        msg: msg.to_string(),
    };
    let parse_f64 = |v: &str| -> Result<f64, ConfigError> {
        v.parse::<f64>().map_err(|_| bad("expected a number"))
    };
    match key {
        "name" => s.name = value.to_string(),
        "bottleneck_bw" => {
            s.bottleneck_bw_bps = parse_rate(value).ok_or_else(|| {
                bad("expected bits/s, optionally suffixed kbps/Mbps/Gbps")
            })?;
            saw.bottleneck_bw = true;
        }
        "bottleneck_delay_ms" => s.bottleneck_delay_ms = parse_f64(value)?,
        "access_bw_factor" => s.access_bw_factor = parse_f64(value)?,
        "mss" => {
            s.mss_bytes = value.parse().map_err(|_| bad("expected an integer"))?;
        }
        "target_delay_ms" => s.target_delay_ms = parse_f64(value)?,
        "qlen_target_pkts" => s.qlen_target_override_pkts = Some(parse_f64(value)?),
        "aqm" => {
            s.aqm = match value {
                "fuzzyrtt" => AqmKind::FuzzyRtt,
                "red" => AqmKind::Red,
                "codel" => AqmKind::Codel,
                "none" => AqmKind::None,
                _ => return Err(bad("expected fuzzyrtt, red, codel, or none")),
            };
        }
        "ecn" => {
            s.ecn = match value {
                "true" => true,
                "false" => false,
                _ => return Err(bad("expected true or false")),
            };
            saw.ecn = true;
        }
        "rtt_spec" => {
            s.rtt_spec = match value {
                "uniform" => RttSpec::UniformCategories,
                "lognormal" => RttSpec::LogNormal {
                    median_ms: 149.0,
                    sigma: 1.5f64.ln(),
                },
                "explicit" => RttSpec::Explicit(Vec::new()),
                _ => return Err(bad("expected uniform, lognormal, or explicit")),
            };
        }
        "rtts_ms" => {
            let rtts = parse_list(value).ok_or_else(|| bad("expected comma-separated numbers"))?;
            s.rtt_spec = RttSpec::Explicit(rtts);
        }
        "lognormal_median_ms" => {
            let median_ms = parse_f64(value)?;
            s.rtt_spec = match s.rtt_spec {
                RttSpec::LogNormal { sigma, .. } => RttSpec::LogNormal { median_ms, sigma },
                _ => RttSpec::LogNormal {
                    median_ms,
                    sigma: 1.5f64.ln(),
                },
            };
        }
        "lognormal_sigma" => {
            let sigma = parse_f64(value)?;
            s.rtt_spec = match s.rtt_spec {
                RttSpec::LogNormal { median_ms, .. } => RttSpec::LogNormal { median_ms, sigma },
                _ => RttSpec::LogNormal {
                    median_ms: 149.0,
                    sigma,
                },
            };
        }
        "congestion" => {
            if saw.flows {
                return Err(bad("`congestion` conflicts with explicit `flows`"));
            }
            s.congestion = CongestionSpec::Level(match value {
                "light" => CongestionLevel::Light,
                "medium" => CongestionLevel::Medium,
                "heavy" => CongestionLevel::Heavy,
                _ => return Err(bad("expected light, medium, or heavy")),
            });
            saw.congestion = true;
        }
        "flows" => {
            if saw.congestion {
                return Err(bad("`flows` conflicts with `congestion`"));
            }
            let n: usize = value.parse().map_err(|_| bad("expected an integer"))?;
            s.congestion = CongestionSpec::ExplicitFlows(n);
            saw.flows = true;
        }
        "duration_s" => {
            s.duration_s = parse_f64(value)?;
            saw.duration = true;
        }
        "seed" => {
            s.seed = value.parse().map_err(|_| bad("expected an integer"))?;
            saw.seed = true;
        }
        "warmup_frac" => s.warmup_frac = parse_f64(value)?,
        "k0" => s.k0 = parse_f64(value)?,
        "alpha" => {
            let v = parse_list(value).ok_or_else(|| bad("expected comma-separated numbers"))?;
            if v.len() != 4 {
                return Err(bad("expected 4 values (categories 2..5)"));
            }
            s.alphas = [v[0], v[1], v[2], v[3]];
        }
        "category_rtts_ms" => {
            let v = parse_list(value).ok_or_else(|| bad("expected comma-separated numbers"))?;
            if v.len() != 5 {
                return Err(bad("expected 5 values"));
            }
            s.category_rtts_ms = [v[0], v[1], v[2], v[3], v[4]];
        }
        "flow_count_mode" => {
            s.flow_count_mode = match value {
                "exact" => FlowCountMode::Exact,
                "windowed" => FlowCountMode::Windowed(SimTime::from_secs(1)),
                _ => return Err(bad("expected exact or windowed")),
            };
        }
        "start_jitter_s" => s.start_jitter_s = parse_f64(value)?,
        "group" => {
            let v = parse_list(value).ok_or_else(|| bad("expected comma-separated numbers"))?;
            let g = match v.len() {
                3 => FlowGroup {
                    flows: v[0] as usize,
                    start_s: (v[1], v[2]),
                    stop_s: None,
                },
                5 => FlowGroup {
                    flows: v[0] as usize,
                    start_s: (v[1], v[2]),
                    stop_s: Some((v[3], v[4])),
                },
                _ => return Err(bad("expected `count,start_lo,start_hi[,stop_lo,stop_hi]`")),
            };
            s.groups.push(g);
        }
        "red_max_p" => s.red_max_p = parse_f64(value)?,
        "red_wq" => s.red_wq = parse_f64(value)?,
        "codel_target_ms" => s.codel_target_ms = parse_f64(value)?,
        "codel_interval_ms" => s.codel_interval_ms = parse_f64(value)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

fn parse_list(value: &str) -> Option<Vec<f64>> {
    value
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok())
        .collect()
}

fn parse_rate(value: &str) -> Option<u64> {
    let v = value.trim();
    let lower = v.to_ascii_lowercase();
    let (num, mult) = if let Some(stripped) = lower.strip_suffix("gbps") {
        (stripped, 1_000_000_000.0)
    } else if let Some(stripped) = lower.strip_suffix("mbps") {
        (stripped, 1_000_000.0)
    } else if let Some(stripped) = lower.strip_suffix("kbps") {
        (stripped, 1_000.0)
    } else if let Some(stripped) = lower.strip_suffix("bps") {
        (stripped, 1.0)
    } else {
        (lower.as_str(), 1.0)
    };
    let x: f64 = num.trim().parse().ok()?;
    if x <= 0.0 {
        return None;
    }
    Some((x * mult).round() as u64)
}
