//! Simulation clock based on integer nanoseconds.
//!
//! All event times, delays, and intervals are integer tick counts so that
//! event ordering never depends on floating-point rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// A point in simulated time (or a span between two points), in integer
/// nanoseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> SimTime {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> SimTime {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> SimTime {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> SimTime {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest tick.
    pub fn from_secs_f64(s: f64) -> SimTime {
        debug_assert!(s >= 0.0 && s.is_finite());
        SimTime((s * 1e9).round() as u64)
    }

    /// Rounds to the nearest tick.
    pub fn from_millis_f64(ms: f64) -> SimTime {
        debug_assert!(ms >= 0.0 && ms.is_finite());
        SimTime((ms * 1e6).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    pub fn min(self, other: SimTime) -> SimTime {
        SimTime(self.0.min(other.0))
    }

    pub fn max(self, other: SimTime) -> SimTime {
        SimTime(self.0.max(other.0))
    }

    pub fn mul_u64(self, k: u64) -> SimTime {
        SimTime(self.0 * k)
    }

    /// Time to serialize `size_bytes` onto a link of `bandwidth_bps`,
    /// rounded to the nearest tick.
    pub fn serialization(size_bytes: u32, bandwidth_bps: u64) -> SimTime {
        assert!(bandwidth_bps > 0, "link bandwidth must be positive");
        let bits = size_bytes as u128 * 8;
        let ns = (bits * 1_000_000_000 + bandwidth_bps as u128 / 2) / bandwidth_bps as u128;
        SimTime(ns as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        debug_assert!(self.0 >= rhs.0, "SimTime subtraction underflow");
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}
