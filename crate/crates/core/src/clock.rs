//! Virtual time for the simulator.
//!
//! Time is an integer count of nanoseconds. It only ever advances by adding
//! durations, so event order never depends on floating point rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::Serialize;

const NANOS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: Self = Self(0);

    /// Rounds a non-negative number of seconds to the nearest nanosecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(secs >= 0.0 && secs.is_finite(), "virtual time must be finite and non-negative");
        Self((secs * NANOS_PER_SEC as f64).round() as u64)
    }

    pub fn from_secs(secs: u64) -> Self {
        Self(secs * NANOS_PER_SEC)
    }

    /// Parses a decimal seconds literal such as `12`, `0.25` or `3.000000001`
    /// exactly, without going through floating point.
    pub fn parse_decimal(text: &str) -> Option<Self> {
        let text = text.trim();
        let (int, frac) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int) || !all_digits(frac) || frac.len() > 9 {
            return None;
        }
        let secs: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let mut nanos = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            nanos += u64::from(b - b'0') * 10u64.pow(8 - i as u32);
        }
        secs.checked_mul(NANOS_PER_SEC)?.checked_add(nanos).map(Self)
    }

    pub fn as_secs_f64(self) -> f64 {
        (self.0 / NANOS_PER_SEC) as f64 + (self.0 % NANOS_PER_SEC) as f64 / NANOS_PER_SEC as f64
    }
}

impl fmt::Display for VirtualTime {
    /// Shortest exact decimal form in seconds.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.0 / NANOS_PER_SEC;
        let nanos = self.0 % NANOS_PER_SEC;
        if nanos == 0 {
            write!(f, "{secs}")
        } else {
            let frac = format!("{nanos:09}");
            write!(f, "{secs}.{}", frac.trim_end_matches('0'))
        }
    }
}

impl Add for VirtualTime {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl AddAssign for VirtualTime {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Sub for VirtualTime {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}
