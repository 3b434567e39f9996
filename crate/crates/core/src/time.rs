//! Simulation time as integer nanoseconds.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// A point in (or span of) simulated time, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nanos(pub u64);

impl Nanos {
    pub const ZERO: Nanos = Nanos(0);
    pub const MAX: Nanos = Nanos(u64::MAX);

    pub fn from_secs_f64(secs: f64) -> Nanos {
        Nanos((secs * 1e9).round().max(0.0) as u64)
    }

    pub fn from_millis(ms: u64) -> Nanos {
        Nanos(ms * 1_000_000)
    }

    pub fn from_micros(us: u64) -> Nanos {
        Nanos(us * 1_000)
    }

    pub fn from_secs(s: u64) -> Nanos {
        Nanos(s * 1_000_000_000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: Nanos) -> Nanos {
        Nanos(self.0.saturating_sub(other.0))
    }

    /// Time needed to serialize `bits` onto a channel of `bps` bits per second,
    /// rounded up to the next nanosecond.
    pub fn serialization(bits: u64, bps: u64) -> Nanos {
        debug_assert!(bps > 0);
        let num = bits as u128 * 1_000_000_000u128;
        Nanos(num.div_ceil(bps as u128) as u64)
    }
}

impl Add for Nanos {
    type Output = Nanos;
    fn add(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 + rhs.0)
    }
}

impl AddAssign for Nanos {
    fn add_assign(&mut self, rhs: Nanos) {
        self.0 += rhs.0;
    }
}

impl Sub for Nanos {
    type Output = Nanos;
    fn sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 - rhs.0)
    }
}

impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_rounds_up() {
        assert_eq!(Nanos::serialization(1000, 1_000_000), Nanos::from_millis(1));
        assert_eq!(Nanos::serialization(1, 3_000_000_000), Nanos(1));
        assert_eq!(Nanos::serialization(512, 10_000_000), Nanos(51_200));
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(Nanos::from_secs_f64(0.0002), Nanos(200_000));
        assert!((Nanos(1_500_000_000).as_secs_f64() - 1.5).abs() < 1e-12);
    }
}
