//! Integer energy and power units.
//!
//! Energy is kept in nanojoules so that `power_mW × duration_µs` is exact and
//! per-node books balance without rounding.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::kernel::SimDuration;

/// Electrical power in milliwatts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerMw(pub u64);

impl PowerMw {
    pub fn from_watts(w: f64) -> Self {
        PowerMw((w * 1000.0).round() as u64)
    }

    pub fn as_watts(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Energy drawn at this power over `d`.
    pub fn over(self, d: SimDuration) -> Energy {
        Energy(self.0 * d.as_micros())
    }
}

/// Energy in nanojoules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Energy(pub u64);

impl Energy {
    pub const ZERO: Energy = Energy(0);

    pub fn from_mj(mj: f64) -> Self {
        Energy((mj * 1e6).round().max(0.0) as u64)
    }

    pub fn from_joules(j: f64) -> Self {
        Energy((j * 1e9).round().max(0.0) as u64)
    }

    pub fn as_mj(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_joules(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, rhs: Energy) -> Energy {
        Energy(self.0.saturating_sub(rhs.0))
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl Sub for Energy {
    type Output = Energy;
    fn sub(self, rhs: Energy) -> Energy {
        Energy(self.0 - rhs.0)
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        iter.fold(Energy::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} mJ", self.as_mj())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_times_duration_is_exact() {
        let e = PowerMw(3250).over(SimDuration::from_millis(300));
        assert_eq!(e, Energy::from_mj(975.0));
        assert_eq!(PowerMw(3250).over(SimDuration::from_millis(200)).as_mj(), 650.0);
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(PowerMw::from_watts(18.62), PowerMw(18_620));
        assert_eq!(Energy::from_joules(1.0), Energy::from_mj(1000.0));
    }
}
