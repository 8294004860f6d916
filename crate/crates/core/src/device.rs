//! Compute-board latency/power models and battery accounting.
//!
//! Board figures are the measured values for the Intel UP Squared (small
//! drone) and the Jetson Xavier NX (big drone). Per-frame latency is always
//! derived from the measured frame rate as `1000 / fps`; processing energy is
//! `active_power × per_frame_latency`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::energy::{Energy, PowerMw};
use crate::kernel::SimDuration;

/// Human-detection algorithm.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlgorithmId {
    HaarCascades,
    Hog,
    YoloV3Tiny,
    YoloV4Tiny,
    YoloV4,
    Custom(String),
}

impl AlgorithmId {
    pub fn as_str(&self) -> &str {
        match self {
            AlgorithmId::HaarCascades => "haar",
            AlgorithmId::Hog => "hog",
            AlgorithmId::YoloV3Tiny => "yolov3-tiny",
            AlgorithmId::YoloV4Tiny => "yolov4-tiny",
            AlgorithmId::YoloV4 => "yolov4",
            AlgorithmId::Custom(s) => s,
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "haar" | "haar-cascades" | "haarcascades" => AlgorithmId::HaarCascades,
            "hog" => AlgorithmId::Hog,
            "yolov3-tiny" => AlgorithmId::YoloV3Tiny,
            "yolov4-tiny" => AlgorithmId::YoloV4Tiny,
            "yolov4" => AlgorithmId::YoloV4,
            _ => AlgorithmId::Custom(s.to_string()),
        })
    }
}

impl Serialize for AlgorithmId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AlgorithmId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerMode {
    pub id: String,
    /// Nominal power budget; absent for boards without selectable modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_w: Option<f64>,
    pub cpu_cores: u32,
}

/// Measured behaviour of one algorithm in one power mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoEntry {
    pub algorithm: AlgorithmId,
    pub mode: String,
    pub fps: f64,
    pub active_power_mw: PowerMw,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub board_name: String,
    pub idle_power_mw: PowerMw,
    pub modes: Vec<PowerMode>,
    pub default_mode: String,
    pub entries: Vec<AlgoEntry>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("no entry for {algorithm} in mode `{mode}` on {board}")]
    NoEntry { board: String, algorithm: AlgorithmId, mode: String },
    #[error("steady power must be positive, got {0} W")]
    NonPositivePower(f64),
    #[error("invalid profile {board}: {reason}")]
    InvalidProfile { board: String, reason: String },
}

impl DeviceProfile {
    pub fn entry(&self, algorithm: &AlgorithmId, mode: &str) -> Result<&AlgoEntry, DeviceError> {
        self.entries
            .iter()
            .find(|e| &e.algorithm == algorithm && e.mode == mode)
            .ok_or_else(|| DeviceError::NoEntry {
                board: self.board_name.clone(),
                algorithm: algorithm.clone(),
                mode: mode.to_string(),
            })
    }

    pub fn has_mode(&self, mode: &str) -> bool {
        self.modes.iter().any(|m| m.id == mode)
    }

    /// Distinct algorithms available in `mode`, in table order.
    pub fn algorithms(&self, mode: &str) -> Vec<AlgorithmId> {
        self.entries.iter().filter(|e| e.mode == mode).map(|e| e.algorithm.clone()).collect()
    }

    /// Per-frame latency in milliseconds (`1000 / fps`).
    pub fn per_frame_latency_ms(&self, algorithm: &AlgorithmId, mode: &str) -> Result<f64, DeviceError> {
        Ok(1000.0 / self.entry(algorithm, mode)?.fps)
    }

    /// Per-frame latency rounded to the simulator's microsecond clock.
    pub fn per_frame_duration(&self, algorithm: &AlgorithmId, mode: &str) -> Result<SimDuration, DeviceError> {
        Ok(SimDuration::from_millis_f64(self.per_frame_latency_ms(algorithm, mode)?))
    }

    /// Energy to process one frame, in millijoules.
    pub fn processing_energy_mj(&self, algorithm: &AlgorithmId, mode: &str) -> Result<f64, DeviceError> {
        let e = self.entry(algorithm, mode)?;
        Ok(e.active_power_mw.0 as f64 * (1000.0 / e.fps) / 1000.0)
    }

    pub fn accuracy(&self, algorithm: &AlgorithmId, mode: &str) -> Result<f64, DeviceError> {
        Ok(self.entry(algorithm, mode)?.accuracy)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |reason: String| DeviceError::InvalidProfile { board: self.board_name.clone(), reason };
        if !self.has_mode(&self.default_mode) {
            return Err(bad(format!("default mode `{}` not among modes", self.default_mode)));
        }
        for m in &self.modes {
            if m.cpu_cores == 0 {
                return Err(bad(format!("mode `{}` has zero cores", m.id)));
            }
        }
        for e in &self.entries {
            if !(e.fps > 0.0) {
                return Err(bad(format!("{} fps must be positive", e.algorithm)));
            }
            if e.active_power_mw < self.idle_power_mw {
                return Err(bad(format!("{} active power below idle", e.algorithm)));
            }
            if !(0.0..=1.0).contains(&e.accuracy) {
                return Err(bad(format!("{} accuracy outside [0,1]", e.algorithm)));
            }
            if !self.has_mode(&e.mode) {
                return Err(bad(format!("{} references unknown mode `{}`", e.algorithm, e.mode)));
            }
        }
        Ok(())
    }
}

/// Battery state. Energy is tracked in integer nanojoules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity: Energy,
    pub remaining: Energy,
    pub low_threshold_fraction: f64,
    low_signalled: bool,
}

/// What happened during a [`Battery::drain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DrainOutcome {
    /// The remaining charge crossed the low threshold during this drain.
    pub low_battery: bool,
    /// The battery reached zero during this drain.
    pub depleted: bool,
    /// Requested energy that could not be supplied.
    pub shortfall: Energy,
}

impl Battery {
    pub fn new(capacity: Energy, low_threshold_fraction: f64) -> Self {
        assert!(low_threshold_fraction > 0.0 && low_threshold_fraction < 1.0);
        Battery { capacity, remaining: capacity, low_threshold_fraction, low_signalled: false }
    }

    /// Battery from a cell rating: `mAh × V` watt-hours.
    pub fn from_rating(mah: f64, volts: f64, low_threshold_fraction: f64) -> Self {
        let joules = mah / 1000.0 * volts * 3600.0;
        Battery::new(Energy::from_joules(joules), low_threshold_fraction)
    }

    pub fn remaining_mj(&self) -> f64 {
        self.remaining.as_mj()
    }

    pub fn fraction(&self) -> f64 {
        if self.capacity.0 == 0 {
            return 0.0;
        }
        self.remaining.0 as f64 / self.capacity.0 as f64
    }

    pub fn is_low(&self) -> bool {
        self.fraction() < self.low_threshold_fraction
    }

    pub fn is_depleted(&self) -> bool {
        self.remaining.0 == 0
    }

    fn threshold(&self) -> Energy {
        Energy((self.capacity.0 as f64 * self.low_threshold_fraction).round() as u64)
    }

    /// Removes `energy`, clamping at zero. The low-battery signal fires once
    /// per charge, on the drain that first takes the charge below the threshold.
    pub fn drain(&mut self, energy: Energy) -> DrainOutcome {
        let mut out = DrainOutcome::default();
        if energy.0 == 0 {
            return out;
        }
        let was_depleted = self.is_depleted();
        if energy > self.remaining {
            out.shortfall = energy - self.remaining;
            self.remaining = Energy::ZERO;
        } else {
            self.remaining = self.remaining - energy;
        }
        if !self.low_signalled && self.remaining < self.threshold() {
            self.low_signalled = true;
            out.low_battery = true;
        }
        out.depleted = !was_depleted && self.is_depleted();
        out
    }

    /// Swap in a full pack.
    pub fn recharge(&mut self) {
        self.remaining = self.capacity;
        self.low_signalled = false;
    }

    /// Seconds of operation left at a steady draw of `steady_power_w`.
    pub fn endurance_s(&self, steady_power_w: f64) -> Result<f64, DeviceError> {
        if !(steady_power_w > 0.0) {
            return Err(DeviceError::NonPositivePower(steady_power_w));
        }
        Ok(self.remaining_mj() / (steady_power_w * 1000.0))
    }
}

/// Where a node's energy comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerSupply {
    Battery(Battery),
    /// Supplied from the rescue boat; never runs out.
    Mains,
}

impl PowerSupply {
    pub fn endurance_s(&self, steady_power_w: f64) -> Result<f64, DeviceError> {
        match self {
            PowerSupply::Battery(b) => b.endurance_s(steady_power_w),
            PowerSupply::Mains if steady_power_w > 0.0 => Ok(f64::INFINITY),
            PowerSupply::Mains => Err(DeviceError::NonPositivePower(steady_power_w)),
        }
    }
}

/// Compute board plus airframe figures for one drone class.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneClass {
    pub board: DeviceProfile,
    pub hover_power: PowerMw,
    pub battery: Battery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultProfiles {
    pub small_drone: DroneClass,
    pub big_drone: DroneClass,
    pub edge: PowerSupply,
}

/// Assumed detection accuracies (no measured values exist for these boards).
pub fn default_accuracy(algorithm: &AlgorithmId) -> f64 {
    match algorithm {
        AlgorithmId::HaarCascades => 0.55,
        AlgorithmId::Hog => 0.65,
        AlgorithmId::YoloV3Tiny => 0.80,
        AlgorithmId::YoloV4Tiny => 0.85,
        AlgorithmId::YoloV4 => 0.92,
        AlgorithmId::Custom(_) => 0.5,
    }
}

pub const INTEL_UP_MODE: &str = "default";
pub const JETSON_10W_4C: &str = "10W-4c";
pub const JETSON_15W_4C: &str = "15W-4c";
pub const JETSON_15W_6C: &str = "15W-6c";

/// Intel UP Squared: single mode, idle 3100 mW.
pub fn intel_up_squared() -> DeviceProfile {
    let rows = [
        (AlgorithmId::HaarCascades, 3.7, 7710),
        (AlgorithmId::Hog, 3.3, 7790),
        (AlgorithmId::YoloV3Tiny, 1.4, 7840),
    ];
    DeviceProfile {
        board_name: "intel-up-squared".into(),
        idle_power_mw: PowerMw(3100),
        modes: vec![PowerMode { id: INTEL_UP_MODE.into(), budget_w: None, cpu_cores: 4 }],
        default_mode: INTEL_UP_MODE.into(),
        entries: rows
            .into_iter()
            .map(|(algorithm, fps, mw)| AlgoEntry {
                accuracy: default_accuracy(&algorithm),
                algorithm,
                mode: INTEL_UP_MODE.into(),
                fps,
                active_power_mw: PowerMw(mw),
            })
            .collect(),
    }
}

/// Jetson Xavier NX in its three measured modes, idle 4655 mW.
///
/// Power was only measured for YOLOv3-tiny (10W/4c: 13.11 W, 15W/6c:
/// 18.62 W); the same per-mode figure is used for every algorithm, and the
/// unmeasured 15W/4c mode takes the midpoint of the two.
pub fn jetson_xavier_nx() -> DeviceProfile {
    let modes = [(JETSON_10W_4C, 10.0, 4, 13_110), (JETSON_15W_4C, 15.0, 4, 15_865), (JETSON_15W_6C, 15.0, 6, 18_620)];
    let fps: [(AlgorithmId, [f64; 3]); 3] = [
        (AlgorithmId::YoloV3Tiny, [53.2, 61.8, 67.8]),
        (AlgorithmId::YoloV4Tiny, [48.3, 57.5, 61.3]),
        (AlgorithmId::YoloV4, [4.7, 4.7, 4.7]),
    ];
    let mut entries = Vec::new();
    for (algorithm, per_mode) in fps.iter() {
        for (i, (mode, _, _, mw)) in modes.iter().enumerate() {
            entries.push(AlgoEntry {
                algorithm: algorithm.clone(),
                mode: (*mode).into(),
                fps: per_mode[i],
                active_power_mw: PowerMw(*mw),
                accuracy: default_accuracy(algorithm),
            });
        }
    }
    DeviceProfile {
        board_name: "jetson-xavier-nx".into(),
        idle_power_mw: PowerMw(4655),
        modes: modes
            .iter()
            .map(|(id, w, cores, _)| PowerMode { id: (*id).into(), budget_w: Some(*w), cpu_cores: *cores })
            .collect(),
        default_mode: JETSON_10W_4C.into(),
        entries,
    }
}

pub const SMALL_HOVER_W: f64 = 300.0;
pub const BIG_HOVER_W: f64 = 1500.0;
pub const BIG_ENDURANCE_S: f64 = 1200.0;
pub const LOW_BATTERY_FRACTION: f64 = 0.2;

pub fn default_profiles() -> DefaultProfiles {
    DefaultProfiles {
        small_drone: DroneClass {
            board: intel_up_squared(),
            hover_power: PowerMw::from_watts(SMALL_HOVER_W),
            battery: Battery::from_rating(5500.0, 14.8, LOW_BATTERY_FRACTION),
        },
        big_drone: DroneClass {
            board: jetson_xavier_nx(),
            hover_power: PowerMw::from_watts(BIG_HOVER_W),
            battery: Battery::new(Energy::from_joules(BIG_HOVER_W * BIG_ENDURANCE_S), LOW_BATTERY_FRACTION),
        },
        edge: PowerSupply::Mains,
    }
}
