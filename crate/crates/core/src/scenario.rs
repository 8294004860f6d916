//! Declarative mission description loaded from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::{self, AlgorithmId, DeviceProfile};
use crate::netsim::{NetConditions, RadioProfile, WiredProfile};
use crate::offload::PolicyConfig;
use crate::txflow::contracts::{HospitalRecord, Point, RescueTeamRecord, Urgency};
use crate::txflow::LedgerConfig;

pub const PAPER_BASELINE: &str = "paper-baseline";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn centered(c: Point, w: f64, h: f64) -> Self {
        Rect { x0: c.0 - w / 2.0, y0: c.1 - h / 2.0, x1: c.0 + w / 2.0, y1: c.1 + h / 2.0 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Closed on all sides.
    pub fn contains(&self, p: Point) -> bool {
        p.0 >= self.x0 && p.0 <= self.x1 && p.1 >= self.y0 && p.1 <= self.y1
    }

    pub fn contains_rect(&self, r: &Rect) -> bool {
        r.x0 >= self.x0 && r.x1 <= self.x1 && r.y0 >= self.y0 && r.y1 <= self.y1
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) && self.x1 > self.x0 && self.y1 > self.y0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSpec {
    #[serde(default = "jetson")]
    pub profile: String,
    #[serde(default = "jetson_mode")]
    pub mode: String,
    #[serde(default = "yolo3")]
    pub algorithm: AlgorithmId,
}

impl Default for LeaderSpec {
    fn default() -> Self {
        LeaderSpec { profile: jetson(), mode: jetson_mode(), algorithm: yolo3() }
    }
}

fn jetson() -> String {
    "jetson-xavier-nx".into()
}

fn jetson_mode() -> String {
    device::JETSON_10W_4C.into()
}

fn yolo3() -> AlgorithmId {
    AlgorithmId::YoloV3Tiny
}

fn intel_up() -> String {
    "intel-up-squared".into()
}

fn intel_mode() -> String {
    device::INTEL_UP_MODE.into()
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default)]
    pub leader: LeaderSpec,
    #[serde(default = "four")]
    pub small_drones: usize,
    #[serde(default = "intel_up")]
    pub small_profile: String,
    #[serde(default = "intel_mode")]
    pub small_mode: String,
    pub sub_area: Rect,
    /// Where the leader hovers; the sub-area centre when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimNeeds {
    pub urgency: Urgency,
    pub required_specialists: Vec<String>,
    pub required_capabilities: BTreeSet<String>,
}

impl Default for VictimNeeds {
    fn default() -> Self {
        VictimNeeds {
            urgency: Urgency::Urgent,
            required_specialists: vec!["medic".into()],
            required_capabilities: ["emergency_rooms".to_string()].into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimDef {
    pub position: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needs: Option<VictimNeeds>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimsSpec {
    pub list: Vec<VictimDef>,
    /// Additional victims placed uniformly over the area from the "victims" stream.
    pub random_count: usize,
    pub needs: VictimNeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub at_s: f64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoatSpec {
    pub position: Point,
    /// Waypoints the boat reaches at the given times; linear in between.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub track: Vec<TrackPoint>,
}

impl BoatSpec {
    pub fn position_at(&self, t_s: f64) -> Point {
        let mut prev = TrackPoint { at_s: 0.0, position: self.position };
        for p in &self.track {
            if t_s <= p.at_s {
                let span = p.at_s - prev.at_s;
                if span <= 0.0 {
                    return p.position;
                }
                let f = (t_s - prev.at_s) / span;
                return (
                    prev.position.0 + f * (p.position.0 - prev.position.0),
                    prev.position.1 + f * (p.position.1 - prev.position.1),
                );
            }
            prev = *p;
        }
        prev.position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSpec {
    pub small: RadioProfile,
    pub big: RadioProfile,
    pub edge: RadioProfile,
}

impl Default for RadioSpec {
    fn default() -> Self {
        RadioSpec {
            small: RadioProfile::measured(1000.0),
            big: RadioProfile::measured(5000.0),
            edge: RadioProfile::measured(5000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultState {
    Up,
    Down,
}

/// A link (two node names) or a single node changes state at `at_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub state: FaultState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyBy {
    Leader,
    SmallDrone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetParams {
    pub capture_interval_ms: u64,
    pub frame_bytes: u64,
    pub altitude_m: f64,
    pub camera_hfov_deg: f64,
    /// Footprint height over width.
    pub camera_aspect: f64,
    pub small_speed_mps: f64,
    pub big_speed_mps: f64,
    pub false_positive_rate: f64,
    pub verification_boost: f64,
    pub verify_by: VerifyBy,
    pub small_storage_bytes: u64,
    pub leader_storage_bytes: u64,
    pub small_battery_j: f64,
    pub big_battery_j: f64,
    pub small_hover_w: f64,
    pub big_hover_w: f64,
    pub low_battery_fraction: f64,
    pub turnaround_s: f64,
    pub status_interval_s: f64,
    pub update_payload_bytes: u64,
    pub urgent_payload_bytes: u64,
    pub query_interval_s: f64,
    pub team_busy_s: f64,
    /// Leader waits this long for relay acceptances before choosing one.
    pub relay_window_ms: u64,
}

impl Default for FleetParams {
    fn default() -> Self {
        FleetParams {
            capture_interval_ms: 1000,
            frame_bytes: crate::netsim::DEFAULT_FRAME_BYTES,
            altitude_m: 50.0,
            camera_hfov_deg: 60.0,
            camera_aspect: 0.75,
            small_speed_mps: 10.0,
            big_speed_mps: 15.0,
            false_positive_rate: 0.02,
            verification_boost: 0.10,
            verify_by: VerifyBy::Leader,
            small_storage_bytes: 32_000_000_000,
            leader_storage_bytes: 256_000_000_000,
            small_battery_j: 5.5 * 14.8 * 3600.0,
            big_battery_j: device::BIG_HOVER_W * device::BIG_ENDURANCE_S,
            small_hover_w: device::SMALL_HOVER_W,
            big_hover_w: device::BIG_HOVER_W,
            low_battery_fraction: device::LOW_BATTERY_FRACTION,
            turnaround_s: 60.0,
            status_interval_s: 120.0,
            update_payload_bytes: 4_000_000,
            urgent_payload_bytes: 500_000,
            query_interval_s: 60.0,
            team_busy_s: 300.0,
            relay_window_ms: 50,
        }
    }
}

impl FleetParams {
    /// Ground footprint `(width, height)` of one frame.
    pub fn footprint(&self) -> (f64, f64) {
        let w = 2.0 * self.altitude_m * (self.camera_hfov_deg.to_radians() / 2.0).tan();
        (w, w * self.camera_aspect)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractSeed {
    pub teams: Vec<RescueTeamRecord>,
    pub hospitals: Vec<HospitalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "custom")]
    pub name: String,
    #[serde(default = "one")]
    pub master_seed: u64,
    #[serde(default = "six_hundred")]
    pub duration_s: f64,
    /// Time after the mission ends for drones to fly home and the ledger to settle.
    #[serde(default = "three_hundred")]
    pub end_grace_s: f64,
    pub area: Rect,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gateways: Vec<GatewaySpec>,
    #[serde(default)]
    pub victims: VictimsSpec,
    pub boat: BoatSpec,
    #[serde(default)]
    pub radio: RadioSpec,
    #[serde(default)]
    pub wired: WiredProfile,
    #[serde(default)]
    pub conditions: NetConditions,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fault_schedule: Vec<FaultSpec>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub fleet: FleetParams,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub contracts: ContractSeed,
    /// Extra device profiles, referenced by `board_name`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<DeviceProfile>,
}

fn custom() -> String {
    "custom".into()
}

fn one() -> u64 {
    1
}

fn six_hundred() -> f64 {
    600.0
}

fn three_hundred() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| classify(text, &e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// A path, or the name of a bundled scenario.
    pub fn load(path_or_name: &str) -> Result<Scenario, ScenarioError> {
        if let Some(s) = Scenario::bundled(path_or_name) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(Path::new(path_or_name))
            .map_err(|e| ScenarioError::Io { path: path_or_name.to_string(), reason: e.to_string() })?;
        Scenario::from_toml(&text)
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        (name == PAPER_BASELINE).then(Scenario::paper_baseline)
    }

    /// One cluster of four small drones and a leader over a 1 km square,
    /// 3 orderers and 3 peers on the boat.
    pub fn paper_baseline() -> Scenario {
        let area = Rect::new(0.0, 0.0, 1000.0, 1000.0);
        let team = |id: &str, at: Point, specialists: &[&str]| RescueTeamRecord {
            team_id: id.into(),
            location: at,
            specialists: specialists.iter().map(|s| s.to_string()).collect(),
            available: true,
            assigned_victim: None,
            archive_refs: vec![],
        };
        let hospital = |id: &str, at: Point, caps: &[&str]| HospitalRecord {
            hospital_id: id.into(),
            location: at,
            capabilities: caps.iter().map(|s| s.to_string()).collect(),
        };
        Scenario {
            name: PAPER_BASELINE.into(),
            master_seed: 1,
            duration_s: 600.0,
            end_grace_s: 300.0,
            area,
            clusters: vec![ClusterSpec {
                leader: LeaderSpec::default(),
                small_drones: 4,
                small_profile: intel_up(),
                small_mode: intel_mode(),
                sub_area: area,
                station: None,
            }],
            gateways: vec![],
            victims: VictimsSpec {
                list: vec![
                    VictimDef { position: (130.0, 420.0), needs: None },
                    VictimDef { position: (610.0, 180.0), needs: None },
                    VictimDef { position: (870.0, 760.0), needs: None },
                ],
                random_count: 3,
                needs: VictimNeeds::default(),
            },
            boat: BoatSpec { position: (500.0, -300.0), track: vec![] },
            radio: RadioSpec::default(),
            wired: WiredProfile::default(),
            conditions: NetConditions::default(),
            fault_schedule: vec![],
            policy: PolicyConfig::default(),
            fleet: FleetParams::default(),
            ledger: LedgerConfig::default(),
            contracts: ContractSeed {
                teams: vec![
                    team("team-alpha", (200.0, -400.0), &["medic", "diver"]),
                    team("team-bravo", (800.0, -400.0), &["medic"]),
                    team("team-charlie", (500.0, 1500.0), &["medic", "climber"]),
                ],
                hospitals: vec![
                    hospital("hospital-coast", (0.0, -2000.0), &["emergency_rooms"]),
                    hospital("hospital-city", (3000.0, -3000.0), &["emergency_rooms", "laboratories", "blood_suppliers"]),
                ],
            },
            profiles: vec![],
        }
    }

    /// Built-in profiles plus the scenario's own, by board name.
    pub fn profile(&self, name: &str) -> Option<DeviceProfile> {
        if let Some(p) = self.profiles.iter().find(|p| p.board_name == name) {
            return Some(p.clone());
        }
        match name {
            "intel-up-squared" => Some(device::intel_up_squared()),
            "jetson-xavier-nx" => Some(device::jetson_xavier_nx()),
            _ => None,
        }
    }

    pub fn end_time_s(&self) -> f64 {
        self.duration_s + self.end_grace_s
    }

    pub fn node_names(&self) -> Vec<String> {
        let mut v = vec!["edge".to_string()];
        for (c, spec) in self.clusters.iter().enumerate() {
            v.push(leader_name(c));
            v.extend((0..spec.small_drones).map(|i| small_name(c, i)));
        }
        v.extend((0..self.gateways.len()).map(gateway_name));
        v.extend((1..=self.ledger.orderers).map(|i| format!("orderer{i}")));
        v.extend((1..=self.ledger.peers).map(|i| format!("peer{i}")));
        v
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::SchemaViolation(m));
        if !self.area.is_valid() {
            return bad("area must be a non-empty rectangle".into());
        }
        if !(self.duration_s > 0.0) || !(self.end_grace_s >= 0.0) {
            return bad("duration_s must be positive and end_grace_s non-negative".into());
        }
        if self.clusters.is_empty() {
            return bad("at least one cluster is required".into());
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.small_drones == 0 {
                return bad(format!("cluster {i}: small_drones must be at least 1"));
            }
            if !c.sub_area.is_valid() || !self.area.contains_rect(&c.sub_area) {
                return bad(format!("cluster {i}: sub_area must lie within area"));
            }
            let Some(lp) = self.profile(&c.leader.profile) else {
                return bad(format!("cluster {i}: unknown profile `{}`", c.leader.profile));
            };
            if lp.entry(&c.leader.algorithm, &c.leader.mode).is_err() {
                return bad(format!("cluster {i}: {} has no {} in mode `{}`", lp.board_name, c.leader.algorithm, c.leader.mode));
            }
            let Some(sp) = self.profile(&c.small_profile) else {
                return bad(format!("cluster {i}: unknown profile `{}`", c.small_profile));
            };
            if sp.algorithms(&c.small_mode).is_empty() {
                return bad(format!("cluster {i}: {} has no algorithms in mode `{}`", sp.board_name, c.small_mode));
            }
        }
        for p in &self.profiles {
            p.validate().map_err(|e| ScenarioError::SchemaViolation(format!("profile {}: {e}", p.board_name)))?;
        }
        for r in [&self.radio.small, &self.radio.big, &self.radio.edge] {
            if r.validate().is_err() {
                return bad("invalid radio profile".into());
            }
        }
        for v in &self.victims.list {
            if !self.area.contains(v.position) {
                return bad(format!("victim at {:?} lies outside the area", v.position));
            }
        }
        let f = &self.fleet;
        let positive = [f.altitude_m, f.camera_aspect, f.small_speed_mps, f.big_speed_mps, f.small_battery_j, f.big_battery_j];
        if f.capture_interval_ms == 0 || f.frame_bytes == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return bad("fleet rates, sizes, speeds and batteries must be positive".into());
        }
        if !(f.camera_hfov_deg > 0.0 && f.camera_hfov_deg < 180.0) {
            return bad("camera_hfov_deg must be in (0, 180)".into());
        }
        if !(0.0..=1.0).contains(&f.false_positive_rate) || !(0.0..=1.0).contains(&f.verification_boost) {
            return bad("false_positive_rate and verification_boost must be in [0, 1]".into());
        }
        if !(f.low_battery_fraction > 0.0 && f.low_battery_fraction < 1.0) {
            return bad("low_battery_fraction must be in (0, 1)".into());
        }
        if f.status_interval_s <= 0.0 || f.query_interval_s <= 0.0 || f.team_busy_s <= 0.0 || f.turnaround_s < 0.0 {
            return bad("fleet intervals must be positive".into());
        }
        self.ledger.validate().map_err(ScenarioError::SchemaViolation)?;
        let names: BTreeSet<String> = self.node_names().into_iter().collect();
        for fs in &self.fault_schedule {
            if !(fs.at_s >= 0.0) {
                return bad("fault times must be non-negative".into());
            }
            let refs: Vec<&String> = match (&fs.link, &fs.node) {
                (Some(l), None) if l[0] != l[1] => l.iter().collect(),
                (None, Some(n)) => vec![n],
                _ => return bad("a fault names either a link of two distinct nodes or one node".into()),
            };
            for r in refs {
                if !names.contains(r) {
                    return bad(format!("fault references unknown node `{r}`"));
                }
            }
        }
        let seed = crate::txflow::SeedData {
            drones: vec![],
            teams: self.contracts.teams.clone(),
            hospitals: self.contracts.hospitals.clone(),
        };
        seed.validate().map_err(ScenarioError::SchemaViolation)?;
        Ok(())
    }
}

pub fn leader_name(cluster: usize) -> String {
    format!("leader-{cluster}")
}

pub fn small_name(cluster: usize, i: usize) -> String {
    format!("small-{cluster}-{i}")
}

pub fn gateway_name(i: usize) -> String {
    format!("gateway-{i}")
}

fn classify(text: &str, e: &toml::de::Error) -> ScenarioError {
    let msg = e.message().to_string();
    let schema = ["unknown field", "missing field", "invalid type", "unknown variant", "invalid value", "invalid length"];
    if schema.iter().any(|s| msg.contains(s)) {
        return ScenarioError::SchemaViolation(msg);
    }
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    ScenarioError::ParseError { line, reason: msg }
}
