//! Drone, gateway and edge-sink behaviour over one kernel timeline.
//!
//! Small drones sweep boustrophedon strips and capture one decision frame per
//! interval; the offload policy picks local detection, offload to the cluster
//! leader, storing or dropping. Leaders run first-pass detection, fly out to
//! verify positives and forward verified positives to the edge. When the
//! leader cannot reach the edge it offers the message to adjacent leaders and
//! hands it to the lowest-id acceptor; without one the message is queued and
//! delivered once a path returns or at the boat. Negative frames stay on the
//! drones until they land.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::device::{AlgorithmId, Battery, DeviceProfile};
use crate::energy::{Energy, PowerMw};
use crate::kernel::{Kernel, NodeId, RandomStreams, SimDuration, SimTime};
use crate::ledger::{ContractId, Digest};
use crate::netsim::{DeliveryOutcome, LinkKind, LinkState, NodeClass, Network, RadioProfile, MAX_DATAGRAM_BYTES};
use crate::offload::{decide, Action, Board, FrameContext, LocalSide, PolicyConfig, PolicyError, RemoteSide, RESULT_DATAGRAM_BYTES};
use crate::scenario::{self, BoatSpec, FaultState, FleetParams, Rect, Scenario, VerifyBy, VictimNeeds};
use crate::sim::SimEvent;
use crate::trace::{Stage, Trace, TraceEvent, Via};
use crate::txflow::contracts::{canonical_json, IdArgs, Point, ReportVictimArgs, UpdateDroneArgs};
use crate::txflow::{KernelHost, LedgerNet};

pub const DETECTION_STREAM: &str = "detection";
pub const VICTIM_STREAM: &str = "victims";
const RELAY_OFFER_BYTES: u32 = 1_000;
const RELAY_REPLY_BYTES: u32 = 200;
const STATUS_BYTES: u32 = 1_000;
const VERIFY_REQUEST_BYTES: u32 = 200;
const MAX_VERIFY_ACCURACY: f64 = 0.99;
/// Submissions per assignment request before a version conflict is left standing.
const MAX_ASSIGN_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    SmallDrone,
    BigDroneLeader,
    Gateway,
    EdgeSink,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::SmallDrone => "small_drone",
            NodeKind::BigDroneLeader => "leader",
            NodeKind::Gateway => "gateway",
            NodeKind::EdgeSink => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Flying,
    Returning,
    AtBoat,
    Depleted,
}

impl NodeStatus {
    fn airborne(self) -> bool {
        matches!(self, NodeStatus::Flying | NodeStatus::Returning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Storage {
    pub used_bytes: u64,
    pub capacity_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("storage full: {needed} bytes requested, {headroom} free")]
pub struct StorageFull {
    pub needed: u64,
    pub headroom: u64,
}

impl Storage {
    pub fn new(capacity_bytes: u64) -> Self {
        Storage { used_bytes: 0, capacity_bytes }
    }

    pub fn headroom(&self) -> u64 {
        self.capacity_bytes - self.used_bytes
    }

    pub fn store(&mut self, bytes: u64) -> Result<(), StorageFull> {
        if bytes > self.headroom() {
            return Err(StorageFull { needed: bytes, headroom: self.headroom() });
        }
        self.used_bytes += bytes;
        Ok(())
    }

    pub fn take_all(&mut self) -> u64 {
        std::mem::take(&mut self.used_bytes)
    }
}

/// Everything charged to one node, by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyBook {
    pub hover: Energy,
    pub processing: Energy,
    pub tx: Energy,
    pub idle_radio: Energy,
    /// Charges the battery could not supply.
    pub shortfall: Energy,
    pub initial: Energy,
    /// Energy added by battery swaps.
    pub recharged: Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyCategory {
    Hover,
    Processing,
    Tx,
    IdleRadio,
}

impl EnergyBook {
    pub fn charged(&self) -> Energy {
        self.hover + self.processing + self.tx + self.idle_radio
    }

    /// Battery drop equals the charges it supplied.
    pub fn balances(&self, remaining: Energy) -> bool {
        self.initial.0 + self.recharged.0 - remaining.0 + self.shortfall.0 == self.charged().0
    }
}

/// Ground rectangle split into `drones` equal strips along x.
pub fn strips(area: Rect, drones: usize) -> Vec<Rect> {
    let n = drones.max(1);
    let w = area.width() / n as f64;
    (0..n)
        .map(|i| {
            let x0 = area.x0 + w * i as f64;
            let x1 = if i + 1 == n { area.x1 } else { area.x0 + w * (i + 1) as f64 };
            Rect::new(x0, area.y0, x1, area.y1)
        })
        .collect()
}

/// Lawnmower waypoints over `strip` for a camera footprint `(w, h)`.
///
/// Lanes are spaced at most one footprint width apart with the outer lanes
/// flush to the strip edges; each lane runs between the points where the
/// footprint touches the strip's ends. A strip no larger than the footprint
/// is a single waypoint.
pub fn lawnmower(strip: Rect, footprint: (f64, f64)) -> Vec<Point> {
    let (fw, fh) = footprint;
    let lanes = if strip.width() <= fw { 1 } else { (strip.width() / fw).ceil() as usize };
    let xs: Vec<f64> = if lanes == 1 {
        vec![strip.center().0]
    } else {
        let step = (strip.width() - fw) / (lanes - 1) as f64;
        (0..lanes).map(|i| strip.x0 + fw / 2.0 + step * i as f64).collect()
    };
    let ys: Vec<f64> = if strip.height() <= fh {
        vec![strip.center().1]
    } else {
        vec![strip.y0 + fh / 2.0, strip.y1 - fh / 2.0]
    };
    let mut out = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        if i % 2 == 0 {
            out.extend(ys.iter().map(|y| (*x, *y)));
        } else {
            out.extend(ys.iter().rev().map(|y| (*x, *y)));
        }
    }
    out
}

pub fn sweep_plan(area: Rect, drones: usize, footprint: (f64, f64)) -> Vec<Vec<Point>> {
    strips(area, drones).into_iter().map(|s| lawnmower(s, footprint)).collect()
}

pub fn path_length(waypoints: &[Point]) -> f64 {
    waypoints.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Fraction of a planned path flown within `endurance_s`, and whether the
/// sweep outlasts the endurance.
pub fn coverage_fraction(path_m: f64, speed_mps: f64, endurance_s: f64) -> (f64, bool) {
    if path_m <= 0.0 {
        return (1.0, false);
    }
    let sweep_s = path_m / speed_mps;
    ((endurance_s * speed_mps / path_m).min(1.0), endurance_s < sweep_s)
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn lerp(a: Point, b: Point, f: f64) -> Point {
    (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
}

/// Moves `d` metres along the route; returns the new position, next waypoint and whether the route ended.
fn advance(mut pos: Point, route: &[Point], mut next: usize, mut d: f64) -> (Point, usize, bool) {
    while next < route.len() {
        let leg = dist(pos, route[next]);
        if leg > d {
            return (lerp(pos, route[next], d / leg), next, false);
        }
        d -= leg;
        pos = route[next];
        next += 1;
    }
    (pos, next, true)
}

/// Positive with probability `accuracy` for a true frame, `false_positive_rate` otherwise.
pub fn detect(streams: &mut RandomStreams, truth: bool, accuracy: f64, false_positive_rate: f64) -> bool {
    let p = if truth { accuracy } else { false_positive_rate };
    streams.bernoulli(DETECTION_STREAM, p).expect("detection stream registered")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: u64,
    pub source: NodeId,
    pub captured_at: SimTime,
    pub size_bytes: u64,
    pub footprint: Rect,
    /// Ground truth; read only through the detection draw.
    pub contains_victim: bool,
    victims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Victim {
    pub victim_id: String,
    pub position: Point,
    pub needs: VictimNeeds,
    pub discovered_at: Option<SimTime>,
    pub reported_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrgentMsg {
    pub id: String,
    pub leader: NodeId,
    pub frame: FrameRef,
    pub location: Point,
    pub victims: Vec<usize>,
    pub needs: VictimNeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobStage {
    FirstPass,
    Verification(u64),
}

#[derive(Debug, Clone)]
struct Job {
    node: NodeId,
    frame: FrameRef,
    stage: JobStage,
    algorithm: AlgorithmId,
    accuracy: f64,
    /// Leader that asked for this detection, when it is not `node`.
    origin: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Verify(u64),
    Station,
    Boat,
    Resume,
}

#[derive(Debug, Clone, Copy)]
struct Travel {
    from: Point,
    to: Point,
    depart: SimTime,
    arrive: SimTime,
    purpose: Purpose,
}

#[derive(Debug, Clone)]
struct VerifyTask {
    leader: NodeId,
    target: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ZoneState {
    Pending,
    Positive,
}

/// An invoke the edge may resubmit after a version conflict.
struct Request {
    client: String,
    contract: ContractId,
    function: String,
    args: Bytes,
    payload: Bytes,
    class: String,
    attempt: u32,
}

struct RelayState {
    msg: UrgentMsg,
    acceptors: BTreeSet<NodeId>,
}

#[derive(Debug, Clone)]
pub enum FleetEvent {
    Tick,
    Capture,
    FrameArrive { frame: FrameRef, stage_task: Option<u64>, origin: NodeId },
    ResultArrive { frame: FrameRef, positive: bool },
    BoardDone { job: u64 },
    Arrive { gen: u64 },
    TurnaroundDone,
    VerifyRequest { task: u64 },
    UrgentAtEdge { msg: UrgentMsg, via: Via, from: NodeId },
    RelayOffer { msg: String, leader: NodeId },
    RelayReply { msg: String, from: NodeId, accept: bool },
    RelayDecide { msg: String },
    RelayCommit { msg: UrgentMsg },
    RelayAck { edge_position: Point },
    Status,
    StatusAtEdge { leader: NodeId, position: Point, battery_fraction: f64 },
    Query,
    Release { team: String },
    Fault { index: usize },
    MissionEnd,
}

pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub cluster: Option<usize>,
    pub position: Point,
    pub status: NodeStatus,
    pub battery: Option<Battery>,
    pub storage: Storage,
    pub book: EnergyBook,
    pub stored_frames: u64,
    pub edge_position: Option<Point>,
    hover: PowerMw,
    radio_idle: PowerMw,
    speed: f64,
    last_accrual: SimTime,
    station: Point,
    route: Vec<Point>,
    next_wp: usize,
    route_done: bool,
    resume_at: Option<Point>,
    travel: Option<Travel>,
    travel_gen: u64,
    busy_until: SimTime,
    queue_len: usize,
    urgent_queue: Vec<UrgentMsg>,
    verify_queue: VecDeque<u64>,
    zones: Vec<(Rect, u64, ZoneState)>,
}

impl Node {
    fn position_at(&self, now: SimTime) -> Point {
        match &self.travel {
            Some(t) if t.arrive > t.depart => {
                let f = (now.since(t.depart).as_micros() as f64 / t.arrive.since(t.depart).as_micros() as f64).min(1.0);
                lerp(t.from, t.to, f)
            }
            Some(t) if now >= t.arrive => t.to,
            _ => self.position,
        }
    }

    pub fn remaining(&self) -> Energy {
        self.battery.as_ref().map_or(Energy::ZERO, |b| b.remaining)
    }
}

struct Cluster {
    leader: NodeId,
    leader_board: DeviceProfile,
    leader_mode: String,
    algorithm: AlgorithmId,
    small_board: DeviceProfile,
    small_mode: String,
    small_algorithms: Vec<AlgorithmId>,
}

pub struct FleetCx<'a> {
    pub kernel: &'a mut Kernel<SimEvent>,
    pub net: &'a mut Network,
    pub ledger: &'a mut LedgerNet,
    pub trace: &'a mut Trace,
}

impl FleetCx<'_> {
    fn now(&self) -> SimTime {
        self.kernel.now()
    }

    fn at(&mut self, at: SimTime, target: NodeId, ev: FleetEvent) {
        self.kernel.schedule(at, target, SimEvent::Fleet(ev)).expect("fleet schedules forward");
    }

    fn log(&mut self, ev: TraceEvent) {
        let now = self.kernel.now();
        self.trace.push(now, ev);
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FleetError {
    #[error("scenario: {0}")]
    Scenario(#[from] scenario::ScenarioError),
    #[error("network: {0}")]
    Net(#[from] crate::netsim::NetError),
}

pub struct Fleet {
    params: FleetParams,
    policy: PolicyConfig,
    radio_small: RadioProfile,
    boat: BoatSpec,
    faults: Vec<scenario::FaultSpec>,
    duration: SimTime,
    end: SimTime,
    pub edge: NodeId,
    pub nodes: BTreeMap<NodeId, Node>,
    pub victims: Vec<Victim>,
    names: BTreeMap<String, NodeId>,
    clusters: Vec<Cluster>,
    next_frame: u64,
    next_job: u64,
    jobs: BTreeMap<u64, Job>,
    next_task: u64,
    tasks: BTreeMap<u64, VerifyTask>,
    next_msg: u64,
    relays: BTreeMap<String, RelayState>,
    edge_seen: BTreeSet<String>,
    /// Locations already filed on the ledger, with the message that filed them.
    edge_reports: Vec<(Point, String)>,
    handled_receipts: BTreeSet<Digest>,
    requests: BTreeMap<Digest, Request>,
    mission_over: bool,
}

impl Fleet {
    pub fn register_streams(streams: &mut RandomStreams) {
        streams.register(DETECTION_STREAM);
        streams.register(VICTIM_STREAM);
    }

    /// Attaches every fleet node to `net`, places victims and plans sweeps.
    /// Node ids start at 0 with the edge sink; the next free id is `node_count()`.
    pub fn build(sc: &Scenario, streams: &mut RandomStreams, net: &mut Network, trace: &mut Trace) -> Result<Fleet, FleetError> {
        sc.validate()?;
        let p = sc.fleet.clone();
        let footprint = p.footprint();
        let mut nodes = BTreeMap::new();
        let mut names = BTreeMap::new();
        let mut clusters = Vec::new();
        let mut next = 0u32;
        let mut alloc = |name: String, names: &mut BTreeMap<String, NodeId>| {
            let id = NodeId(next);
            next += 1;
            names.insert(name, id);
            id
        };
        let small_battery = || Battery::new(Energy::from_joules(p.small_battery_j), p.low_battery_fraction);
        let big_battery = || Battery::new(Energy::from_joules(p.big_battery_j), p.low_battery_fraction);
        let mk = |id: NodeId, name: String, kind: NodeKind, cluster: Option<usize>, pos: Point, battery: Option<Battery>| {
            let (hover, radio, speed, storage) = match kind {
                NodeKind::SmallDrone => (PowerMw::from_watts(p.small_hover_w), &sc.radio.small, p.small_speed_mps, p.small_storage_bytes),
                NodeKind::BigDroneLeader | NodeKind::Gateway => {
                    (PowerMw::from_watts(p.big_hover_w), &sc.radio.big, p.big_speed_mps, p.leader_storage_bytes)
                }
                NodeKind::EdgeSink => (PowerMw(0), &sc.radio.edge, 0.0, u64::MAX),
            };
            let initial = battery.as_ref().map_or(Energy::ZERO, |b: &Battery| b.remaining);
            Node {
                id,
                name,
                kind,
                cluster,
                position: pos,
                status: NodeStatus::Flying,
                battery,
                storage: Storage::new(storage),
                book: EnergyBook { initial, ..Default::default() },
                stored_frames: 0,
                edge_position: None,
                hover,
                radio_idle: radio.idle_on_power_mw,
                speed,
                last_accrual: SimTime::ZERO,
                station: pos,
                route: Vec::new(),
                next_wp: 0,
                route_done: false,
                resume_at: None,
                travel: None,
                travel_gen: 0,
                busy_until: SimTime::ZERO,
                queue_len: 0,
                urgent_queue: Vec::new(),
                verify_queue: VecDeque::new(),
                zones: Vec::new(),
            }
        };

        let edge = alloc("edge".into(), &mut names);
        net.attach(edge, NodeClass::Edge, None, sc.boat.position, Some(sc.radio.edge.clone()));
        nodes.insert(edge, mk(edge, "edge".into(), NodeKind::EdgeSink, None, sc.boat.position, None));

        let mut leaders = Vec::new();
        for (c, spec) in sc.clusters.iter().enumerate() {
            let station = spec.station.unwrap_or_else(|| spec.sub_area.center());
            let lname = scenario::leader_name(c);
            let lid = alloc(lname.clone(), &mut names);
            net.attach(lid, NodeClass::Leader, Some(c as u32), station, Some(sc.radio.big.clone()));
            nodes.insert(lid, mk(lid, lname, NodeKind::BigDroneLeader, Some(c), station, Some(big_battery())));
            leaders.push(lid);
            let small_board = sc.profile(&spec.small_profile).expect("validated");
            let endurance = small_battery().endurance_s(p.small_hover_w + sc.radio.small.idle_on_power_mw.as_watts()).expect("positive power");
            for (i, route) in sweep_plan(spec.sub_area, spec.small_drones, footprint).into_iter().enumerate() {
                let sname = scenario::small_name(c, i);
                let sid = alloc(sname.clone(), &mut names);
                let start = route[0];
                net.attach(sid, NodeClass::SmallDrone, Some(c as u32), start, Some(sc.radio.small.clone()));
                net.add_link(sid, lid, LinkKind::SmallToLeader)?;
                let path = path_length(&route);
                let (_, too_large) = coverage_fraction(path, p.small_speed_mps, endurance);
                trace.push(
                    SimTime::ZERO,
                    TraceEvent::AreaPlan {
                        node: sname.clone(),
                        waypoints: route.len(),
                        path_m: path,
                        sweep_s: path / p.small_speed_mps,
                        endurance_s: endurance,
                        area_too_large: too_large,
                    },
                );
                let mut n = mk(sid, sname, NodeKind::SmallDrone, Some(c), start, Some(small_battery()));
                n.route = route;
                n.next_wp = 1;
                nodes.insert(sid, n);
            }
            clusters.push(Cluster {
                leader: lid,
                leader_board: sc.profile(&spec.leader.profile).expect("validated"),
                leader_mode: spec.leader.mode.clone(),
                algorithm: spec.leader.algorithm.clone(),
                small_algorithms: small_board.algorithms(&spec.small_mode),
                small_board,
                small_mode: spec.small_mode.clone(),
            });
        }
        for (g, spec) in sc.gateways.iter().enumerate() {
            let gname = scenario::gateway_name(g);
            let gid = alloc(gname.clone(), &mut names);
            net.attach(gid, NodeClass::Leader, None, spec.position, Some(sc.radio.big.clone()));
            nodes.insert(gid, mk(gid, gname, NodeKind::Gateway, None, spec.position, Some(big_battery())));
            leaders.push(gid);
        }
        for (i, a) in leaders.iter().enumerate() {
            net.add_link(*a, edge, LinkKind::LeaderToEdge)?;
            for b in &leaders[i + 1..] {
                net.add_link(*a, *b, LinkKind::LeaderToLeader)?;
            }
        }

        let mut victims: Vec<Victim> = sc
            .victims
            .list
            .iter()
            .map(|v| (v.position, v.needs.clone().unwrap_or_else(|| sc.victims.needs.clone())))
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, (position, needs))| Victim { victim_id: format!("victim-{i}"), position, needs, discovered_at: None, reported_at: None })
            .collect();
        for _ in 0..sc.victims.random_count {
            let a = sc.area;
            let x = streams.uniform_range(VICTIM_STREAM, a.x0, a.x1).expect("victim stream registered");
            let y = streams.uniform_range(VICTIM_STREAM, a.y0, a.y1).expect("victim stream registered");
            victims.push(Victim {
                victim_id: format!("victim-{}", victims.len()),
                position: (x, y),
                needs: sc.victims.needs.clone(),
                discovered_at: None,
                reported_at: None,
            });
        }
        for n in nodes.values() {
            trace.push(SimTime::ZERO, TraceEvent::NodeAdded { node: n.name.clone(), id: n.id, role: n.kind.as_str().into(), position: n.position });
        }
        for v in &victims {
            trace.push(SimTime::ZERO, TraceEvent::VictimPlaced { victim: v.victim_id.clone(), position: v.position });
        }
        Ok(Fleet {
            params: p,
            policy: sc.policy.clone(),
            radio_small: sc.radio.small.clone(),
            boat: sc.boat.clone(),
            faults: sc.fault_schedule.clone(),
            duration: SimTime::from_micros((sc.duration_s * 1e6).round() as u64),
            end: SimTime::from_micros((sc.end_time_s() * 1e6).round() as u64),
            edge,
            nodes,
            victims,
            names,
            clusters,
            next_frame: 0,
            next_job: 0,
            jobs: BTreeMap::new(),
            next_task: 0,
            tasks: BTreeMap::new(),
            next_msg: 0,
            relays: BTreeMap::new(),
            edge_seen: BTreeSet::new(),
            edge_reports: Vec::new(),
            handled_receipts: BTreeSet::new(),
            requests: BTreeMap::new(),
            mission_over: false,
        })
    }

    pub fn node_count(&self) -> u32 {
        self.names.len() as u32
    }

    /// Makes a non-fleet node (ledger servers) addressable by fault schedules.
    pub fn register_name(&mut self, name: &str, id: NodeId) {
        self.names.insert(name.to_string(), id);
    }

    pub fn id_of(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    pub fn name_of(&self, id: NodeId) -> String {
        self.nodes.get(&id).map_or_else(|| id.to_string(), |n| n.name.clone())
    }

    pub fn is_fleet_node(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Ledger client identities, one per cluster leader, hosted on the edge sink.
    pub fn ledger_clients(&self) -> Vec<(String, NodeId)> {
        self.clusters.iter().map(|c| (self.nodes[&c.leader].name.clone(), self.edge)).collect()
    }

    pub fn ledger_seed(&self, sc: &Scenario) -> crate::txflow::SeedData {
        use crate::txflow::contracts::{ClusterSummary, DroneSeed};
        let mut drones = Vec::new();
        for c in &self.clusters {
            let leader = &self.nodes[&c.leader];
            let members: Vec<String> = self
                .nodes
                .values()
                .filter(|n| n.kind == NodeKind::SmallDrone && n.cluster == leader.cluster)
                .map(|n| n.name.clone())
                .collect();
            let summary = ClusterSummary { leader: leader.name.clone(), members: members.clone() };
            drones.push(DroneSeed { drone_id: leader.name.clone(), location: leader.position, cluster: summary.clone(), client: leader.name.clone() });
            for m in members {
                let pos = self.nodes[&self.names[&m]].position;
                drones.push(DroneSeed { drone_id: m, location: pos, cluster: summary.clone(), client: leader.name.clone() });
            }
        }
        crate::txflow::SeedData { drones, teams: sc.contracts.teams.clone(), hospitals: sc.contracts.hospitals.clone() }
    }

    pub fn start(&mut self, cx: &mut FleetCx<'_>) {
        let smalls: Vec<NodeId> = self.nodes.values().filter(|n| n.kind == NodeKind::SmallDrone).map(|n| n.id).collect();
        let interval = self.params.capture_interval_ms * 1000;
        for (i, id) in smalls.iter().enumerate() {
            let offset = interval * i as u64 / smalls.len() as u64;
            cx.at(SimTime::from_micros(offset + interval), *id, FleetEvent::Capture);
        }
        cx.at(SimTime::from_secs(1), self.edge, FleetEvent::Tick);
        let status = SimDuration::from_secs_f64(self.params.status_interval_s);
        for c in &self.clusters {
            cx.at(SimTime::ZERO + status, c.leader, FleetEvent::Status);
        }
        cx.at(SimTime::ZERO + SimDuration::from_secs_f64(self.params.query_interval_s), self.edge, FleetEvent::Query);
        for (i, f) in self.faults.iter().enumerate() {
            cx.at(SimTime::ZERO + SimDuration::from_secs_f64(f.at_s), self.edge, FleetEvent::Fault { index: i });
        }
        cx.at(self.duration, self.edge, FleetEvent::MissionEnd);
    }

    /// Charges every node up to `now` and logs the energy books and storage.
    pub fn finish(&mut self, cx: &mut FleetCx<'_>) {
        let now = cx.now();
        for id in self.nodes.keys().copied().collect::<Vec<_>>() {
            self.accrue(id, now, cx);
        }
        for n in self.nodes.values() {
            cx.log(TraceEvent::EnergyBook {
                node: n.name.clone(),
                role: n.kind.as_str().into(),
                hover_nj: n.book.hover.0,
                processing_nj: n.book.processing.0,
                tx_nj: n.book.tx.0,
                idle_radio_nj: n.book.idle_radio.0,
                shortfall_nj: n.book.shortfall.0,
                initial_nj: n.book.initial.0,
                recharged_nj: n.book.recharged.0,
                remaining_nj: n.remaining().0,
            });
            cx.log(TraceEvent::Storage { node: n.name.clone(), used_bytes: n.storage.used_bytes, capacity_bytes: n.storage.capacity_bytes });
        }
    }

    pub fn handle(&mut self, cx: &mut FleetCx<'_>, target: NodeId, ev: FleetEvent) {
        let now = cx.now();
        match ev {
            FleetEvent::Tick => self.on_tick(cx),
            FleetEvent::Capture => self.on_capture(cx, target),
            FleetEvent::FrameArrive { frame, stage_task, origin } => self.on_frame_arrive(cx, target, frame, stage_task, origin),
            FleetEvent::ResultArrive { frame, positive } => {
                if positive && self.operational(target) {
                    self.schedule_verification(cx, target, frame);
                }
            }
            FleetEvent::BoardDone { job } => self.on_board_done(cx, job),
            FleetEvent::Arrive { gen } => self.on_arrive(cx, target, gen),
            FleetEvent::TurnaroundDone => self.on_turnaround(cx, target),
            FleetEvent::VerifyRequest { task } => self.on_verify_request(cx, target, task),
            FleetEvent::UrgentAtEdge { msg, via, from } => self.edge_receive(cx, msg, via, from),
            FleetEvent::RelayOffer { msg, leader } => {
                let accept = self.operational(target) && self.nodes[&target].kind != NodeKind::SmallDrone && cx.net.link_usable(target, self.edge);
                let out = self.datagram(cx, target, leader, RELAY_REPLY_BYTES, "relay-reply");
                if let Some(at) = out {
                    cx.at(at, leader, FleetEvent::RelayReply { msg, from: target, accept });
                }
            }
            FleetEvent::RelayReply { msg, from, accept } => {
                if let Some(r) = self.relays.get_mut(&msg) {
                    if accept {
                        r.acceptors.insert(from);
                    }
                }
            }
            FleetEvent::RelayDecide { msg } => self.on_relay_decide(cx, target, msg),
            FleetEvent::RelayCommit { msg } => {
                let leader = msg.leader;
                if self.operational(target) && cx.net.link_usable(target, self.edge) {
                    self.send_urgent(cx, target, msg, Via::Relay, "relay-forward");
                    let edge_position = cx.net.position(self.edge).expect("edge attached");
                    if let Some(at) = self.datagram(cx, target, leader, RELAY_REPLY_BYTES, "relay-ack") {
                        cx.at(at, leader, FleetEvent::RelayAck { edge_position });
                    }
                } else {
                    self.queue_urgent(cx, target, msg, "relay_lost_edge");
                }
            }
            FleetEvent::RelayAck { edge_position } => {
                if let Some(n) = self.nodes.get_mut(&target) {
                    n.edge_position = Some(edge_position);
                    let leader = n.name.clone();
                    cx.log(TraceEvent::EdgePositionLearned { leader, position: edge_position });
                }
            }
            FleetEvent::Status => {
                if self.operational(target) {
                    let n = &self.nodes[&target];
                    let position = n.position_at(now);
                    let battery_fraction = n.battery.as_ref().map_or(1.0, |b| b.fraction());
                    if let Some(at) = self.datagram(cx, target, self.edge, STATUS_BYTES, "status") {
                        cx.at(at, self.edge, FleetEvent::StatusAtEdge { leader: target, position, battery_fraction });
                    }
                }
                if !self.mission_over {
                    cx.at(now + SimDuration::from_secs_f64(self.params.status_interval_s), target, FleetEvent::Status);
                }
            }
            FleetEvent::StatusAtEdge { leader, position, battery_fraction } => {
                let name = self.nodes[&leader].name.clone();
                let payload = blob(&format!("update/{name}/{}", now.as_micros()), self.params.update_payload_bytes);
                let args = UpdateDroneArgs {
                    drone_id: name.clone(),
                    location: position,
                    battery_fraction: (battery_fraction * 1e6).round() / 1e6,
                    payload_digest: Digest::of(&payload),
                };
                self.invoke(cx, &name, ContractId::DroneObject, "update_drone_info", canonical_json(&args), payload, "update_info");
            }
            FleetEvent::Query => {
                for c in 0..self.clusters.len() {
                    let name = self.nodes[&self.clusters[c].leader].name.clone();
                    let args = canonical_json(&IdArgs { id: name.clone() });
                    let mut host = KernelHost { kernel: &mut *cx.kernel, net: &mut *cx.net };
                    match cx.ledger.query(&mut host, &name, ContractId::DroneObject, "query_drone_data", args, "query_data_drone") {
                        Ok(req) => cx.log(TraceEvent::LedgerQuery { req, client: name, function: "query_drone_data".into(), class: "query_data_drone".into() }),
                        Err(reason) => cx.log(TraceEvent::LedgerSkipped { client: name, function: "query_drone_data".into(), reason }),
                    }
                }
                if !self.mission_over {
                    cx.at(now + SimDuration::from_secs_f64(self.params.query_interval_s), self.edge, FleetEvent::Query);
                }
            }
            FleetEvent::Release { team } => {
                let client = self.nodes[&self.clusters[0].leader].name.clone();
                let args = canonical_json(&IdArgs { id: team });
                self.invoke(cx, &client, ContractId::RescueTeam, "release_team", args, Bytes::new(), "release_team");
            }
            FleetEvent::Fault { index } => self.on_fault(cx, index),
            FleetEvent::MissionEnd => {
                self.mission_over = true;
                cx.log(TraceEvent::MissionEnd);
                let airborne: Vec<NodeId> = self.nodes.values().filter(|n| n.status == NodeStatus::Flying).map(|n| n.id).collect();
                for id in airborne {
                    self.accrue(id, now, cx);
                    self.return_to_boat(cx, id, "mission_end");
                }
            }
        }
    }

    fn operational(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| n.status.airborne())
    }

    // ---- energy ----

    fn charge(&mut self, cx: &mut FleetCx<'_>, id: NodeId, cat: EnergyCategory, e: Energy) {
        if e.0 == 0 {
            return;
        }
        let n = self.nodes.get_mut(&id).unwrap();
        match cat {
            EnergyCategory::Hover => n.book.hover += e,
            EnergyCategory::Processing => n.book.processing += e,
            EnergyCategory::Tx => n.book.tx += e,
            EnergyCategory::IdleRadio => n.book.idle_radio += e,
        }
        let Some(b) = n.battery.as_mut() else { return };
        let out = b.drain(e);
        n.book.shortfall += out.shortfall;
        if out.low_battery {
            let name = n.name.clone();
            cx.log(TraceEvent::LowBattery { node: name });
            if n.status == NodeStatus::Flying && !self.mission_over {
                self.return_to_boat(cx, id, "low_battery");
            }
        }
        if out.depleted {
            self.deplete(cx, id);
        }
    }

    fn accrue(&mut self, id: NodeId, now: SimTime, cx: &mut FleetCx<'_>) {
        let n = self.nodes.get_mut(&id).unwrap();
        let dt = now.since(n.last_accrual);
        n.last_accrual = now;
        if !n.status.airborne() || n.kind == NodeKind::EdgeSink || dt.as_micros() == 0 {
            return;
        }
        let (hover, idle) = (n.hover.over(dt), n.radio_idle.over(dt));
        self.charge(cx, id, EnergyCategory::Hover, hover);
        self.charge(cx, id, EnergyCategory::IdleRadio, idle);
    }

    fn deplete(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        let now = cx.now();
        let n = self.nodes.get_mut(&id).unwrap();
        let en_route = n.status == NodeStatus::Returning;
        n.position = n.position_at(now);
        n.status = NodeStatus::Depleted;
        n.travel = None;
        n.travel_gen += 1;
        let name = n.name.clone();
        let _ = cx.net.set_position(id, self.nodes[&id].position);
        let _ = cx.net.set_node_up(id, false);
        cx.log(TraceEvent::Depleted { node: name, en_route });
    }

    fn tx(&mut self, cx: &mut FleetCx<'_>, id: NodeId, out: &DeliveryOutcome) {
        if let DeliveryOutcome::Delivered { tx_energy, .. } = out {
            self.charge(cx, id, EnergyCategory::Tx, *tx_energy);
        }
    }

    fn sync_position(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        let now = cx.now();
        let p = self.nodes[&id].position_at(now);
        let _ = cx.net.set_position(id, p);
    }

    /// Sends a control datagram; returns the arrival time if delivered.
    fn datagram(&mut self, cx: &mut FleetCx<'_>, from: NodeId, to: NodeId, bytes: u32, tag: &str) -> Option<SimTime> {
        if !self.operational(from) && from != self.edge {
            return None;
        }
        self.sync_position(cx, from);
        let now = cx.now();
        let out = cx.net.send_datagram(now, cx.kernel.streams(), from, to, bytes.min(MAX_DATAGRAM_BYTES), tag).ok()?;
        self.tx(cx, from, &out);
        out.delivered_at()
    }

    fn frame_send(&mut self, cx: &mut FleetCx<'_>, from: NodeId, to: NodeId, frame: &FrameRef, tag: &str) -> Option<SimTime> {
        if !self.operational(from) {
            return None;
        }
        self.sync_position(cx, from);
        let now = cx.now();
        let out = cx.net.send_frame(now, cx.kernel.streams(), from, to, frame.size_bytes, tag).ok()?;
        self.tx(cx, from, &out);
        let (f, t) = (self.name_of(from), self.name_of(to));
        cx.log(TraceEvent::FrameSent { frame: frame.frame_id, from: f, to: t, tag: tag.into(), delivered: out.is_delivered() });
        out.delivered_at()
    }

    // ---- movement ----

    fn start_travel(&mut self, cx: &mut FleetCx<'_>, id: NodeId, to: Point, purpose: Purpose) {
        let now = cx.now();
        let n = self.nodes.get_mut(&id).unwrap();
        let from = n.position_at(now);
        n.position = from;
        let secs = if n.speed > 0.0 { dist(from, to) / n.speed } else { 0.0 };
        let arrive = now + SimDuration::from_secs_f64(secs);
        n.travel = Some(Travel { from, to, depart: now, arrive, purpose });
        n.travel_gen += 1;
        let gen = n.travel_gen;
        cx.at(arrive, id, FleetEvent::Arrive { gen });
    }

    fn return_to_boat(&mut self, cx: &mut FleetCx<'_>, id: NodeId, reason: &str) {
        let now = cx.now();
        let n = self.nodes.get_mut(&id).unwrap();
        if n.status != NodeStatus::Flying || n.kind == NodeKind::EdgeSink {
            return;
        }
        if let Some(Travel { purpose: Purpose::Verify(task), .. }) = n.travel {
            n.verify_queue.push_front(task);
        }
        let here = n.position_at(now);
        if n.kind == NodeKind::SmallDrone && !n.route_done {
            n.resume_at = Some(match n.travel {
                Some(Travel { purpose: Purpose::Resume, to, .. }) => to,
                _ => here,
            });
        }
        n.status = NodeStatus::Returning;
        let name = n.name.clone();
        cx.log(TraceEvent::ReturnToBoat { node: name, reason: reason.into() });
        let boat = self.boat.position_at(now.as_secs_f64());
        self.start_travel(cx, id, boat, Purpose::Boat);
    }

    fn on_arrive(&mut self, cx: &mut FleetCx<'_>, id: NodeId, gen: u64) {
        let now = cx.now();
        let Some(n) = self.nodes.get(&id) else { return };
        if n.travel_gen != gen || n.status == NodeStatus::Depleted {
            return;
        }
        self.accrue(id, now, cx);
        let n = self.nodes.get_mut(&id).unwrap();
        if n.status == NodeStatus::Depleted {
            return;
        }
        let Some(t) = n.travel.take() else { return };
        n.position = t.to;
        let _ = cx.net.set_position(id, t.to);
        match t.purpose {
            Purpose::Boat => self.arrived_boat(cx, id),
            Purpose::Verify(task) => {
                self.capture_verification(cx, id, task);
                self.next_leader_move(cx, id);
            }
            Purpose::Station => self.next_leader_move(cx, id),
            Purpose::Resume => {
                let name = self.nodes[&id].name.clone();
                cx.log(TraceEvent::Resumed { node: name });
                if self.nodes[&id].kind != NodeKind::SmallDrone {
                    self.next_leader_move(cx, id);
                }
            }
        }
    }

    fn arrived_boat(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        let n = self.nodes.get_mut(&id).unwrap();
        n.status = NodeStatus::AtBoat;
        let synced_bytes = n.storage.take_all();
        let synced_frames = std::mem::take(&mut n.stored_frames);
        let queued = std::mem::take(&mut n.urgent_queue);
        if let Some(b) = n.battery.as_mut() {
            n.book.recharged += b.capacity - b.remaining;
            b.recharge();
        }
        let name = n.name.clone();
        cx.log(TraceEvent::ArrivedBoat { node: name, synced_bytes, synced_frames });
        for msg in queued {
            self.edge_receive(cx, msg, Via::Sync, id);
        }
        let _ = cx.net.set_node_up(id, false);
        let n = &self.nodes[&id];
        let resumes = !self.mission_over && !(n.kind == NodeKind::SmallDrone && n.route_done);
        if resumes {
            let at = cx.now() + SimDuration::from_secs_f64(self.params.turnaround_s);
            cx.at(at, id, FleetEvent::TurnaroundDone);
        }
    }

    fn on_turnaround(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        if self.mission_over {
            return;
        }
        let now = cx.now();
        let n = self.nodes.get_mut(&id).unwrap();
        if n.status != NodeStatus::AtBoat {
            return;
        }
        n.status = NodeStatus::Flying;
        n.last_accrual = now;
        let to = n.resume_at.take().unwrap_or(n.station);
        let name = n.name.clone();
        let _ = cx.net.set_node_up(id, true);
        cx.log(TraceEvent::Departed { node: name });
        self.start_travel(cx, id, to, Purpose::Resume);
    }

    /// After a verification capture or on reaching the station: next task, or back to station.
    fn next_leader_move(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        let n = self.nodes.get_mut(&id).unwrap();
        if n.status != NodeStatus::Flying {
            return;
        }
        if let Some(task) = n.verify_queue.pop_front() {
            let target = self.tasks[&task].target;
            self.start_travel(cx, id, target, Purpose::Verify(task));
        } else if dist(n.position, n.station) > 1e-9 {
            let station = n.station;
            self.start_travel(cx, id, station, Purpose::Station);
        }
    }

    // ---- capture and detection ----

    fn footprint_at(&self, center: Point) -> Rect {
        let (w, h) = self.params.footprint();
        Rect::centered(center, w, h)
    }

    fn new_frame(&mut self, source: NodeId, now: SimTime, footprint: Rect) -> FrameRef {
        let victims: Vec<usize> = self.victims.iter().enumerate().filter(|(_, v)| footprint.contains(v.position)).map(|(i, _)| i).collect();
        let id = self.next_frame;
        self.next_frame += 1;
        FrameRef {
            frame_id: id,
            source,
            captured_at: now,
            size_bytes: self.params.frame_bytes,
            footprint,
            contains_victim: !victims.is_empty(),
            victims,
        }
    }

    fn on_capture(&mut self, cx: &mut FleetCx<'_>, id: NodeId) {
        let now = cx.now();
        let interval = SimDuration::from_micros(self.params.capture_interval_ms * 1000);
        let n = &self.nodes[&id];
        if self.mission_over || n.status == NodeStatus::Depleted || n.route_done {
            return;
        }
        cx.at(now + interval, id, FleetEvent::Capture);
        if n.status != NodeStatus::Flying || n.travel.is_some() {
            return;
        }
        self.accrue(id, now, cx);
        let n = self.nodes.get_mut(&id).unwrap();
        if n.status != NodeStatus::Flying {
            return;
        }
        let (pos, next, done) = advance(n.position, &n.route, n.next_wp, n.speed * interval.as_secs_f64());
        n.position = pos;
        n.next_wp = next;
        let _ = cx.net.set_position(id, pos);
        let fp = self.footprint_at(pos);
        let frame = self.new_frame(id, now, fp);
        let name = self.nodes[&id].name.clone();
        cx.log(TraceEvent::FrameCaptured { frame: frame.frame_id, node: name.clone(), footprint: fp, truth: frame.contains_victim });
        self.handle_small_frame(cx, id, frame);
        if done {
            self.nodes.get_mut(&id).unwrap().route_done = true;
            self.return_to_boat(cx, id, "sweep_complete");
        }
    }

    fn handle_small_frame(&mut self, cx: &mut FleetCx<'_>, id: NodeId, frame: FrameRef) {
        let now = cx.now();
        let n = &self.nodes[&id];
        let c = &self.clusters[n.cluster.expect("small drones belong to a cluster")];
        let leader = c.leader;
        let ctx = FrameContext {
            size_bytes: frame.size_bytes,
            link_up: cx.net.link_usable(id, leader),
            low_battery: n.battery.as_ref().is_some_and(|b| b.is_low()),
            storage_headroom_bytes: n.storage.headroom(),
        };
        let local = LocalSide {
            board: Board { profile: &c.small_board, mode: &c.small_mode },
            candidates: &c.small_algorithms,
            radio: &self.radio_small,
        };
        let remote = RemoteSide { board: Board { profile: &c.leader_board, mode: &c.leader_mode }, algorithm: &c.algorithm };
        let decision = decide(&ctx, &local, &remote, &self.policy);
        let name = n.name.clone();
        let decision = match decision {
            Ok(d) => d,
            Err(PolicyError::NoFeasibleAction) => {
                cx.log(TraceEvent::FrameDropped { frame: frame.frame_id, node: name, reason: "no_feasible_action".into() });
                return;
            }
            Err(e) => panic!("validated profiles cannot fail: {e}"),
        };
        let p = &decision.predicted;
        cx.log(TraceEvent::Decision {
            frame: frame.frame_id,
            node: name.clone(),
            action: decision.action.label().into(),
            algorithm: match &decision.action {
                Action::Local(a) => Some(a.to_string()),
                _ => None,
            },
            rule: decision.rule,
            local_latency_ms: p.local_latency_ms,
            local_energy_mj: p.local_energy_mj,
            offload_latency_ms: p.offload_latency_ms,
            offload_energy_mj: p.offload_energy_mj,
        });
        match decision.action {
            Action::Offload => {
                if let Some(at) = self.frame_send(cx, id, leader, &frame, "frame") {
                    cx.at(at, leader, FleetEvent::FrameArrive { frame, stage_task: None, origin: leader });
                } else {
                    cx.log(TraceEvent::FrameDropped { frame: frame.frame_id, node: name, reason: "send_failed".into() });
                }
            }
            Action::Local(algorithm) => {
                let c = &self.clusters[self.nodes[&id].cluster.unwrap()];
                let entry = c.small_board.entry(&algorithm, &c.small_mode).expect("decided algorithm exists").clone();
                let dur = c.small_board.per_frame_duration(&algorithm, &c.small_mode).expect("entry exists");
                self.enqueue_job(cx, id, now, dur, entry.active_power_mw, Job {
                    node: id,
                    frame,
                    stage: JobStage::FirstPass,
                    algorithm,
                    accuracy: entry.accuracy,
                    origin: leader,
                });
            }
            Action::Store => self.store_frame(cx, id, &frame),
            Action::Drop => cx.log(TraceEvent::FrameDropped { frame: frame.frame_id, node: name, reason: "policy_drop".into() }),
        }
    }

    fn store_frame(&mut self, cx: &mut FleetCx<'_>, id: NodeId, frame: &FrameRef) {
        let n = self.nodes.get_mut(&id).unwrap();
        let name = n.name.clone();
        match n.storage.store(frame.size_bytes) {
            Ok(()) => {
                n.stored_frames += 1;
                cx.log(TraceEvent::FrameStored { frame: frame.frame_id, node: name, bytes: frame.size_bytes });
            }
            Err(_) => cx.log(TraceEvent::FrameDropped { frame: frame.frame_id, node: name, reason: "storage_full".into() }),
        }
    }

    fn enqueue_job(&mut self, cx: &mut FleetCx<'_>, id: NodeId, now: SimTime, dur: SimDuration, power: PowerMw, job: Job) {
        let n = self.nodes.get_mut(&id).unwrap();
        let start = n.busy_until.max(now);
        n.busy_until = start + dur;
        n.queue_len += 1;
        let done = n.busy_until;
        let jid = self.next_job;
        self.next_job += 1;
        self.jobs.insert(jid, job);
        self.charge(cx, id, EnergyCategory::Processing, power.over(dur));
        cx.at(done, id, FleetEvent::BoardDone { job: jid });
    }

    fn leader_job(&self, leader: NodeId, frame: FrameRef, stage: JobStage, origin: NodeId) -> (Job, SimDuration, PowerMw) {
        let c = &self.clusters[self.nodes[&leader].cluster.expect("leaders belong to a cluster")];
        let entry = c.leader_board.entry(&c.algorithm, &c.leader_mode).expect("validated");
        let accuracy = match stage {
            JobStage::FirstPass => entry.accuracy,
            JobStage::Verification(_) => (entry.accuracy + self.params.verification_boost).min(MAX_VERIFY_ACCURACY),
        };
        let dur = c.leader_board.per_frame_duration(&c.algorithm, &c.leader_mode).expect("validated");
        (Job { node: leader, frame, stage, algorithm: c.algorithm.clone(), accuracy, origin }, dur, entry.active_power_mw)
    }

    fn on_frame_arrive(&mut self, cx: &mut FleetCx<'_>, id: NodeId, frame: FrameRef, stage_task: Option<u64>, origin: NodeId) {
        let now = cx.now();
        if !self.operational(id) {
            let name = self.name_of(id);
            cx.log(TraceEvent::FrameDropped { frame: frame.frame_id, node: name, reason: "leader_unavailable".into() });
            return;
        }
        let stage = stage_task.map_or(JobStage::FirstPass, JobStage::Verification);
        if stage == JobStage::FirstPass && origin == id && self.policy.inter_leader_offload && self.nodes[&id].queue_len > self.policy.inter_leader_queue_threshold {
            let candidate = cx
                .net
                .adjacent_leaders(id)
                .unwrap_or_default()
                .into_iter()
                .filter(|n| self.nodes.get(n).is_some_and(|x| x.kind == NodeKind::BigDroneLeader && x.status.airborne()))
                .filter(|n| cx.net.link_usable(id, *n))
                .min_by_key(|n| (self.nodes[n].queue_len, *n));
            if let Some(other) = candidate {
                if other != id && self.nodes[&other].queue_len < self.nodes[&id].queue_len {
                    if let Some(at) = self.frame_send(cx, id, other, &frame, "inter-leader") {
                        cx.at(at, other, FleetEvent::FrameArrive { frame, stage_task: None, origin: id });
                        return;
                    }
                }
            }
        }
        let (job, dur, power) = self.leader_job(id, frame, stage, origin);
        self.enqueue_job(cx, id, now, dur, power, job);
    }

    fn on_board_done(&mut self, cx: &mut FleetCx<'_>, jid: u64) {
        let Some(job) = self.jobs.remove(&jid) else { return };
        let id = job.node;
        let n = self.nodes.get_mut(&id).unwrap();
        n.queue_len -= 1;
        if n.status == NodeStatus::Depleted {
            return;
        }
        let kind = n.kind;
        let name = n.name.clone();
        let positive = detect(cx.kernel.streams(), job.frame.contains_victim, job.accuracy, self.params.false_positive_rate);
        let stage = match job.stage {
            JobStage::FirstPass => Stage::FirstPass,
            JobStage::Verification(_) => Stage::Verified,
        };
        cx.log(TraceEvent::Detection {
            frame: job.frame.frame_id,
            node: name,
            algorithm: job.algorithm.to_string(),
            positive,
            truth: job.frame.contains_victim,
            stage,
        });
        match (kind, job.stage) {
            (NodeKind::SmallDrone, _) => {
                self.store_frame(cx, id, &job.frame);
                let small = RESULT_DATAGRAM_BYTES;
                if let Some(at) = self.datagram(cx, id, job.origin, small, "result") {
                    cx.at(at, job.origin, FleetEvent::ResultArrive { frame: job.frame, positive });
                }
            }
            (_, JobStage::FirstPass) if job.origin != id => {
                self.store_frame(cx, id, &job.frame);
                if let Some(at) = self.datagram(cx, id, job.origin, RESULT_DATAGRAM_BYTES, "result") {
                    cx.at(at, job.origin, FleetEvent::ResultArrive { frame: job.frame, positive });
                }
            }
            (_, JobStage::FirstPass) => {
                self.store_frame(cx, id, &job.frame);
                if positive {
                    self.schedule_verification(cx, id, job.frame);
                }
            }
            (_, JobStage::Verification(task)) => self.on_verification(cx, id, task, job.frame, positive),
        }
    }

    fn schedule_verification(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, frame: FrameRef) {
        let target = frame.footprint.center();
        let n = self.nodes.get_mut(&leader).unwrap();
        let name = n.name.clone();
        if n.zones.iter().any(|(r, _, _)| r.contains(target)) {
            cx.log(TraceEvent::VerifySkipped { leader: name, frame: frame.frame_id });
            return;
        }
        let task = self.next_task;
        self.next_task += 1;
        n.zones.push((frame.footprint, task, ZoneState::Pending));
        cx.log(TraceEvent::VerifyScheduled { leader: name, frame: frame.frame_id, task, target });
        let source = frame.source;
        self.tasks.insert(task, VerifyTask { leader, target });
        if self.params.verify_by == VerifyBy::SmallDrone && source != leader && self.operational(source) {
            if let Some(at) = self.datagram(cx, leader, source, VERIFY_REQUEST_BYTES, "verify-request") {
                cx.at(at, source, FleetEvent::VerifyRequest { task });
                return;
            }
        }
        let n = self.nodes.get_mut(&leader).unwrap();
        n.verify_queue.push_back(task);
        let idle = n.status == NodeStatus::Flying && matches!(n.travel, None | Some(Travel { purpose: Purpose::Station, .. }));
        if idle {
            self.next_leader_move(cx, leader);
        }
    }

    fn on_verify_request(&mut self, cx: &mut FleetCx<'_>, small: NodeId, task: u64) {
        let now = cx.now();
        let t = self.tasks[&task].clone();
        if !self.operational(small) {
            return self.verify_by_leader(cx, t.leader, task);
        }
        let fp = self.footprint_at(t.target);
        let frame = self.new_frame(small, now, fp);
        let name = self.name_of(small);
        cx.log(TraceEvent::FrameCaptured { frame: frame.frame_id, node: name, footprint: fp, truth: frame.contains_victim });
        match self.frame_send(cx, small, t.leader, &frame, "verify-frame") {
            Some(at) => cx.at(at, t.leader, FleetEvent::FrameArrive { frame, stage_task: Some(task), origin: t.leader }),
            None => self.verify_by_leader(cx, t.leader, task),
        }
    }

    fn verify_by_leader(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, task: u64) {
        let n = self.nodes.get_mut(&leader).unwrap();
        n.verify_queue.push_back(task);
        if n.status == NodeStatus::Flying && matches!(n.travel, None | Some(Travel { purpose: Purpose::Station, .. })) {
            self.next_leader_move(cx, leader);
        }
    }

    fn capture_verification(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, task: u64) {
        let now = cx.now();
        let target = self.tasks[&task].target;
        let fp = self.footprint_at(target);
        let frame = self.new_frame(leader, now, fp);
        let name = self.name_of(leader);
        cx.log(TraceEvent::FrameCaptured { frame: frame.frame_id, node: name, footprint: fp, truth: frame.contains_victim });
        let (job, dur, power) = self.leader_job(leader, frame, JobStage::Verification(task), leader);
        self.enqueue_job(cx, leader, now, dur, power, job);
    }

    fn on_verification(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, task: u64, frame: FrameRef, positive: bool) {
        let now = cx.now();
        let n = self.nodes.get_mut(&leader).unwrap();
        if !positive {
            n.zones.retain(|z| z.1 != task);
            self.store_frame(cx, leader, &frame);
            return;
        }
        for z in n.zones.iter_mut().filter(|z| z.1 == task) {
            z.2 = ZoneState::Positive;
        }
        let msg_id = format!("{}-v{}", n.name, self.next_msg);
        self.next_msg += 1;
        let name = n.name.clone();
        let victims = frame.victims.clone();
        cx.log(TraceEvent::Verified {
            leader: name,
            msg: msg_id.clone(),
            frame: frame.frame_id,
            victims: victims.iter().map(|v| self.victims[*v].victim_id.clone()).collect(),
        });
        for v in &victims {
            if self.victims[*v].discovered_at.is_none() {
                self.victims[*v].discovered_at = Some(now);
                cx.log(TraceEvent::VictimDiscovered { victim: self.victims[*v].victim_id.clone(), msg: msg_id.clone() });
            }
        }
        let needs = victims.first().map_or_else(VictimNeeds::default, |v| self.victims[*v].needs.clone());
        let msg = UrgentMsg { id: msg_id, leader, location: frame.footprint.center(), frame, victims, needs };
        self.forward_urgent(cx, leader, msg);
    }

    // ---- urgent forwarding ----

    fn send_urgent(&mut self, cx: &mut FleetCx<'_>, from: NodeId, msg: UrgentMsg, via: Via, tag: &str) {
        match self.frame_send(cx, from, self.edge, &msg.frame, tag) {
            Some(at) => cx.at(at, self.edge, FleetEvent::UrgentAtEdge { msg, via, from }),
            None => self.queue_urgent(cx, from, msg, "send_failed"),
        }
    }

    fn forward_urgent(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, msg: UrgentMsg) {
        self.sync_position(cx, leader);
        if cx.net.link_usable(leader, self.edge) {
            return self.send_urgent(cx, leader, msg, Via::Direct, "urgent");
        }
        self.fallback_relay(cx, leader, msg);
    }

    fn fallback_relay(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, msg: UrgentMsg) {
        let now = cx.now();
        let outcomes = cx.net.multicast_adjacent(now, cx.kernel.streams(), leader, RELAY_OFFER_BYTES, "relay-offer").unwrap_or_default();
        let mut reached = Vec::new();
        for (n, out) in outcomes {
            self.tx(cx, leader, &out);
            if let Some(at) = out.delivered_at() {
                reached.push(n);
                cx.at(at, n, FleetEvent::RelayOffer { msg: msg.id.clone(), leader });
            }
        }
        let name = self.name_of(leader);
        if reached.is_empty() {
            cx.log(TraceEvent::RelayChosen { leader: name, msg: msg.id.clone(), relay: None });
            return self.queue_urgent(cx, leader, msg, "no_relay_path");
        }
        cx.log(TraceEvent::RelayOffered {
            leader: name,
            msg: msg.id.clone(),
            neighbours: reached.iter().map(|n| self.name_of(*n)).collect(),
        });
        let id = msg.id.clone();
        self.relays.insert(id.clone(), RelayState { msg, acceptors: BTreeSet::new() });
        cx.at(now + SimDuration::from_millis(self.params.relay_window_ms), leader, FleetEvent::RelayDecide { msg: id });
    }

    fn on_relay_decide(&mut self, cx: &mut FleetCx<'_>, leader: NodeId, msg_id: String) {
        let Some(state) = self.relays.remove(&msg_id) else { return };
        let chosen = state.acceptors.iter().next().copied();
        let name = self.name_of(leader);
        cx.log(TraceEvent::RelayChosen { leader: name, msg: msg_id, relay: chosen.map(|c| self.name_of(c)) });
        let msg = state.msg;
        let Some(relay) = chosen else {
            return self.queue_urgent(cx, leader, msg, "no_relay_path");
        };
        match self.frame_send(cx, leader, relay, &msg.frame, "relay-frame") {
            Some(at) => cx.at(at, relay, FleetEvent::RelayCommit { msg }),
            None => self.queue_urgent(cx, leader, msg, "relay_unreachable"),
        }
    }

    fn queue_urgent(&mut self, cx: &mut FleetCx<'_>, node: NodeId, msg: UrgentMsg, reason: &str) {
        let n = self.nodes.get_mut(&node).unwrap();
        let name = n.name.clone();
        cx.log(TraceEvent::UrgentQueued { node: name, msg: msg.id.clone(), reason: reason.into() });
        n.urgent_queue.push(msg);
    }

    fn edge_receive(&mut self, cx: &mut FleetCx<'_>, msg: UrgentMsg, via: Via, from: NodeId) {
        let duplicate = !self.edge_seen.insert(msg.id.clone());
        let from_name = self.name_of(from);
        cx.log(TraceEvent::EdgeReceived { msg: msg.id.clone(), via, from: from_name, bytes: msg.frame.size_bytes, duplicate });
        if duplicate {
            return;
        }
        let now = cx.now();
        for v in &msg.victims {
            let victim = &mut self.victims[*v];
            if victim.reported_at.is_none() {
                victim.reported_at = Some(now);
                let id = victim.victim_id.clone();
                cx.log(TraceEvent::VictimReported { victim: id, msg: msg.id.clone() });
            }
        }
        let client = self.name_of(msg.leader);
        // Frames overlapping one victim yield several messages; file a location once.
        let (w, h) = self.params.footprint();
        let merge_m = (w * w + h * h).sqrt();
        if let Some((_, first)) = self.edge_reports.iter().find(|(p, _)| dist(*p, msg.location) <= merge_m) {
            let reason = format!("{} merged with {first}", msg.id);
            cx.log(TraceEvent::LedgerSkipped { client, function: "report_victim".into(), reason });
            return;
        }
        self.edge_reports.push((msg.location, msg.id.clone()));
        let payload = blob(&format!("urgent/{}", msg.id), self.params.urgent_payload_bytes);
        let args = ReportVictimArgs {
            drone_id: client.clone(),
            victim_id: msg.id.clone(),
            location: msg.location,
            urgency: msg.needs.urgency,
            required_specialists: msg.needs.required_specialists.clone(),
            required_capabilities: msg.needs.required_capabilities.clone(),
        };
        self.invoke(cx, &client, ContractId::DroneObject, "report_victim", canonical_json(&args), payload, "urgent_info");
    }

    #[allow(clippy::too_many_arguments)]
    fn invoke(&mut self, cx: &mut FleetCx<'_>, client: &str, contract: ContractId, function: &str, args: Bytes, payload: Bytes, class: &str) {
        let req = Request { client: client.into(), contract, function: function.into(), args, payload, class: class.into(), attempt: 1 };
        self.submit(cx, req);
    }

    fn submit(&mut self, cx: &mut FleetCx<'_>, req: Request) {
        let mut host = KernelHost { kernel: &mut *cx.kernel, net: &mut *cx.net };
        let r = cx.ledger.invoke(&mut host, &req.client, req.contract, &req.function, req.args.clone(), req.payload.clone(), &req.class);
        match r {
            Ok(tx) => {
                let bytes = cx.ledger.receipt(&tx).map_or(0, |r| r.request_bytes);
                cx.log(TraceEvent::LedgerInvoke {
                    tx: tx.to_hex(),
                    client: req.client.clone(),
                    function: req.function.clone(),
                    class: req.class.clone(),
                    bytes,
                });
                if matches!(req.function.as_str(), "report_victim" | "release_team") {
                    self.requests.insert(tx, req);
                }
            }
            Err(reason) => cx.log(TraceEvent::LedgerSkipped { client: req.client, function: req.function, reason }),
        }
    }

    // ---- periodic work ----

    fn on_tick(&mut self, cx: &mut FleetCx<'_>) {
        let now = cx.now();
        let boat = self.boat.position_at(now.as_secs_f64());
        self.nodes.get_mut(&self.edge).unwrap().position = boat;
        let _ = cx.net.set_position(self.edge, boat);
        for id in self.nodes.keys().copied().collect::<Vec<_>>() {
            self.accrue(id, now, cx);
            if self.nodes[&id].status.airborne() {
                self.sync_position(cx, id);
            }
        }
        let waiting: Vec<NodeId> = self.nodes.values().filter(|n| !n.urgent_queue.is_empty() && n.status.airborne()).map(|n| n.id).collect();
        for id in waiting {
            if cx.net.link_usable(id, self.edge) {
                let queued = std::mem::take(&mut self.nodes.get_mut(&id).unwrap().urgent_queue);
                for msg in queued {
                    self.send_urgent(cx, id, msg, Via::Direct, "urgent-queued");
                }
            }
        }
        self.schedule_releases(cx);
        if now < self.end {
            cx.at(now + SimDuration::from_secs(1), self.edge, FleetEvent::Tick);
        }
    }

    /// Frees each assigned rescue team a fixed time after its assignment commits.
    fn schedule_releases(&mut self, cx: &mut FleetCx<'_>) {
        use crate::ledger::ValidityFlag;
        use crate::txflow::contracts::{AssignmentResult, ReleaseResult};
        let now = cx.now();
        let busy = SimDuration::from_secs_f64(self.params.team_busy_s);
        let mut teams = Vec::new();
        let mut retries = Vec::new();
        for r in cx.ledger.receipts() {
            if r.flag.is_none() || self.handled_receipts.contains(&r.tx_id) {
                continue;
            }
            self.handled_receipts.insert(r.tx_id);
            let request = self.requests.remove(&r.tx_id);
            if r.flag == Some(ValidityFlag::InvalidVersionConflict) {
                retries.extend(request.filter(|q| q.attempt < MAX_ASSIGN_ATTEMPTS));
                continue;
            }
            if r.flag != Some(ValidityFlag::Valid) {
                continue;
            }
            let Some(body) = &r.response else { continue };
            match r.function.as_str() {
                "report_victim" => {
                    if let Ok(a) = serde_json::from_str::<AssignmentResult>(body) {
                        teams.extend(a.team);
                    }
                }
                "release_team" => {
                    if let Ok(rr) = serde_json::from_str::<ReleaseResult>(body) {
                        if rr.next_victim.is_some() {
                            teams.push(rr.team_id);
                        }
                    }
                }
                _ => {}
            }
        }
        for mut req in retries {
            req.attempt += 1;
            self.submit(cx, req);
        }
        for team in teams {
            cx.at(now + busy, self.edge, FleetEvent::Release { team });
        }
    }

    fn on_fault(&mut self, cx: &mut FleetCx<'_>, index: usize) {
        let f = self.faults[index].clone();
        let state = match f.state {
            FaultState::Up => "up",
            FaultState::Down => "down",
        };
        if let Some([a, b]) = &f.link {
            let (ia, ib) = (self.names[a], self.names[b]);
            let s = if f.state == FaultState::Up { LinkState::Up } else { LinkState::Down };
            let ok = cx.net.set_link_state(ia, ib, s).is_ok();
            cx.log(TraceEvent::Fault { target: format!("{a}~{b}"), state: if ok { state.into() } else { "no_such_link".into() } });
        } else if let Some(name) = &f.node {
            let id = self.names[name];
            let up = f.state == FaultState::Up;
            if cx.ledger.is_ledger_node(id) {
                let mut host = KernelHost { kernel: &mut *cx.kernel, net: &mut *cx.net };
                if up {
                    cx.ledger.restart(&mut host, id);
                } else {
                    cx.ledger.kill(&mut host, id);
                }
            } else if !self.nodes.get(&id).is_some_and(|n| matches!(n.status, NodeStatus::AtBoat | NodeStatus::Depleted)) {
                let _ = cx.net.set_node_up(id, up);
            }
            cx.log(TraceEvent::Fault { target: name.clone(), state: state.into() });
        }
    }
}

/// Deterministic stand-in for an opaque payload of `len` bytes.
pub fn blob(tag: &str, len: u64) -> Bytes {
    let mut v = vec![0u8; len as usize];
    let t = tag.as_bytes();
    let k = t.len().min(v.len());
    v[..k].copy_from_slice(&t[..k]);
    Bytes::from(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_footprint_area_is_one_waypoint() {
        let fp = (57.7, 43.3);
        let area = Rect::centered((10.0, 10.0), fp.0, fp.1);
        let plan = sweep_plan(area, 1, fp);
        assert_eq!(plan, vec![vec![(10.0, 10.0)]]);
        let (cov, too_large) = coverage_fraction(path_length(&plan[0]), 10.0, 100.0);
        assert_eq!((cov, too_large), (1.0, false));
    }

    #[test]
    fn four_strips_partition_the_area() {
        let area = Rect::new(0.0, 0.0, 400.0, 300.0);
        let s = strips(area, 4);
        assert_eq!(s.len(), 4);
        let total: f64 = s.iter().map(|r| r.area()).sum();
        assert!((total - area.area()).abs() < 1e-9);
        for w in s.windows(2) {
            assert_eq!(w[0].x1, w[1].x0);
        }
        assert_eq!(s[0].x0, area.x0);
        assert_eq!(s[3].x1, area.x1);
    }

    #[test]
    fn half_endurance_covers_half() {
        let fp = (50.0, 40.0);
        let route = lawnmower(Rect::new(0.0, 0.0, 500.0, 1000.0), fp);
        let path = path_length(&route);
        let endurance = path / 10.0 / 2.0;
        let (cov, too_large) = coverage_fraction(path, 10.0, endurance);
        assert!((cov - 0.5).abs() < 1e-12);
        assert!(too_large);
    }

    #[test]
    fn lawnmower_alternates_direction() {
        let route = lawnmower(Rect::new(0.0, 0.0, 100.0, 200.0), (50.0, 40.0));
        assert_eq!(route, vec![(25.0, 20.0), (25.0, 180.0), (75.0, 180.0), (75.0, 20.0)]);
    }

    proptest! {
        /// Lane footprints tile the strip: every ground point lies under some lane.
        #[test]
        fn lanes_cover_strip(w in 10.0f64..900.0, h in 10.0f64..900.0, fw in 5.0f64..120.0, px in 0.0f64..1.0, py in 0.0f64..1.0) {
            let strip = Rect::new(0.0, 0.0, w, h);
            let fh = fw * 0.75;
            let route = lawnmower(strip, (fw, fh));
            let p = (px * w, py * h);
            let covered = route.windows(2).any(|s| {
                let (a, b) = (s[0], s[1]);
                let lane = Rect::new(a.0.min(b.0) - fw / 2.0, a.1.min(b.1) - fh / 2.0, a.0.max(b.0) + fw / 2.0, a.1.max(b.1) + fh / 2.0);
                lane.contains(p)
            }) || route.iter().any(|c| Rect::centered(*c, fw, fh).contains(p));
            prop_assert!(covered, "{p:?} uncovered by {route:?}");
        }

        #[test]
        fn advance_conserves_distance(d in 0.0f64..3000.0) {
            let route = vec![(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)];
            let (pos, next, done) = advance(route[0], &route, 1, d);
            let walked = if done { 300.0 } else { path_length(&[&route[..next], &[pos]].concat()) };
            prop_assert!((walked - d.min(300.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn detection_rates() {
        let mut s = RandomStreams::new(3);
        s.register(DETECTION_STREAM);
        assert!((0..100).all(|_| detect(&mut s, true, 1.0, 0.02)));
        assert!((0..100).all(|_| !detect(&mut s, false, 0.8, 0.0)));
        let n = 10_000;
        let hits = (0..n).filter(|_| detect(&mut s, true, 0.8, 0.02)).count() as f64;
        let sigma = (n as f64 * 0.8 * 0.2).sqrt();
        assert!((hits - 8000.0).abs() <= 3.0 * sigma, "{hits}");
    }

    #[test]
    fn storage_bookkeeping() {
        let mut s = Storage::new(5_000_000);
        s.store(2_300_000).unwrap();
        assert_eq!(s.used_bytes, 2_300_000);
        s.store(2_300_000).unwrap();
        assert!(s.store(2_300_000).is_err());
        assert_eq!(s.take_all(), 4_600_000);
        assert_eq!(s.used_bytes, 0);
    }

    #[test]
    fn energy_book_balance() {
        let mut b = Battery::new(Energy(1000), 0.2);
        let mut book = EnergyBook { initial: b.remaining, ..Default::default() };
        for (e, cat) in [(300, 0), (400, 1), (500, 2)] {
            let out = b.drain(Energy(e));
            book.shortfall += out.shortfall;
            match cat {
                0 => book.hover += Energy(e),
                1 => book.tx += Energy(e),
                _ => book.processing += Energy(e),
            }
        }
        assert!(book.balances(b.remaining));
        book.recharged += b.capacity - b.remaining;
        b.recharge();
        assert!(book.balances(b.remaining));
    }
}
