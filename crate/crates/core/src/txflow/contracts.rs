//! The three search-and-rescue contracts: drone object, rescue team, hospital.
//!
//! Execution is a pure function of the invocation and the world state seen
//! through an [`ExecCtx`], which records the read set (with versions) and
//! buffers writes. Reports chain drone object → rescue team → hospital
//! inside one invocation.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::ledger::block::{ReadEntry, WriteEntry};
use crate::ledger::{Chain, ContractId, Digest, Transaction, TxKind, Version};

pub const DRONE_PREFIX: &str = "drone/";
pub const TEAM_PREFIX: &str = "team/";
pub const HOSPITAL_PREFIX: &str = "hospital/";
pub const VICTIM_PREFIX: &str = "victim/";
pub const WAITING_KEY: &str = "queue/waiting";

/// How many recent payloads a data query returns.
pub const DATA_QUERY_BLOBS: usize = 4;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("function `{function}` is not part of contract `{contract}`")]
    UnknownFunction { contract: ContractId, function: String },
    #[error("unknown drone `{0}`")]
    UnknownDrone(String),
    #[error("unknown team `{0}`")]
    UnknownTeam(String),
    #[error("unknown hospital `{0}`")]
    UnknownHospital(String),
    #[error("unknown victim `{0}`")]
    UnknownVictim(String),
    #[error("victim `{0}` already reported")]
    DuplicateVictim(String),
    #[error("`{caller}` may not update drone `{drone}`")]
    Unauthorized { caller: String, drone: String },
    #[error("payload digest does not match the carried payload")]
    PayloadMismatch,
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("corrupt record at `{0}`")]
    CorruptRecord(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSummary {
    pub leader: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneRecord {
    pub drone_id: String,
    pub location: Point,
    pub battery_fraction: f64,
    pub cluster: ClusterSummary,
    /// Client identity allowed to update this record.
    pub client: String,
    pub history_refs: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescueTeamRecord {
    pub team_id: String,
    pub location: Point,
    pub specialists: Vec<String>,
    #[serde(default = "yes")]
    pub available: bool,
    #[serde(default)]
    pub assigned_victim: Option<String>,
    #[serde(default)]
    pub archive_refs: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HospitalRecord {
    pub hospital_id: String,
    pub location: Point,
    pub capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    Normal,
    Urgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VictimStatus {
    Waiting,
    Assigned,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimRecord {
    pub victim_id: String,
    pub location: Point,
    pub urgency: Urgency,
    pub required_specialists: Vec<String>,
    pub required_capabilities: BTreeSet<String>,
    pub reported_by: String,
    pub reported_at: SimTime,
    pub evidence: Option<Digest>,
    pub status: VictimStatus,
    pub team: Option<String>,
    pub hospital: Option<String>,
    pub no_hospital_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneSeed {
    pub drone_id: String,
    pub location: Point,
    pub cluster: ClusterSummary,
    pub client: String,
}

/// Seed data written by the genesis block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedData {
    #[serde(default)]
    pub drones: Vec<DroneSeed>,
    #[serde(default)]
    pub teams: Vec<RescueTeamRecord>,
    #[serde(default)]
    pub hospitals: Vec<HospitalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateDroneArgs {
    pub drone_id: String,
    pub location: Point,
    pub battery_fraction: f64,
    pub payload_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportVictimArgs {
    pub drone_id: String,
    pub victim_id: String,
    pub location: Point,
    pub urgency: Urgency,
    pub required_specialists: Vec<String>,
    pub required_capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdArgs {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub victim_id: String,
    pub team: Option<String>,
    pub hospital: Option<String>,
    pub status: VictimStatus,
    /// Set when no team was available; the case waits for the next release.
    pub no_team_available: bool,
    pub no_hospital_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseResult {
    pub team_id: String,
    pub closed_victim: Option<String>,
    pub next_victim: Option<String>,
}

pub fn canonical_json<T: Serialize>(v: &T) -> Bytes {
    Bytes::from(serde_json::to_vec(v).expect("contract types serialize"))
}

fn parse<T: DeserializeOwned>(b: &[u8]) -> Result<T, ContractError> {
    serde_json::from_slice(b).map_err(|e| ContractError::BadArgs(e.to_string()))
}

/// Invocation context handed to contract code.
#[derive(Debug, Clone)]
pub struct Invocation<'a> {
    pub creator: &'a str,
    pub timestamp: SimTime,
    pub args: &'a [u8],
    pub payload: &'a Bytes,
}

/// Read-tracking, write-buffering view of the world state.
pub struct ExecCtx<'a> {
    chain: &'a Chain,
    reads: BTreeMap<String, Option<Version>>,
    writes: BTreeMap<String, Bytes>,
}

impl<'a> ExecCtx<'a> {
    pub fn new(chain: &'a Chain) -> Self {
        ExecCtx { chain, reads: BTreeMap::new(), writes: BTreeMap::new() }
    }

    pub fn get(&mut self, key: &str) -> Option<Bytes> {
        if let Some(v) = self.writes.get(key) {
            return Some(v.clone());
        }
        let cur = self.chain.state().get(key);
        self.reads.entry(key.to_string()).or_insert(cur.map(|(_, v)| v));
        cur.map(|(b, _)| b.clone())
    }

    pub fn put(&mut self, key: &str, value: Bytes) {
        self.writes.insert(key.to_string(), value);
    }

    fn get_json<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, ContractError> {
        match self.get(key) {
            None => Ok(None),
            Some(b) => serde_json::from_slice(&b).map(Some).map_err(|_| ContractError::CorruptRecord(key.to_string())),
        }
    }

    fn put_json<T: Serialize>(&mut self, key: &str, v: &T) {
        self.put(key, canonical_json(v));
    }

    /// Keys under `prefix`, recording each as read.
    fn scan_keys(&mut self, prefix: &str) -> Vec<String> {
        let keys: Vec<String> = self.chain.state().scan(prefix).map(|(k, _, _)| k.clone()).collect();
        let mut all: BTreeSet<String> = keys.into_iter().collect();
        all.extend(self.writes.keys().filter(|k| k.starts_with(prefix)).cloned());
        all.into_iter().collect()
    }

    pub fn read_set(&self) -> Vec<ReadEntry> {
        self.reads.iter().map(|(k, v)| ReadEntry { key: k.clone(), version: *v }).collect()
    }

    pub fn write_set(&self) -> Vec<WriteEntry> {
        self.writes.iter().map(|(k, v)| WriteEntry { key: k.clone(), value: v.clone() }).collect()
    }

    pub fn chain(&self) -> &Chain {
        self.chain
    }
}

pub fn is_query(contract: ContractId, function: &str) -> bool {
    matches!(
        (contract, function),
        (ContractId::DroneObject, "query_drone" | "query_drone_data" | "query_victim")
            | (ContractId::RescueTeam, "query_team")
            | (ContractId::Hospital, "query_hospital")
    )
}

/// Output of a contract call: a JSON body and, for data queries, raw blobs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Output {
    pub body: Bytes,
    pub data: Vec<Bytes>,
}

impl Output {
    pub fn size_bytes(&self) -> u64 {
        self.body.len() as u64 + self.data.iter().map(|d| d.len() as u64 + 4).sum::<u64>()
    }
}

pub fn execute(
    ctx: &mut ExecCtx<'_>,
    contract: ContractId,
    function: &str,
    inv: &Invocation<'_>,
) -> Result<Output, ContractError> {
    let body = |v: Bytes| Ok(Output { body: v, data: Vec::new() });
    match (contract, function) {
        (ContractId::DroneObject, "update_drone_info") => body(update_drone_info(ctx, inv)?),
        (ContractId::DroneObject, "report_victim") => body(canonical_json(&report_victim(ctx, inv)?)),
        (ContractId::DroneObject, "query_drone") => {
            let a: IdArgs = parse(inv.args)?;
            body(canonical_json(&drone(ctx, &a.id)?))
        }
        (ContractId::DroneObject, "query_drone_data") => {
            let a: IdArgs = parse(inv.args)?;
            let rec = drone(ctx, &a.id)?;
            let data = rec
                .history_refs
                .iter()
                .rev()
                .take(DATA_QUERY_BLOBS)
                .filter_map(|d| ctx.chain().payload(d).cloned())
                .collect();
            Ok(Output { body: canonical_json(&rec), data })
        }
        (ContractId::DroneObject, "query_victim") => {
            let a: IdArgs = parse(inv.args)?;
            let v: VictimRecord = ctx
                .get_json(&format!("{VICTIM_PREFIX}{}", a.id))?
                .ok_or(ContractError::UnknownVictim(a.id))?;
            body(canonical_json(&v))
        }
        (ContractId::RescueTeam, "release_team") => body(canonical_json(&release_team(ctx, inv)?)),
        (ContractId::RescueTeam, "query_team") => {
            let a: IdArgs = parse(inv.args)?;
            body(canonical_json(&team(ctx, &a.id)?))
        }
        (ContractId::Hospital, "query_hospital") => {
            let a: IdArgs = parse(inv.args)?;
            let h: HospitalRecord = ctx
                .get_json(&format!("{HOSPITAL_PREFIX}{}", a.id))?
                .ok_or(ContractError::UnknownHospital(a.id))?;
            body(canonical_json(&h))
        }
        _ => Err(ContractError::UnknownFunction { contract, function: function.to_string() }),
    }
}

/// Runs `tx` against the chain's current state and returns the read/write sets and output.
pub fn simulate(chain: &Chain, tx: &Transaction) -> Result<(Vec<ReadEntry>, Vec<WriteEntry>, Output), ContractError> {
    let mut ctx = ExecCtx::new(chain);
    let inv = Invocation { creator: &tx.creator, timestamp: tx.timestamp, args: &tx.args, payload: &tx.payload };
    let out = execute(&mut ctx, tx.contract, &tx.function, &inv)?;
    Ok((ctx.read_set(), ctx.write_set(), out))
}

fn drone(ctx: &mut ExecCtx<'_>, id: &str) -> Result<DroneRecord, ContractError> {
    ctx.get_json(&format!("{DRONE_PREFIX}{id}"))?.ok_or_else(|| ContractError::UnknownDrone(id.to_string()))
}

fn team(ctx: &mut ExecCtx<'_>, id: &str) -> Result<RescueTeamRecord, ContractError> {
    ctx.get_json(&format!("{TEAM_PREFIX}{id}"))?.ok_or_else(|| ContractError::UnknownTeam(id.to_string()))
}

fn update_drone_info(ctx: &mut ExecCtx<'_>, inv: &Invocation<'_>) -> Result<Bytes, ContractError> {
    let a: UpdateDroneArgs = parse(inv.args)?;
    let mut rec = drone(ctx, &a.drone_id)?;
    if rec.client != inv.creator {
        return Err(ContractError::Unauthorized { caller: inv.creator.to_string(), drone: a.drone_id });
    }
    if Digest::of(inv.payload) != a.payload_digest {
        return Err(ContractError::PayloadMismatch);
    }
    if !(0.0..=1.0).contains(&a.battery_fraction) {
        return Err(ContractError::BadArgs(format!("battery fraction {}", a.battery_fraction)));
    }
    rec.location = a.location;
    rec.battery_fraction = a.battery_fraction;
    if !inv.payload.is_empty() {
        rec.history_refs.push(a.payload_digest);
    }
    ctx.put_json(&format!("{DRONE_PREFIX}{}", a.drone_id), &rec);
    Ok(canonical_json(&rec))
}

fn dist2(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

/// Nearest available team holding every required specialist; ties go to the lower id.
pub fn select_team<'t>(teams: &'t [RescueTeamRecord], at: Point, required: &[String]) -> Option<&'t RescueTeamRecord> {
    teams
        .iter()
        .filter(|t| t.available && required.iter().all(|r| t.specialists.contains(r)))
        .min_by(|a, b| dist2(a.location, at).total_cmp(&dist2(b.location, at)).then_with(|| a.team_id.cmp(&b.team_id)))
}

/// Nearest hospital whose capabilities cover `required`; ties go to the lower id.
pub fn select_hospital<'h>(
    hospitals: &'h [HospitalRecord],
    at: Point,
    required: &BTreeSet<String>,
) -> Option<&'h HospitalRecord> {
    hospitals.iter().filter(|h| required.is_subset(&h.capabilities)).min_by(|a, b| {
        dist2(a.location, at).total_cmp(&dist2(b.location, at)).then_with(|| a.hospital_id.cmp(&b.hospital_id))
    })
}

fn all_teams(ctx: &mut ExecCtx<'_>) -> Result<Vec<RescueTeamRecord>, ContractError> {
    let keys = ctx.scan_keys(TEAM_PREFIX);
    keys.iter().map(|k| ctx.get_json(k).transpose().expect("scanned key exists")).collect()
}

fn all_hospitals(ctx: &mut ExecCtx<'_>) -> Result<Vec<HospitalRecord>, ContractError> {
    let keys = ctx.scan_keys(HOSPITAL_PREFIX);
    keys.iter().map(|k| ctx.get_json(k).transpose().expect("scanned key exists")).collect()
}

fn waiting(ctx: &mut ExecCtx<'_>) -> Result<Vec<String>, ContractError> {
    Ok(ctx.get_json(WAITING_KEY)?.unwrap_or_default())
}

fn report_victim(ctx: &mut ExecCtx<'_>, inv: &Invocation<'_>) -> Result<AssignmentResult, ContractError> {
    let a: ReportVictimArgs = parse(inv.args)?;
    let reporter = drone(ctx, &a.drone_id)?;
    if reporter.client != inv.creator {
        return Err(ContractError::Unauthorized { caller: inv.creator.to_string(), drone: a.drone_id });
    }
    let vkey = format!("{VICTIM_PREFIX}{}", a.victim_id);
    if ctx.get(&vkey).is_some() {
        return Err(ContractError::DuplicateVictim(a.victim_id));
    }
    let mut victim = VictimRecord {
        victim_id: a.victim_id.clone(),
        location: a.location,
        urgency: a.urgency,
        required_specialists: a.required_specialists.clone(),
        required_capabilities: a.required_capabilities.clone(),
        reported_by: a.drone_id.clone(),
        reported_at: inv.timestamp,
        evidence: (!inv.payload.is_empty()).then(|| Digest::of(inv.payload)),
        status: VictimStatus::Waiting,
        team: None,
        hospital: None,
        no_hospital_match: false,
    };

    let teams = all_teams(ctx)?;
    match select_team(&teams, a.location, &a.required_specialists) {
        Some(t) => {
            let mut t = t.clone();
            t.available = false;
            t.assigned_victim = Some(a.victim_id.clone());
            victim.status = VictimStatus::Assigned;
            victim.team = Some(t.team_id.clone());
            ctx.put_json(&format!("{TEAM_PREFIX}{}", t.team_id), &t);
        }
        None => {
            let mut q = waiting(ctx)?;
            q.push(a.victim_id.clone());
            ctx.put_json(WAITING_KEY, &q);
        }
    }

    if a.urgency == Urgency::Urgent {
        let hospitals = all_hospitals(ctx)?;
        match select_hospital(&hospitals, a.location, &a.required_capabilities) {
            Some(h) => victim.hospital = Some(h.hospital_id.clone()),
            None => victim.no_hospital_match = true,
        }
    }
    ctx.put_json(&vkey, &victim);
    Ok(AssignmentResult {
        victim_id: victim.victim_id,
        team: victim.team.clone(),
        hospital: victim.hospital,
        status: victim.status,
        no_team_available: victim.team.is_none(),
        no_hospital_match: victim.no_hospital_match,
    })
}

/// Priority among waiting cases: urgent first, then earliest report, then id.
pub fn waiting_priority(v: &VictimRecord) -> (std::cmp::Reverse<Urgency>, SimTime, String) {
    (std::cmp::Reverse(v.urgency), v.reported_at, v.victim_id.clone())
}

fn release_team(ctx: &mut ExecCtx<'_>, inv: &Invocation<'_>) -> Result<ReleaseResult, ContractError> {
    let a: IdArgs = parse(inv.args)?;
    let mut t = team(ctx, &a.id)?;
    let closed = t.assigned_victim.take();
    if let Some(vid) = &closed {
        let vkey = format!("{VICTIM_PREFIX}{vid}");
        let mut v: VictimRecord = ctx.get_json(&vkey)?.ok_or_else(|| ContractError::UnknownVictim(vid.clone()))?;
        v.status = VictimStatus::Closed;
        ctx.put_json(&vkey, &v);
        t.archive_refs.push(vid.clone());
    }
    t.available = true;

    let queue = waiting(ctx)?;
    let mut candidates = Vec::new();
    for vid in &queue {
        let v: VictimRecord = ctx
            .get_json(&format!("{VICTIM_PREFIX}{vid}"))?
            .ok_or_else(|| ContractError::UnknownVictim(vid.clone()))?;
        if v.required_specialists.iter().all(|r| t.specialists.contains(r)) {
            candidates.push(v);
        }
    }
    candidates.sort_by_key(waiting_priority);
    let next = candidates.into_iter().next();
    if let Some(mut v) = next.clone() {
        v.status = VictimStatus::Assigned;
        v.team = Some(t.team_id.clone());
        t.available = false;
        t.assigned_victim = Some(v.victim_id.clone());
        ctx.put_json(&format!("{VICTIM_PREFIX}{}", v.victim_id), &v);
        let rest: Vec<String> = queue.into_iter().filter(|q| *q != v.victim_id).collect();
        ctx.put_json(WAITING_KEY, &rest);
    }
    ctx.put_json(&format!("{TEAM_PREFIX}{}", t.team_id), &t);
    Ok(ReleaseResult { team_id: t.team_id, closed_victim: closed, next_victim: next.map(|v| v.victim_id) })
}

/// Genesis configuration transactions, one per contract.
pub fn seed_txs(seed: &SeedData, ca: &str) -> Vec<Transaction> {
    let mut out = Vec::new();
    let mk = |contract: ContractId, writes: Vec<WriteEntry>| {
        let mut tx = Transaction::new(
            TxKind::Config,
            ca,
            contract,
            "seed",
            Bytes::new(),
            Bytes::new(),
            0,
            SimTime::ZERO,
        );
        tx.write_set = writes;
        tx
    };
    let drones = seed
        .drones
        .iter()
        .map(|d| WriteEntry {
            key: format!("{DRONE_PREFIX}{}", d.drone_id),
            value: canonical_json(&DroneRecord {
                drone_id: d.drone_id.clone(),
                location: d.location,
                battery_fraction: 1.0,
                cluster: d.cluster.clone(),
                client: d.client.clone(),
                history_refs: Vec::new(),
            }),
        })
        .collect();
    out.push(mk(ContractId::DroneObject, drones));
    let teams = seed
        .teams
        .iter()
        .map(|t| WriteEntry { key: format!("{TEAM_PREFIX}{}", t.team_id), value: canonical_json(t) })
        .collect();
    out.push(mk(ContractId::RescueTeam, teams));
    let hospitals = seed
        .hospitals
        .iter()
        .map(|h| WriteEntry { key: format!("{HOSPITAL_PREFIX}{}", h.hospital_id), value: canonical_json(h) })
        .collect();
    out.push(mk(ContractId::Hospital, hospitals));
    out
}

impl SeedData {
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for h in &self.hospitals {
            if h.capabilities.is_empty() {
                return Err(format!("hospital `{}` has no capabilities", h.hospital_id));
            }
            if !ids.insert(format!("h:{}", h.hospital_id)) {
                return Err(format!("duplicate hospital `{}`", h.hospital_id));
            }
        }
        for t in &self.teams {
            if !ids.insert(format!("t:{}", t.team_id)) {
                return Err(format!("duplicate team `{}`", t.team_id));
            }
        }
        for d in &self.drones {
            if !ids.insert(format!("d:{}", d.drone_id)) {
                return Err(format!("duplicate drone `{}`", d.drone_id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::chain::{genesis_block, ChainConfig, EndorsementPolicy};
    use crate::ledger::{IdentityRegistry, Role};

    fn seed() -> SeedData {
        SeedData {
            drones: vec![DroneSeed {
                drone_id: "leader-0".into(),
                location: (0.0, 0.0),
                cluster: ClusterSummary { leader: "leader-0".into(), members: vec!["small-0-0".into()] },
                client: "leader-0".into(),
            }],
            teams: vec![
                RescueTeamRecord {
                    team_id: "team-a".into(),
                    location: (5000.0, 0.0),
                    specialists: vec!["medic".into()],
                    available: true,
                    assigned_victim: None,
                    archive_refs: vec![],
                },
                RescueTeamRecord {
                    team_id: "team-b".into(),
                    location: (2000.0, 0.0),
                    specialists: vec!["medic".into()],
                    available: false,
                    assigned_victim: None,
                    archive_refs: vec![],
                },
            ],
            hospitals: vec![
                HospitalRecord {
                    hospital_id: "h-near".into(),
                    location: (100.0, 0.0),
                    capabilities: ["emergency_rooms".to_string()].into(),
                },
                HospitalRecord {
                    hospital_id: "h-far".into(),
                    location: (9000.0, 0.0),
                    capabilities: ["emergency_rooms".to_string(), "blood_suppliers".to_string()].into(),
                },
            ],
        }
    }

    fn chain(seed: &SeedData) -> Chain {
        let mut r = IdentityRegistry::new();
        r.register("ca", Role::Ca, 0);
        let g = genesis_block(&r, "ca", seed_txs(seed, "ca")).unwrap();
        Chain::new(g, r, ChainConfig { policy: EndorsementPolicy::majority_of(3), max_block_txs: 10 }).unwrap()
    }

    fn inv<'a>(args: &'a [u8], payload: &'a Bytes) -> Invocation<'a> {
        Invocation { creator: "leader-0", timestamp: SimTime::from_secs(3), args, payload }
    }

    #[test]
    fn available_far_team_beats_unavailable_near_one() {
        let c = chain(&seed());
        let mut ctx = ExecCtx::new(&c);
        let args = canonical_json(&ReportVictimArgs {
            drone_id: "leader-0".into(),
            victim_id: "v1".into(),
            location: (0.0, 0.0),
            urgency: Urgency::Urgent,
            required_specialists: vec!["medic".into()],
            required_capabilities: ["blood_suppliers".to_string()].into(),
        });
        let p = Bytes::new();
        let out = execute(&mut ctx, ContractId::DroneObject, "report_victim", &inv(&args, &p)).unwrap();
        let r: AssignmentResult = serde_json::from_slice(&out.body).unwrap();
        assert_eq!(r.team.as_deref(), Some("team-a"));
        assert_eq!(r.hospital.as_deref(), Some("h-far"));
        let keys: Vec<String> = ctx.write_set().into_iter().map(|w| w.key).collect();
        assert_eq!(keys, vec!["team/team-a", "victim/v1"]);
        assert!(ctx.read_set().iter().any(|r| r.key == "victim/v1" && r.version.is_none()));
    }

    #[test]
    fn contract_dispatch_is_scoped() {
        let c = chain(&seed());
        let mut ctx = ExecCtx::new(&c);
        let p = Bytes::new();
        let err = execute(&mut ctx, ContractId::Hospital, "report_victim", &inv(b"{}", &p)).unwrap_err();
        assert!(matches!(err, ContractError::UnknownFunction { .. }));
    }

    #[test]
    fn update_checks_payload_and_caller() {
        let c = chain(&seed());
        let payload = Bytes::from(vec![1u8; 64]);
        let args = canonical_json(&UpdateDroneArgs {
            drone_id: "leader-0".into(),
            location: (1.0, 2.0),
            battery_fraction: 0.5,
            payload_digest: Digest::of(&payload),
        });
        let mut ctx = ExecCtx::new(&c);
        execute(&mut ctx, ContractId::DroneObject, "update_drone_info", &inv(&args, &payload)).unwrap();
        let mut ctx = ExecCtx::new(&c);
        let other = Bytes::from_static(b"x");
        assert_eq!(
            execute(&mut ctx, ContractId::DroneObject, "update_drone_info", &inv(&args, &other)),
            Err(ContractError::PayloadMismatch)
        );
        let mut ctx = ExecCtx::new(&c);
        let bad = Invocation { creator: "intruder", ..inv(&args, &payload) };
        assert!(matches!(
            execute(&mut ctx, ContractId::DroneObject, "update_drone_info", &bad),
            Err(ContractError::Unauthorized { .. })
        ));
        let unknown = canonical_json(&UpdateDroneArgs {
            drone_id: "ghost".into(),
            location: (1.0, 2.0),
            battery_fraction: 0.5,
            payload_digest: Digest::of(&payload),
        });
        let mut ctx = ExecCtx::new(&c);
        assert_eq!(
            execute(&mut ctx, ContractId::DroneObject, "update_drone_info", &inv(&unknown, &payload)),
            Err(ContractError::UnknownDrone("ghost".into()))
        );
    }

    #[test]
    fn single_team_anywhere_is_chosen() {
        let t = RescueTeamRecord {
            team_id: "only".into(),
            location: (1e6, -1e6),
            specialists: vec![],
            available: true,
            assigned_victim: None,
            archive_refs: vec![],
        };
        assert_eq!(select_team(std::slice::from_ref(&t), (0.0, 0.0), &[]).unwrap().team_id, "only");
    }

    #[test]
    fn equal_distance_tie_goes_to_lower_id() {
        let mk = |id: &str, x: f64| RescueTeamRecord {
            team_id: id.into(),
            location: (x, 0.0),
            specialists: vec![],
            available: true,
            assigned_victim: None,
            archive_refs: vec![],
        };
        let teams = [mk("t2", 10.0), mk("t1", -10.0)];
        assert_eq!(select_team(&teams, (0.0, 0.0), &[]).unwrap().team_id, "t1");
    }

    #[test]
    fn queries_are_classified() {
        assert!(is_query(ContractId::DroneObject, "query_drone_data"));
        assert!(!is_query(ContractId::DroneObject, "update_drone_info"));
        assert!(!is_query(ContractId::Hospital, "query_drone"));
    }
}
