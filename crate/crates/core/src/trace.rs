//! Event trace: the single source every report aggregate is computed from.
//!
//! CSV rows are `time_us,kind,data` where `data` is the JSON encoding of the
//! whole event; JSON floats round-trip exactly, so a report recomputed from
//! a parsed trace is identical to the one computed in memory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::kernel::{NodeId, SimTime};
use crate::ledger::ValidityFlag;
use crate::offload::RuleCondition;
use crate::raft::RaftEvent;
use crate::scenario::Rect;
use crate::txflow::contracts::Point;
use crate::txflow::{QueryReceipt, TxReceipt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FirstPass,
    Verified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Direct,
    Relay,
    Sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStart { scenario: String, seed: u64, area: Rect, duration_s: f64, end_s: f64 },
    NodeAdded { node: String, id: NodeId, role: String, position: Point },
    VictimPlaced { victim: String, position: Point },
    AreaPlan { node: String, waypoints: usize, path_m: f64, sweep_s: f64, endurance_s: f64, area_too_large: bool },
    FrameCaptured { frame: u64, node: String, footprint: Rect, truth: bool },
    Decision {
        frame: u64,
        node: String,
        action: String,
        algorithm: Option<String>,
        rule: Option<RuleCondition>,
        local_latency_ms: Option<f64>,
        local_energy_mj: Option<f64>,
        offload_latency_ms: f64,
        offload_energy_mj: f64,
    },
    FrameSent { frame: u64, from: String, to: String, tag: String, delivered: bool },
    FrameStored { frame: u64, node: String, bytes: u64 },
    FrameDropped { frame: u64, node: String, reason: String },
    Detection { frame: u64, node: String, algorithm: String, positive: bool, truth: bool, stage: Stage },
    VerifyScheduled { leader: String, frame: u64, task: u64, target: Point },
    VerifySkipped { leader: String, frame: u64 },
    Verified { leader: String, msg: String, frame: u64, victims: Vec<String> },
    VictimDiscovered { victim: String, msg: String },
    UrgentQueued { node: String, msg: String, reason: String },
    RelayOffered { leader: String, msg: String, neighbours: Vec<String> },
    RelayChosen { leader: String, msg: String, relay: Option<String> },
    EdgePositionLearned { leader: String, position: Point },
    EdgeReceived { msg: String, via: Via, from: String, bytes: u64, duplicate: bool },
    VictimReported { victim: String, msg: String },
    LowBattery { node: String },
    ReturnToBoat { node: String, reason: String },
    ArrivedBoat { node: String, synced_bytes: u64, synced_frames: u64 },
    Departed { node: String },
    Resumed { node: String },
    Depleted { node: String, en_route: bool },
    Fault { target: String, state: String },
    MissionEnd,
    LedgerInvoke { tx: String, client: String, function: String, class: String, bytes: u64 },
    LedgerQuery { req: u64, client: String, function: String, class: String },
    LedgerSkipped { client: String, function: String, reason: String },
    EnergyBook {
        node: String,
        role: String,
        hover_nj: u64,
        processing_nj: u64,
        tx_nj: u64,
        idle_radio_nj: u64,
        shortfall_nj: u64,
        initial_nj: u64,
        recharged_nj: u64,
        remaining_nj: u64,
    },
    BlockCommitted { peer: NodeId, number: u64, digest: String, txs: usize },
    Raft { event: RaftEvent },
    TxReceipt { receipt: TxReceipt },
    QueryReceipt { receipt: QueryReceipt },
    ValidityTally { flag: ValidityFlag, count: u64 },
    Storage { node: String, used_bytes: u64, capacity_bytes: u64 },
    Violation { what: String },
}

impl TraceEvent {
    pub fn kind(&self) -> String {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string(),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub at: SimTime,
    pub event: TraceEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace row {row}: {reason}")]
    Row { row: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, at: SimTime, event: TraceEvent) {
        self.records.push(TraceRecord { at, event });
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Trace { records }
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_us", "kind", "data"])?;
        for r in &self.records {
            let data = serde_json::to_string(&r.event).expect("trace events serialize");
            out.write_record([r.at.as_micros().to_string(), r.event.kind(), data])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_csv(&mut v).expect("writing to memory");
        v
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Trace, TraceError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for (i, row) in rd.records().enumerate() {
            let row = row?;
            let bad = |reason: String| TraceError::Row { row: i + 1, reason };
            let at: u64 = row.get(0).ok_or_else(|| bad("missing time".into()))?.parse().map_err(|e| bad(format!("{e}")))?;
            let data = row.get(2).ok_or_else(|| bad("missing data".into()))?;
            let event: TraceEvent = serde_json::from_str(data).map_err(|e| bad(e.to_string()))?;
            records.push(TraceRecord { at: SimTime::from_micros(at), event });
        }
        Ok(Trace { records })
    }

    /// SHA-256 of the CSV encoding.
    pub fn digest_hex(&self) -> String {
        hex(&Sha256::digest(self.to_csv_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = Trace::new();
        t.push(SimTime::from_micros(1), TraceEvent::MissionEnd);
        t.push(
            SimTime::from_micros(2),
            TraceEvent::Decision {
                frame: 3,
                node: "small-0-0".into(),
                action: "offload".into(),
                algorithm: None,
                rule: Some(RuleCondition::OnLinkDown),
                local_latency_ms: Some(1000.0 / 1.4),
                local_energy_mj: Some(0.1 + 0.2),
                offload_latency_ms: 300.0 + 1000.0 / 53.2,
                offload_energy_mj: 975.0,
            },
        );
        t.push(
            SimTime::from_micros(3),
            TraceEvent::FrameCaptured { frame: 1, node: "a,b\"c".into(), footprint: Rect::new(0.1, 0.2, 0.3, 0.7), truth: true },
        );
        let back = Trace::read_csv(&t.to_csv_bytes()[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.digest_hex(), t.digest_hex());
        assert_eq!(t.records()[0].event.kind(), "mission_end");
    }
}
