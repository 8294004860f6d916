//! Run report, computed from the trace alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::device::AlgorithmId;
use crate::offload::{local_cost, offload_cost, Board, LocalSide, RemoteSide};
use crate::raft::RaftEvent;
use crate::scenario::{Rect, Scenario};
use crate::trace::{Stage, Trace, TraceEvent, Via};

/// Side of one coverage raster cell, metres.
pub const COVERAGE_CELL_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimRow {
    pub victim: String,
    pub discovered_s: Option<f64>,
    pub reported_s: Option<f64>,
    /// Discovery to edge delivery.
    pub delivery_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub node: String,
    pub role: String,
    pub hover_j: f64,
    pub processing_j: f64,
    pub tx_j: f64,
    pub idle_radio_j: f64,
    pub shortfall_j: f64,
    pub recharged_j: f64,
    pub remaining_j: f64,
    /// Battery drop equals the charges it supplied, to the nanojoule.
    pub balanced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub first_pass_positive: u64,
    pub first_pass_negative: u64,
    pub verified_positive: u64,
    pub verified_negative: u64,
    pub false_positive_first_pass: u64,
    pub verify_skipped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Frame bytes received over radio while the mission ran.
    pub live_bytes: u64,
    /// Bytes handed over at the boat.
    pub synced_bytes: u64,
    pub urgent_direct: u64,
    pub urgent_relay: u64,
    pub urgent_sync: u64,
    pub urgent_duplicates: u64,
    pub urgent_queued: u64,
    pub relay_offers: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub requests: u64,
    /// Committed invokes, or answered queries.
    pub completed: u64,
    pub valid: u64,
    pub failed: u64,
    pub mean_request_bytes: f64,
    pub mean_response_bytes: f64,
    pub max_response_bytes: f64,
    pub mean_latency_ms: Option<f64>,
    pub max_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerStats {
    pub classes: Vec<ClassStats>,
    pub validity: BTreeMap<String, u64>,
    /// Distinct committed blocks after genesis.
    pub blocks: u64,
    pub skipped_requests: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RaftStats {
    pub leaders_elected: u64,
    pub term_changes: u64,
    pub step_downs: u64,
    pub max_term: u64,
    pub commits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub end_s: f64,
    pub frames_captured: u64,
    pub decisions: BTreeMap<String, u64>,
    pub decision_rules: BTreeMap<String, u64>,
    pub detections: DetectionStats,
    pub victims: Vec<VictimRow>,
    pub victims_reported: usize,
    pub energy: Vec<EnergyRow>,
    pub edge: EdgeStats,
    pub ledger: LedgerStats,
    pub raft: RaftStats,
    pub coverage_fraction: f64,
    pub area_too_large: Vec<String>,
    pub returns_to_boat: BTreeMap<String, u64>,
    pub depleted: Vec<String>,
    pub faults: u64,
    pub violations: Vec<String>,
}

fn j(nj: u64) -> f64 {
    nj as f64 / 1e9
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl MetricsReport {
    pub fn from_trace(trace: &Trace) -> MetricsReport {
        let mut r = MetricsReport {
            scenario: String::new(),
            seed: 0,
            duration_s: 0.0,
            end_s: 0.0,
            frames_captured: 0,
            decisions: BTreeMap::new(),
            decision_rules: BTreeMap::new(),
            detections: DetectionStats::default(),
            victims: Vec::new(),
            victims_reported: 0,
            energy: Vec::new(),
            edge: EdgeStats::default(),
            ledger: LedgerStats::default(),
            raft: RaftStats::default(),
            coverage_fraction: 0.0,
            area_too_large: Vec::new(),
            returns_to_boat: BTreeMap::new(),
            depleted: Vec::new(),
            faults: 0,
            violations: Vec::new(),
        };
        let mut area = None;
        let mut footprints = Vec::new();
        let mut victims: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::new();
        let mut classes: BTreeMap<String, (Vec<f64>, Vec<f64>, Vec<f64>, u64, u64, u64, u64)> = BTreeMap::new();
        let mut urgent_nodes = BTreeSet::new();
        let mut block_numbers = BTreeSet::new();
        for rec in trace.records() {
            let t = rec.at.as_secs_f64();
            match &rec.event {
                TraceEvent::RunStart { scenario, seed, area: a, duration_s, end_s } => {
                    r.scenario = scenario.clone();
                    r.seed = *seed;
                    r.duration_s = *duration_s;
                    r.end_s = *end_s;
                    area = Some(*a);
                }
                TraceEvent::VictimPlaced { victim, .. } => {
                    victims.insert(victim.clone(), (None, None));
                }
                TraceEvent::AreaPlan { node, area_too_large: true, .. } => r.area_too_large.push(node.clone()),
                TraceEvent::FrameCaptured { footprint, .. } => {
                    r.frames_captured += 1;
                    footprints.push(*footprint);
                }
                TraceEvent::Decision { action, rule, .. } => {
                    *r.decisions.entry(action.clone()).or_default() += 1;
                    if let Some(rule) = rule {
                        let name = serde_json::to_value(rule).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                        *r.decision_rules.entry(name).or_default() += 1;
                    }
                }
                TraceEvent::Detection { positive, truth, stage, .. } => {
                    let d = &mut r.detections;
                    match (stage, positive) {
                        (Stage::FirstPass, true) => {
                            d.first_pass_positive += 1;
                            d.false_positive_first_pass += u64::from(!truth);
                        }
                        (Stage::FirstPass, false) => d.first_pass_negative += 1,
                        (Stage::Verified, true) => d.verified_positive += 1,
                        (Stage::Verified, false) => d.verified_negative += 1,
                    }
                }
                TraceEvent::VerifySkipped { .. } => r.detections.verify_skipped += 1,
                TraceEvent::VictimDiscovered { victim, .. } => {
                    victims.entry(victim.clone()).or_default().0.get_or_insert(t);
                }
                TraceEvent::VictimReported { victim, .. } => {
                    victims.entry(victim.clone()).or_default().1.get_or_insert(t);
                }
                TraceEvent::UrgentQueued { msg, .. } => {
                    if urgent_nodes.insert(msg.clone()) {
                        r.edge.urgent_queued += 1;
                    }
                }
                TraceEvent::RelayOffered { .. } => r.edge.relay_offers += 1,
                TraceEvent::EdgeReceived { via, bytes, duplicate, .. } => {
                    if *duplicate {
                        r.edge.urgent_duplicates += 1;
                        continue;
                    }
                    match via {
                        Via::Direct => r.edge.urgent_direct += 1,
                        Via::Relay => r.edge.urgent_relay += 1,
                        Via::Sync => r.edge.urgent_sync += 1,
                    }
                    if *via == Via::Sync {
                        r.edge.synced_bytes += bytes;
                    } else {
                        r.edge.live_bytes += bytes;
                    }
                }
                TraceEvent::ArrivedBoat { synced_bytes, .. } => r.edge.synced_bytes += synced_bytes,
                TraceEvent::ReturnToBoat { reason, .. } => *r.returns_to_boat.entry(reason.clone()).or_default() += 1,
                TraceEvent::Depleted { node, .. } => r.depleted.push(node.clone()),
                TraceEvent::Fault { .. } => r.faults += 1,
                TraceEvent::LedgerSkipped { .. } => r.ledger.skipped_requests += 1,
                TraceEvent::EnergyBook {
                    node,
                    role,
                    hover_nj,
                    processing_nj,
                    tx_nj,
                    idle_radio_nj,
                    shortfall_nj,
                    initial_nj,
                    recharged_nj,
                    remaining_nj,
                } => {
                    let charged = hover_nj + processing_nj + tx_nj + idle_radio_nj;
                    r.energy.push(EnergyRow {
                        node: node.clone(),
                        role: role.clone(),
                        hover_j: j(*hover_nj),
                        processing_j: j(*processing_nj),
                        tx_j: j(*tx_nj),
                        idle_radio_j: j(*idle_radio_nj),
                        shortfall_j: j(*shortfall_nj),
                        recharged_j: j(*recharged_nj),
                        remaining_j: j(*remaining_nj),
                        balanced: initial_nj + recharged_nj + shortfall_nj == charged + remaining_nj,
                    });
                }
                TraceEvent::BlockCommitted { number, .. } => {
                    block_numbers.insert(*number);
                }
                TraceEvent::ValidityTally { flag, count } => {
                    r.ledger.validity.insert(flag.as_str().to_string(), *count);
                }
                TraceEvent::TxReceipt { receipt } => {
                    let c = classes.entry(receipt.class.clone()).or_default();
                    c.0.push(receipt.request_bytes as f64);
                    c.3 += 1;
                    if let Some(l) = receipt.latency() {
                        c.2.push(l.as_millis_f64());
                        c.4 += 1;
                    }
                    if receipt.flag == Some(crate::ledger::ValidityFlag::Valid) {
                        c.5 += 1;
                    }
                    if receipt.error.is_some() {
                        c.6 += 1;
                    }
                }
                TraceEvent::QueryReceipt { receipt } => {
                    let c = classes.entry(receipt.class.clone()).or_default();
                    c.3 += 1;
                    c.1.push(receipt.response_bytes as f64);
                    if let Some(a) = receipt.answered_at {
                        c.2.push(a.since(receipt.sent_at).as_millis_f64());
                        c.4 += 1;
                    }
                    if receipt.error.is_some() {
                        c.6 += 1;
                    }
                }
                TraceEvent::Raft { event } => match event {
                    RaftEvent::BecameLeader { term, .. } => {
                        r.raft.leaders_elected += 1;
                        r.raft.max_term = r.raft.max_term.max(*term);
                    }
                    RaftEvent::TermChange { term, .. } => {
                        r.raft.term_changes += 1;
                        r.raft.max_term = r.raft.max_term.max(*term);
                    }
                    RaftEvent::SteppedDown { .. } => r.raft.step_downs += 1,
                    RaftEvent::Commit { .. } => r.raft.commits += 1,
                    RaftEvent::Vote { .. } => {}
                },
                TraceEvent::Violation { what } => r.violations.push(what.clone()),
                _ => {}
            }
        }
        r.victims = victims
            .into_iter()
            .map(|(victim, (d, rep))| VictimRow {
                victim,
                discovered_s: d,
                reported_s: rep,
                delivery_latency_s: d.zip(rep).map(|(d, rep)| rep - d),
            })
            .collect();
        r.victims_reported = r.victims.iter().filter(|v| v.reported_s.is_some()).count();
        r.ledger.classes = classes
            .into_iter()
            .map(|(class, (req, resp, lat, n, committed, valid, failed))| ClassStats {
                class,
                requests: n,
                completed: committed,
                valid,
                failed,
                mean_request_bytes: mean(&req).unwrap_or(0.0),
                mean_response_bytes: mean(&resp).unwrap_or(0.0),
                max_response_bytes: resp.iter().copied().fold(0.0, f64::max),
                mean_latency_ms: mean(&lat),
                max_latency_ms: lat.iter().copied().reduce(f64::max),
            })
            .collect();
        r.ledger.blocks = block_numbers.len() as u64;
        r.coverage_fraction = area.map_or(0.0, |a| coverage(a, &footprints, COVERAGE_CELL_M));
        r
    }

    pub fn energy_balanced(&self) -> bool {
        self.energy.iter().all(|e| e.balanced)
    }
}

/// Fraction of `cell`-sized raster cells in `area` whose centre lies under a footprint.
pub fn coverage(area: Rect, footprints: &[Rect], cell: f64) -> f64 {
    let nx = (area.width() / cell).ceil().max(1.0) as usize;
    let ny = (area.height() / cell).ceil().max(1.0) as usize;
    let mut hit = vec![false; nx * ny];
    let centre = |i: usize, lo: f64, hi: f64| (lo + (i as f64 + 0.5) * cell).min(hi);
    for f in footprints {
        let i0 = (((f.x0 - area.x0) / cell - 0.5).ceil().max(0.0)) as usize;
        let j0 = (((f.y0 - area.y0) / cell - 0.5).ceil().max(0.0)) as usize;
        for i in i0..nx {
            let x = centre(i, area.x0, area.x1);
            if x > f.x1 {
                break;
            }
            for jj in j0..ny {
                let y = centre(jj, area.y0, area.y1);
                if y > f.y1 {
                    break;
                }
                if f.contains((x, y)) {
                    hit[jj * nx + i] = true;
                }
            }
        }
    }
    hit.iter().filter(|h| **h).count() as f64 / hit.len() as f64
}

/// Which tables `report_tables` can render.
pub const TABLES: [&str; 3] = ["offload", "link", "ledger"];

/// Plain-text tables for the given names.
pub fn report_tables(report: &MetricsReport, scenario: &Scenario, names: &[String]) -> Result<String, String> {
    let mut out = String::new();
    for name in names {
        match name.as_str() {
            "offload" => offload_table(scenario, &mut out)?,
            "link" => link_table(scenario, &mut out),
            "ledger" => ledger_table(report, &mut out),
            other => return Err(format!("unknown table `{other}` (expected one of {})", TABLES.join(", "))),
        }
        out.push('\n');
    }
    Ok(out)
}

fn offload_table(sc: &Scenario, out: &mut String) -> Result<(), String> {
    let c = sc.clusters.first().ok_or("scenario has no clusters")?;
    let small = sc.profile(&c.small_profile).ok_or("unknown small profile")?;
    let leader = sc.profile(&c.leader.profile).ok_or("unknown leader profile")?;
    let algos: Vec<AlgorithmId> = small.algorithms(&c.small_mode);
    let local = LocalSide { board: Board { profile: &small, mode: &c.small_mode }, candidates: &algos, radio: &sc.radio.small };
    let remote = RemoteSide { board: Board { profile: &leader, mode: &c.leader.mode }, algorithm: &c.leader.algorithm };
    let (ol, oe) = offload_cost(&local, &remote).map_err(|e| e.to_string())?;
    let _ = writeln!(out, "offload: {} local vs offload to {} running {}", small.board_name, leader.board_name, c.leader.algorithm);
    let _ = writeln!(out, "{:<14} {:>16} {:>16} {:>18} {:>18}", "algorithm", "local_ms", "offload_ms", "local_mJ", "offload_mJ");
    for a in &algos {
        let (ll, le) = local_cost(&local, a).map_err(|e| e.to_string())?;
        let _ = writeln!(out, "{:<14} {:>16.1} {:>16.1} {:>18.1} {:>18.1}", a.as_str(), ll, ol, le, oe);
    }
    Ok(())
}

fn link_table(sc: &Scenario, out: &mut String) {
    let _ = writeln!(out, "link: UDP datagram latency on the small-drone radio");
    let _ = writeln!(out, "{:>12} {:>12}", "bytes", "latency_ms");
    for size in [crate::netsim::DATAGRAM_POINT_SMALL.0, crate::netsim::MAX_DATAGRAM_BYTES] {
        let _ = writeln!(out, "{:>12} {:>12.3}", size, sc.radio.small.datagram_latency_ms(size));
    }
}

fn ledger_table(r: &MetricsReport, out: &mut String) {
    let _ = writeln!(out, "ledger: request classes");
    let _ = writeln!(out, "{:<18} {:>8} {:>8} {:>10} {:>12} {:>12} {:>10}", "class", "count", "valid", "req_MB", "resp_MB", "max_resp_MB", "mean_ms");
    for c in &r.ledger.classes {
        let _ = writeln!(
            out,
            "{:<18} {:>8} {:>8} {:>10.3} {:>12.3} {:>12.3} {:>10}",
            c.class,
            c.requests,
            c.valid,
            c.mean_request_bytes / 1e6,
            c.mean_response_bytes / 1e6,
            c.max_response_bytes / 1e6,
            c.mean_latency_ms.map_or("-".to_string(), |m| format!("{m:.1}")),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_counts_cell_centres() {
        let area = Rect::new(0.0, 0.0, 100.0, 100.0);
        assert_eq!(coverage(area, &[], 10.0), 0.0);
        assert_eq!(coverage(area, &[Rect::new(-5.0, -5.0, 105.0, 105.0)], 10.0), 1.0);
        let half = coverage(area, &[Rect::new(0.0, 0.0, 50.0, 100.0)], 10.0);
        assert_eq!(half, 0.5);
        // Centres at 5, 15, ...: a footprint spanning [6, 14] in x touches none.
        assert_eq!(coverage(area, &[Rect::new(6.0, 0.0, 14.0, 100.0)], 10.0), 0.0);
    }

    #[test]
    fn coverage_matches_brute_force() {
        let area = Rect::new(-30.0, 10.0, 170.0, 95.0);
        let fps = [Rect::new(-40.0, 0.0, 20.0, 50.0), Rect::new(33.3, 41.0, 90.9, 77.7), Rect::new(150.0, 90.0, 200.0, 120.0)];
        let mut hits = 0;
        let mut n = 0;
        for i in 0..20 {
            for k in 0..9 {
                let c = ((-30.0 + 5.0 + 10.0 * i as f64).min(170.0), (10.0 + 5.0 + 10.0 * k as f64).min(95.0));
                n += 1;
                hits += usize::from(fps.iter().any(|f| f.contains(c)));
            }
        }
        assert_eq!(coverage(area, &fps, 10.0), hits as f64 / n as f64);
    }

    #[test]
    fn unknown_table_is_an_error() {
        let r = MetricsReport::from_trace(&Trace::new());
        let err = report_tables(&r, &Scenario::paper_baseline(), &["bogus".into()]).unwrap_err();
        assert!(err.contains("offload"));
    }
}
