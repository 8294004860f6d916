//! One full run: fleet and ledger on a shared kernel, plus the run outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fleet::{Fleet, FleetCx, FleetError, FleetEvent};
use crate::kernel::{Kernel, NodeId, SimTime};
use crate::ledger::export::{encode_log, write_export, ExportError};
use crate::ledger::{Chain, ValidityFlag};
use crate::metrics::MetricsReport;
use crate::netsim::Network;
use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{hex, Trace, TraceError, TraceEvent};
use crate::txflow::{KernelHost, LedgerEvent, LedgerNet};

#[derive(Debug, Clone)]
pub enum SimEvent {
    Fleet(FleetEvent),
    Ledger(LedgerEvent),
}

impl From<LedgerEvent> for SimEvent {
    fn from(e: LedgerEvent) -> Self {
        SimEvent::Ledger(e)
    }
}

impl From<FleetEvent> for SimEvent {
    fn from(e: FleetEvent) -> Self {
        SimEvent::Fleet(e)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error("ledger setup: {0}")]
    Ledger(String),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report encoding: {0}")]
    Json(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io { path: path.to_path_buf(), source }
}

pub struct Simulation {
    pub scenario: Scenario,
    pub seed: u64,
    pub kernel: Kernel<SimEvent>,
    pub net: Network,
    pub ledger: LedgerNet,
    pub fleet: Fleet,
    pub trace: Trace,
}

impl Simulation {
    /// Builds every node; `seed` overrides the scenario's master seed.
    pub fn new(scenario: &Scenario, seed: Option<u64>) -> Result<Simulation, SimError> {
        let mut sc = scenario.clone();
        if let Some(s) = seed {
            sc.master_seed = s;
        }
        sc.validate()?;
        let seed = sc.master_seed;
        let mut kernel = Kernel::new(seed);
        Network::register_streams(kernel.streams());
        LedgerNet::register_streams(kernel.streams());
        Fleet::register_streams(kernel.streams());
        let mut net = Network::new(sc.wired, sc.conditions);
        let mut trace = Trace::new();
        trace.push(
            SimTime::ZERO,
            TraceEvent::RunStart { scenario: sc.name.clone(), seed, area: sc.area, duration_s: sc.duration_s, end_s: sc.end_time_s() },
        );
        let mut fleet = Fleet::build(&sc, kernel.streams(), &mut net, &mut trace)?;
        let base = fleet.node_count();
        let o = sc.ledger.orderers as u32;
        let orderers: Vec<NodeId> = (0..o).map(|i| NodeId(base + i)).collect();
        let peers: Vec<NodeId> = (0..sc.ledger.peers as u32).map(|i| NodeId(base + o + i)).collect();
        for (i, id) in orderers.iter().enumerate() {
            fleet.register_name(&format!("orderer{}", i + 1), *id);
        }
        for (i, id) in peers.iter().enumerate() {
            fleet.register_name(&format!("peer{}", i + 1), *id);
        }
        let seed_data = fleet.ledger_seed(&sc);
        let ledger = LedgerNet::new(sc.ledger, &seed_data, seed, &orderers, &peers, &fleet.ledger_clients()).map_err(SimError::Ledger)?;
        ledger.attach(&mut net, sc.boat.position).map_err(SimError::Ledger)?;
        let mut sim = Simulation { scenario: sc, seed, kernel, net, ledger, fleet, trace };
        {
            let mut host = KernelHost { kernel: &mut sim.kernel, net: &mut sim.net };
            sim.ledger.start(&mut host);
        }
        let mut cx = FleetCx { kernel: &mut sim.kernel, net: &mut sim.net, ledger: &mut sim.ledger, trace: &mut sim.trace };
        sim.fleet.start(&mut cx);
        Ok(sim)
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::from_micros((self.scenario.end_time_s() * 1e6).round() as u64)
    }

    pub fn run_until(&mut self, t: SimTime) {
        let (net, ledger, fleet, trace) = (&mut self.net, &mut self.ledger, &mut self.fleet, &mut self.trace);
        self.kernel.run_until(t, |kernel, ev| match ev.payload {
            SimEvent::Fleet(f) => {
                let mut cx = FleetCx { kernel, net, ledger, trace };
                fleet.handle(&mut cx, ev.target, f);
            }
            SimEvent::Ledger(l) => {
                let mut host = KernelHost { kernel, net };
                ledger.handle(&mut host, ev.target, l);
            }
        });
    }

    /// Runs to `until_s` (default: mission end plus grace) and assembles the outputs.
    pub fn run(mut self, until_s: Option<f64>) -> RunOutput {
        let end = until_s.map_or(self.end_time(), |s| SimTime::from_micros((s * 1e6).round() as u64));
        self.run_until(end);
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        {
            let mut cx = FleetCx { kernel: &mut self.kernel, net: &mut self.net, ledger: &mut self.ledger, trace: &mut self.trace };
            self.fleet.finish(&mut cx);
        }
        let mut violations: Vec<String> = self.ledger.violations().to_vec();
        if let Err(v) = self.ledger.check_raft() {
            violations.push(format!("raft: {v}"));
        }
        if !self.ledger.peers_agree(&self.net) {
            violations.push("peers disagree on the committed chain".into());
        }
        let t = &mut self.trace;
        for r in self.ledger.raft_trace() {
            t.push(r.at, TraceEvent::Raft { event: r.event.clone() });
        }
        for c in self.ledger.peer_commits() {
            t.push(c.at, TraceEvent::BlockCommitted { peer: c.peer, number: c.number, digest: c.digest.to_hex(), txs: c.txs });
        }
        let end = self.kernel.now();
        for r in self.ledger.receipts() {
            t.push(r.committed_at.unwrap_or(end), TraceEvent::TxReceipt { receipt: r.clone() });
        }
        for q in self.ledger.queries() {
            t.push(q.answered_at.unwrap_or(end), TraceEvent::QueryReceipt { receipt: q.clone() });
        }
        let chain = self.ledger.peer_chain(self.ledger.peer_ids()[0]).expect("peer exists").clone();
        for flag in [ValidityFlag::Valid, ValidityFlag::InvalidVersionConflict, ValidityFlag::InvalidEndorsement, ValidityFlag::InvalidDuplicate] {
            let count = chain.blocks()[1..].iter().flat_map(|b| b.validity_flags.iter()).filter(|f| **f == flag).count() as u64;
            t.push(end, TraceEvent::ValidityTally { flag, count });
        }
        let mut records = std::mem::take(t).into_records();
        records.sort_by_key(|r| r.at);
        let mut trace = Trace::from_records(records);
        let mut report = MetricsReport::from_trace(&trace);
        if !report.energy_balanced() {
            violations.push("energy books do not balance".into());
        }
        for v in &violations {
            trace.push(end, TraceEvent::Violation { what: v.clone() });
        }
        report.violations = violations.clone();
        RunOutput { scenario: self.scenario, seed: self.seed, trace, report, chain, violations, net: self.net, ledger: self.ledger, fleet: self.fleet }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_JSON: &str = "trace.json";
pub const REPORT_JSON: &str = "report.json";
pub const LEDGER_BIN: &str = "ledger.bin";
pub const SCENARIO_TOML: &str = "scenario.toml";

pub struct RunOutput {
    pub scenario: Scenario,
    pub seed: u64,
    pub trace: Trace,
    pub report: MetricsReport,
    /// The first peer's committed chain.
    pub chain: Chain,
    pub violations: Vec<String>,
    pub net: Network,
    pub ledger: LedgerNet,
    pub fleet: Fleet,
}

/// Digests of each output, for determinism checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigests {
    pub trace: String,
    pub report: String,
    pub ledger: String,
}

impl RunOutput {
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes")
    }

    pub fn ledger_log(&self) -> Vec<u8> {
        encode_log(self.chain.blocks()).0
    }

    pub fn digests(&self) -> OutputDigests {
        use sha2::{Digest as _, Sha256};
        OutputDigests {
            trace: self.trace.digest_hex(),
            report: hex(&Sha256::digest(self.report_json().as_bytes())),
            ledger: hex(&Sha256::digest(self.ledger_log())),
        }
    }

    /// Writes the trace, the JSON report, the scenario and the ledger export into `dir`.
    pub fn write(&self, dir: &Path, format: TraceFormat) -> Result<Vec<PathBuf>, SimError> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = Vec::new();
        let trace_path = match format {
            TraceFormat::Csv => {
                let p = dir.join(TRACE_CSV);
                let f = fs::File::create(&p).map_err(io(&p))?;
                self.trace.write_csv(std::io::BufWriter::new(f))?;
                p
            }
            TraceFormat::Json => {
                let p = dir.join(TRACE_JSON);
                let body = serde_json::to_string(self.trace.records())?;
                fs::write(&p, body).map_err(io(&p))?;
                p
            }
        };
        written.push(trace_path);
        let p = dir.join(REPORT_JSON);
        fs::write(&p, self.report_json()).map_err(io(&p))?;
        written.push(p);
        let p = dir.join(SCENARIO_TOML);
        fs::write(&p, self.scenario.to_toml()).map_err(io(&p))?;
        written.push(p);
        let p = dir.join(LEDGER_BIN);
        let index = write_export(&self.chain, &p)?;
        written.push(p);
        written.push(index);
        Ok(written)
    }
}

/// Runs `scenario` once to completion.
pub fn simulate(scenario: &Scenario, seed: Option<u64>, until_s: Option<f64>) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(scenario, seed)?.run(until_s))
}
