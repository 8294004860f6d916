//! Execute-order-validate over simulated orderer, peer and client nodes.
//!
//! Clients send proposals to every endorsing peer, assemble matching
//! endorsements, and submit to the orderer they believe leads. The Raft
//! leader batches transactions into blocks; every orderer delivers the
//! blocks it commits to every peer; peers validate and apply them and notify
//! the submitting client. Clients probe orderers until their transaction is
//! committed, so transactions lost with a failed leader are re-submitted.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::contracts::{self, is_query, seed_txs, ExecCtx, Invocation, SeedData};
use crate::kernel::{Kernel, NodeId, RandomStreams, SimDuration, SimTime};
use crate::ledger::block::{Endorsement, ReadEntry, WriteEntry};
use crate::ledger::chain::{genesis_block, seal_block};
use crate::ledger::{
    Block, Chain, ChainConfig, ContractId, Digest, EndorsementPolicy, IdentityRegistry, Role, Transaction, TxKind,
    ValidityFlag,
};
use crate::netsim::{DeliveryOutcome, LinkKind, NodeClass, Network};
use crate::raft::{
    check_election_safety, check_log_matching, BatchConfig, BlockCutter, Entry, RaftConfig, RaftInput, RaftMsg, RaftNode,
    RaftOutput, RaftTraceRecord, RaftViolation, ELECTION_STREAM,
};

pub const CA_ID: &str = "ca";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerConfig {
    pub orderers: usize,
    pub peers: usize,
    pub batch: BatchConfig,
    pub raft: RaftConfig,
    /// Endorsements required per invoke; majority of peers when absent.
    pub endorsement_threshold: Option<usize>,
    pub endorse_timeout_ms: u64,
    pub client_retry_ms: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            orderers: 3,
            peers: 3,
            batch: BatchConfig::default(),
            raft: RaftConfig::default(),
            endorsement_threshold: None,
            endorse_timeout_ms: 1000,
            client_retry_ms: 250,
        }
    }
}

impl LedgerConfig {
    pub fn policy(&self) -> EndorsementPolicy {
        match self.endorsement_threshold {
            Some(threshold) => EndorsementPolicy { threshold },
            None => EndorsementPolicy::majority_of(self.peers),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.orderers == 0 || self.peers == 0 {
            return Err("ledger needs at least one orderer and one peer".into());
        }
        let t = self.policy().threshold;
        if t == 0 || t > self.peers {
            return Err(format!("endorsement threshold {t} must be in 1..={}", self.peers));
        }
        if self.raft.election_min_ms == 0 || self.raft.election_min_ms > self.raft.election_max_ms {
            return Err("raft election range must be non-empty and positive".into());
        }
        if self.raft.heartbeat_ms == 0 || self.raft.heartbeat_ms >= self.raft.election_min_ms {
            return Err("raft heartbeat must be positive and below the election timeout".into());
        }
        self.batch.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitReply {
    Accepted,
    Redirect(NodeId),
    NoLeader,
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndorseResult {
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub signature: Bytes,
    pub body: Bytes,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerMsg {
    Raft(RaftMsg),
    Submit { tx: Arc<Transaction>, first_sent: SimTime, attempt: u32 },
    SubmitReply { tx_id: Digest, reply: SubmitReply },
    Probe { tx_id: Digest },
    ProbeReply { tx_id: Digest, leader: bool, known: bool, hint: Option<NodeId> },
    DeliverBlock(Arc<Block>),
    FetchBlocks { from: u64 },
    Proposal { tx: Arc<Transaction> },
    ProposalResponse { tx_id: Digest, peer: String, result: Result<EndorseResult, String> },
    CommitNotice { block: u64, entries: Vec<(Digest, ValidityFlag)> },
    QueryRequest { req_id: u64, contract: ContractId, function: String, args: Bytes },
    QueryResponse { req_id: u64, result: Result<(Bytes, u64), String> },
}

impl LedgerMsg {
    pub fn size_bytes(&self) -> u64 {
        let rw = |r: &[ReadEntry], w: &[WriteEntry]| -> u64 {
            r.iter().map(|e| e.key.len() as u64 + 17).sum::<u64>()
                + w.iter().map(|e| (e.key.len() + e.value.len()) as u64 + 8).sum::<u64>()
        };
        64 + match self {
            LedgerMsg::Raft(m) => m.size_bytes(),
            LedgerMsg::Submit { tx, .. } | LedgerMsg::Proposal { tx } => tx.size_bytes(),
            LedgerMsg::DeliverBlock(b) => b.size_bytes(),
            LedgerMsg::ProposalResponse { result: Ok(r), .. } => {
                rw(&r.read_set, &r.write_set) + r.signature.len() as u64 + r.body.len() as u64
            }
            LedgerMsg::CommitNotice { entries, .. } => 33 * entries.len() as u64,
            LedgerMsg::QueryRequest { args, function, .. } => (args.len() + function.len()) as u64,
            LedgerMsg::QueryResponse { result: Ok((_, size)), .. } => *size,
            _ => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LedgerMsg::Raft(m) => m.label(),
            LedgerMsg::Submit { .. } => "submit",
            LedgerMsg::SubmitReply { .. } => "submit-reply",
            LedgerMsg::Probe { .. } => "probe",
            LedgerMsg::ProbeReply { .. } => "probe-reply",
            LedgerMsg::DeliverBlock(_) => "deliver-block",
            LedgerMsg::FetchBlocks { .. } => "fetch-blocks",
            LedgerMsg::Proposal { .. } => "proposal",
            LedgerMsg::ProposalResponse { .. } => "proposal-response",
            LedgerMsg::CommitNotice { .. } => "commit-notice",
            LedgerMsg::QueryRequest { .. } => "query",
            LedgerMsg::QueryResponse { .. } => "query-response",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEvent {
    Deliver { from: NodeId, msg: LedgerMsg },
    ElectionTimer { gen: u64 },
    Heartbeat { gen: u64 },
    BatchTimer { gen: u64 },
    ClientTick { client: String },
    EndorseDeadline { tx_id: Digest },
}

/// What the ledger needs from the surrounding simulation.
pub trait LedgerHost {
    fn now(&self) -> SimTime;
    fn schedule(&mut self, at: SimTime, target: NodeId, ev: LedgerEvent);
    fn network(&mut self) -> &mut Network;
    fn streams(&mut self) -> &mut RandomStreams;
}

pub struct KernelHost<'a, P> {
    pub kernel: &'a mut Kernel<P>,
    pub net: &'a mut Network,
}

impl<P: From<LedgerEvent>> LedgerHost for KernelHost<'_, P> {
    fn now(&self) -> SimTime {
        self.kernel.now()
    }

    fn schedule(&mut self, at: SimTime, target: NodeId, ev: LedgerEvent) {
        self.kernel.schedule(at, target, ev.into()).expect("ledger schedules at or after now");
    }

    fn network(&mut self) -> &mut Network {
        self.net
    }

    fn streams(&mut self) -> &mut RandomStreams {
        self.kernel.streams()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxReceipt {
    pub tx_id: Digest,
    pub client: String,
    pub contract: ContractId,
    pub function: String,
    pub class: String,
    pub request_bytes: u64,
    pub proposed_at: SimTime,
    pub submitted_at: Option<SimTime>,
    pub committed_at: Option<SimTime>,
    pub block: Option<u64>,
    pub flag: Option<ValidityFlag>,
    pub endorsements: usize,
    pub error: Option<String>,
    pub response: Option<String>,
}

impl TxReceipt {
    pub fn latency(&self) -> Option<SimDuration> {
        self.committed_at.map(|c| c.since(self.proposed_at))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReceipt {
    pub req_id: u64,
    pub client: String,
    pub contract: ContractId,
    pub function: String,
    pub class: String,
    pub peer: Option<NodeId>,
    pub sent_at: SimTime,
    pub answered_at: Option<SimTime>,
    pub response_bytes: u64,
    pub error: Option<String>,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerCommit {
    pub at: SimTime,
    pub peer: NodeId,
    pub number: u64,
    pub digest: Digest,
    pub txs: usize,
}

struct OrdererState {
    name: String,
    raft: RaftNode,
    cutter: BlockCutter,
    election_gen: u64,
    heartbeat_gen: u64,
    batch_gen: u64,
    committed: Vec<Arc<Block>>,
}

struct PeerState {
    name: String,
    chain: Chain,
    buffer: BTreeMap<u64, Arc<Block>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Endorsing,
    Ordering,
}

struct Inflight {
    tx: Transaction,
    phase: Phase,
    responses: BTreeMap<String, Result<EndorseResult, String>>,
    first_sent: SimTime,
    last_probe: SimTime,
    attempt: u32,
}

struct ClientState {
    node: NodeId,
    leader_guess: Option<NodeId>,
    inflight: BTreeMap<Digest, Inflight>,
    tick_armed: bool,
    nonce: u64,
}

pub struct LedgerNet {
    cfg: LedgerConfig,
    registry: IdentityRegistry,
    chain_cfg: ChainConfig,
    genesis: Block,
    orderer_ids: Vec<NodeId>,
    peer_ids: Vec<NodeId>,
    orderers: BTreeMap<NodeId, OrdererState>,
    peers: BTreeMap<NodeId, PeerState>,
    clients: BTreeMap<String, ClientState>,
    tx_owner: HashMap<Digest, String>,
    receipt_index: HashMap<Digest, usize>,
    receipts: Vec<TxReceipt>,
    queries: Vec<QueryReceipt>,
    raft_trace: Vec<RaftTraceRecord>,
    peer_commits: Vec<PeerCommit>,
    violations: Vec<String>,
}

impl LedgerNet {
    /// Builds the registry, the genesis block and every node's initial state.
    pub fn new(
        cfg: LedgerConfig,
        seed: &SeedData,
        network_secret: u64,
        orderer_ids: &[NodeId],
        peer_ids: &[NodeId],
        clients: &[(String, NodeId)],
    ) -> Result<LedgerNet, String> {
        cfg.validate()?;
        seed.validate()?;
        if orderer_ids.len() != cfg.orderers || peer_ids.len() != cfg.peers {
            return Err("node id lists do not match the ledger configuration".into());
        }
        let mut registry = IdentityRegistry::new();
        registry.register(CA_ID, Role::Ca, network_secret);
        let oname = |i: usize| format!("orderer{}", i + 1);
        let pname = |i: usize| format!("peer{}", i + 1);
        for i in 0..cfg.orderers {
            registry.register(&oname(i), Role::Orderer, network_secret);
        }
        for i in 0..cfg.peers {
            registry.register(&pname(i), Role::Peer, network_secret);
        }
        for (name, _) in clients {
            registry.register(name, Role::Client, network_secret);
        }
        let chain_cfg = ChainConfig { policy: cfg.policy(), max_block_txs: cfg.batch.max_messages };
        let genesis = genesis_block(&registry, CA_ID, seed_txs(seed, CA_ID)).map_err(|e| e.to_string())?;
        let base = Chain::new(genesis.clone(), registry.clone(), chain_cfg).map_err(|e| e.to_string())?;
        let orderers = orderer_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                (
                    *id,
                    OrdererState {
                        name: oname(i),
                        raft: RaftNode::new(*id, orderer_ids),
                        cutter: BlockCutter::new(cfg.batch),
                        election_gen: 0,
                        heartbeat_gen: 0,
                        batch_gen: 0,
                        committed: Vec::new(),
                    },
                )
            })
            .collect();
        let peers = peer_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, PeerState { name: pname(i), chain: base.clone(), buffer: BTreeMap::new() }))
            .collect();
        let clients = clients
            .iter()
            .map(|(name, node)| {
                (
                    name.clone(),
                    ClientState { node: *node, leader_guess: None, inflight: BTreeMap::new(), tick_armed: false, nonce: 0 },
                )
            })
            .collect();
        Ok(LedgerNet {
            cfg,
            registry,
            chain_cfg,
            genesis,
            orderer_ids: orderer_ids.to_vec(),
            peer_ids: peer_ids.to_vec(),
            orderers,
            peers,
            clients,
            tx_owner: HashMap::new(),
            receipt_index: HashMap::new(),
            receipts: Vec::new(),
            queries: Vec::new(),
            raft_trace: Vec::new(),
            peer_commits: Vec::new(),
            violations: Vec::new(),
        })
    }

    /// Attaches ledger nodes as co-located edge servers and links them:
    /// orderers in a full mesh, every orderer to every peer, every client to all of them.
    pub fn attach(&self, net: &mut Network, position: (f64, f64)) -> Result<(), String> {
        let client_nodes: Vec<NodeId> = self.clients.values().map(|c| c.node).collect();
        for id in self.orderer_ids.iter().chain(&self.peer_ids).chain(&client_nodes) {
            if net.class(*id).is_none() {
                net.attach(*id, NodeClass::Edge, None, position, None);
            }
        }
        let mut pairs = Vec::new();
        for (i, a) in self.orderer_ids.iter().enumerate() {
            for b in &self.orderer_ids[i + 1..] {
                pairs.push((*a, *b));
            }
            for p in &self.peer_ids {
                pairs.push((*a, *p));
            }
        }
        for c in &client_nodes {
            for n in self.orderer_ids.iter().chain(&self.peer_ids) {
                pairs.push((*c, *n));
            }
        }
        for (a, b) in pairs {
            if a != b && net.link(a, b).is_none() {
                net.add_link(a, b, LinkKind::EdgeToEdge).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    pub fn register_streams(streams: &mut RandomStreams) {
        streams.register(ELECTION_STREAM);
    }

    /// Arms every orderer's timers.
    pub fn start<H: LedgerHost>(&mut self, host: &mut H) {
        for id in self.orderer_ids.clone() {
            let outs = self.orderers.get_mut(&id).unwrap().raft.start();
            self.process_raft(host, id, outs, false);
        }
    }

    pub fn orderer_ids(&self) -> &[NodeId] {
        &self.orderer_ids
    }

    pub fn peer_ids(&self) -> &[NodeId] {
        &self.peer_ids
    }

    pub fn is_ledger_node(&self, id: NodeId) -> bool {
        self.orderers.contains_key(&id) || self.peers.contains_key(&id)
    }

    pub fn registry(&self) -> &IdentityRegistry {
        &self.registry
    }

    pub fn chain_config(&self) -> ChainConfig {
        self.chain_cfg
    }

    pub fn genesis(&self) -> &Block {
        &self.genesis
    }

    pub fn peer_chain(&self, id: NodeId) -> Option<&Chain> {
        self.peers.get(&id).map(|p| &p.chain)
    }

    pub fn leader(&self) -> Option<NodeId> {
        self.orderers.values().filter(|o| o.raft.is_leader()).max_by_key(|o| o.raft.term()).map(|o| o.raft.id())
    }

    pub fn orderer_term(&self, id: NodeId) -> Option<u64> {
        self.orderers.get(&id).map(|o| o.raft.term())
    }

    pub fn receipts(&self) -> &[TxReceipt] {
        &self.receipts
    }

    pub fn receipt(&self, id: &Digest) -> Option<&TxReceipt> {
        self.receipt_index.get(id).map(|i| &self.receipts[*i])
    }

    pub fn queries(&self) -> &[QueryReceipt] {
        &self.queries
    }

    pub fn raft_trace(&self) -> &[RaftTraceRecord] {
        &self.raft_trace
    }

    pub fn peer_commits(&self) -> &[PeerCommit] {
        &self.peer_commits
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn inflight(&self) -> usize {
        self.clients.values().map(|c| c.inflight.len()).sum()
    }

    /// Committed block sequence of an orderer.
    pub fn orderer_blocks(&self, id: NodeId) -> Option<Vec<Digest>> {
        self.orderers.get(&id).map(|o| o.committed.iter().map(|b| b.header.digest()).collect())
    }

    pub fn check_raft(&self) -> Result<(), RaftViolation> {
        check_election_safety(&self.raft_trace)?;
        check_log_matching(&self.raft_trace)
    }

    /// Peers that are up hold identical chains and world states.
    pub fn peers_agree(&self, net: &Network) -> bool {
        let mut it = self
            .peers
            .iter()
            .filter(|(id, _)| net.is_node_up(**id))
            .map(|(_, p)| (p.chain.height(), p.chain.tip_digest(), p.chain.state().digest()));
        match it.next() {
            None => true,
            Some(first) => it.all(|x| x == first),
        }
    }

    fn send<H: LedgerHost>(&self, host: &mut H, from: NodeId, to: NodeId, msg: LedgerMsg) -> bool {
        let now = host.now();
        let size = msg.size_bytes();
        let out = host.network().send_wired(now, from, to, size, msg.label());
        match out {
            Ok(DeliveryOutcome::Delivered { at, .. }) => {
                host.schedule(at, to, LedgerEvent::Deliver { from, msg });
                true
            }
            _ => false,
        }
    }

    // ---- fault injection ----

    pub fn kill<H: LedgerHost>(&mut self, host: &mut H, id: NodeId) {
        let _ = host.network().set_node_up(id, false);
        if let Some(o) = self.orderers.get_mut(&id) {
            o.cutter.clear();
        }
    }

    /// Brings a node back with its durable state (log, term, vote, chain).
    pub fn restart<H: LedgerHost>(&mut self, host: &mut H, id: NodeId) {
        let _ = host.network().set_node_up(id, true);
        if let Some(o) = self.orderers.get_mut(&id) {
            o.cutter.clear();
            o.batch_gen += 1;
            o.heartbeat_gen += 1;
            let outs = o.raft.restart();
            self.process_raft(host, id, outs, false);
        } else if let Some(p) = self.peers.get(&id) {
            let from = p.chain.height();
            for o in self.orderer_ids.clone() {
                self.send(host, id, o, LedgerMsg::FetchBlocks { from });
            }
        }
    }

    // ---- client API ----

    /// Starts an invoke: drafts the transaction and sends it to every endorser.
    #[allow(clippy::too_many_arguments)]
    pub fn invoke<H: LedgerHost>(
        &mut self,
        host: &mut H,
        client: &str,
        contract: ContractId,
        function: &str,
        args: Bytes,
        payload: Bytes,
        class: &str,
    ) -> Result<Digest, String> {
        if is_query(contract, function) {
            return Err(format!("`{function}` is a query"));
        }
        let now = host.now();
        let c = self.clients.get_mut(client).ok_or_else(|| format!("unknown client `{client}`"))?;
        c.nonce += 1;
        let tx = Transaction::new(TxKind::Invoke, client, contract, function, args, payload, c.nonce, now);
        let id = tx.tx_id;
        let node = c.node;
        self.receipt_index.insert(id, self.receipts.len());
        self.receipts.push(TxReceipt {
            tx_id: id,
            client: client.to_string(),
            contract,
            function: function.to_string(),
            class: class.to_string(),
            request_bytes: tx.size_bytes(),
            proposed_at: now,
            submitted_at: None,
            committed_at: None,
            block: None,
            flag: None,
            endorsements: 0,
            error: None,
            response: None,
        });
        self.tx_owner.insert(id, client.to_string());
        let shared = Arc::new(tx.clone());
        c.inflight.insert(
            id,
            Inflight {
                tx,
                phase: Phase::Endorsing,
                responses: BTreeMap::new(),
                first_sent: now,
                last_probe: now,
                attempt: 0,
            },
        );
        for p in self.peer_ids.clone() {
            self.send(host, node, p, LedgerMsg::Proposal { tx: shared.clone() });
        }
        host.schedule(now + SimDuration::from_millis(self.cfg.endorse_timeout_ms), node, LedgerEvent::EndorseDeadline {
            tx_id: id,
        });
        Ok(id)
    }

    /// Sends a read-only request to one peer, falling back to the next reachable one.
    pub fn query<H: LedgerHost>(
        &mut self,
        host: &mut H,
        client: &str,
        contract: ContractId,
        function: &str,
        args: Bytes,
        class: &str,
    ) -> Result<u64, String> {
        if !is_query(contract, function) {
            return Err(format!("`{function}` is not a query"));
        }
        let node = self.clients.get(client).ok_or_else(|| format!("unknown client `{client}`"))?.node;
        let req_id = self.queries.len() as u64;
        let now = host.now();
        let mut chosen = None;
        for p in self.peer_ids.clone() {
            let msg = LedgerMsg::QueryRequest { req_id, contract, function: function.to_string(), args: args.clone() };
            if self.send(host, node, p, msg) {
                chosen = Some(p);
                break;
            }
        }
        self.queries.push(QueryReceipt {
            req_id,
            client: client.to_string(),
            contract,
            function: function.to_string(),
            class: class.to_string(),
            peer: chosen,
            sent_at: now,
            answered_at: None,
            response_bytes: 0,
            error: chosen.is_none().then(|| "PeerUnreachable".to_string()),
            response: None,
        });
        Ok(req_id)
    }

    // ---- event dispatch ----

    pub fn handle<H: LedgerHost>(&mut self, host: &mut H, target: NodeId, ev: LedgerEvent) {
        let up = host.network().is_node_up(target);
        if self.orderers.contains_key(&target) {
            if up {
                self.on_orderer(host, target, ev);
            }
        } else if self.peers.contains_key(&target) {
            if up {
                if let LedgerEvent::Deliver { from, msg } = ev {
                    self.on_peer(host, target, from, msg);
                }
            }
        } else if up {
            self.on_client(host, target, ev);
        }
    }

    fn process_raft<H: LedgerHost>(&mut self, host: &mut H, id: NodeId, outs: Vec<RaftOutput>, was_leader: bool) {
        let now = host.now();
        for o in outs {
            match o {
                RaftOutput::Send { to, msg } => {
                    self.send(host, id, to, LedgerMsg::Raft(msg));
                }
                RaftOutput::ResetElectionTimer => {
                    let d = self.cfg.raft.draw_election_timeout(host.streams());
                    let st = self.orderers.get_mut(&id).unwrap();
                    st.election_gen += 1;
                    host.schedule(now + d, id, LedgerEvent::ElectionTimer { gen: st.election_gen });
                }
                RaftOutput::StartHeartbeat => {
                    let st = self.orderers.get_mut(&id).unwrap();
                    st.heartbeat_gen += 1;
                    host.schedule(now + self.cfg.raft.heartbeat(), id, LedgerEvent::Heartbeat { gen: st.heartbeat_gen });
                }
                RaftOutput::Event(event) => self.raft_trace.push(RaftTraceRecord { at: now, event }),
            }
        }
        let st = self.orderers.get_mut(&id).unwrap();
        if was_leader && !st.raft.is_leader() {
            st.cutter.clear();
            st.batch_gen += 1;
        }
        let committed = st.raft.take_committed();
        for (_, entry) in committed {
            if let Entry::Block(b) = entry.entry {
                let st = self.orderers.get_mut(&id).unwrap();
                if b.header.number != st.committed.len() as u64 + 1 {
                    self.violations.push(format!("{id} committed block {} out of order", b.header.number));
                }
                st.committed.push(b.clone());
                for p in self.peer_ids.clone() {
                    self.send(host, id, p, LedgerMsg::DeliverBlock(b.clone()));
                }
            }
        }
    }

    fn step_raft<H: LedgerHost>(&mut self, host: &mut H, id: NodeId, input: RaftInput) {
        let st = self.orderers.get_mut(&id).unwrap();
        let was_leader = st.raft.is_leader();
        let outs = st.raft.step(input);
        self.process_raft(host, id, outs, was_leader);
    }

    fn cut<H: LedgerHost>(&mut self, host: &mut H, id: NodeId, batch: Vec<Arc<Transaction>>) {
        let now = host.now();
        let st = self.orderers.get_mut(&id).unwrap();
        let (number, prev) = match st.raft.last_block() {
            Some(b) => (b.header.number + 1, b.header.digest()),
            None => (1, self.genesis.header.digest()),
        };
        let txs = batch.iter().map(|t| (**t).clone()).collect();
        let block = seal_block(&self.registry, &st.name, number, prev, now, txs).expect("orderer is registered");
        let was_leader = st.raft.is_leader();
        match st.raft.propose(Arc::new(block)) {
            Ok((_, outs)) => self.process_raft(host, id, outs, was_leader),
            Err(_) => self.violations.push(format!("{id} cut a block while not leader")),
        }
    }

    fn arm_batch_timer<H: LedgerHost>(&mut self, host: &mut H, id: NodeId) {
        let now = host.now();
        let st = self.orderers.get_mut(&id).unwrap();
        st.batch_gen += 1;
        if let Some(d) = st.cutter.deadline() {
            host.schedule(d.max(now), id, LedgerEvent::BatchTimer { gen: st.batch_gen });
        }
    }

    fn on_orderer<H: LedgerHost>(&mut self, host: &mut H, id: NodeId, ev: LedgerEvent) {
        let now = host.now();
        match ev {
            LedgerEvent::ElectionTimer { gen } => {
                if self.orderers[&id].election_gen == gen {
                    self.step_raft(host, id, RaftInput::ElectionTimeout);
                }
            }
            LedgerEvent::Heartbeat { gen } => {
                let st = self.orderers.get_mut(&id).unwrap();
                if st.heartbeat_gen == gen && st.raft.is_leader() {
                    host.schedule(now + self.cfg.raft.heartbeat(), id, LedgerEvent::Heartbeat { gen });
                    self.step_raft(host, id, RaftInput::HeartbeatTimeout);
                }
            }
            LedgerEvent::BatchTimer { gen } => {
                let st = self.orderers.get_mut(&id).unwrap();
                if st.batch_gen == gen && st.raft.is_leader() {
                    if let Some(batch) = st.cutter.poll(now) {
                        self.cut(host, id, batch);
                    }
                    self.arm_batch_timer(host, id);
                }
            }
            LedgerEvent::Deliver { from, msg } => match msg {
                LedgerMsg::Raft(m) => self.step_raft(host, id, RaftInput::Message { from, msg: m }),
                LedgerMsg::Submit { tx, first_sent, attempt } => {
                    let st = self.orderers.get_mut(&id).unwrap();
                    let tx_id = tx.tx_id;
                    let reply = if tx.kind != TxKind::Invoke {
                        SubmitReply::Rejected("only invokes are ordered".into())
                    } else if !st.raft.is_leader() {
                        st.raft.leader_hint().filter(|h| *h != id).map_or(SubmitReply::NoLeader, SubmitReply::Redirect)
                    } else if st.cutter.contains(&tx_id) || st.raft.log_contains_tx(&tx_id) {
                        SubmitReply::Accepted
                    } else {
                        let since = if attempt == 0 { now } else { first_sent.min(now) };
                        let cuts = st.cutter.push(tx, since);
                        for batch in cuts {
                            self.cut(host, id, batch);
                        }
                        let st = self.orderers.get_mut(&id).unwrap();
                        if let Some(batch) = st.cutter.poll(now) {
                            self.cut(host, id, batch);
                        }
                        self.arm_batch_timer(host, id);
                        SubmitReply::Accepted
                    };
                    self.send(host, id, from, LedgerMsg::SubmitReply { tx_id, reply });
                }
                LedgerMsg::Probe { tx_id } => {
                    let st = &self.orderers[&id];
                    let leader = st.raft.is_leader();
                    let known = leader && (st.cutter.contains(&tx_id) || st.raft.log_contains_tx(&tx_id));
                    let hint = st.raft.leader_hint();
                    self.send(host, id, from, LedgerMsg::ProbeReply { tx_id, leader, known, hint });
                }
                LedgerMsg::FetchBlocks { from: start } => {
                    let blocks: Vec<Arc<Block>> =
                        self.orderers[&id].committed.iter().filter(|b| b.header.number >= start).cloned().collect();
                    for b in blocks {
                        self.send(host, id, from, LedgerMsg::DeliverBlock(b));
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn on_peer<H: LedgerHost>(&mut self, host: &mut H, id: NodeId, from: NodeId, msg: LedgerMsg) {
        let now = host.now();
        match msg {
            LedgerMsg::DeliverBlock(b) => {
                let p = self.peers.get_mut(&id).unwrap();
                let height = p.chain.height();
                let n = b.header.number;
                if n < height {
                    return;
                }
                if n > height {
                    let first_gap = p.buffer.is_empty();
                    p.buffer.insert(n, b);
                    if first_gap {
                        self.send(host, id, from, LedgerMsg::FetchBlocks { from: height });
                    }
                    return;
                }
                let mut next = Some(b);
                while let Some(b) = next {
                    let p = self.peers.get_mut(&id).unwrap();
                    match p.chain.append_block((*b).clone()) {
                        Ok(committed) => {
                            let number = committed.header.number;
                            self.peer_commits.push(PeerCommit {
                                at: now,
                                peer: id,
                                number,
                                digest: committed.header.digest(),
                                txs: committed.txs.len(),
                            });
                            let mut per_client: BTreeMap<NodeId, Vec<(Digest, ValidityFlag)>> = BTreeMap::new();
                            for (tx, f) in committed.txs.iter().zip(&committed.validity_flags) {
                                if let Some(c) = self.tx_owner.get(&tx.tx_id).and_then(|n| self.clients.get(n)) {
                                    per_client.entry(c.node).or_default().push((tx.tx_id, *f));
                                }
                            }
                            for (node, entries) in per_client {
                                self.send(host, id, node, LedgerMsg::CommitNotice { block: number, entries });
                            }
                        }
                        Err(e) => {
                            self.violations.push(format!("peer {id} rejected block {}: {e}", b.header.number));
                            return;
                        }
                    }
                    let p = self.peers.get_mut(&id).unwrap();
                    let h = p.chain.height();
                    p.buffer = p.buffer.split_off(&h);
                    next = p.buffer.remove(&h);
                }
            }
            LedgerMsg::Proposal { tx } => {
                let p = &self.peers[&id];
                let result = if tx.kind != TxKind::Invoke || is_query(tx.contract, &tx.function) {
                    Err("not an invoke".to_string())
                } else {
                    match contracts::simulate(&p.chain, &tx) {
                        Ok((read_set, write_set, out)) => {
                            let mut endorsed = (*tx).clone();
                            endorsed.read_set = read_set.clone();
                            endorsed.write_set = write_set.clone();
                            let sig = self.registry.sign(&p.name, &endorsed.endorsement_message()).expect("peer registered");
                            Ok(EndorseResult { read_set, write_set, signature: Bytes::from(sig), body: out.body })
                        }
                        Err(e) => Err(e.to_string()),
                    }
                };
                let peer = p.name.clone();
                self.send(host, id, from, LedgerMsg::ProposalResponse { tx_id: tx.tx_id, peer, result });
            }
            LedgerMsg::QueryRequest { req_id, contract, function, args } => {
                let p = &self.peers[&id];
                let mut ctx = ExecCtx::new(&p.chain);
                let payload = Bytes::new();
                let inv = Invocation { creator: "", timestamp: now, args: &args, payload: &payload };
                let result = contracts::execute(&mut ctx, contract, &function, &inv)
                    .map(|o| {
                        let size = o.size_bytes();
                        (o.body, size)
                    })
                    .map_err(|e| e.to_string());
                self.send(host, id, from, LedgerMsg::QueryResponse { req_id, result });
            }
            _ => {}
        }
    }

    fn client_at(&self, node: NodeId, tx_id: &Digest) -> Option<String> {
        self.tx_owner.get(tx_id).filter(|c| self.clients.get(*c).is_some_and(|s| s.node == node)).cloned()
    }

    fn on_client<H: LedgerHost>(&mut self, host: &mut H, node: NodeId, ev: LedgerEvent) {
        let now = host.now();
        match ev {
            LedgerEvent::EndorseDeadline { tx_id } => {
                if let Some(c) = self.client_at(node, &tx_id) {
                    self.finish_endorsement(host, &c, tx_id);
                }
            }
            LedgerEvent::ClientTick { client } => {
                let retry = SimDuration::from_millis(self.cfg.client_retry_ms);
                let Some(c) = self.clients.get_mut(&client) else { return };
                c.tick_armed = false;
                let mut probes = Vec::new();
                for (id, f) in c.inflight.iter_mut() {
                    if f.phase == Phase::Ordering && now.since(f.last_probe) >= retry {
                        f.last_probe = now;
                        probes.push(*id);
                    }
                }
                let any = c.inflight.values().any(|f| f.phase == Phase::Ordering);
                for tx_id in probes {
                    for o in self.orderer_ids.clone() {
                        self.send(host, node, o, LedgerMsg::Probe { tx_id });
                    }
                }
                if any {
                    self.arm_tick(host, &client);
                }
            }
            LedgerEvent::Deliver { from, msg } => match msg {
                LedgerMsg::ProposalResponse { tx_id, peer, result } => {
                    let Some(c) = self.client_at(node, &tx_id) else { return };
                    let st = self.clients.get_mut(&c).unwrap();
                    let Some(f) = st.inflight.get_mut(&tx_id) else { return };
                    if f.phase != Phase::Endorsing {
                        return;
                    }
                    f.responses.insert(peer, result);
                    if f.responses.len() == self.peer_ids.len() {
                        self.finish_endorsement(host, &c, tx_id);
                    }
                }
                LedgerMsg::SubmitReply { tx_id, reply } => {
                    let Some(c) = self.client_at(node, &tx_id) else { return };
                    match reply {
                        SubmitReply::Accepted => {
                            self.clients.get_mut(&c).unwrap().leader_guess = Some(from);
                        }
                        SubmitReply::Redirect(l) => {
                            self.clients.get_mut(&c).unwrap().leader_guess = Some(l);
                            self.submit(host, &c, tx_id, Some(l));
                        }
                        SubmitReply::NoLeader => {}
                        SubmitReply::Rejected(reason) => self.fail(&c, tx_id, reason),
                    }
                }
                LedgerMsg::ProbeReply { tx_id, leader, known, hint } => {
                    let Some(c) = self.client_at(node, &tx_id) else { return };
                    if leader && !known {
                        self.clients.get_mut(&c).unwrap().leader_guess = Some(from);
                        self.submit(host, &c, tx_id, Some(from));
                    } else if let (false, Some(h)) = (leader, hint) {
                        self.clients.get_mut(&c).unwrap().leader_guess = Some(h);
                    }
                }
                LedgerMsg::CommitNotice { block, entries } => {
                    for (tx_id, flag) in entries {
                        let Some(c) = self.client_at(node, &tx_id) else { continue };
                        let st = self.clients.get_mut(&c).unwrap();
                        if st.inflight.remove(&tx_id).is_none() {
                            continue;
                        }
                        let r = &mut self.receipts[self.receipt_index[&tx_id]];
                        r.committed_at = Some(now);
                        r.block = Some(block);
                        r.flag = Some(flag);
                    }
                }
                LedgerMsg::QueryResponse { req_id, result } => {
                    let Some(q) = self.queries.get_mut(req_id as usize) else { return };
                    if q.answered_at.is_some() {
                        return;
                    }
                    q.answered_at = Some(now);
                    match result {
                        Ok((body, size)) => {
                            q.response_bytes = size;
                            q.response = Some(String::from_utf8_lossy(&body).into_owned());
                        }
                        Err(e) => q.error = Some(e),
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn fail(&mut self, client: &str, tx_id: Digest, reason: String) {
        if let Some(c) = self.clients.get_mut(client) {
            c.inflight.remove(&tx_id);
        }
        if let Some(i) = self.receipt_index.get(&tx_id) {
            self.receipts[*i].error = Some(reason);
        }
    }

    fn arm_tick<H: LedgerHost>(&mut self, host: &mut H, client: &str) {
        let c = self.clients.get_mut(client).unwrap();
        if !c.tick_armed {
            c.tick_armed = true;
            let at = host.now() + SimDuration::from_millis(self.cfg.client_retry_ms);
            host.schedule(at, c.node, LedgerEvent::ClientTick { client: client.to_string() });
        }
    }

    fn finish_endorsement<H: LedgerHost>(&mut self, host: &mut H, client: &str, tx_id: Digest) {
        let threshold = self.chain_cfg.policy.threshold;
        let st = self.clients.get_mut(client).unwrap();
        let Some(f) = st.inflight.get_mut(&tx_id) else { return };
        if f.phase != Phase::Endorsing {
            return;
        }
        // group identical read/write sets; the largest group wins, ties by encoding
        let mut groups: BTreeMap<Vec<u8>, Vec<(&String, &EndorseResult)>> = BTreeMap::new();
        let mut errors = Vec::new();
        for (peer, r) in &f.responses {
            match r {
                Ok(e) => {
                    let mut probe = f.tx.clone();
                    probe.read_set = e.read_set.clone();
                    probe.write_set = e.write_set.clone();
                    groups.entry(probe.endorsement_message()).or_default().push((peer, e));
                }
                Err(msg) => errors.push(msg.clone()),
            }
        }
        let best = groups.values().max_by(|a, b| a.len().cmp(&b.len()).then(std::cmp::Ordering::Greater));
        let outcome = match best {
            Some(g) if g.len() >= threshold => {
                let (_, first) = g[0];
                f.tx.read_set = first.read_set.clone();
                f.tx.write_set = first.write_set.clone();
                f.tx.endorsements = g
                    .iter()
                    .map(|(peer, e)| Endorsement { peer: (*peer).clone(), signature: e.signature.clone() })
                    .collect();
                Ok((g.len(), String::from_utf8_lossy(&first.body).into_owned()))
            }
            Some(_) if groups.len() > 1 => Err("EndorsementMismatch".to_string()),
            _ if !errors.is_empty() && groups.is_empty() => Err(format!("ContractError: {}", errors[0])),
            _ => Err("PolicyUnsatisfied".to_string()),
        };
        match outcome {
            Ok((n, body)) => {
                f.phase = Phase::Ordering;
                f.first_sent = host.now();
                f.last_probe = host.now();
                let r = &mut self.receipts[self.receipt_index[&tx_id]];
                r.endorsements = n;
                r.response = Some(body);
                r.submitted_at = Some(host.now());
                let guess = st.leader_guess;
                self.submit(host, client, tx_id, guess);
                self.arm_tick(host, client);
            }
            Err(reason) => self.fail(client, tx_id, reason),
        }
    }

    fn submit<H: LedgerHost>(&mut self, host: &mut H, client: &str, tx_id: Digest, to: Option<NodeId>) {
        let st = self.clients.get_mut(client).unwrap();
        let node = st.node;
        let Some(f) = st.inflight.get_mut(&tx_id) else { return };
        let msg = LedgerMsg::Submit { tx: Arc::new(f.tx.clone()), first_sent: f.first_sent, attempt: f.attempt };
        f.attempt += 1;
        let target = to.unwrap_or(self.orderer_ids[0]);
        self.send(host, node, target, msg);
    }
}
