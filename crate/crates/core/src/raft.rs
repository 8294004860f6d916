//! Raft ordering among orderer nodes and block cutting.
//!
//! `RaftNode` is a pure state machine: the host feeds it timer firings and
//! messages and routes what it returns. Log entries are sealed blocks, plus
//! one no-op appended by each new leader so it can commit entries from
//! earlier terms. The host owns the timers; election timeouts are drawn from
//! the `raft-election` stream.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::kernel::{NodeId, RandomStreams, SimDuration, SimTime};
use crate::ledger::{Block, Digest, Transaction};

pub const ELECTION_STREAM: &str = "raft-election";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaftConfig {
    pub election_min_ms: u64,
    pub election_max_ms: u64,
    pub heartbeat_ms: u64,
}

impl Default for RaftConfig {
    fn default() -> Self {
        RaftConfig { election_min_ms: 150, election_max_ms: 300, heartbeat_ms: 50 }
    }
}

impl RaftConfig {
    /// Draws an election timeout uniformly from `[min, max]` ms at microsecond resolution.
    pub fn draw_election_timeout(&self, streams: &mut RandomStreams) -> SimDuration {
        let span = (self.election_max_ms - self.election_min_ms) * 1000;
        let u = streams.next_uniform(ELECTION_STREAM).expect("election stream registered");
        SimDuration::from_micros(self.election_min_ms * 1000 + (u * (span + 1) as f64) as u64)
    }

    pub fn heartbeat(&self) -> SimDuration {
        SimDuration::from_millis(self.heartbeat_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub timeout_ms: u64,
    pub max_messages: usize,
    pub max_bytes: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { timeout_ms: 2000, max_messages: 10, max_bytes: 99 * 1024 * 1024 }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 || self.max_messages == 0 || self.max_bytes == 0 {
            return Err("batch timeout_ms, max_messages and max_bytes must all be positive".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> SimDuration {
        SimDuration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone)]
struct PendingTx {
    tx: Arc<Transaction>,
    bytes: u64,
    since: SimTime,
}

/// Leader-local pending batch.
#[derive(Debug, Clone)]
pub struct BlockCutter {
    cfg: BatchConfig,
    pending: VecDeque<PendingTx>,
    pending_bytes: u64,
}

impl BlockCutter {
    pub fn new(cfg: BatchConfig) -> Self {
        BlockCutter { cfg, pending: VecDeque::new(), pending_bytes: 0 }
    }

    pub fn config(&self) -> BatchConfig {
        self.cfg
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.pending.iter().any(|p| p.tx.tx_id == *id)
    }

    fn take(&mut self, n: usize) -> Vec<Arc<Transaction>> {
        let batch: Vec<PendingTx> = self.pending.drain(..n).collect();
        self.pending_bytes -= batch.iter().map(|p| p.bytes).sum::<u64>();
        batch.into_iter().map(|p| p.tx).collect()
    }

    /// Adds `tx` (pending since `since`) and returns any batches that must be cut now.
    pub fn push(&mut self, tx: Arc<Transaction>, since: SimTime) -> Vec<Vec<Arc<Transaction>>> {
        let mut cuts = Vec::new();
        let bytes = tx.size_bytes();
        if !self.pending.is_empty() && self.pending_bytes + bytes > self.cfg.max_bytes {
            let n = self.pending.len();
            cuts.push(self.take(n));
        }
        self.pending.push_back(PendingTx { tx, bytes, since });
        self.pending_bytes += bytes;
        if self.pending.len() >= self.cfg.max_messages || self.pending_bytes >= self.cfg.max_bytes {
            let n = self.pending.len();
            cuts.push(self.take(n));
        }
        cuts
    }

    /// When the oldest pending tx reaches the batch timeout.
    pub fn deadline(&self) -> Option<SimTime> {
        self.pending.iter().map(|p| p.since).min().map(|t| t + self.cfg.timeout())
    }

    /// Cuts the pending batch if its oldest tx has aged past the timeout.
    pub fn poll(&mut self, now: SimTime) -> Option<Vec<Arc<Transaction>>> {
        match self.deadline() {
            Some(d) if d <= now => {
                let n = self.pending.len();
                Some(self.take(n))
            }
            _ => None,
        }
    }

    /// Drops every pending tx (leadership lost); returns how many were dropped.
    pub fn clear(&mut self) -> usize {
        let n = self.pending.len();
        self.pending.clear();
        self.pending_bytes = 0;
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Noop,
    Block(Arc<Block>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    pub entry: Entry,
}

impl LogEntry {
    pub fn size_bytes(&self) -> u64 {
        16 + match &self.entry {
            Entry::Noop => 0,
            Entry::Block(b) => b.size_bytes(),
        }
    }

    /// Identity of the entry for log-matching checks.
    pub fn digest(&self) -> Option<Digest> {
        match &self.entry {
            Entry::Noop => None,
            Entry::Block(b) => Some(b.header.digest()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftMsg {
    RequestVote { term: u64, last_log_index: u64, last_log_term: u64 },
    VoteReply { term: u64, granted: bool },
    AppendEntries { term: u64, prev_index: u64, prev_term: u64, entries: Vec<LogEntry>, leader_commit: u64 },
    /// `last_index` is the replicated prefix on success, a retry hint on failure.
    AppendReply { term: u64, success: bool, last_index: u64 },
}

impl RaftMsg {
    pub fn size_bytes(&self) -> u64 {
        match self {
            RaftMsg::AppendEntries { entries, .. } => 48 + entries.iter().map(LogEntry::size_bytes).sum::<u64>(),
            _ => 32,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RaftMsg::RequestVote { .. } => "raft-request-vote",
            RaftMsg::VoteReply { .. } => "raft-vote-reply",
            RaftMsg::AppendEntries { entries, .. } if entries.is_empty() => "raft-heartbeat",
            RaftMsg::AppendEntries { .. } => "raft-append",
            RaftMsg::AppendReply { .. } => "raft-append-reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftInput {
    ElectionTimeout,
    HeartbeatTimeout,
    Message { from: NodeId, msg: RaftMsg },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftOutput {
    Send { to: NodeId, msg: RaftMsg },
    /// Re-arm the election timer with a freshly drawn timeout.
    ResetElectionTimer,
    /// Start the periodic heartbeat timer (the node just became leader).
    StartHeartbeat,
    Event(RaftEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RaftEvent {
    TermChange { node: NodeId, term: u64 },
    Vote { node: NodeId, term: u64, candidate: NodeId },
    BecameLeader { node: NodeId, term: u64 },
    SteppedDown { node: NodeId, term: u64 },
    Commit { node: NodeId, index: u64, term: u64, block: Option<u64>, digest: Option<Digest> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaftTraceRecord {
    pub at: SimTime,
    #[serde(flatten)]
    pub event: RaftEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RaftError {
    #[error("not the leader (hint: {0:?})")]
    NotLeader(Option<NodeId>),
}

#[derive(Debug, Clone)]
pub struct RaftNode {
    id: NodeId,
    peers: Vec<NodeId>,
    role: RaftRole,
    current_term: u64,
    voted_for: Option<NodeId>,
    log: Vec<LogEntry>,
    commit_index: u64,
    delivered: u64,
    leader_hint: Option<NodeId>,
    votes: BTreeSet<NodeId>,
    next_index: BTreeMap<NodeId, u64>,
    match_index: BTreeMap<NodeId, u64>,
}

impl RaftNode {
    /// `cluster` lists every member including `id`.
    pub fn new(id: NodeId, cluster: &[NodeId]) -> Self {
        RaftNode {
            id,
            peers: cluster.iter().copied().filter(|p| *p != id).collect(),
            role: RaftRole::Follower,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_index: 0,
            delivered: 0,
            leader_hint: None,
            votes: BTreeSet::new(),
            next_index: BTreeMap::new(),
            match_index: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn role(&self) -> RaftRole {
        self.role
    }

    pub fn term(&self) -> u64 {
        self.current_term
    }

    pub fn is_leader(&self) -> bool {
        self.role == RaftRole::Leader
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        self.leader_hint
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }

    fn majority(&self) -> usize {
        self.peers.len().div_ceil(2) + 1
    }

    /// Last block in the log (committed or not).
    pub fn last_block(&self) -> Option<&Arc<Block>> {
        self.log.iter().rev().find_map(|e| match &e.entry {
            Entry::Block(b) => Some(b),
            Entry::Noop => None,
        })
    }

    pub fn log_contains_tx(&self, id: &Digest) -> bool {
        self.log.iter().any(|e| match &e.entry {
            Entry::Block(b) => b.txs.iter().any(|t| t.tx_id == *id),
            Entry::Noop => false,
        })
    }

    /// Arms timers at start-up; a single-member cluster elects itself at once.
    pub fn start(&mut self) -> Vec<RaftOutput> {
        if self.peers.is_empty() {
            return self.step(RaftInput::ElectionTimeout);
        }
        vec![RaftOutput::ResetElectionTimer]
    }

    /// Recovery after a crash: term, vote, log and commit point are durable,
    /// leadership and replication progress are not.
    pub fn restart(&mut self) -> Vec<RaftOutput> {
        let mut out = Vec::new();
        if self.role != RaftRole::Follower {
            out.push(RaftOutput::Event(RaftEvent::SteppedDown { node: self.id, term: self.current_term }));
        }
        self.role = RaftRole::Follower;
        self.leader_hint = None;
        self.votes.clear();
        self.next_index.clear();
        self.match_index.clear();
        out.extend(self.start());
        out
    }

    pub fn step(&mut self, input: RaftInput) -> Vec<RaftOutput> {
        let mut out = Vec::new();
        match input {
            RaftInput::ElectionTimeout => self.on_election_timeout(&mut out),
            RaftInput::HeartbeatTimeout => {
                if self.is_leader() {
                    for p in self.peers.clone() {
                        self.send_append(p, &mut out);
                    }
                }
            }
            RaftInput::Message { from, msg } => self.on_message(from, msg, &mut out),
        }
        out
    }

    /// Appends a block as a new entry; leader only.
    pub fn propose(&mut self, block: Arc<Block>) -> Result<(u64, Vec<RaftOutput>), RaftError> {
        if !self.is_leader() {
            return Err(RaftError::NotLeader(self.leader_hint));
        }
        self.log.push(LogEntry { term: self.current_term, entry: Entry::Block(block) });
        let mut out = Vec::new();
        for p in self.peers.clone() {
            self.send_append(p, &mut out);
        }
        self.advance_commit(&mut out);
        Ok((self.last_index(), out))
    }

    /// Entries committed since the last call, in index order.
    pub fn take_committed(&mut self) -> Vec<(u64, LogEntry)> {
        let mut v = Vec::new();
        while self.delivered < self.commit_index {
            self.delivered += 1;
            v.push((self.delivered, self.log[self.delivered as usize - 1].clone()));
        }
        v
    }

    fn observe_term(&mut self, term: u64, out: &mut Vec<RaftOutput>) {
        if term > self.current_term {
            let was_leader = self.is_leader();
            self.current_term = term;
            self.voted_for = None;
            self.role = RaftRole::Follower;
            self.votes.clear();
            out.push(RaftOutput::Event(RaftEvent::TermChange { node: self.id, term }));
            if was_leader {
                out.push(RaftOutput::Event(RaftEvent::SteppedDown { node: self.id, term }));
                out.push(RaftOutput::ResetElectionTimer);
            }
        }
    }

    fn on_election_timeout(&mut self, out: &mut Vec<RaftOutput>) {
        if self.is_leader() {
            return;
        }
        self.current_term += 1;
        self.role = RaftRole::Candidate;
        self.voted_for = Some(self.id);
        self.leader_hint = None;
        self.votes = BTreeSet::from([self.id]);
        out.push(RaftOutput::Event(RaftEvent::TermChange { node: self.id, term: self.current_term }));
        out.push(RaftOutput::Event(RaftEvent::Vote { node: self.id, term: self.current_term, candidate: self.id }));
        out.push(RaftOutput::ResetElectionTimer);
        let (last_log_index, last_log_term) = (self.last_index(), self.term_at(self.last_index()));
        for p in &self.peers {
            out.push(RaftOutput::Send {
                to: *p,
                msg: RaftMsg::RequestVote { term: self.current_term, last_log_index, last_log_term },
            });
        }
        if self.votes.len() >= self.majority() {
            self.become_leader(out);
        }
    }

    fn become_leader(&mut self, out: &mut Vec<RaftOutput>) {
        self.role = RaftRole::Leader;
        self.leader_hint = Some(self.id);
        out.push(RaftOutput::Event(RaftEvent::BecameLeader { node: self.id, term: self.current_term }));
        out.push(RaftOutput::StartHeartbeat);
        self.log.push(LogEntry { term: self.current_term, entry: Entry::Noop });
        let next = self.last_index();
        for p in &self.peers {
            self.next_index.insert(*p, next);
            self.match_index.insert(*p, 0);
        }
        for p in self.peers.clone() {
            self.send_append(p, out);
        }
        self.advance_commit(out);
    }

    fn send_append(&mut self, to: NodeId, out: &mut Vec<RaftOutput>) {
        let next = self.next_index.get(&to).copied().unwrap_or(self.last_index() + 1).max(1);
        let prev_index = next - 1;
        let entries: Vec<LogEntry> = self.log[prev_index as usize..].to_vec();
        // pipelined: assume delivery; a failed reply rewinds
        self.next_index.insert(to, self.last_index() + 1);
        out.push(RaftOutput::Send {
            to,
            msg: RaftMsg::AppendEntries {
                term: self.current_term,
                prev_index,
                prev_term: self.term_at(prev_index),
                entries,
                leader_commit: self.commit_index,
            },
        });
    }

    fn advance_commit(&mut self, out: &mut Vec<RaftOutput>) {
        let mut n = self.last_index();
        while n > self.commit_index {
            if self.term_at(n) == self.current_term {
                let replicated = 1 + self.match_index.values().filter(|m| **m >= n).count();
                if replicated >= self.majority() {
                    self.set_commit(n, out);
                    return;
                }
            }
            n -= 1;
        }
    }

    fn set_commit(&mut self, n: u64, out: &mut Vec<RaftOutput>) {
        while self.commit_index < n {
            self.commit_index += 1;
            let e = &self.log[self.commit_index as usize - 1];
            let block = match &e.entry {
                Entry::Block(b) => Some(b.header.number),
                Entry::Noop => None,
            };
            out.push(RaftOutput::Event(RaftEvent::Commit {
                node: self.id,
                index: self.commit_index,
                term: e.term,
                block,
                digest: e.digest(),
            }));
        }
    }

    fn on_message(&mut self, from: NodeId, msg: RaftMsg, out: &mut Vec<RaftOutput>) {
        match msg {
            RaftMsg::RequestVote { term, last_log_index, last_log_term } => {
                self.observe_term(term, out);
                let my_last = self.last_index();
                let up_to_date = last_log_term > self.term_at(my_last)
                    || (last_log_term == self.term_at(my_last) && last_log_index >= my_last);
                let granted = term == self.current_term
                    && self.voted_for.is_none_or(|v| v == from)
                    && up_to_date
                    && !self.is_leader();
                if granted {
                    self.voted_for = Some(from);
                    out.push(RaftOutput::Event(RaftEvent::Vote { node: self.id, term, candidate: from }));
                    out.push(RaftOutput::ResetElectionTimer);
                }
                out.push(RaftOutput::Send { to: from, msg: RaftMsg::VoteReply { term: self.current_term, granted } });
            }
            RaftMsg::VoteReply { term, granted } => {
                self.observe_term(term, out);
                if self.role == RaftRole::Candidate && term == self.current_term && granted {
                    self.votes.insert(from);
                    if self.votes.len() >= self.majority() {
                        self.become_leader(out);
                    }
                }
            }
            RaftMsg::AppendEntries { term, prev_index, prev_term, entries, leader_commit } => {
                self.observe_term(term, out);
                if term < self.current_term {
                    out.push(RaftOutput::Send {
                        to: from,
                        msg: RaftMsg::AppendReply { term: self.current_term, success: false, last_index: self.last_index() },
                    });
                    return;
                }
                if self.role == RaftRole::Candidate {
                    self.role = RaftRole::Follower;
                    self.votes.clear();
                }
                self.leader_hint = Some(from);
                out.push(RaftOutput::ResetElectionTimer);
                if prev_index > self.last_index() {
                    out.push(RaftOutput::Send {
                        to: from,
                        msg: RaftMsg::AppendReply { term, success: false, last_index: self.last_index() },
                    });
                    return;
                }
                if self.term_at(prev_index) != prev_term {
                    out.push(RaftOutput::Send {
                        to: from,
                        msg: RaftMsg::AppendReply { term, success: false, last_index: prev_index - 1 },
                    });
                    return;
                }
                let mut idx = prev_index;
                for e in entries {
                    idx += 1;
                    if idx <= self.last_index() {
                        if self.term_at(idx) == e.term {
                            continue;
                        }
                        assert!(idx > self.commit_index, "committed entry {idx} would be overwritten");
                        self.log.truncate(idx as usize - 1);
                    }
                    self.log.push(e);
                }
                if leader_commit > self.commit_index {
                    self.set_commit(leader_commit.min(idx), out);
                }
                out.push(RaftOutput::Send { to: from, msg: RaftMsg::AppendReply { term, success: true, last_index: idx } });
            }
            RaftMsg::AppendReply { term, success, last_index } => {
                self.observe_term(term, out);
                if !self.is_leader() || term != self.current_term {
                    return;
                }
                if success {
                    let m = self.match_index.entry(from).or_insert(0);
                    *m = (*m).max(last_index);
                    let n = self.next_index.entry(from).or_insert(1);
                    *n = (*n).max(last_index + 1);
                    self.advance_commit(out);
                } else {
                    let matched = self.match_index.get(&from).copied().unwrap_or(0);
                    self.next_index.insert(from, (last_index + 1).max(matched + 1).min(self.last_index() + 1));
                    self.send_append(from, out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum RaftViolation {
    #[error("two leaders in term {term}: {a} and {b}")]
    ElectionSafety { term: u64, a: NodeId, b: NodeId },
    #[error("log mismatch at index {index} between {a} and {b}")]
    LogMatching { index: u64, a: NodeId, b: NodeId },
    #[error("node {node} committed index {index} out of order")]
    CommitOrder { node: NodeId, index: u64 },
}

/// At most one node becomes leader per term.
pub fn check_election_safety(trace: &[RaftTraceRecord]) -> Result<(), RaftViolation> {
    let mut leaders: HashMap<u64, NodeId> = HashMap::new();
    for r in trace {
        if let RaftEvent::BecameLeader { node, term } = r.event {
            match leaders.get(&term) {
                Some(&other) if other != node => return Err(RaftViolation::ElectionSafety { term, a: other, b: node }),
                _ => {
                    leaders.insert(term, node);
                }
            }
        }
    }
    Ok(())
}

/// Committed prefixes agree across nodes and each node commits gaplessly.
pub fn check_log_matching(trace: &[RaftTraceRecord]) -> Result<(), RaftViolation> {
    let mut per_node: BTreeMap<NodeId, Vec<(u64, Option<Digest>)>> = BTreeMap::new();
    for r in trace {
        if let RaftEvent::Commit { node, index, term, digest, .. } = &r.event {
            let v = per_node.entry(*node).or_default();
            if *index != v.len() as u64 + 1 {
                return Err(RaftViolation::CommitOrder { node: *node, index: *index });
            }
            v.push((*term, *digest));
        }
    }
    let nodes: Vec<(&NodeId, &Vec<(u64, Option<Digest>)>)> = per_node.iter().collect();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let (a, la) = nodes[i];
            let (b, lb) = nodes[j];
            if let Some(k) = la.iter().zip(lb.iter()).position(|(x, y)| x != y) {
                return Err(RaftViolation::LogMatching { index: k as u64 + 1, a: *a, b: *b });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::block::{ContractId, TxKind};
    use bytes::Bytes;

    fn tx(i: u64, size: usize) -> Arc<Transaction> {
        Arc::new(Transaction::new(
            TxKind::Invoke,
            "client1",
            ContractId::DroneObject,
            "f",
            Bytes::new(),
            Bytes::from(vec![0u8; size]),
            i,
            SimTime::ZERO,
        ))
    }

    #[test]
    fn tenth_tx_cuts_immediately() {
        let mut c = BlockCutter::new(BatchConfig::default());
        for i in 0..9 {
            assert!(c.push(tx(i, 10), SimTime::ZERO).is_empty());
        }
        let cuts = c.push(tx(9, 10), SimTime::ZERO);
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].len(), 10);
        assert!(c.is_empty());
    }

    #[test]
    fn single_tx_cut_at_timeout() {
        let mut c = BlockCutter::new(BatchConfig::default());
        c.push(tx(0, 10), SimTime::from_millis(100));
        assert_eq!(c.deadline(), Some(SimTime::from_millis(2100)));
        assert!(c.poll(SimTime::from_millis(2099)).is_none());
        assert_eq!(c.poll(SimTime::from_millis(2100)).unwrap().len(), 1);
    }

    #[test]
    fn burst_of_25_gives_10_10_5() {
        let mut c = BlockCutter::new(BatchConfig::default());
        let mut sizes = vec![];
        for i in 0..25 {
            sizes.extend(c.push(tx(i, 100), SimTime::ZERO).iter().map(Vec::len));
        }
        sizes.extend(c.poll(SimTime::from_millis(2000)).iter().map(Vec::len));
        assert_eq!(sizes, vec![10, 10, 5]);
    }

    #[test]
    fn byte_cap_does_not_bind_for_5mb_stream() {
        let cfg = BatchConfig::default();
        assert!(10 * 5 * 1024 * 1024 < cfg.max_bytes);
        let mut c = BlockCutter::new(cfg);
        let mut sizes = vec![];
        for i in 0..20 {
            sizes.extend(c.push(tx(i, 5 * 1024 * 1024), SimTime::ZERO).iter().map(Vec::len));
        }
        assert_eq!(sizes, vec![10, 10]);
    }

    #[test]
    fn byte_cap_cuts_before_overflow() {
        let cfg = BatchConfig { max_bytes: 1000, ..Default::default() };
        let mut c = BlockCutter::new(cfg);
        assert!(c.push(tx(0, 400), SimTime::ZERO).is_empty());
        let cuts = c.push(tx(1, 700), SimTime::ZERO);
        assert_eq!(cuts.iter().map(Vec::len).collect::<Vec<_>>(), vec![1]);
        assert_eq!(c.len(), 1);
    }

    /// Minimal in-memory cluster: instant delivery, host-managed timers by manual firing.
    struct Cluster {
        nodes: BTreeMap<NodeId, RaftNode>,
        trace: Vec<RaftTraceRecord>,
        down: BTreeSet<NodeId>,
    }

    impl Cluster {
        fn new(n: u32) -> Self {
            let ids: Vec<NodeId> = (0..n).map(NodeId).collect();
            Cluster {
                nodes: ids.iter().map(|i| (*i, RaftNode::new(*i, &ids))).collect(),
                trace: vec![],
                down: BTreeSet::new(),
            }
        }

        fn run(&mut self, target: NodeId, input: RaftInput) {
            let mut queue = VecDeque::from([(target, input)]);
            while let Some((to, input)) = queue.pop_front() {
                if self.down.contains(&to) {
                    continue;
                }
                let outs = self.nodes.get_mut(&to).unwrap().step(input);
                self.route(to, outs, &mut queue);
            }
        }

        fn route(&mut self, from: NodeId, outs: Vec<RaftOutput>, queue: &mut VecDeque<(NodeId, RaftInput)>) {
            for o in outs {
                match o {
                    RaftOutput::Send { to, msg } => queue.push_back((to, RaftInput::Message { from, msg })),
                    RaftOutput::Event(e) => self.trace.push(RaftTraceRecord { at: SimTime::ZERO, event: e }),
                    _ => {}
                }
            }
        }

        fn leader(&self) -> Option<NodeId> {
            self.nodes.values().filter(|n| n.is_leader() && !self.down.contains(&n.id())).map(|n| n.id()).next_back()
        }

        fn propose(&mut self, leader: NodeId, b: Arc<Block>) {
            let (_, outs) = self.nodes.get_mut(&leader).unwrap().propose(b).unwrap();
            let mut q = VecDeque::new();
            self.route(leader, outs, &mut q);
            while let Some((to, input)) = q.pop_front() {
                self.run(to, input);
            }
        }
    }

    fn block(n: u64) -> Arc<Block> {
        Arc::new(Block {
            header: crate::ledger::BlockHeader {
                number: n,
                prev_hash: Digest::ZERO,
                merkle_root: Digest::of(&n.to_be_bytes()),
                proposer: "o".into(),
                timestamp: SimTime::ZERO,
            },
            signature: Bytes::new(),
            txs: vec![],
            validity_flags: vec![],
        })
    }

    #[test]
    fn single_node_self_elects_and_commits_on_append() {
        let mut n = RaftNode::new(NodeId(0), &[NodeId(0)]);
        let outs = n.start();
        assert!(n.is_leader());
        assert!(outs.contains(&RaftOutput::StartHeartbeat));
        let (idx, _) = n.propose(block(1)).unwrap();
        assert_eq!(n.commit_index(), idx);
    }

    #[test]
    fn follower_rejects_proposals_with_hint() {
        let mut c = Cluster::new(3);
        c.run(NodeId(1), RaftInput::ElectionTimeout);
        assert_eq!(c.leader(), Some(NodeId(1)));
        let err = c.nodes.get_mut(&NodeId(0)).unwrap().propose(block(1)).unwrap_err();
        assert_eq!(err, RaftError::NotLeader(Some(NodeId(1))));
    }

    #[test]
    fn leader_kill_then_reelection_keeps_logs_matching() {
        let mut c = Cluster::new(3);
        c.run(NodeId(0), RaftInput::ElectionTimeout);
        for i in 1..=3 {
            c.propose(NodeId(0), block(i));
        }
        c.run(NodeId(0), RaftInput::HeartbeatTimeout);
        c.down.insert(NodeId(0));
        c.run(NodeId(2), RaftInput::ElectionTimeout);
        assert_eq!(c.leader(), Some(NodeId(2)));
        for i in 4..=5 {
            c.propose(NodeId(2), block(i));
        }
        c.down.remove(&NodeId(0));
        c.run(NodeId(2), RaftInput::HeartbeatTimeout);
        c.run(NodeId(2), RaftInput::HeartbeatTimeout);
        check_election_safety(&c.trace).unwrap();
        check_log_matching(&c.trace).unwrap();
        let logs: Vec<Vec<Option<Digest>>> =
            c.nodes.values().map(|n| n.log().iter().map(LogEntry::digest).collect()).collect();
        assert!(logs.windows(2).all(|w| w[0] == w[1]));
        assert!(c.nodes.values().all(|n| n.commit_index() == n.last_index()));
    }

    #[test]
    fn isolated_leader_cannot_commit() {
        let mut c = Cluster::new(3);
        c.run(NodeId(0), RaftInput::ElectionTimeout);
        c.down.insert(NodeId(1));
        c.down.insert(NodeId(2));
        let before = c.nodes[&NodeId(0)].commit_index();
        c.propose(NodeId(0), block(1));
        assert_eq!(c.nodes[&NodeId(0)].commit_index(), before);
    }

    #[test]
    fn uncommitted_entries_are_overwritten_by_new_leader() {
        let mut c = Cluster::new(3);
        c.run(NodeId(0), RaftInput::ElectionTimeout);
        c.down.insert(NodeId(1));
        c.down.insert(NodeId(2));
        c.propose(NodeId(0), block(99));
        c.down.clear();
        c.down.insert(NodeId(0));
        c.run(NodeId(1), RaftInput::ElectionTimeout);
        c.propose(NodeId(1), block(1));
        c.down.clear();
        c.run(NodeId(1), RaftInput::HeartbeatTimeout);
        c.run(NodeId(1), RaftInput::HeartbeatTimeout);
        check_log_matching(&c.trace).unwrap();
        let l0: Vec<_> = c.nodes[&NodeId(0)].log().iter().map(LogEntry::digest).collect();
        let l1: Vec<_> = c.nodes[&NodeId(1)].log().iter().map(LogEntry::digest).collect();
        assert_eq!(l0, l1);
        assert!(!l0.contains(&Some(block(99).header.digest())));
    }

    #[test]
    fn stale_term_vote_is_refused() {
        let mut n = RaftNode::new(NodeId(0), &[NodeId(0), NodeId(1), NodeId(2)]);
        n.step(RaftInput::ElectionTimeout);
        n.step(RaftInput::ElectionTimeout);
        let out = n.step(RaftInput::Message {
            from: NodeId(1),
            msg: RaftMsg::RequestVote { term: 1, last_log_index: 0, last_log_term: 0 },
        });
        assert!(out.contains(&RaftOutput::Send { to: NodeId(1), msg: RaftMsg::VoteReply { term: 2, granted: false } }));
    }

    #[test]
    fn checker_flags_two_leaders() {
        let t = vec![
            RaftTraceRecord { at: SimTime::ZERO, event: RaftEvent::BecameLeader { node: NodeId(0), term: 3 } },
            RaftTraceRecord { at: SimTime::ZERO, event: RaftEvent::BecameLeader { node: NodeId(1), term: 3 } },
        ];
        assert!(check_election_safety(&t).is_err());
    }

    #[test]
    fn election_timeouts_within_range() {
        let mut s = RandomStreams::new(5);
        s.register(ELECTION_STREAM);
        let cfg = RaftConfig::default();
        for _ in 0..1000 {
            let d = cfg.draw_election_timeout(&mut s);
            assert!(d >= SimDuration::from_millis(150) && d <= SimDuration::from_millis(300));
        }
    }
}
