//! Per-frame offloading decisions for small drones.
//!
//! Specific rules (link down, low battery, storage full) are checked first.
//! Otherwise the local branch (best feasible on-board algorithm, plus sending
//! a small result datagram) is compared with the offload branch (planned
//! frame transfer plus processing on the leader) under the configured
//! objective.

use serde::{Deserialize, Serialize};

use crate::device::{AlgorithmId, DeviceError, DeviceProfile};
use crate::kernel::SimDuration;
use crate::netsim::RadioProfile;

/// Size of the detection summary sent after local processing.
pub const RESULT_DATAGRAM_BYTES: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinimizeEnergy,
    MinimizeLatency,
    LexEnergyThenLatency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCondition {
    OnLinkDown,
    OnLowBattery,
    OnStorageFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Local,
    Store,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecificRule {
    pub on: RuleCondition,
    pub action: RuleAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub objective: Objective,
    pub min_accuracy: f64,
    pub max_latency_ms: f64,
    pub specific_rules: Vec<SpecificRule>,
    /// Lets a busy leader hand frames to an adjacent leader.
    pub inter_leader_offload: bool,
    /// Leader queue length above which inter-leader offloading is considered.
    pub inter_leader_queue_threshold: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            objective: Objective::LexEnergyThenLatency,
            min_accuracy: 0.90,
            max_latency_ms: 500.0,
            specific_rules: vec![
                SpecificRule { on: RuleCondition::OnLinkDown, action: RuleAction::Store },
                SpecificRule { on: RuleCondition::OnStorageFull, action: RuleAction::Drop },
            ],
            inter_leader_offload: false,
            inter_leader_queue_threshold: 3,
        }
    }
}

impl PolicyConfig {
    fn rule(&self, on: RuleCondition) -> Option<RuleAction> {
        self.specific_rules.iter().find(|r| r.on == on).map(|r| r.action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Local(AlgorithmId),
    Offload,
    Store,
    Drop,
}

impl Action {
    pub fn label(&self) -> &'static str {
        match self {
            Action::Local(_) => "local",
            Action::Offload => "offload",
            Action::Store => "store",
            Action::Drop => "drop",
        }
    }
}

/// Predicted cost of each branch. Local fields are `None` when no on-board
/// algorithm satisfies the accuracy and latency constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub local_algorithm: Option<AlgorithmId>,
    pub local_latency_ms: Option<f64>,
    pub local_energy_mj: Option<f64>,
    pub offload_latency_ms: f64,
    pub offload_energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub predicted: Prediction,
    /// Which specific rule fired, if any.
    pub rule: Option<RuleCondition>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("no feasible action: link down and local storage full")]
    NoFeasibleAction,
    #[error("profile has no algorithms in mode `{0}`")]
    EmptyProfile(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// What the deciding drone knows about the frame and its own situation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameContext {
    pub size_bytes: u64,
    pub link_up: bool,
    pub low_battery: bool,
    pub storage_headroom_bytes: u64,
}

impl FrameContext {
    pub fn nominal(size_bytes: u64) -> Self {
        FrameContext { size_bytes, link_up: true, low_battery: false, storage_headroom_bytes: u64::MAX }
    }
}

/// A compute board running in a particular mode.
#[derive(Debug, Clone, Copy)]
pub struct Board<'a> {
    pub profile: &'a DeviceProfile,
    pub mode: &'a str,
}

/// The small drone's side: its board and the algorithms it may run.
#[derive(Debug, Clone, Copy)]
pub struct LocalSide<'a> {
    pub board: Board<'a>,
    pub candidates: &'a [AlgorithmId],
    pub radio: &'a RadioProfile,
}

/// The leader's side: its board and the algorithm it currently runs.
#[derive(Debug, Clone, Copy)]
pub struct RemoteSide<'a> {
    pub board: Board<'a>,
    pub algorithm: &'a AlgorithmId,
}

/// Highest-accuracy candidate meeting `min_accuracy` and `max_latency_ms`;
/// ties go to the lower latency.
pub fn select_algorithm(candidates: &[AlgorithmId], cfg: &PolicyConfig, board: Board<'_>) -> Option<AlgorithmId> {
    let mut best: Option<(f64, f64, &AlgorithmId)> = None;
    for a in candidates {
        let Ok(entry) = board.profile.entry(a, board.mode) else {
            continue;
        };
        let latency = 1000.0 / entry.fps;
        if entry.accuracy < cfg.min_accuracy || latency > cfg.max_latency_ms {
            continue;
        }
        let better = match best {
            None => true,
            Some((acc, lat, _)) => entry.accuracy > acc || (entry.accuracy == acc && latency < lat),
        };
        if better {
            best = Some((entry.accuracy, latency, a));
        }
    }
    best.map(|(_, _, a)| a.clone())
}

/// Most accurate candidate, ignoring constraints (used when a rule forces local work).
fn fallback_algorithm(candidates: &[AlgorithmId], board: Board<'_>) -> Option<AlgorithmId> {
    candidates
        .iter()
        .filter_map(|a| board.profile.entry(a, board.mode).ok().map(|e| (e.accuracy, e.fps, a)))
        .fold(None, |best: Option<(f64, f64, &AlgorithmId)>, cur| match best {
            Some(b) if (b.0, b.1) >= (cur.0, cur.1) => Some(b),
            _ => Some(cur),
        })
        .map(|(_, _, a)| a.clone())
}

/// Latency and energy of processing on board with `algorithm` then sending the result.
pub fn local_cost(local: &LocalSide<'_>, algorithm: &AlgorithmId) -> Result<(f64, f64), PolicyError> {
    let b = local.board;
    let latency = b.profile.per_frame_latency_ms(algorithm, b.mode)?;
    let processing = b.profile.processing_energy_mj(algorithm, b.mode)?;
    let result_tx = local.radio.tx_power_mw.0 as f64 * local.radio.datagram_latency_ms(RESULT_DATAGRAM_BYTES) / 1000.0;
    Ok((latency, processing + result_tx))
}

/// Planned latency and small-drone energy of shipping the frame to the leader.
pub fn offload_cost(local: &LocalSide<'_>, remote: &RemoteSide<'_>) -> Result<(f64, f64), PolicyError> {
    let r = remote.board;
    let latency = local.radio.frame_latency.decision_ms + r.profile.per_frame_latency_ms(remote.algorithm, r.mode)?;
    Ok((latency, local.radio.frame_decision_energy_mj()))
}

fn prefer_local(objective: Objective, local: (f64, f64), offload: (f64, f64)) -> bool {
    let (l_lat, l_e) = local;
    let (o_lat, o_e) = offload;
    match objective {
        Objective::MinimizeEnergy => l_e <= o_e,
        Objective::MinimizeLatency => l_lat <= o_lat,
        Objective::LexEnergyThenLatency => l_e < o_e || (l_e == o_e && l_lat <= o_lat),
    }
}

pub fn decide(
    frame: &FrameContext,
    local: &LocalSide<'_>,
    remote: &RemoteSide<'_>,
    cfg: &PolicyConfig,
) -> Result<Decision, PolicyError> {
    if local.board.profile.algorithms(local.board.mode).is_empty() {
        return Err(PolicyError::EmptyProfile(local.board.mode.to_string()));
    }
    let local_algorithm = select_algorithm(local.candidates, cfg, local.board);
    let local_pred = match &local_algorithm {
        Some(a) => Some(local_cost(local, a)?),
        None => None,
    };
    let (o_lat, o_e) = offload_cost(local, remote)?;
    let predicted = Prediction {
        local_algorithm: local_algorithm.clone(),
        local_latency_ms: local_pred.map(|p| p.0),
        local_energy_mj: local_pred.map(|p| p.1),
        offload_latency_ms: o_lat,
        offload_energy_mj: o_e,
    };

    let fired = if !frame.link_up {
        cfg.rule(RuleCondition::OnLinkDown).map(|a| (RuleCondition::OnLinkDown, a))
    } else {
        None
    }
    .or_else(|| {
        if frame.low_battery {
            cfg.rule(RuleCondition::OnLowBattery).map(|a| (RuleCondition::OnLowBattery, a))
        } else {
            None
        }
    });

    let (action, rule) = match fired {
        Some((cond, a)) => (rule_action(a, frame, local, cfg, &local_algorithm)?, Some(cond)),
        None if !frame.link_up => match &local_algorithm {
            Some(a) => (Action::Local(a.clone()), None),
            None => (store_or_escalate(frame, local, cfg, &local_algorithm)?, None),
        },
        None => match (&local_algorithm, local_pred) {
            (Some(a), Some(lp)) if prefer_local(cfg.objective, lp, (o_lat, o_e)) => (Action::Local(a.clone()), None),
            _ => (Action::Offload, None),
        },
    };
    let rule = match (&action, rule) {
        (_, Some(r)) => Some(r),
        (Action::Drop, None) => Some(RuleCondition::OnStorageFull),
        _ => None,
    };
    Ok(Decision { action, predicted, rule })
}

fn rule_action(
    a: RuleAction,
    frame: &FrameContext,
    local: &LocalSide<'_>,
    cfg: &PolicyConfig,
    selected: &Option<AlgorithmId>,
) -> Result<Action, PolicyError> {
    match a {
        RuleAction::Local => selected
            .clone()
            .or_else(|| fallback_algorithm(local.candidates, local.board))
            .map(Action::Local)
            .ok_or_else(|| PolicyError::EmptyProfile(local.board.mode.to_string())),
        RuleAction::Store => store_or_escalate(frame, local, cfg, selected),
        RuleAction::Drop => Ok(Action::Drop),
    }
}

fn store_or_escalate(
    frame: &FrameContext,
    local: &LocalSide<'_>,
    cfg: &PolicyConfig,
    selected: &Option<AlgorithmId>,
) -> Result<Action, PolicyError> {
    if frame.storage_headroom_bytes >= frame.size_bytes {
        return Ok(Action::Store);
    }
    match cfg.rule(RuleCondition::OnStorageFull) {
        Some(RuleAction::Store) | None => Err(PolicyError::NoFeasibleAction),
        Some(RuleAction::Drop) => Ok(Action::Drop),
        Some(RuleAction::Local) => rule_action(RuleAction::Local, frame, local, cfg, selected),
    }
}

/// Planned duration of a leader's processing for one frame.
pub fn processing_duration(board: Board<'_>, algorithm: &AlgorithmId) -> Result<SimDuration, DeviceError> {
    board.profile.per_frame_duration(algorithm, board.mode)
}
