#![allow(dead_code)]

use bytes::Bytes;
use sarsim_core::kernel::{NodeId, RandomStreams, SimDuration, SimTime};
use sarsim_core::ledger::{ContractId, Digest};
use sarsim_core::txflow::contracts::{canonical_json, ClusterSummary, DroneSeed, UpdateDroneArgs};
use sarsim_core::txflow::{LedgerConfig, SeedData, StandaloneLedger};

pub fn drone_seed(n: usize) -> SeedData {
    SeedData {
        drones: (0..n)
            .map(|i| DroneSeed {
                drone_id: format!("d{i}"),
                location: (0.0, 0.0),
                cluster: ClusterSummary { leader: format!("d{i}"), members: vec![] },
                client: "client1".into(),
            })
            .collect(),
        ..Default::default()
    }
}

pub fn update(s: &mut StandaloneLedger, drone: &str, payload: Bytes) -> Digest {
    let args = UpdateDroneArgs {
        drone_id: drone.into(),
        location: (1.0, 2.0),
        battery_fraction: 0.5,
        payload_digest: Digest::of(&payload),
    };
    s.invoke(ContractId::DroneObject, "update_drone_info", canonical_json(&args), payload, "update_info").unwrap()
}

#[derive(Debug)]
pub struct FaultRun {
    pub seed: u64,
    pub submitted: usize,
    pub committed: usize,
    pub max_latency: SimDuration,
    pub late: Vec<String>,
    pub safety: Result<(), String>,
    pub peers_agree: bool,
    pub orderers_agree: bool,
    pub violations: Vec<String>,
    pub faults: Vec<String>,
}

impl FaultRun {
    pub fn ok(&self) -> bool {
        self.safety.is_ok()
            && self.late.is_empty()
            && self.committed == self.submitted
            && self.peers_agree
            && self.orderers_agree
            && self.violations.is_empty()
    }
}

/// 40 s of invokes under leader kills and single-orderer partitions.
/// At most one orderer is faulty at any time, so a majority stays connected.
pub fn fault_run(seed: u64) -> FaultRun {
    let mut s = StandaloneLedger::new(LedgerConfig::default(), &drone_seed(16), seed).unwrap();
    let mut rng = RandomStreams::new(seed);
    rng.register("faults");
    let orderers: Vec<NodeId> = s.ledger.orderer_ids().to_vec();
    let mut ids = Vec::new();
    let mut faults = Vec::new();
    let end = SimTime::from_secs(40);
    let mut t = SimTime::from_millis(500);
    let mut next_fault = SimTime::from_secs(2);
    let mut heal: Option<(SimTime, NodeId, bool)> = None;
    let mut n = 0usize;
    while t < end {
        s.run_until(t);
        if let Some((at, node, killed)) = heal {
            if t >= at {
                if killed {
                    s.restart(node);
                } else {
                    for o in &orderers {
                        if *o != node {
                            s.set_link(node, *o, true);
                        }
                    }
                }
                faults.push(format!("{t}: heal {node}"));
                heal = None;
                next_fault = t + SimDuration::from_millis(500 + (rng.next_u64("faults").unwrap() % 1500));
            }
        }
        if heal.is_none() && t >= next_fault {
            let r = rng.next_u64("faults").unwrap();
            let victim = match s.ledger.leader() {
                Some(l) if !r.is_multiple_of(3) => l,
                _ => orderers[(r as usize / 3) % orderers.len()],
            };
            let kill = r.is_multiple_of(2);
            if kill {
                s.kill(victim);
            } else {
                for o in &orderers {
                    if *o != victim {
                        s.set_link(victim, *o, false);
                    }
                }
            }
            faults.push(format!("{t}: {} {victim}", if kill { "kill" } else { "partition" }));
            heal = Some((t + SimDuration::from_millis(1000 + rng.next_u64("faults").unwrap() % 3000), victim, kill));
        }
        if t < SimTime::from_secs(32) {
            let burst = 1 + rng.next_u64("faults").unwrap() % 4;
            for _ in 0..burst {
                let drone = format!("d{}", n % 16);
                n += 1;
                ids.push(update(&mut s, &drone, Bytes::from(format!("frame-{n}"))));
            }
        }
        t += SimDuration::from_millis(100 + rng.next_u64("faults").unwrap() % 700);
    }
    s.run_until(end);
    let limit = SimDuration::from_secs(5);
    let mut late = Vec::new();
    let mut committed = 0;
    let mut max_latency = SimDuration::ZERO;
    for id in &ids {
        let r = s.ledger.receipt(id).unwrap();
        match r.latency() {
            Some(l) => {
                committed += 1;
                max_latency = max_latency.max(l);
                if l > limit {
                    late.push(format!("{} took {:.3} s", id.short(), l.as_secs_f64()));
                }
            }
            None => late.push(format!("{} never committed ({:?})", id.short(), r.error)),
        }
    }
    let safety = s.ledger.check_raft().map_err(|v| format!("{v:?}"));
    let chains: Vec<Vec<Digest>> = orderers.iter().map(|o| s.ledger.orderer_blocks(*o).unwrap()).collect();
    let orderers_agree = chains.iter().all(|c| chains.iter().all(|d| c.iter().zip(d).all(|(x, y)| x == y)));
    FaultRun {
        seed,
        submitted: ids.len(),
        committed,
        max_latency,
        late,
        safety,
        peers_agree: s.ledger.peers_agree(&s.net),
        orderers_agree,
        violations: s.ledger.violations().to_vec(),
        faults,
    }
}
