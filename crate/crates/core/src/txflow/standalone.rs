//! The ledger network driven by its own kernel, without the drone fleet.

use bytes::Bytes;

use super::contracts::SeedData;
use super::network::{KernelHost, LedgerConfig, LedgerEvent, LedgerNet};
use crate::kernel::{Kernel, NodeId, SimTime};
use crate::ledger::{ContractId, Digest};
use crate::netsim::{LinkState, NetConditions, Network, WiredProfile};

pub struct StandaloneLedger {
    pub kernel: Kernel<LedgerEvent>,
    pub net: Network,
    pub ledger: LedgerNet,
    pub client: String,
}

impl StandaloneLedger {
    /// Orderers get ids 1..=n, peers follow, the single client comes last.
    pub fn new(cfg: LedgerConfig, seed: &SeedData, master_seed: u64) -> Result<Self, String> {
        let orderers: Vec<NodeId> = (1..=cfg.orderers as u32).map(NodeId).collect();
        let peers: Vec<NodeId> = (0..cfg.peers as u32).map(|i| NodeId(cfg.orderers as u32 + 1 + i)).collect();
        let client_node = NodeId((cfg.orderers + cfg.peers) as u32 + 1);
        let client = "client1".to_string();
        let ledger = LedgerNet::new(cfg, seed, master_seed, &orderers, &peers, &[(client.clone(), client_node)])?;
        let mut net = Network::new(WiredProfile::default(), NetConditions::default());
        ledger.attach(&mut net, (0.0, 0.0))?;
        let mut kernel = Kernel::new(master_seed);
        Network::register_streams(kernel.streams());
        LedgerNet::register_streams(kernel.streams());
        let mut s = StandaloneLedger { kernel, net, ledger, client };
        s.with_host(|l, h| l.start(h));
        Ok(s)
    }

    pub fn with_host<R>(&mut self, f: impl FnOnce(&mut LedgerNet, &mut KernelHost<'_, LedgerEvent>) -> R) -> R {
        let mut host = KernelHost { kernel: &mut self.kernel, net: &mut self.net };
        f(&mut self.ledger, &mut host)
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    /// Processes every event up to and including `t`, then sets the clock to `t`.
    pub fn run_until(&mut self, t: SimTime) {
        let (net, ledger) = (&mut self.net, &mut self.ledger);
        self.kernel.run_until(t, |kernel, ev| {
            let mut host = KernelHost { kernel, net };
            ledger.handle(&mut host, ev.target, ev.payload);
        });
    }

    pub fn invoke(&mut self, contract: ContractId, function: &str, args: Bytes, payload: Bytes, class: &str) -> Result<Digest, String> {
        let client = self.client.clone();
        self.with_host(|l, h| l.invoke(h, &client, contract, function, args, payload, class))
    }

    pub fn query(&mut self, contract: ContractId, function: &str, args: Bytes, class: &str) -> Result<u64, String> {
        let client = self.client.clone();
        self.with_host(|l, h| l.query(h, &client, contract, function, args, class))
    }

    pub fn kill(&mut self, id: NodeId) {
        self.with_host(|l, h| l.kill(h, id));
    }

    pub fn restart(&mut self, id: NodeId) {
        self.with_host(|l, h| l.restart(h, id));
    }

    pub fn set_link(&mut self, a: NodeId, b: NodeId, up: bool) {
        let state = if up { LinkState::Up } else { LinkState::Down };
        self.net.set_link_state(a, b, state).expect("ledger link exists");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SimDuration;
    use crate::ledger::ValidityFlag;
    use crate::txflow::contracts::{canonical_json, ClusterSummary, DroneSeed, IdArgs, UpdateDroneArgs};

    fn seed(drones: usize) -> SeedData {
        SeedData {
            drones: (0..drones)
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

    fn update(s: &mut StandaloneLedger, drone: &str, payload: &'static [u8]) -> Digest {
        let payload = Bytes::from_static(payload);
        let args = UpdateDroneArgs {
            drone_id: drone.into(),
            location: (1.0, 2.0),
            battery_fraction: 0.5,
            payload_digest: Digest::of(&payload),
        };
        s.invoke(ContractId::DroneObject, "update_drone_info", canonical_json(&args), payload, "update_info").unwrap()
    }

    fn boot(drones: usize, seed_no: u64) -> StandaloneLedger {
        let mut s = StandaloneLedger::new(LedgerConfig::default(), &seed(drones), seed_no).unwrap();
        s.run_until(SimTime::from_secs(1));
        assert!(s.ledger.leader().is_some());
        s
    }

    #[test]
    fn invoke_commits_on_every_peer() {
        let mut s = boot(1, 7);
        let id = update(&mut s, "d0", b"img");
        s.run_until(SimTime::from_secs(5));
        let r = s.ledger.receipt(&id).unwrap();
        assert_eq!(r.flag, Some(ValidityFlag::Valid), "{r:?}");
        assert!(r.latency().unwrap() <= SimDuration::from_millis(2100));
        assert!(s.ledger.peers_agree(&s.net));
        for p in s.ledger.peer_ids() {
            assert_eq!(s.ledger.peer_chain(*p).unwrap().height(), 2);
        }
        assert!(s.ledger.violations().is_empty());
        s.ledger.check_raft().unwrap();
    }

    #[test]
    fn concurrent_updates_conflict() {
        let mut s = boot(1, 8);
        let a = update(&mut s, "d0", b"a");
        let b = update(&mut s, "d0", b"b");
        s.run_until(SimTime::from_secs(6));
        let mut flags = [s.ledger.receipt(&a).unwrap().flag.unwrap(), s.ledger.receipt(&b).unwrap().flag.unwrap()];
        flags.sort_by_key(|f| f.as_str());
        assert_eq!(flags, [ValidityFlag::InvalidVersionConflict, ValidityFlag::Valid]);
    }

    #[test]
    fn burst_of_25_cuts_10_10_5() {
        let mut s = boot(25, 9);
        for i in 0..25 {
            update(&mut s, &format!("d{i}"), b"x");
        }
        s.run_until(SimTime::from_secs(8));
        let sizes: Vec<usize> = s.ledger.peer_chain(s.ledger.peer_ids()[0]).unwrap().blocks()[1..].iter().map(|b| b.txs.len()).collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        assert!(s.ledger.receipts().iter().all(|r| r.flag == Some(ValidityFlag::Valid)));
    }

    #[test]
    fn queries_avoid_orderers() {
        let mut s = boot(1, 10);
        for o in s.ledger.orderer_ids().to_vec() {
            s.kill(o);
        }
        let from = s.net.send_log().len();
        let args = canonical_json(&IdArgs { id: "d0".into() });
        let q = s.query(ContractId::DroneObject, "query_drone", args, "query").unwrap();
        s.run_until(SimTime::from_secs(2));
        let r = &s.ledger.queries()[q as usize];
        assert!(r.answered_at.is_some() && r.error.is_none(), "{r:?}");
        let orderers = s.ledger.orderer_ids().to_vec();
        assert!(s.net.send_log()[from..].iter().all(|m| !orderers.contains(&m.dst)));
    }

    #[test]
    fn leader_kill_recovers() {
        let mut s = boot(3, 11);
        let leader = s.ledger.leader().unwrap();
        let a = update(&mut s, "d0", b"a");
        s.run_until(SimTime::from_millis(1010));
        s.kill(leader);
        let b = update(&mut s, "d1", b"b");
        s.run_until(SimTime::from_secs(7));
        for id in [a, b] {
            let r = s.ledger.receipt(&id).unwrap();
            assert_eq!(r.flag, Some(ValidityFlag::Valid), "{r:?}");
            assert!(r.latency().unwrap() <= SimDuration::from_secs(5), "{r:?}");
        }
        s.restart(leader);
        s.run_until(SimTime::from_secs(9));
        assert_ne!(s.ledger.leader(), None);
        s.ledger.check_raft().unwrap();
        assert!(s.ledger.peers_agree(&s.net));
    }
}
