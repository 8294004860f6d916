use std::collections::{BTreeMap, BTreeSet};

use sarsim_core::ledger::ValidityFlag;
use sarsim_core::metrics::report_tables;
use sarsim_core::scenario::Scenario;
use sarsim_core::sim::simulate;
use sarsim_core::trace::TraceEvent;
use sarsim_core::txflow::contracts::ReportVictimArgs;

#[test]
fn every_verified_positive_lands_on_the_chain() {
    let out = simulate(&Scenario::paper_baseline(), Some(1), None).unwrap();
    let mut on_chain = BTreeSet::new();
    for b in &out.chain.blocks()[1..] {
        for (tx, flag) in b.txs.iter().zip(&b.validity_flags) {
            if tx.function == "report_victim" && *flag == ValidityFlag::Valid {
                let a: ReportVictimArgs = serde_json::from_slice(&tx.args).unwrap();
                on_chain.insert(a.victim_id);
            }
        }
    }
    let mut merged = BTreeMap::new();
    let mut verified = Vec::new();
    for r in out.trace.records() {
        match &r.event {
            TraceEvent::Verified { msg, .. } => verified.push(msg.clone()),
            TraceEvent::LedgerSkipped { function, reason, .. } if function == "report_victim" => {
                let (msg, first) = reason.split_once(" merged with ").expect("merge reason");
                merged.insert(msg.to_string(), first.to_string());
            }
            _ => {}
        }
    }
    assert!(!verified.is_empty());
    for m in &verified {
        let filed = merged.get(m).unwrap_or(m);
        assert!(on_chain.contains(filed), "{m} (filed as {filed}) has no committed report");
    }
}

#[test]
fn seeds_move_discoveries_but_keep_invariants() {
    let mut timelines = BTreeSet::new();
    for seed in 0..20 {
        let out = simulate(&Scenario::paper_baseline(), Some(seed), None).unwrap();
        assert!(out.violations.is_empty(), "seed {seed}: {:?}", out.violations);
        assert!(out.report.energy_balanced(), "seed {seed}");
        let times: Vec<String> = out.report.victims.iter().map(|v| format!("{}@{:?}", v.victim, v.discovered_s)).collect();
        timelines.insert(times);
    }
    assert!(timelines.len() > 1, "every seed produced the same discoveries");
}

#[test]
fn report_tables_carry_the_measured_rows() {
    let sc = Scenario::paper_baseline();
    let out = simulate(&sc, Some(1), None).unwrap();
    let names: Vec<String> = ["offload", "link", "ledger"].map(String::from).to_vec();
    let text = report_tables(&out.report, &sc, &names).unwrap();
    let row = |prefix: &str| text.lines().find(|l| l.trim_start().starts_with(prefix)).unwrap_or_else(|| panic!("no `{prefix}` row in\n{text}")).to_string();
    let yolo: Vec<f64> = row("yolov3-tiny").split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((yolo[0] - 714.0).abs() < 5.0 && (315.0..=320.0).contains(&yolo[1]), "{yolo:?}");
    assert!((yolo[2] - 5600.0).abs() < 112.0 && (yolo[3] - 975.0).abs() < 1e-6, "{yolo:?}");
    assert!(row("10000").ends_with("3.700") && row("65508").ends_with("5.600"));

    let class = |name: &str| out.report.ledger.classes.iter().find(|c| c.class == name).unwrap().clone();
    let mb = 1e6;
    assert!((class("update_info").mean_request_bytes / mb - 4.0).abs() < 0.05);
    assert!((class("urgent_info").mean_request_bytes / mb - 0.5).abs() < 0.05);
    assert!((class("query_data_drone").max_response_bytes / mb - 16.0).abs() < 0.1);
}
