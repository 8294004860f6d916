use std::hint::black_box;

use bytes::Bytes;
use criterion::{criterion_group, criterion_main, Criterion};
use sarsim_core::device::{intel_up_squared, jetson_xavier_nx, AlgorithmId, INTEL_UP_MODE, JETSON_10W_4C};
use sarsim_core::ledger::export::{encode_log, verify_log};
use sarsim_core::netsim::RadioProfile;
use sarsim_core::offload::{decide, Board, FrameContext, LocalSide, PolicyConfig, RemoteSide};
use sarsim_core::scenario::Scenario;
use sarsim_core::sim::simulate;

fn offload_decision(c: &mut Criterion) {
    let (small, jetson) = (intel_up_squared(), jetson_xavier_nx());
    let radio = RadioProfile::measured(1000.0);
    let algos = small.algorithms(INTEL_UP_MODE);
    let yolo = AlgorithmId::YoloV3Tiny;
    let local = LocalSide { board: Board { profile: &small, mode: INTEL_UP_MODE }, candidates: &algos, radio: &radio };
    let remote = RemoteSide { board: Board { profile: &jetson, mode: JETSON_10W_4C }, algorithm: &yolo };
    let cfg = PolicyConfig::default();
    let frame = FrameContext::nominal(2_300_000);
    c.bench_function("offload_decide", |b| b.iter(|| decide(black_box(&frame), &local, &remote, &cfg)));
}

fn ledger_verify(c: &mut Criterion) {
    let out = simulate(&Scenario::paper_baseline(), Some(1), None).expect("baseline runs");
    let log = Bytes::from(encode_log(out.chain.blocks()).0);
    let (registry, config) = (out.ledger.registry().clone(), out.ledger.chain_config());
    let mut g = c.benchmark_group("ledger");
    g.sample_size(10);
    g.bench_function("verify_baseline_log", |b| b.iter(|| verify_log(black_box(&log), &registry, config).expect("valid")));
    g.finish();
}

fn short_mission(c: &mut Criterion) {
    let mut sc = Scenario::paper_baseline();
    sc.duration_s = 120.0;
    sc.end_grace_s = 30.0;
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("baseline_120s", |b| b.iter(|| simulate(black_box(&sc), Some(1), None).expect("runs")));
    g.finish();
}

criterion_group!(benches, offload_decision, ledger_verify, short_mission);
criterion_main!(benches);
