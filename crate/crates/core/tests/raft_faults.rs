mod common;

#[test]
fn fault_runs_stay_safe_and_live() {
    for seed in 0..10 {
        let r = common::fault_run(seed);
        assert!(r.ok(), "{r:#?}");
    }
}
