use sarsim_core::scenario::Scenario;

#[test]
fn bundled_file_matches_built_in_baseline() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/paper-baseline.toml");
    let from_file = Scenario::load(path).unwrap();
    assert_eq!(from_file, Scenario::paper_baseline());
    assert_eq!(Scenario::from_toml(&from_file.to_toml()).unwrap(), from_file);
}
