use std::path::Path;
use std::process::{Command, Output};

fn sarsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarsim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--scenario", "paper-baseline", "--seed", "4", "--until", "200", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    sarsim(&args)
}

#[test]
fn simulate_verify_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let o = simulate_into(&dir, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "report.json", "scenario.toml", "ledger.bin", "ledger.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let ledger = dir.join("ledger.bin");
    let o = sarsim(&["verify-chain", "--ledger", ledger.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("ok: "));

    let o = sarsim(&["report", "--in", dir.to_str().unwrap(), "--tables", "offload,link,ledger"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("yolov3-tiny") && text.contains("3.700") && text.contains("update_info"), "{text}");

    let o = sarsim(&["report", "--in", dir.to_str().unwrap(), "--tables", "offload,bogus"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn tampered_export_exits_with_violation() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate_into(tmp.path(), &[])), 0);
    let ledger = tmp.path().join("ledger.bin");
    let mut bytes = std::fs::read(&ledger).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x01;
    std::fs::write(&ledger, bytes).unwrap();
    let o = sarsim(&["verify-chain", "--ledger", ledger.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).starts_with("first bad block "), "{}", stdout(&o));
}

#[test]
fn reruns_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&simulate_into(&a, &["--format", "json"])), 0);
    assert_eq!(code(&simulate_into(&b, &["--format", "json"])), 0);
    for f in ["trace.json", "report.json", "scenario.toml", "ledger.bin", "ledger.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_runs_each_seed() {
    let o = sarsim(&["sweep", "--scenario", "paper-baseline", "--seeds", "0..=2", "--until", "60"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("seed {i}: ")), "{l}");
    }
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sarsim(&["simulate", "--scenario", "/nonexistent.toml", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nspped = 3\n").unwrap();
    let o = sarsim(&["simulate", "--scenario", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&sarsim(&["sweep", "--scenario", "paper-baseline", "--seeds", "5..2"])), 1);
    assert_eq!(code(&sarsim(&["no-such-command"])), 1);
    assert_eq!(code(&sarsim(&["--help"])), 0);
}
