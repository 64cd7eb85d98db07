use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_duel-align"))
}

#[test]
fn invalid_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let status = cli()
        .args(["run", "--gamma", "2", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unreachable_oracle_exits_with_3() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let status = cli()
        .args(["run", "--budget", "5", "--oracle", &addr.to_string(), "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn run_writes_logs_and_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--budget", "40", "--ensemble-size", "3", "--holdout-size", "32"];
    let out = cli().arg("run").args(common).arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["header.json", "log.csv", "duels.jsonl", "policy.json", "reward_model.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let out = cli()
        .arg("eval")
        .args(common)
        .arg("--checkpoint")
        .arg(dir.path().join("policy.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rate: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn show_config_prints_every_key() {
    let out = cli().args(["show-config", "--agent", "offline"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("agent = offline"));
    assert_eq!(text.lines().filter(|l| l.contains(" = ")).count(), duel_align_harness::config::KEYS.len());
}
