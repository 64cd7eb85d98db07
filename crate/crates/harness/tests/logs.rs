use std::fs;

use duel_align::experiment::{AgentKind, ExperimentConfig, CSV_COLUMNS};
use duel_align_harness::commands;
use duel_align_harness::logs::{read_csv, read_header, read_run, CSV_FILE, HEADER_FILE, JSONL_FILE};
use duel_align_harness::HarnessError;

fn quick(agent: AgentKind) -> ExperimentConfig {
    ExperimentConfig {
        agent,
        budget: 150,
        ensemble_size: 4,
        erm_hidden: vec![8],
        gamma_burn_in: 60,
        holdout_size: 64,
        ..ExperimentConfig::default()
    }
}

#[test]
fn written_run_reads_back_exactly() {
    for agent in AgentKind::ALL {
        let dir = tempfile::tempdir().unwrap();
        let out = commands::run(&quick(agent), dir.path()).unwrap();
        let back = read_run(dir.path()).unwrap();
        assert_eq!(back, out.log, "{agent:?}");
        let lines = fs::read_to_string(dir.path().join(JSONL_FILE)).unwrap().lines().count();
        assert_eq!(lines, out.log.records.len());
        if agent != AgentKind::Offline {
            assert_eq!(lines as u64, out.log.final_eval().unwrap().round);
        }
    }
}

#[test]
fn csv_header_is_the_column_contract() {
    let dir = tempfile::tempdir().unwrap();
    commands::run(&quick(AgentKind::PassiveOnline), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "round,oracle_queries,online_win_rate,offline_win_rate,cumulative_regret,immediate_regret,proposal_set_size,pair_variance,label_source"
    );
    assert_eq!(CSV_COLUMNS.join(","), text.lines().next().unwrap());
}

#[test]
fn csv_with_other_columns_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    fs::write(&path, "round,oracle_queries\n1,1\n").unwrap();
    assert!(matches!(read_csv(&path), Err(HarnessError::Format(_))));
}

#[test]
fn schema_mismatch_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    commands::run(&ExperimentConfig { budget: 0, ..quick(AgentKind::SeaBai) }, dir.path()).unwrap();
    let path = dir.path().join(HEADER_FILE);
    let mut header: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    header["schema_version"] = 99.into();
    fs::write(&path, header.to_string()).unwrap();
    let err = read_header(dir.path()).unwrap_err();
    assert!(matches!(err, HarnessError::SchemaVersion { expected: 1, found: 99 }));
    let msg = err.to_string();
    assert!(msg.contains("expected 1") && msg.contains("found 99"), "{msg}");
}

#[test]
fn header_carries_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig { budget: 0, gamma: 0.25, ..quick(AgentKind::SeaEe) };
    commands::run(&config, dir.path()).unwrap();
    let header = read_header(dir.path()).unwrap();
    assert_eq!(header.config, config);
    assert!(header.code_version.starts_with("duel-align@"));
}

#[test]
fn killed_run_leaves_a_parseable_prefix() {
    let dir = tempfile::tempdir().unwrap();
    commands::run(&quick(AgentKind::SeaBai), dir.path()).unwrap();
    let path = dir.path().join(CSV_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(3).collect();
    fs::write(&path, keep.join("\n") + "\n").unwrap();
    assert_eq!(read_csv(&path).unwrap().len(), 2);
}
