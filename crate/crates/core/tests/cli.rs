use std::path::Path;
use std::process::{Command, Output};

use deformtrack::pipeline::read_report_lines;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deformtrack")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn exported_dataset_tracks_and_annotates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&["bench", "--frames", "3", "--seed", "2", "--export-dataset", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = dir.path().join("report.jsonl");
    let out = run(&[
        "track",
        "--config",
        path(&data.join("config.json")),
        "--frames",
        path(&data.join("frames")),
        "--out",
        path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_report_lines(&report).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records.iter().map(|r| r.frame).collect::<Vec<_>>(), [0, 1, 2]);

    let pois = dir.path().join("pois.json");
    std::fs::write(
        &pois,
        r#"[{"name": "hub", "position": [0.0, 0.0, 0.0]}, {"name": "far_away", "position": [3.0, 0.0, 0.0]}]"#,
    )
    .unwrap();
    let mesh = std::fs::read_dir(data.join("library"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "ply"))
        .unwrap();
    let out = run(&["annotate", "--mesh", path(&mesh), "--pois", path(&pois), "--out", path(&dir.path().join("ok.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("far_away"));
    assert!(!dir.path().join("ok.json").exists());
}
