use std::path::PathBuf;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobile-maps")).args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mobile-maps-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn json(out: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(out);
    let start = text.find(['{', '[']).expect("json output");
    serde_json::Deserializer::from_str(&text[start..])
        .into_iter::<serde_json::Value>()
        .next()
        .unwrap()
        .unwrap()
}

#[test]
fn enumerate_counts() {
    let out = cli(&["enumerate", "--max-edges", "3"]);
    assert!(out.status.success());
    assert_eq!(json(&out.stdout)["counts_by_edges"], serde_json::json!([1, 2, 9, 54]));
    let out = cli(&["enumerate", "--max-edges", "4", "--degrees", "4"]);
    assert_eq!(json(&out.stdout)["counts_by_edges"], serde_json::json!([1, 0, 2, 0, 9]));
}

#[test]
fn sample_encode_decode() {
    let map = tmp("map.txt");
    let mobile = tmp("mobile.json");
    let back = tmp("back.txt");
    let out = cli(&["sample", "--q", r#"{"4":1}"#, "--n", "15", "--seed", "4", "--out", map.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out.stdout);
    assert_eq!(summary["vertices"], 15);
    assert_eq!(summary["sign"], "plus");

    let out = cli(&["encode", map.to_str().unwrap(), "--out", mobile.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(&["encode", mobile.to_str().unwrap(), "--inverse", "--out", back.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = mobile_maps::maps::HalfEdgeMap::from_text(std::fs::read_to_string(&map).unwrap().trim()).unwrap();
    let b = mobile_maps::maps::HalfEdgeMap::from_text(std::fs::read_to_string(&back).unwrap().trim()).unwrap();
    assert_eq!(a.canonical_code(), b.canonical_code());
}

#[test]
fn verify_writes_reports() {
    let report = tmp("centering.json");
    let out = cli(&["verify", "--suite", "centering,gh", "--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn snake_csv() {
    let out = cli(&["snake", "--n", "32", "--seed", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("s,e,z\n"));
    assert_eq!(text.lines().count(), 1 + 32 + 1);
}

#[test]
fn bad_input_exits_with_two() {
    let out = cli(&["sample", "--q", "{oops", "--n", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
