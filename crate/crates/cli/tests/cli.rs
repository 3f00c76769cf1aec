use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn kpcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpcm")).args(args).output().expect("binary runs")
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kpcm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let start = text.find('{').expect("JSON document on stdout");
    serde_json::from_str(&text[start..]).expect("valid JSON")
}

#[test]
fn eval_prints_normal_form() {
    let out = kpcm(&["mdo", "eval", "--expr", "D*t"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("t*D + 1"));
    assert_eq!(stdout_json(&out)["schema_version"], "1");
}

#[test]
fn bad_expression_exits_with_input_code() {
    let out = kpcm(&["mdo", "eval", "--expr", "D^1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1:3"));
}

#[test]
fn exact_flow_conserves_hamiltonians() {
    let pair = scratch("pair.json", r#"{"q": ["0", "1"], "p": ["0", "0"]}"#);
    let out = kpcm(&["cm", "exact", "--pair", pair.to_str().unwrap(), "--k", "2", "--s", "1/4"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    assert_eq!(doc["outputs"]["conserved"], true);
    assert_eq!(doc["command"]["name"], "cm exact");
}

#[test]
fn bridge_verify_passes_and_rejects() {
    let good = scratch("good.json", r#"{"q": ["0", "1"], "p": ["1/2", "-1/3"]}"#);
    let out = kpcm(&["bridge", "verify", "--pair", good.to_str().unwrap(), "--samples", "41", "--steps", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["outputs"]["passed"], true);

    let bad = scratch("bad.json", r#"{"x": [["1", "0"], ["0", "2"]], "y": [["0", "0"], ["0", "0"]]}"#);
    let out = kpcm(&["bridge", "verify", "--pair", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_file_is_an_input_error() {
    let out = kpcm(&["bridge", "poles", "--pair", "/nonexistent/pair.json"]);
    assert_eq!(out.status.code(), Some(2));
}
