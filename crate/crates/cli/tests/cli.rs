use std::io::Write;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_pixelscope");

const SCRIPT: &str = r#"
fbq.registerPlugin("1286678629287552", {__fbEventsPlugin: 1});
instance.optIn("1286678629287552", "InferredEvents", true);
instance.optIn("1286678629287552", "AutomaticMatching", true);
config.set("1286678629287552", "automaticMatching", {"selectedMatchKeys": ["em", "ph"]});
"#;

fn run(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or_default()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn missing_prerequisite_is_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.json");
    std::fs::write(&cfg, r#"{"storage_root": "store"}"#).unwrap();
    let out = run(&["analyze", "--config", cfg.to_str().unwrap()], None);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingPrerequisite");
    assert!(err["message"].as_str().unwrap().len() > 0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.json");
    std::fs::write(&cfg, r#"{"storage_root": "store", "jbos": 3}"#).unwrap();
    let out = run(&["run-all", "--config", cfg.to_str().unwrap()], None);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].is_string());
}

#[test]
fn dump_config_reports_features() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("config.js");
    std::fs::write(&script, SCRIPT).unwrap();
    let v = stdout_json(&run(&["dump-config", script.to_str().unwrap()], None));
    assert_eq!(v["features"]["AutomaticMatching"], true);
}

#[test]
fn simulate_with_feature_removed_shows_the_difference() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("config.js");
    std::fs::write(&script, SCRIPT).unwrap();
    let ctx = dir.path().join("page.json");
    std::fs::write(
        &ctx,
        r#"{"page_url": "https://shop.example/checkout", "buttons": [{"text": "Buy", "form_fields": ["em"]}], "form_values": {"em": "Jane@Example.com"}}"#,
    )
    .unwrap();
    let v = stdout_json(&run(
        &[
            "simulate",
            script.to_str().unwrap(),
            ctx.to_str().unwrap(),
            "--interaction",
            r#"{"kind":"form_submit","index":0}"#,
            "--remove",
            "AutomaticMatching",
        ],
        None,
    ));
    assert!(v["payloads"][0]["udff"]["em"].is_string(), "{v}");
    assert!(v["patched_payloads"][0]["udff"].get("em").is_none(), "{v}");
    assert!(!v["delta"]["changes"].as_array().unwrap().is_empty(), "{v}");
}

#[test]
fn simulate_rejects_unknown_feature() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("config.js");
    std::fs::write(&script, SCRIPT).unwrap();
    let ctx = dir.path().join("page.json");
    std::fs::write(&ctx, r#"{"page_url": "https://shop.example/"}"#).unwrap();
    let out = run(&["simulate", script.to_str().unwrap(), ctx.to_str().unwrap(), "--remove", "Nope"], None);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "InvalidInput");
}

#[test]
fn crack_reads_digests_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let words = dir.path().join("words.txt");
    std::fs::write(&words, "diagnosis\npregnancy\n").unwrap();
    let hex = |s: &str| -> String { Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect() };
    let input = format!("{}\n{}\n", hex("pregnancy"), hex("not in any list"));
    let v = stdout_json(&run(&["crack", "-", "--wordlist", words.to_str().unwrap()], Some(input.as_bytes())));
    let text = v.to_string();
    assert!(text.contains("pregnancy"), "{text}");
}
