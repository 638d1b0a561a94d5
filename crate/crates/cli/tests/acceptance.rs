//! Runs the full self-test twice through the binary and prints one line per
//! acceptance criterion. Criterion 10 is byte-identical output of the two runs.

use std::process::Command;

use serde_json::Value;

fn selftest(threads: &str) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_uhfz2"))
        .args(["selftest", "--seed", "42", "--threads", threads])
        .output()
        .expect("binary runs");
    (out.stdout, out.status.code().unwrap_or(-1))
}

#[test]
fn acceptance() {
    let (first, code) = selftest("1");
    let (second, _) = selftest("2");
    let report: Value = serde_json::from_slice(&first).expect("selftest prints JSON");
    let criteria = report["criteria"].as_array().expect("criteria list");
    let mut failed = Vec::new();
    for c in criteria {
        let passed = c["passed"].as_bool() == Some(true);
        println!("criterion {:>2} {:<22} {}", c["id"], c["name"].as_str().unwrap_or("?"), if passed { "PASS" } else { "FAIL" });
        if !passed {
            failed.push(c["id"].to_string());
        }
    }
    let identical = first == second;
    println!("criterion 10 {:<22} {}", "determinism", if identical { "PASS" } else { "FAIL" });
    if !identical {
        failed.push("10".into());
    }
    assert_eq!(criteria.len(), 9, "selftest reports every library criterion");
    assert_eq!(code, if failed.is_empty() { 0 } else { 1 });
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
