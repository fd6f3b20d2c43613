//! Running the binary and validating its JSON against the published schemas.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub fn hmmn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmmn"))
        .args(args)
        .current_dir(dir)
        .env_remove("HMMN_LOG")
        .output()
        .expect("binary runs")
}

/// Runs and requires exit 0, returning stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hmmn(dir, args);
    assert!(
        out.status.success(),
        "hmmn {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BASE: &str = "https://hmmn.local/schemas/";

fn schema_file(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Errors from validating `instance` against `schemas/<name>`.
pub fn schema_errors(name: &str, instance: &Value) -> Vec<String> {
    let mut options = jsonschema::options();
    for shared in [
        "common.schema.json",
        "settings.schema.json",
        "metrics.schema.json",
    ] {
        let resource = jsonschema::Resource::from_contents(schema_file(shared)).unwrap();
        options = options.with_resource(format!("{BASE}{shared}"), resource);
    }
    let validator = options.build(&schema_file(name)).expect("schema compiles");
    validator
        .iter_errors(instance)
        .map(|e| format!("{}: {e}", e.instance_path))
        .collect()
}

/// A small generator config so the binary runs in well under a second.
pub fn write_small_config(dir: &Path, instances: usize) -> String {
    let path = dir.join("gen.json");
    std::fs::write(
        &path,
        format!(r#"{{"instances": {instances}, "dims": {{"d": 12, "d_w": 12, "d_r": 10}}}}"#),
    )
    .unwrap();
    "gen.json".into()
}
