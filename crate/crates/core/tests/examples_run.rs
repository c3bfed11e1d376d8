//! Run the quick examples as built binaries and check a line of each.
//! `cargo test` builds every example next to the test binaries.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> Command {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_tallrec"));
    let mut path = bin.parent().unwrap().join("examples").join(name);
    path.set_extension(std::env::consts::EXE_EXTENSION);
    assert!(path.is_file(), "example binary {} not built; `cargo test --workspace` builds it", path.display());
    Command::new(path)
}

fn run(mut cmd: Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn history_windows() {
    let out = run(example("history_windows"));
    assert!(out.contains("16-shot draw:"), "{out}");
}

#[test]
fn prompts() {
    let out = run(example("prompts"));
    assert!(out.contains("Target new book:"), "{out}");
}

#[test]
fn tokenize() {
    let out = run(example("tokenize"));
    assert!(out.contains("decoded: \"Café (QZJX)\""), "{out}");
}

#[test]
fn lora_model() {
    let out = run(example("lora_model"));
    assert!(out.contains("fresh adapters change logits by 0e0"), "{out}");
    assert!(out.contains("checkpoint round trip identical: true"), "{out}");
}

#[test]
fn gradient_check() {
    let out = run(example("gradient_check"));
    let line = out.lines().last().unwrap();
    let err: f64 = line.trim_start_matches("max relative error ").parse().unwrap();
    assert!(err < 1e-4, "{line}");
}

#[test]
fn auc() {
    let out = run(example("auc"));
    assert!(out.contains("single class:"), "{out}");
}

#[test]
fn pipeline_on_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = example("pipeline");
    cmd.env("TALLREC_OUTPUT_DIR", dir.path());
    let out = run(cmd);
    assert!(out.contains("28 runs planned"), "{out}");
    assert!(dir.path().join("report.csv").is_file());
}

#[test]
fn weight_decay_sweep_on_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = example("weight_decay_sweep");
    cmd.env("TALLREC_OUTPUT_DIR", dir.path());
    let out = run(cmd);
    assert!(out.lines().last().unwrap().starts_with("selected "), "{out}");
    assert!(dir.path().join("sweep.csv").is_file());
}
