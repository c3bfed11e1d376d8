use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tallrec");

const TINY: &str = r#"
output_dir = "out"
seeds = [0, 1]
k_grid = [4]
variants = ["AT", "TALLRec"]
window = 3

[datasets.movie]
synthetic = { instances = 50, seed = 1 }

[model]
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16

[lora]
rank = 2

[general]
tasks = 4
validation_tasks = 2

[train.general]
epochs = 1
batch_size = 4

[train.rec]
epochs = 1
batch_size = 4
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("tallrec.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--config").arg(config).args(args).env_remove("TALLREC_OUTPUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let out = Command::new(BIN).output().unwrap();
    assert_eq!(code(&out), 1);
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let help = String::from_utf8_lossy(&out.stdout).into_owned();
    for cmd in ["prepare", "train", "eval", "experiment", "report", "sweep", "gradcheck"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn config_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&dir.path().join("absent.toml"), &["prepare"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let bad = write_config(dir.path(), &format!("{TINY}\nunknown_key = 3\n"));
    let out = run(&bad, &["prepare"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown_key"), "{}", stderr(&out));

    let missing_data = write_config(dir.path(), "[datasets.movie]\npath = \"nope.csv\"\n");
    let out = run(&missing_data, &["prepare"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.csv"));
}

#[test]
fn prepare_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    assert_eq!(code(&run(&config, &["prepare"])), 0);
    let first = tree_bytes(&dir.path().join("out"));
    assert_eq!(first.len(), 6);
    assert_eq!(code(&run(&config, &["prepare"])), 0);
    assert_eq!(tree_bytes(&dir.path().join("out")), first);
}

#[test]
fn train_eval_report_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");

    // Nothing prepared yet.
    assert_eq!(code(&run(&config, &["train", "--variant", "TALLRec", "-k", "4", "--train-domain", "movie"])), 1);
    assert_eq!(code(&run(&config, &["prepare"])), 0);

    let too_many = run(&config, &["train", "--variant", "TALLRec", "-k", "41", "--train-domain", "movie"]);
    assert_eq!(code(&too_many), 1);
    assert!(stderr(&too_many).contains("K must lie in"), "{}", stderr(&too_many));
    assert!(!out_dir.join("runs").exists());

    let missing =
        run(&config, &["eval", "--variant", "TALLRec", "-k", "4", "--train-domain", "movie", "--test-domain", "movie"]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("not registered"));

    for seed in ["0", "1"] {
        let args = ["--variant", "TALLRec", "-k", "4", "--train-domain", "movie", "--seed", seed];
        let out = run(&config, &[&["train"], &args[..]].concat());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let out = run(&config, &[&["eval"], &args[..], &["--test-domain", "movie"]].concat());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let log = std::fs::read_to_string(out_dir.join("logs/tallrec-movie-k4-s0.jsonl")).unwrap();
    let general = log.find("\"stage\":\"general\"").unwrap();
    let rec = log.find("\"stage\":\"rec\"").unwrap();
    assert!(general < rec);

    let result: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("results/tallrec-movie-k4-s0__test-movie.json")).unwrap())
            .unwrap();
    for field in
        ["config_hash", "checkpoint_sha256", "variant", "k", "train_domain", "test_domain", "seed", "auc", "scores"]
    {
        assert!(!result[field].is_null(), "{field} missing");
    }

    let out = run(&config, &["report"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("TALLRec"));
}

#[test]
fn experiment_is_reproducible_across_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let mut reports = Vec::new();
    for sub in ["a", "b"] {
        let target = dir.path().join(sub);
        let out = Command::new(BIN)
            .args(["experiment", "--config"])
            .arg(&config)
            .env("TALLREC_OUTPUT_DIR", &target)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(!dir.path().join("out").exists(), "the override must replace output_dir");
        reports
            .push(["report.csv", "report_summary.csv", "report.txt"].map(|f| std::fs::read(target.join(f)).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    let summary = String::from_utf8(reports[0][1].clone()).unwrap();
    assert_eq!(summary.lines().count(), 3, "{summary}");
}

#[test]
fn single_class_test_split_fails_with_undefined_auc() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("user_id,item_id,rating,timestamp,title\n");
    for u in 0..4 {
        for i in 0..6 {
            csv.push_str(&format!("{u},{i},5,{},Film {i}\n", 100 * u + i));
        }
    }
    std::fs::write(dir.path().join("ratings.csv"), csv).unwrap();
    let config = write_config(
        dir.path(),
        &TINY
            .replace("synthetic = { instances = 50, seed = 1 }", "path = \"ratings.csv\"")
            .replace("k_grid = [4]", "k_grid = [2]"),
    );
    assert_eq!(code(&run(&config, &["prepare"])), 0);
    let args = ["--variant", "AT", "-k", "2", "--train-domain", "movie"];
    assert_eq!(code(&run(&config, &[&["train"], &args[..]].concat())), 0);
    let out = run(&config, &[&["eval"], &args[..], &["--test-domain", "movie"]].concat());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("AUC undefined"), "{}", stderr(&out));
}

#[test]
fn schema_mismatch_names_the_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ratings.csv"), "user,item,score\n1,2,3\n").unwrap();
    let config =
        write_config(dir.path(), &TINY.replace("synthetic = { instances = 50, seed = 1 }", "path = \"ratings.csv\""));
    let out = run(&config, &["prepare"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("user_id") && stderr(&out).contains("rating"), "{}", stderr(&out));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    std::fs::write(dir.path().join("blocker"), b"").unwrap();
    let out = Command::new(BIN)
        .args(["prepare", "--config"])
        .arg(&config)
        .env("TALLREC_OUTPUT_DIR", dir.path().join("blocker/out"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn gradcheck_and_sweep_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TINY.replace("seeds = [0, 1]", "seeds = [0]"));
    let out = run(&config, &["gradcheck", "--coords", "20"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    let out = run(&config, &["gradcheck", "--coords", "5", "--tolerance", "0"]);
    assert_eq!(code(&out), 2, "a failed check is a runtime failure");

    assert_eq!(code(&run(&config, &["prepare"])), 0);
    let out = run(&config, &["sweep"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sweep = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 5);
    assert_eq!(sweep.lines().filter(|l| l.contains(",true,")).count(), 1);
}
