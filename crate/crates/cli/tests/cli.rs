use std::path::Path;
use std::process::{Command, Output};

fn reccot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reccot"))
        .args(args)
        .current_dir(dir)
        .env_remove("RECCOT_CONFIG")
        .env_remove("RECCOT_DATA_DIR")
        .output()
        .expect("run reccot")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const CONFIG: &str = r#"
dataset = "tiny"
seed = 1
variant = "no_cot"
output_dir = "out"

[data]
reviews = "reviews.jsonl"
k_core = 3

[policy]
words_per_class = 40

[encoder]
dim = 8
hidden = 8
buckets = 1024
learning_rate = 0.003
batch_size = 16
epochs = 1

[recsys]
layers = 1
hidden = 8
batch_size = 32
epochs = 1
learning_rate = 0.001
"#;

#[test]
fn help_lists_the_stage_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = reccot(dir.path(), &["--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    assert!(help.contains("ingest -> stats -> grpo-train"), "{help}");
    for sub in ["cache-inspect", "reward-compare", "run-all", "synth"] {
        assert!(help.contains(sub), "missing {sub}");
    }
}

#[test]
fn missing_config_and_missing_artifacts_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = reccot(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--config"));

    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = reccot(dir.path(), &["--config", "exp.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("reviews.jsonl"), "{}", text(&out.stderr));

    let out = reccot(dir.path(), &["--config", "exp.toml", "rec-train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("missing upstream artifact") && err.contains("split.jsonl"), "{err}");

    let out = reccot(dir.path(), &["--config", "exp.toml", "--variant", "bogus", "stats"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_then_stages_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let out = reccot(d, &["--seed", "4", "synth", "planted", "--out", "reviews.jsonl", "--words-per-class", "40"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("wrote"));

    for stage in ["ingest", "stats", "encoder-train", "embed"] {
        let out = reccot(d, &["--config", "exp.toml", stage]);
        assert!(out.status.success(), "{stage}: {}", text(&out.stderr));
    }
    assert!(d.join("out/no_cot/corpus/manifest.json").exists());

    let out = reccot(d, &["--config", "exp.toml", "cache-inspect"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["dim"], 8);
    assert!(summary["records"].as_u64().unwrap() > 0);
    assert_eq!(summary["records"].as_u64().unwrap(), 2 * summary["user_entries"].as_u64().unwrap());

    let out = reccot(d, &["--config", "exp.toml", "--seed", "9", "encoder-train"]);
    assert_eq!(out.status.code(), Some(1), "a changed config is refused");
    assert!(text(&out.stderr).contains("--force") || text(&out.stderr).contains("force"), "{}", text(&out.stderr));

    let out = reccot(d, &["--config", "exp.toml", "run-all"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["variant"], "no_cot");
    assert!(report["mse"].as_f64().unwrap().is_finite());
}
