use std::path::Path;

use reccot::pipeline::{write_reviews_jsonl, ExperimentConfig, FinalReport, Manifest, Pipeline, Stage, Variant};
use reccot::synth::{planted_corpus, PlantedConfig};
use reccot::Error;

fn small_config(dir: &Path) -> ExperimentConfig {
    let planted = PlantedConfig { users: 60, items: 30, words_per_class: 40, ..PlantedConfig::default() };
    write_reviews_jsonl(&dir.join("reviews.jsonl"), &planted_corpus(&planted, &planted.lexicon()).unwrap()).unwrap();
    let text = r#"
        dataset = "tiny"
        seed = 3
        output_dir = "out"

        [data]
        reviews = "reviews.jsonl"
        k_core = 3

        [data.schema]
        item_text = "item_text"

        [policy]
        words_per_class = 40

        [grpo]
        steps = 50

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
        epochs = 2
        learning_rate = 0.001
    "#;
    ExperimentConfig::from_toml(text).unwrap()
}

fn pipeline(dir: &Path) -> Pipeline {
    Pipeline::new(small_config(dir), dir).unwrap()
}

#[test]
fn config_round_trips_and_derives_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.grpo.seed, 3);
    assert_ne!(cfg.encoder.seed, cfg.recsys.seed);
    assert_eq!(cfg.data.k_core, 3);
    assert_eq!(cfg.recsys.k_max, 10, "unset fields keep defaults");
    let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn config_needs_a_seed_and_valid_values() {
    assert!(matches!(ExperimentConfig::from_toml("dataset = \"x\""), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("seed = 1\n[data]\nsplit = [0.5, 0.5, 0.5]"), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("seed = 1\nvariant = \"nope\""), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("seed = 1\n[recsys]\nbatch_size = 1"), Err(Error::Config(_))));
}

#[test]
fn variants_parse_and_label() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert_eq!(Variant::NoCot.label(), "RecCoT(w/o CoT)");
    assert_eq!(Variant::NoCotItem.label(), "RecCoT(w/o CoT)+item");
    assert_eq!(Variant::Full.label(), "RecCoT");
}

#[test]
fn stage_before_its_inputs_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    p.run_stage(Stage::Ingest).unwrap();
    p.run_stage(Stage::Stats).unwrap();
    match p.run_stage(Stage::RecEval).unwrap_err() {
        Error::MissingArtifact(path) => assert!(path.ends_with("cache/cache.bin"), "{}", path.display()),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn full_run_writes_manifests_and_refuses_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    let report = p.run_all().unwrap();
    assert_eq!(report.label, "RecCoT");
    assert_eq!(report.dataset, "tiny");
    assert!(report.mse.is_finite() && report.baseline_mse > 0.0);
    for stage in Stage::ALL {
        let m: Manifest = reccot::io::read_json(&p.artifact(stage, "manifest.json")).unwrap();
        assert_eq!(m.stage, stage);
        assert_eq!(m.config_hash, p.config_hash(stage));
        assert!(!m.outputs.is_empty());
    }
    let analysis = std::fs::read_to_string(p.artifact(Stage::Analyze, "engagement.tsv")).unwrap();
    assert!(analysis.contains("0-127"));
    let preds = std::fs::read_to_string(p.artifact(Stage::RecEval, "predictions.csv")).unwrap();
    assert!(preds.starts_with("user_id,item_id,truth,prediction"));

    // Rerunning with unchanged config reproduces the artifacts exactly.
    let before: Manifest = reccot::io::read_json(&p.artifact(Stage::RecTrain, "manifest.json")).unwrap();
    p.run_stage(Stage::RecTrain).unwrap();
    let after: Manifest = reccot::io::read_json(&p.artifact(Stage::RecTrain, "manifest.json")).unwrap();
    assert_eq!(before, after);

    // A recommender change leaves upstream stages valid but guards rec-train.
    let mut changed = p.clone();
    changed.config.recsys.epochs = 3;
    changed.run_stage(Stage::Embed).unwrap();
    assert!(matches!(changed.run_stage(Stage::RecTrain), Err(Error::Refused(_))));
    changed.force = true;
    changed.run_stage(Stage::RecTrain).unwrap();
}

#[test]
fn no_cot_variants_skip_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = pipeline(dir.path());
    for variant in [Variant::NoCot, Variant::NoCotItem] {
        p.config.variant = variant;
        let report = p.run_all().unwrap();
        assert_eq!(report.label, variant.label());
        assert!(!p.stage_dir(Stage::GrpoTrain).exists());
        assert!(!p.stage_dir(Stage::CotGenerate).exists());
    }
}

#[test]
fn encoder_checkpoint_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    let first = p.run_all().unwrap();
    let mut q = p.clone();
    q.config.output_dir = "reuse".into();
    q.encoder_checkpoint = Some(p.artifact(Stage::EncoderTrain, "encoder.ckpt"));
    let second = q.run_all().unwrap();
    assert_eq!(first.mse, second.mse);
    let metrics = std::fs::read_to_string(q.artifact(Stage::EncoderTrain, "metrics.json")).unwrap();
    assert!(metrics.contains("\"loaded_from_checkpoint\": true"));
}

#[test]
fn reward_compare_writes_one_row_per_reward() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    let rows = p.reward_compare().unwrap();
    assert_eq!(rows.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("out/reward_compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,reward,cot_mae,pretrain_mse,pretrain_mae,contrastive_mse,contrastive_mae");
    assert!(lines[1].starts_with("tiny,frequency-aware,"));
    assert!(lines[2].starts_with("tiny,linear,"));
}

#[test]
fn data_dir_fallback_resolves_relative_paths() {
    let data = tempfile::tempdir().unwrap();
    let work = tempfile::tempdir().unwrap();
    let mut cfg = small_config(data.path());
    cfg.data.reviews = "reviews.jsonl".into();
    let p = Pipeline::new(cfg, work.path()).unwrap();
    assert_eq!(p.resolve(Path::new("reviews.jsonl")), work.path().join("reviews.jsonl"));
    std::env::set_var("RECCOT_DATA_DIR", data.path());
    let resolved = p.resolve(Path::new("reviews.jsonl"));
    std::env::remove_var("RECCOT_DATA_DIR");
    assert_eq!(resolved, data.path().join("reviews.jsonl"));
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path());
    p.run_all().unwrap();
    let a = std::fs::read(p.artifact(Stage::RecEval, "metrics.json")).unwrap();
    let mut q = p.clone();
    q.config.output_dir = "again".into();
    q.run_all().unwrap();
    let b = std::fs::read(q.artifact(Stage::RecEval, "metrics.json")).unwrap();
    assert_eq!(a, b);
    let r: FinalReport = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.variant, "full");
}

#[test]
fn item_side_text_is_part_of_the_encoder_config() {
    let dir = tempfile::tempdir().unwrap();
    let plain = pipeline(dir.path());
    let mut cfg = small_config(dir.path());
    cfg.encoder.item_side_text = true;
    let with_items = Pipeline::new(cfg, dir.path()).unwrap();
    assert_eq!(plain.config_hash(Stage::Ingest), with_items.config_hash(Stage::Ingest));
    assert_ne!(plain.config_hash(Stage::EncoderTrain), with_items.config_hash(Stage::EncoderTrain));
}
