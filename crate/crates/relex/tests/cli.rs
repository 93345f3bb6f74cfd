mod common;

use std::fs;
use std::path::Path;

use common::*;
use relex_core::corpus::ChainInstance;
use relex_core::synth;

const MFA_DIMS: &str = "word_dim = 8\nindicator_dim = 4\nposition_dim = 4\nhidden = 8\nfactors = 2\n\
                        global_filters = 8\nentity_filters = 8\n";

fn mfa_setup(dir: &Path, epochs: usize) {
    let (rels, data) = synth::relation_instances(30, 1).unwrap();
    relations_file(dir, &rels);
    fs::write(dir.join("train.jsonl"), jsonl(&data)).unwrap();
    fs::write(dir.join("valid.jsonl"), jsonl(&data[..9])).unwrap();
    fs::write(
        dir.join("run.toml"),
        format!(
            "model = \"mfa\"\nrelations = \"relations.txt\"\ntrain = \"train.jsonl\"\nvalidation = \"valid.jsonl\"\n\
             test = \"train.jsonl\"\ncheckpoint = \"out/checkpoint.json\"\nout = \"out\"\nepochs = {epochs}\n\
             batch_size = 10\n{MFA_DIMS}"
        ),
    )
    .unwrap();
}

#[test]
fn train_writes_checkpoint_log_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    mfa_setup(dir.path(), 3);
    let o = relex(dir.path(), &["train", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert_eq!(read(out.join("train_log.jsonl")).lines().count(), 3);
    for f in ["checkpoint.json", "last.json", "threshold.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = relex(dir.path(), &["eval", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("F1 "));
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert!(report["prf"]["f1"].is_number());
    assert!(report["pr_curve"].is_array());
}

#[test]
fn missing_relations_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    mfa_setup(dir.path(), 1);
    let cfg = read(dir.path().join("run.toml")).replace("relations = \"relations.txt\"\n", "");
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = relex(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`relations`"), "{}", stderr(&o));
}

#[test]
fn unknown_model_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    mfa_setup(dir.path(), 1);
    let cfg = read(dir.path().join("run.toml")) + "heads = 3\n";
    fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = relex(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("heads"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    mfa_setup(dir.path(), 2);
    for out in ["a", "b"] {
        let o = relex(dir.path(), &["train", "--config", "run.toml", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let d = dir.path();
    assert_eq!(read(d.join("a/checkpoint.json")), read(d.join("b/checkpoint.json")));
    let o = relex(d, &["train", "--config", "run.toml", "--out", "c", "--seed", "5"]);
    assert!(o.status.success());
    assert_ne!(read(d.join("a/checkpoint.json")), read(d.join("c/checkpoint.json")));
}

#[test]
fn predictions_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    mfa_setup(d, 2);
    assert!(relex(d, &["train", "--config", "run.toml"]).status.success());
    for out in ["p1", "p2"] {
        let o = relex(d, &["predict", "--config", "run.toml", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = read(d.join("p1/predictions.jsonl"));
    assert_eq!(a, read(d.join("p2/predictions.jsonl")));
    assert_eq!(a.lines().count(), 30);
}

#[test]
fn corrupted_or_mismatched_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    mfa_setup(d, 1);
    assert!(relex(d, &["train", "--config", "run.toml"]).status.success());
    let ck = d.join("out/checkpoint.json");
    let good = read(&ck);

    fs::write(&ck, &good[..good.len() / 2]).unwrap();
    let o = relex(d, &["eval", "--config", "run.toml"]);
    assert_ne!(o.status.code(), Some(0));

    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v["vocab_hash"] = serde_json::Value::String("0000000000000000".into());
    fs::write(&ck, v.to_string()).unwrap();
    let o = relex(d, &["eval", "--config", "run.toml"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("hash"), "{}", stderr(&o));
}

#[test]
fn threshold_flag_overrides_stored_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    mfa_setup(d, 1);
    assert!(relex(d, &["train", "--config", "run.toml"]).status.success());
    let o = relex(d, &["eval", "--config", "run.toml", "--threshold", "1.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = relex(d, &["eval", "--config", "run.toml", "--model", "hegcn"]);
    assert_eq!(o.status.code(), Some(2));
    let o = relex(d, &["eval", "--config", "run.toml", "--threshold", "1.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(d.join("out/report.json"))).unwrap();
    assert_eq!(report["threshold"], 1.5);
    // nothing clears a threshold above one, so every positive is demoted
    assert_eq!(report["prf"]["tp"], 0);
    assert_eq!(report["prf"]["fp"], 0);
}

#[test]
fn tune_threshold_updates_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    mfa_setup(d, 1);
    assert!(relex(d, &["train", "--config", "run.toml"]).status.success());
    let mut ck: serde_json::Value = serde_json::from_str(&read(d.join("out/checkpoint.json"))).unwrap();
    ck["threshold"] = serde_json::json!(0.99);
    fs::write(d.join("out/checkpoint.json"), ck.to_string()).unwrap();
    let o = relex(d, &["tune-threshold", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck: serde_json::Value = serde_json::from_str(&read(d.join("out/checkpoint.json"))).unwrap();
    let stored: serde_json::Value = serde_json::from_str(&read(d.join("out/threshold.json"))).unwrap();
    assert_eq!(ck["threshold"], stored["threshold"]);
}

fn joint_roundtrip(model: &str, dims: &str) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (rels, data) = synth::joint_instances(12, 2).unwrap();
    relations_file(d, &rels);
    fs::write(d.join("train.jsonl"), jsonl(&data)).unwrap();
    fs::write(
        d.join("run.toml"),
        format!(
            "model = \"{model}\"\nrelations = \"relations.txt\"\ntrain = \"train.jsonl\"\ntest = \"train.jsonl\"\n\
             checkpoint = \"out/checkpoint.json\"\nout = \"out\"\nepochs = 2\nbatch_size = 4\n{dims}"
        ),
    )
    .unwrap();
    let o = relex(d, &["train", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!d.join("out/threshold.json").exists());
    let o = relex(d, &["eval", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(d.join("out/report.json"))).unwrap();
    for key in ["entity", "relation", "errors"] {
        assert!(report[key].is_object(), "{key}");
    }
    let o = relex(d, &["predict", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = read(d.join("out/predictions.jsonl"));
    assert_eq!(lines.lines().count(), 12);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["tuples"].is_array() && first["gold"].is_array());
}

#[test]
fn wdec_train_eval_predict() {
    joint_roundtrip("wdec", "word_dim = 8\nchar_dim = 4\nchar_features = 4\nhidden = 8\n");
}

#[test]
fn pndec_train_eval_predict() {
    joint_roundtrip(
        "pndec",
        "word_dim = 8\nchar_dim = 4\nchar_features = 4\nhidden = 8\npointer_hidden = 8\nrelation_dim = 4\n",
    );
}

#[test]
fn hegcn_train_predict_with_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (rels, data) = synth::chain_instances(9, 3).unwrap();
    relations_file(d, &rels);
    fs::write(d.join("train.jsonl"), jsonl(&data)).unwrap();
    fs::write(
        d.join("run.toml"),
        "model = \"hegcn\"\nrelations = \"relations.txt\"\ntrain = \"train.jsonl\"\ntest = \"train.jsonl\"\n\
         checkpoint = \"out/checkpoint.json\"\nout = \"out\"\nepochs = 2\nbatch_size = 3\ngraphs = true\n\
         word_dim = 8\nindicator_dim = 4\n",
    )
    .unwrap();
    let o = relex(d, &["train", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("out/threshold.json").exists());
    let o = relex(d, &["predict", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line: serde_json::Value =
        serde_json::from_str(read(d.join("out/predictions.jsonl")).lines().next().unwrap()).unwrap();
    assert!(line["graphs"]["unified"]["nodes"].is_array());
}

fn write_records(d: &Path, name: &str, recs: &[relex_core::mhred::QaRecord]) {
    fs::write(d.join(name), jsonl(recs)).unwrap();
}

#[test]
fn build_mhred_zoo_lake() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut unmatched = zoo_lake_record();
    unmatched.subject = "Atlantis".into();
    write_records(d, "qa.jsonl", &[zoo_lake_record(), unmatched]);
    fs::write(d.join("kb.tsv"), zoo_lake_kb()).unwrap();
    fs::write(d.join("build.toml"), "qa_train = \"qa.jsonl\"\nkb = \"kb.tsv\"\nseed = 4\n").unwrap();
    for out in ["m1", "m2"] {
        let o = relex(d, &["build-mhred", "--config", "build.toml", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let train = read(d.join("m1/train.jsonl"));
    let chains: Vec<ChainInstance> = train.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let labels: Vec<&str> = chains.iter().map(|c| c.relation.as_str()).collect();
    assert_eq!(labels.len(), 2);
    assert!(labels.contains(&LOCATED_IN) && labels.contains(&"None"));
    assert_eq!(read(d.join("m1/relations.txt")), format!("{LOCATED_IN}\n"));
    let stats: serde_json::Value = serde_json::from_str(&read(d.join("m1/stats.json"))).unwrap();
    assert_eq!(stats["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(stats["skipped"][0]["record"], 1);
    for f in ["train.jsonl", "validation.jsonl", "test.jsonl", "relations.txt", "stats.json"] {
        assert_eq!(fs::read(d.join("m1").join(f)).unwrap(), fs::read(d.join("m2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn build_mhred_without_positives_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rec = zoo_lake_record();
    rec.subject = "Atlantis".into();
    write_records(d, "qa.jsonl", &[rec]);
    fs::write(d.join("kb.tsv"), zoo_lake_kb()).unwrap();
    let o = relex(d, &["build-mhred", "--out", "m"]);
    assert_eq!(o.status.code(), Some(2), "missing keys: {}", stderr(&o));
    fs::write(d.join("b.toml"), "qa_train = \"qa.jsonl\"\nkb = \"kb.tsv\"\n").unwrap();
    let o = relex(d, &["build-mhred", "--config", "b.toml", "--out", "m"]);
    assert_ne!(o.status.code(), Some(0));
}

fn prediction_file(d: &Path, name: &str, runs: &[(&[[&str; 3]], &[[&str; 3]])]) -> String {
    let body: String = runs
        .iter()
        .map(|(p, g)| serde_json::json!({"tuples": p, "gold": g}).to_string() + "\n")
        .collect();
    fs::write(d.join(name), body).unwrap();
    name.to_string()
}

#[test]
fn ensemble_votes_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = ["Berlin", "Germany", "capital_of"];
    let b = ["Paris", "France", "capital_of"];
    let gold: &[[&str; 3]] = &[a];
    let with_b = prediction_file(d, "with_b.jsonl", &[(&[a, b], gold)]);
    let only_a = prediction_file(d, "only_a.jsonl", &[(&[a], gold)]);
    let toml_for = |files: &[&str]| {
        let list: Vec<String> = files.iter().map(|f| format!("\"{f}\"")).collect();
        format!("predictions = [{}]\nout = \"vote\"\n", list.join(", "))
    };

    // b in 3 of 5 runs survives, in 2 of 5 it does not
    fs::write(d.join("e.toml"), toml_for(&[&with_b, &with_b, &with_b, &only_a, &only_a])).unwrap();
    let o = relex(d, &["ensemble", "--config", "e.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(d.join("vote/voted.jsonl")).contains("Paris"));
    fs::write(d.join("e.toml"), toml_for(&[&with_b, &with_b, &only_a, &only_a, &only_a])).unwrap();
    assert!(relex(d, &["ensemble", "--config", "e.toml"]).status.success());
    assert!(!read(d.join("vote/voted.jsonl")).contains("Paris"));

    // identical runs vote to themselves
    fs::write(d.join("e.toml"), toml_for(&[with_b.as_str(); 5])).unwrap();
    assert!(relex(d, &["ensemble", "--config", "e.toml"]).status.success());
    let parsed = |p: std::path::PathBuf| -> Vec<serde_json::Value> {
        read(p).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    assert_eq!(parsed(d.join("vote/voted.jsonl")), parsed(d.join(&with_b)));

    // two files need an explicit run count
    fs::write(d.join("e.toml"), toml_for(&[&with_b, &only_a])).unwrap();
    assert_eq!(relex(d, &["ensemble", "--config", "e.toml"]).status.code(), Some(2));
    assert!(relex(d, &["ensemble", "--config", "e.toml", "--runs", "2"]).status.success());

    // misaligned gold
    let other = prediction_file(d, "other.jsonl", &[(&[a], &[b])]);
    fs::write(d.join("e.toml"), toml_for(&[&with_b, &other])).unwrap();
    assert_ne!(relex(d, &["ensemble", "--config", "e.toml", "--runs", "2"]).status.code(), Some(0));
}
