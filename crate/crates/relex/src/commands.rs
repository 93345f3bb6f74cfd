//! The six workflows. Each reads a resolved [`RunConfig`] and writes its
//! outputs under `out`; nothing is written to stdout except headline numbers.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use relex_core::corpus::{RelationSet, TupleStrings, NONE_LABEL};
use relex_core::eval::{
    categorize_errors, classification_instance_counts, classification_prf, paired_bootstrap, pr_curve,
    subtask_eval, thresholded_label, tune_threshold, tuple_counts, tuple_set_prf, Counts, ErrorCounts, PrfReport,
    BOOTSTRAP_RESAMPLES,
};
use relex_core::mhred::{balance_and_split, build_chains, stats, MhredStats};
use relex_core::train::EpochLog;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, DEFAULT_MIN_COUNT, DEFAULT_RUNS};
use crate::error::{CliError, CliResult};
use crate::formats::{self, Overlong};
use crate::model::{
    check_settings, tuple_rows, tuple_set, AnyModel, BuildInputs, Checkpoint, Dataset, LabelPrediction, TuplePrediction,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_CHECKPOINT_FILE: &str = "last.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const VOTED_FILE: &str = "voted.jsonl";
pub const STATS_FILE: &str = "stats.json";

fn policy(cfg: &RunConfig) -> Overlong {
    if cfg.truncate.unwrap_or(false) {
        Overlong::Truncate
    } else {
        Overlong::Reject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    /// Scores at that threshold on the data it was tuned on.
    pub tuned_on: PrfReport,
}

fn tune(model: &AnyModel, data: &Dataset) -> CliResult<ThresholdReport> {
    let preds = model.score(data)?;
    let (threshold, tuned_on) = tune_threshold(&preds)?;
    Ok(ThresholdReport { threshold, tuned_on })
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let kind = cfg.require_model()?;
    let relations = formats::read_relations(&cfg.require_path("relations")?)?;
    let out = cfg.require_path("out")?;
    let train_path = cfg.require_path("train")?;
    let training = cfg.training(kind)?;
    let data = Dataset::read(&train_path, kind.dataset(), &relations, policy(cfg))?;
    if data.is_empty() {
        return Err(CliError::Core {
            path: train_path,
            source: relex_core::Error::validation("train", "no records"),
        });
    }
    let validation = cfg
        .validation
        .as_deref()
        .map(|p| Dataset::read(p, kind.dataset(), &relations, policy(cfg)))
        .transpose()?;
    let mut model = AnyModel::build(
        kind,
        cfg.model_settings.clone(),
        BuildInputs {
            relations,
            train: &data,
            embeddings: cfg.embeddings.as_deref(),
            min_count: cfg.min_count.unwrap_or(DEFAULT_MIN_COUNT),
            seed: cfg.seed(),
        },
    )?;
    log::info!(
        "training {kind} on {} records, {} parameters",
        data.len(),
        model.store().scalar_count()
    );
    let outcome = model.train(&data, validation.as_ref(), &training, |e: &EpochLog| {
        log::info!("epoch {} loss {:.6} validation {:?}", e.epoch, e.mean_loss, e.validation);
    })?;
    formats::write_jsonl(&out.join(TRAIN_LOG_FILE), &outcome.log)?;
    model.store_mut().load_values(&outcome.last)?;
    Checkpoint::from_model(&model, None).save(&out.join(LAST_CHECKPOINT_FILE))?;
    if let Some((epoch, score, best)) = &outcome.best {
        log::info!("keeping epoch {epoch} (validation {score:.4})");
        model.store_mut().load_values(best)?;
    }
    let threshold = if kind.is_classifier() {
        let t = tune(&model, validation.as_ref().unwrap_or(&data))?;
        formats::write_json(&out.join(THRESHOLD_FILE), &t)?;
        Some(t.threshold)
    } else {
        None
    };
    Checkpoint::from_model(&model, threshold).save(&out.join(CHECKPOINT_FILE))
}

/// Loads the checkpoint named by `checkpoint`, checking the run's model
/// keys against it.
fn run_model(cfg: &RunConfig) -> CliResult<(AnyModel, Option<f64>)> {
    let (model, threshold) = load_model(&cfg.require_path("checkpoint")?)?;
    if let Some(k) = cfg.model.filter(|k| *k != model.kind()) {
        return Err(CliError::config(format!("configuration names {k}, checkpoint holds {}", model.kind())));
    }
    check_settings(model.kind(), &cfg.model_settings)?;
    Ok((model, threshold))
}

fn load_model(path: &Path) -> CliResult<(AnyModel, Option<f64>)> {
    let ck = Checkpoint::load(path)?;
    let threshold = ck.threshold;
    let model = ck.into_model().map_err(|e| match e {
        CliError::Model(source) => CliError::Core {
            path: path.into(),
            source,
        },
        other => other,
    })?;
    Ok((model, threshold))
}

fn read_test(cfg: &RunConfig, model: &AnyModel) -> CliResult<Dataset> {
    Dataset::read(&cfg.require_path("test")?, model.kind().dataset(), model.relations(), policy(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub instances: usize,
    pub prf: PrfReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// `(threshold, precision, recall)` points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_curve: Option<Vec<(f64, f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity: Option<PrfReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation: Option<PrfReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorCounts>,
    /// Paired bootstrap p-value against the `compare` checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

/// Per-instance counts and the report of one model on `data`.
fn assess(model: &AnyModel, threshold: Option<f64>, data: &Dataset) -> CliResult<(Vec<Counts>, EvalReport)> {
    let mut report = EvalReport {
        model: model.kind().to_string(),
        instances: data.len(),
        prf: PrfReport::from(Counts::default()),
        threshold: None,
        pr_curve: None,
        entity: None,
        relation: None,
        errors: None,
        p_value: None,
    };
    if model.kind().is_classifier() {
        let t = threshold.unwrap_or(0.0);
        let preds = model.score(data)?;
        report.prf = classification_prf(&preds, t);
        report.threshold = Some(t);
        report.pr_curve = Some(pr_curve(&preds));
        Ok((classification_instance_counts(&preds, t), report))
    } else {
        let pred = model.extract(data)?;
        let gold = data.gold_tuples().expect("joint data");
        report.prf = tuple_set_prf(&pred, &gold)?;
        let (entity, relation) = subtask_eval(&pred, &gold)?;
        report.entity = Some(entity);
        report.relation = Some(relation);
        report.errors = Some(categorize_errors(&pred, &gold)?);
        Ok((tuple_counts(&pred, &gold)?, report))
    }
}

pub fn eval(cfg: &RunConfig) -> CliResult<EvalReport> {
    let out = cfg.require_path("out")?;
    let (model, stored) = run_model(cfg)?;
    let data = read_test(cfg, &model)?;
    let (counts, mut report) = assess(&model, cfg.threshold.or(stored), &data)?;
    if let Some(other) = &cfg.compare {
        let (rival, rival_t) = load_model(other)?;
        if rival.kind().dataset() != model.kind().dataset() {
            return Err(CliError::config("`compare` checkpoint reads a different data format"));
        }
        let (rival_counts, _) = assess(&rival, rival_t, &data)?;
        report.p_value = Some(paired_bootstrap(&counts, &rival_counts, BOOTSTRAP_RESAMPLES, cfg.seed())?);
    }
    formats::write_json(&out.join(REPORT_FILE), &report)?;
    println!("F1 {:.4}", report.prf.f1);
    Ok(report)
}

pub fn predict(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.require_path("out")?;
    let (model, stored) = run_model(cfg)?;
    let data = read_test(cfg, &model)?;
    let path = out.join(PREDICTIONS_FILE);
    if model.kind().is_classifier() {
        let t = cfg.threshold.or(stored).unwrap_or(0.0);
        let mut graphs = match cfg.graphs.unwrap_or(false) {
            true => Some(model.graphs(&data)?.into_iter()),
            false => None,
        };
        let lines: Vec<LabelPrediction> = model
            .score(&data)?
            .into_iter()
            .map(|p| LabelPrediction {
                predicted: thresholded_label(&p, t).to_string(),
                confidence: p.confidence,
                gold: p.gold,
                graphs: graphs.as_mut().and_then(Iterator::next),
            })
            .collect();
        formats::write_jsonl(&path, &lines)
    } else {
        let gold = data.gold_tuples().expect("joint data");
        let lines: Vec<TuplePrediction> = model
            .extract(&data)?
            .iter()
            .zip(&gold)
            .map(|(p, g)| TuplePrediction {
                tuples: tuple_rows(p),
                gold: Some(tuple_rows(g)),
            })
            .collect();
        formats::write_jsonl(&path, &lines)
    }
}

/// Tunes the threshold on `validation` and stores it in the checkpoint.
pub fn tune_checkpoint(cfg: &RunConfig) -> CliResult<f64> {
    let path = cfg.require_path("checkpoint")?;
    let validation = cfg.require_path("validation")?;
    let (model, _) = run_model(cfg)?;
    let mut ck = Checkpoint::from_model(&model, None);
    if !model.kind().is_classifier() {
        return Err(CliError::config(format!("{} predictions carry no threshold", model.kind())));
    }
    let data = Dataset::read(&validation, model.kind().dataset(), model.relations(), policy(cfg))?;
    let t = tune(&model, &data)?;
    if let Some(out) = &cfg.out {
        formats::write_json(&out.join(THRESHOLD_FILE), &t)?;
    }
    ck.threshold = Some(t.threshold);
    ck.save(&path)?;
    println!("threshold {:.6}", t.threshold);
    Ok(t.threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub runs: usize,
    pub instances: usize,
    pub prf: PrfReport,
}

pub fn ensemble(cfg: &RunConfig) -> CliResult<EnsembleReport> {
    cfg.reject_model_settings()?;
    let out = cfg.require_path("out")?;
    let files = cfg
        .predictions
        .clone()
        .ok_or_else(|| CliError::config("missing required key `predictions`"))?;
    let k = cfg.runs.unwrap_or(DEFAULT_RUNS);
    if files.len() < 2 {
        return Err(CliError::config("voting needs at least two prediction files"));
    }
    if files.len() != k {
        return Err(CliError::config(format!(
            "{} prediction files given but runs = {k}",
            files.len()
        )));
    }
    let mut runs: Vec<Vec<BTreeSet<TupleStrings>>> = Vec::new();
    let mut gold: Option<(PathBuf, Vec<BTreeSet<TupleStrings>>)> = None;
    for f in &files {
        let lines: Vec<TuplePrediction> = formats::read_jsonl(f)?;
        let g = lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.gold.as_deref().map(tuple_set).ok_or_else(|| CliError::Format {
                    path: f.clone(),
                    line: i + 1,
                    message: "prediction lacks its gold tuples".into(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        match &gold {
            None => gold = Some((f.clone(), g)),
            Some((first, g0)) if *g0 != g => {
                return Err(CliError::config(format!(
                    "{} and {} are not aligned on the same instances",
                    first.display(),
                    f.display()
                )))
            }
            Some(_) => {}
        }
        runs.push(lines.iter().map(|l| tuple_set(&l.tuples)).collect());
    }
    let gold = gold.expect("at least two files").1;
    let voted = relex_core::eval::ensemble_vote(&runs, k)?;
    let lines: Vec<TuplePrediction> = voted
        .iter()
        .zip(&gold)
        .map(|(p, g)| TuplePrediction {
            tuples: tuple_rows(p),
            gold: Some(tuple_rows(g)),
        })
        .collect();
    formats::write_jsonl(&out.join(VOTED_FILE), &lines)?;
    let report = EnsembleReport {
        runs: k,
        instances: gold.len(),
        prf: tuple_set_prf(&voted, &gold)?,
    };
    formats::write_json(&out.join(REPORT_FILE), &report)?;
    println!("F1 {:.4}", report.prf.f1);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub file: PathBuf,
    /// 0-based position among the file's records.
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub train: MhredStats,
    pub validation: MhredStats,
    pub test: MhredStats,
    pub skipped: Vec<SkippedRecord>,
}

pub fn build_mhred(cfg: &RunConfig) -> CliResult<BuildReport> {
    cfg.reject_model_settings()?;
    let out = cfg.require_path("out")?;
    let kb = formats::read_kb(&cfg.require_path("kb")?)?;
    let mut skipped = Vec::new();
    let mut chains_of = |path: &Path| -> CliResult<Vec<_>> {
        let mut chains = Vec::new();
        for (i, rec) in formats::read_qa_records(path)?.iter().enumerate() {
            let built = build_chains(rec, &kb).map_err(|e| CliError::Core {
                path: path.into(),
                source: e.at_record(i),
            })?;
            if let Some(reason) = built.skipped {
                log::warn!("{}: record {i} skipped: {reason}", path.display());
                skipped.push(SkippedRecord {
                    file: path.into(),
                    record: i,
                    reason,
                });
            }
            chains.extend(built.instances);
        }
        Ok(chains)
    };
    let train_source = chains_of(&cfg.require_path("qa_train")?)?;
    let test_source = match &cfg.qa_test {
        Some(p) => chains_of(p)?,
        None => Vec::new(),
    };
    let split = balance_and_split(train_source, test_source, cfg.seed())?;
    let names: BTreeSet<&str> = [&split.train, &split.validation, &split.test]
        .into_iter()
        .flatten()
        .map(|c| c.relation.as_str())
        .filter(|r| *r != NONE_LABEL)
        .collect();
    let relations = RelationSet::new(names)?;
    formats::write_text(&out.join("relations.txt"), &formats::relations_text(&relations))?;
    formats::write_jsonl(&out.join("train.jsonl"), &split.train)?;
    formats::write_jsonl(&out.join("validation.jsonl"), &split.validation)?;
    formats::write_jsonl(&out.join("test.jsonl"), &split.test)?;
    let report = BuildReport {
        train: stats(&split.train),
        validation: stats(&split.validation),
        test: stats(&split.test),
        skipped,
    };
    formats::write_json(&out.join(STATS_FILE), &report)?;
    Ok(report)
}
