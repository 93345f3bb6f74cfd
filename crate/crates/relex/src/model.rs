//! Uniform handling of the four model kinds: construction, training,
//! checkpoints and prediction.

use std::collections::BTreeSet;
use std::path::Path;

use relex_core::corpus::{
    ChainInstance, CharVocab, DatasetKind, JointInstance, RelationInstance, RelationSet, TupleStrings, Vocabulary,
};
use relex_core::eval::ScoredPrediction;
use relex_core::hegcn::{chain_graphs, ChainGraphs, HegcnConfig, HegcnModel};
use relex_core::mfa::{MfaConfig, MfaModel};
use relex_core::optim::OptimizerKind;
use relex_core::pndec::{PndecConfig, PndecModel};
use relex_core::train::{train_minibatches, EpochLog, TrainConfig, TrainOutcome};
use relex_core::wdec::{WdecConfig, WdecModel};
use relex_core::ParameterStore;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{self, Overlong};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mfa,
    Wdec,
    Pndec,
    Hegcn,
}

impl ModelKind {
    pub fn dataset(self) -> DatasetKind {
        match self {
            ModelKind::Mfa => DatasetKind::Sentence,
            ModelKind::Wdec | ModelKind::Pndec => DatasetKind::Joint,
            ModelKind::Hegcn => DatasetKind::Chain,
        }
    }

    /// Whether predictions carry a confidence that a threshold applies to.
    pub fn is_classifier(self) -> bool {
        matches!(self, ModelKind::Mfa | ModelKind::Hegcn)
    }

    /// Optimizer, batch size, learning rate and epoch count used when the
    /// configuration leaves them out.
    pub fn default_training(self) -> (OptimizerKind, usize, f64, usize) {
        match self {
            ModelKind::Mfa => (OptimizerKind::Adagrad, 50, 0.01, 50),
            ModelKind::Wdec | ModelKind::Pndec => (OptimizerKind::Adam, 32, 0.001, 100),
            ModelKind::Hegcn => (OptimizerKind::Adagrad, 32, 0.01, 50),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Mfa => "mfa",
            ModelKind::Wdec => "wdec",
            ModelKind::Pndec => "pndec",
            ModelKind::Hegcn => "hegcn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Sentence(Vec<RelationInstance>),
    Joint(Vec<JointInstance>),
    Chain(Vec<ChainInstance>),
}

impl Dataset {
    pub fn read(path: &Path, kind: DatasetKind, relations: &RelationSet, policy: Overlong) -> CliResult<Self> {
        Ok(match kind {
            DatasetKind::Sentence => Dataset::Sentence(formats::read_sentences(path, relations, policy)?),
            DatasetKind::Joint => Dataset::Joint(formats::read_joint(path, relations, policy)?),
            DatasetKind::Chain => Dataset::Chain(formats::read_chains(path, relations)?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Sentence(d) => d.len(),
            Dataset::Joint(d) => d.len(),
            Dataset::Chain(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every token, for vocabulary construction.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        match self {
            Dataset::Sentence(d) => d.iter().for_each(|i| out.extend(i.tokens.iter().map(String::as_str))),
            Dataset::Joint(d) => d.iter().for_each(|i| out.extend(i.tokens.iter().map(String::as_str))),
            Dataset::Chain(d) => d.iter().for_each(|c| {
                out.extend(c.doc1_tokens.iter().chain(&c.doc2_tokens).map(String::as_str))
            }),
        }
        out
    }

    /// Gold tuple sets of a joint dataset.
    pub fn gold_tuples(&self) -> Option<Vec<BTreeSet<TupleStrings>>> {
        match self {
            Dataset::Joint(d) => Some(d.iter().map(JointInstance::tuple_strings).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum AnyModel {
    Mfa(MfaModel),
    Wdec(WdecModel),
    Pndec(PndecModel),
    Hegcn(HegcnModel),
}

fn hyper<T: serde::de::DeserializeOwned>(table: toml::Table) -> CliResult<T> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(format!("model settings: {}", e.message())))
}

fn mismatch(kind: ModelKind) -> CliError {
    CliError::config(format!("{kind} model needs {} data", kind.dataset()))
}

/// Checks model keys without building anything; a checkpoint's stored
/// configuration governs a loaded model, so the values themselves are unused.
pub fn check_settings(kind: ModelKind, settings: &toml::Table) -> CliResult<()> {
    if settings.is_empty() {
        return Ok(());
    }
    let s = settings.clone();
    match kind {
        ModelKind::Mfa => hyper::<MfaConfig>(s).map(drop),
        ModelKind::Wdec => hyper::<WdecConfig>(s).map(drop),
        ModelKind::Pndec => hyper::<PndecConfig>(s).map(drop),
        ModelKind::Hegcn => hyper::<HegcnConfig>(s).map(drop),
    }
}

/// Settings every model kind shares at construction.
pub struct BuildInputs<'a> {
    pub relations: RelationSet,
    pub train: &'a Dataset,
    pub embeddings: Option<&'a Path>,
    pub min_count: usize,
    pub seed: u64,
}

impl AnyModel {
    pub fn build(kind: ModelKind, settings: toml::Table, inp: BuildInputs) -> CliResult<Self> {
        let tokens = inp.train.tokens();
        let vocab = Vocabulary::build(&inp.relations, tokens.iter().copied(), inp.min_count);
        let chars = CharVocab::build(tokens.iter().copied());
        let words = |dim: usize| -> CliResult<Option<relex_core::Tensor>> {
            inp.embeddings
                .map(|p| formats::load_embeddings(p, &vocab, dim, inp.seed).map(|t| t.matrix))
                .transpose()
        };
        let rels = inp.relations.clone();
        Ok(match kind {
            ModelKind::Mfa => {
                let cfg: MfaConfig = hyper(settings)?;
                let w = words(cfg.word_dim)?;
                AnyModel::Mfa(MfaModel::new(cfg, rels, vocab, w, inp.seed)?)
            }
            ModelKind::Wdec => {
                let cfg: WdecConfig = hyper(settings)?;
                let w = words(cfg.word_dim)?;
                AnyModel::Wdec(WdecModel::new(cfg, rels, vocab, chars, w, inp.seed)?)
            }
            ModelKind::Pndec => {
                let cfg: PndecConfig = hyper(settings)?;
                let w = words(cfg.word_dim)?;
                AnyModel::Pndec(PndecModel::new(cfg, rels, vocab, chars, w, inp.seed)?)
            }
            ModelKind::Hegcn => {
                let cfg: HegcnConfig = hyper(settings)?;
                let w = words(cfg.word_dim)?;
                AnyModel::Hegcn(HegcnModel::new(cfg, rels, vocab, w, inp.seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Mfa(_) => ModelKind::Mfa,
            AnyModel::Wdec(_) => ModelKind::Wdec,
            AnyModel::Pndec(_) => ModelKind::Pndec,
            AnyModel::Hegcn(_) => ModelKind::Hegcn,
        }
    }

    pub fn store(&self) -> &ParameterStore {
        match self {
            AnyModel::Mfa(m) => &m.store,
            AnyModel::Wdec(m) => &m.store,
            AnyModel::Pndec(m) => &m.store,
            AnyModel::Hegcn(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        match self {
            AnyModel::Mfa(m) => &mut m.store,
            AnyModel::Wdec(m) => &mut m.store,
            AnyModel::Pndec(m) => &mut m.store,
            AnyModel::Hegcn(m) => &mut m.store,
        }
    }

    pub fn relations(&self) -> &RelationSet {
        match self {
            AnyModel::Mfa(m) => &m.relations,
            AnyModel::Wdec(m) => &m.relations,
            AnyModel::Pndec(m) => &m.relations,
            AnyModel::Hegcn(m) => &m.relations,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            AnyModel::Mfa(m) => &m.vocab,
            AnyModel::Wdec(m) => &m.vocab,
            AnyModel::Pndec(m) => &m.vocab,
            AnyModel::Hegcn(m) => &m.vocab,
        }
    }

    pub fn chars(&self) -> Option<&CharVocab> {
        match self {
            AnyModel::Wdec(m) => Some(&m.chars),
            AnyModel::Pndec(m) => Some(&m.chars),
            _ => None,
        }
    }

    pub fn config_json(&self) -> serde_json::Value {
        let v = match self {
            AnyModel::Mfa(m) => serde_json::to_value(&m.cfg),
            AnyModel::Wdec(m) => serde_json::to_value(&m.cfg),
            AnyModel::Pndec(m) => serde_json::to_value(&m.cfg),
            AnyModel::Hegcn(m) => serde_json::to_value(&m.cfg),
        };
        v.expect("configs serialize")
    }

    pub fn train(
        &mut self,
        train: &Dataset,
        validation: Option<&Dataset>,
        cfg: &TrainConfig,
        on_epoch: impl FnMut(&EpochLog),
    ) -> CliResult<TrainOutcome> {
        let kind = self.kind();
        let out = match (self, train) {
            (AnyModel::Mfa(m), Dataset::Sentence(d)) => {
                let v = match validation {
                    Some(Dataset::Sentence(v)) => Some(v.as_slice()),
                    Some(_) => return Err(mismatch(kind)),
                    None => None,
                };
                train_minibatches(m, d, v, cfg, on_epoch)?
            }
            (AnyModel::Wdec(m), Dataset::Joint(d)) => {
                let v = match validation {
                    Some(Dataset::Joint(v)) => Some(v.as_slice()),
                    Some(_) => return Err(mismatch(kind)),
                    None => None,
                };
                train_minibatches(m, d, v, cfg, on_epoch)?
            }
            (AnyModel::Pndec(m), Dataset::Joint(d)) => {
                let v = match validation {
                    Some(Dataset::Joint(v)) => Some(v.as_slice()),
                    Some(_) => return Err(mismatch(kind)),
                    None => None,
                };
                train_minibatches(m, d, v, cfg, on_epoch)?
            }
            (AnyModel::Hegcn(m), Dataset::Chain(d)) => {
                let v = match validation {
                    Some(Dataset::Chain(v)) => Some(v.as_slice()),
                    Some(_) => return Err(mismatch(kind)),
                    None => None,
                };
                train_minibatches(m, d, v, cfg, on_epoch)?
            }
            _ => return Err(mismatch(kind)),
        };
        Ok(out)
    }

    /// Raw label predictions of a classifier.
    pub fn score(&self, data: &Dataset) -> CliResult<Vec<ScoredPrediction>> {
        match (self, data) {
            (AnyModel::Mfa(m), Dataset::Sentence(d)) => Ok(m.score(d)?),
            (AnyModel::Hegcn(m), Dataset::Chain(d)) => Ok(m.score(d)?),
            _ => Err(mismatch(self.kind())),
        }
    }

    /// Graphs behind each chain prediction.
    pub fn graphs(&self, data: &Dataset) -> CliResult<Vec<ChainGraphs>> {
        match (self, data) {
            (AnyModel::Hegcn(m), Dataset::Chain(d)) => d
                .iter()
                .map(|c| Ok(chain_graphs(c, &m.cfg.edge_filter())?))
                .collect(),
            _ => Err(mismatch(self.kind())),
        }
    }

    /// Predicted tuple sets of a joint extractor.
    pub fn extract(&self, data: &Dataset) -> CliResult<Vec<BTreeSet<TupleStrings>>> {
        match (self, data) {
            (AnyModel::Wdec(m), Dataset::Joint(d)) => {
                d.iter().map(|i| Ok(m.predict(&i.tokens)?.1.tuples)).collect()
            }
            (AnyModel::Pndec(m), Dataset::Joint(d)) => d.iter().map(|i| Ok(m.predict_set(&i.tokens)?)).collect(),
            _ => Err(mismatch(self.kind())),
        }
    }
}

/// Serialized model: configuration, vocabularies and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub config: serde_json::Value,
    pub relations: Vec<String>,
    pub vocab: Vec<String>,
    /// Hex digest of `vocab`, checked on load.
    pub vocab_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chars: Option<Vec<char>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub params: ParameterStore,
}

fn stored_config<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::config(format!("checkpoint config: {e}")))
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

impl Checkpoint {
    pub fn from_model(model: &AnyModel, threshold: Option<f64>) -> Self {
        Checkpoint {
            model: model.kind(),
            config: model.config_json(),
            relations: model.relations().names().to_vec(),
            vocab: model.vocab().tokens().to_vec(),
            vocab_hash: hex(model.vocab().hash()),
            chars: model.chars().map(|c| c.chars().to_vec()),
            threshold,
            params: model.store().clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoints serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        formats::write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = formats::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.into(),
            line: e.line(),
            message: format!("not a checkpoint: {e}"),
        })
    }

    /// Rebuilds the model; fails on any inconsistency between the parts.
    pub fn into_model(self) -> CliResult<AnyModel> {
        let relations = RelationSet::new(self.relations.iter().map(String::as_str))?;
        let vocab = Vocabulary::from_list(self.vocab, relations.len())?;
        if hex(vocab.hash()) != self.vocab_hash {
            return Err(CliError::config("checkpoint vocabulary does not match its recorded hash"));
        }
        let chars = || {
            self.chars
                .clone()
                .map(CharVocab::from_chars)
                .ok_or_else(|| CliError::config("checkpoint lacks the character inventory"))
        };
        let mut model = match self.model {
            ModelKind::Mfa => AnyModel::Mfa(MfaModel::new(stored_config(self.config)?, relations, vocab, None, 0)?),
            ModelKind::Wdec => AnyModel::Wdec(WdecModel::new(stored_config(self.config)?, relations, vocab, chars()?, None, 0)?),
            ModelKind::Pndec => {
                AnyModel::Pndec(PndecModel::new(stored_config(self.config)?, relations, vocab, chars()?, None, 0)?)
            }
            ModelKind::Hegcn => AnyModel::Hegcn(HegcnModel::new(stored_config(self.config)?, relations, vocab, None, 0)?),
        };
        model.store_mut().load_values(&self.params)?;
        Ok(model)
    }
}

/// One line of a joint-model prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuplePrediction {
    pub tuples: Vec<[String; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<[String; 3]>>,
}

pub fn tuple_rows(set: &BTreeSet<TupleStrings>) -> Vec<[String; 3]> {
    set.iter().map(|(a, b, r)| [a.clone(), b.clone(), r.clone()]).collect()
}

pub fn tuple_set(rows: &[[String; 3]]) -> BTreeSet<TupleStrings> {
    rows.iter().map(|[a, b, r]| (a.clone(), b.clone(), r.clone())).collect()
}

/// One line of a classifier prediction file; `predicted` is after thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub predicted: String,
    pub confidence: f64,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphs: Option<ChainGraphs>,
}
