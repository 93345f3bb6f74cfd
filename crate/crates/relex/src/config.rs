//! Run configuration: one flat TOML table per run. Keys the commands use
//! directly are parsed here; every other key belongs to the model and is
//! passed on to its configuration, which rejects names it does not know.

use std::path::{Path, PathBuf};

use relex_core::optim::OptimizerKind;
use relex_core::train::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::model::ModelKind;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub threshold: Option<f64>,
    /// Prediction files to vote over.
    pub predictions: Option<Vec<PathBuf>>,
    pub runs: Option<usize>,
    pub qa_train: Option<PathBuf>,
    pub qa_test: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    /// Second checkpoint for a paired significance test.
    pub compare: Option<PathBuf>,
    /// Attach the built graphs to chain predictions.
    pub graphs: Option<bool>,
    /// Cut overlong sentences instead of rejecting them.
    pub truncate: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub min_count: Option<usize>,
    #[serde(flatten)]
    pub model_settings: toml::Table,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_MIN_COUNT: usize = 1;

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub out: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub runs: Option<usize>,
}

fn required<T: Clone>(v: &Option<T>, key: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| CliError::config(format!("missing required key `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.message().to_string()))
    }

    /// Reads `path`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = crate::formats::read_text(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.out,
            &mut self.train,
            &mut self.validation,
            &mut self.test,
            &mut self.relations,
            &mut self.embeddings,
            &mut self.checkpoint,
            &mut self.qa_train,
            &mut self.qa_test,
            &mut self.kb,
            &mut self.compare,
        ] {
            fix(p);
        }
        for p in self.predictions.iter_mut().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Command-line paths stay relative to the working directory.
    pub fn apply(&mut self, o: &Overrides) {
        self.seed = o.seed.or(self.seed);
        self.model = o.model.or(self.model);
        self.out = o.out.clone().or(self.out.take());
        self.threshold = o.threshold.or(self.threshold);
        self.runs = o.runs.or(self.runs);
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn require_model(&self) -> CliResult<ModelKind> {
        required(&self.model, "model")
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        let v = match key {
            "out" => &self.out,
            "train" => &self.train,
            "validation" => &self.validation,
            "test" => &self.test,
            "relations" => &self.relations,
            "checkpoint" => &self.checkpoint,
            "qa_train" => &self.qa_train,
            "kb" => &self.kb,
            other => unreachable!("no path key {other}"),
        };
        required(v, key)
    }

    /// Model settings only make sense where a model is built.
    pub fn reject_model_settings(&self) -> CliResult<()> {
        match self.model_settings.keys().next() {
            Some(k) => Err(CliError::config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn training(&self, kind: ModelKind) -> CliResult<TrainConfig> {
        let (optimizer, batch_size, learning_rate, epochs) = kind.default_training();
        let cfg = TrainConfig {
            optimizer: self.optimizer.unwrap_or(optimizer),
            learning_rate: self.learning_rate.unwrap_or(learning_rate),
            batch_size: self.batch_size.unwrap_or(batch_size),
            epochs: self.epochs.unwrap_or(epochs),
            seed: self.seed(),
            stop_at: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plumbing_and_model_keys_separate() {
        let c = RunConfig::parse(
            "model = \"mfa\"\nseed = 7\ntrain = \"d/train.jsonl\"\nepochs = 3\nhidden = 8\nfactors = 2\n",
        )
        .unwrap();
        assert_eq!(c.model, Some(ModelKind::Mfa));
        assert_eq!(c.seed(), 7);
        assert_eq!(c.model_settings.len(), 2);
        assert_eq!(c.training(ModelKind::Mfa).unwrap().epochs, 3);
        assert_eq!(c.training(ModelKind::Mfa).unwrap().optimizer, OptimizerKind::Adagrad);
        assert!(c.reject_model_settings().is_err());
    }

    #[test]
    fn missing_key_is_named() {
        let c = RunConfig::parse("model = \"hegcn\"\n").unwrap();
        let e = c.require_path("relations").unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
        assert!(e.to_string().contains("`relations`"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(RunConfig::parse("model = \"svm\"\n"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("seed = \"x\"\n"), Err(CliError::Config(_))));
        let c = RunConfig::parse("batch_size = 0\n").unwrap();
        assert!(c.training(ModelKind::Wdec).is_err());
    }

    #[test]
    fn paths_resolve_and_overrides_win() {
        let mut c = RunConfig::parse("out = \"runs/a\"\ntrain = \"/abs/t.jsonl\"\nseed = 3\n").unwrap();
        c.resolve(Path::new("/cfg"));
        assert_eq!(c.out.as_deref(), Some(Path::new("/cfg/runs/a")));
        assert_eq!(c.train.as_deref(), Some(Path::new("/abs/t.jsonl")));
        c.apply(&Overrides {
            seed: Some(9),
            out: Some("elsewhere".into()),
            ..Overrides::default()
        });
        assert_eq!(c.seed(), 9);
        assert_eq!(c.out.as_deref(), Some(Path::new("elsewhere")));
    }
}
