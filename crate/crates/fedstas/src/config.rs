//! TOML experiment configuration.
//!
//! A config file has a top-level `master_seed` and the sections `[experiment]`,
//! `[strategy]`, `[model]`, `[train]`, `[sketch]`, `[privacy]`, `[partition]`, `[dataset]`
//! and `[output]`. Every key has a default except the ones a run cannot guess, so an empty
//! file is a valid config. Dotted-key overrides (`strategy.name=fedstas`) are applied to the
//! parsed document before it is checked.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use fedstas_core::compress::SketchConfig;
use fedstas_core::data::{synthesize_split, PartitionRecipe, Scheme};
use fedstas_core::engine::{DataBudget, ExperimentConfig, Strategy, StrategyKind};
use fedstas_core::model::{Example, ModelKind, ModelSpec, TrainConfig};
use fedstas_core::privacy::PrivacyConfig;
use fedstas_core::sampling::AggregationMode;
use fedstas_core::stratify::DEFAULT_MAX_ITER;

use crate::idx::{load_idx, IdxError};

/// Problems with the configuration itself; the CLI exits with status 2 on these.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sketch: SketchSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySection>,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub num_strata: usize,
    pub rounds: usize,
    /// Fraction of the participants' data requested per round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_ratio: Option<f64>,
    /// Fixed number of examples requested per round; excludes `sampling_ratio`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_budget: Option<usize>,
    pub stratify_max_iter: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            num_clients: 100,
            clients_per_round: 10,
            num_strata: 10,
            rounds: 100,
            sampling_ratio: None,
            data_budget: None,
            stratify_max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub name: StrategyKind,
    pub aggregation: AggregationMode,
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection {
            name: StrategyKind::Fedstas,
            aggregation: AggregationMode::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Logistic,
            hidden_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.1,
            epochs: 3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub sketch_dim: usize,
    pub levels: usize,
}

impl Default for SketchSection {
    fn default() -> Self {
        let d = SketchConfig::default();
        SketchSection {
            sketch_dim: d.sketch_dim,
            levels: d.levels,
        }
    }
}

/// Size-report mechanism; give exactly one of `epsilon` or `alpha_dp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_dp: Option<f64>,
    #[serde(default = "default_threshold")]
    pub size_threshold: u64,
}

fn default_threshold() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: Scheme,
    pub alpha_dir: f64,
    /// Defaults to `master_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            scheme: Scheme::Dirichlet,
            alpha_dir: 0.01,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSection {
    /// Gaussian class blobs.
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        class_separation: f64,
        /// Defaults to `master_seed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// IDX image/label file pairs; relative paths resolve against the config file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection::Synthetic {
            num_classes: 10,
            input_dim: 64,
            train_per_class: 600,
            test_per_class: 200,
            class_separation: 4.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Per-round wall-clock times make metrics files differ between otherwise identical runs.
    pub record_wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("run"),
            record_wall_time: false,
        }
    }
}

/// Reads a config file, applies `key=value` overrides and resolves relative dataset paths.
pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse(&text, overrides).map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    cfg.resolve_paths(base);
    Ok(cfg)
}

/// Parses config text. Diagnostics for the text carry line and column; diagnostics caused
/// by an override name the overridden key.
pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let parse_err = |e: toml::de::Error| ConfigError::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    };
    let cfg: RunConfig = toml::from_str(text).map_err(parse_err)?;
    if overrides.is_empty() {
        cfg.check()?;
        return Ok(cfg);
    }
    let mut doc: Table = toml::from_str(text).map_err(parse_err)?;
    for (key, value) in overrides {
        set_dotted(&mut doc, key, parse_value(value)).map_err(|message| ConfigError::Override {
            key: key.clone(),
            message,
        })?;
    }
    let cfg = RunConfig::deserialize(doc).map_err(|e| ConfigError::Override {
        key: overrides
            .iter()
            .map(|(k, _)| k.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        message: e.to_string(),
    })?;
    cfg.check()?;
    Ok(cfg)
}

/// Splits `key=value`.
pub fn split_override(arg: &str) -> Result<(String, String), ConfigError> {
    match arg.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ConfigError::Override {
            key: arg.to_string(),
            message: "expected KEY=VALUE".into(),
        }),
    }
}

/// TOML literal when the text parses as one, otherwise a bare string.
fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn set_dotted(doc: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty key segment".into());
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut table = doc;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => return Err(format!("`{part}` is not a table")),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn strategy(&self) -> Strategy {
        Strategy {
            kind: self.strategy.name,
            aggregation: self.strategy.aggregation,
        }
    }

    pub fn partition_seed(&self) -> u64 {
        self.partition.seed.unwrap_or(self.master_seed)
    }

    pub fn recipe(&self) -> PartitionRecipe {
        PartitionRecipe {
            scheme: self.partition.scheme,
            num_clients: self.experiment.num_clients,
            alpha_dir: self.partition.alpha_dir,
            seed: self.partition_seed(),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSection::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &mut self.dataset
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Checks everything that does not need the dataset.
    pub fn check(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.sampling_ratio.is_some() && e.data_budget.is_some() {
            return Err(invalid(
                "experiment.data_budget",
                "give either sampling_ratio or data_budget, not both",
            ));
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden_dim == 0 {
            return Err(invalid(
                "model.hidden_dim",
                "an mlp needs a positive hidden_dim",
            ));
        }
        if let Some(p) = &self.privacy {
            if p.epsilon.is_some() == p.alpha_dp.is_some() {
                return Err(invalid(
                    "privacy",
                    "give exactly one of epsilon or alpha_dp",
                ));
            }
        }
        if let DatasetSection::Synthetic {
            num_classes,
            input_dim,
            train_per_class,
            test_per_class,
            class_separation,
            ..
        } = &self.dataset
        {
            if *num_classes < 2 {
                return Err(invalid("dataset.num_classes", "need at least 2 classes"));
            }
            if *input_dim == 0 || *train_per_class == 0 || *test_per_class == 0 {
                return Err(invalid(
                    "dataset",
                    "input_dim, train_per_class and test_per_class must be positive",
                ));
            }
            if !(class_separation.is_finite() && *class_separation >= 0.0) {
                return Err(invalid(
                    "dataset.class_separation",
                    "must be finite and non-negative",
                ));
            }
        }
        let (input_dim, num_classes) = self.declared_dims().unwrap_or((1, 2));
        self.experiment_config(input_dim, num_classes)?;
        Ok(())
    }

    /// Input and class counts when they follow from the config alone.
    fn declared_dims(&self) -> Option<(usize, usize)> {
        match &self.dataset {
            DatasetSection::Synthetic {
                num_classes,
                input_dim,
                ..
            } => Some((*input_dim, *num_classes)),
            DatasetSection::Idx { .. } => None,
        }
    }

    /// Engine configuration for a dataset with the given shape, validated.
    pub fn experiment_config(
        &self,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<ExperimentConfig, ConfigError> {
        let e = &self.experiment;
        let privacy = match &self.privacy {
            None => None,
            Some(p) => Some(
                match (p.epsilon, p.alpha_dp) {
                    (Some(eps), None) => PrivacyConfig::from_epsilon(eps, p.size_threshold),
                    (None, Some(alpha)) => PrivacyConfig::new(p.size_threshold, alpha),
                    _ => {
                        return Err(invalid(
                            "privacy",
                            "give exactly one of epsilon or alpha_dp",
                        ))
                    }
                }
                .map_err(|err| invalid("privacy", err.to_string()))?,
            ),
        };
        let model = ModelSpec {
            kind: self.model.kind,
            input_dim,
            num_classes,
            hidden_dim: self.model.hidden_dim,
        };
        let cfg = ExperimentConfig {
            num_clients: e.num_clients,
            clients_per_round: e.clients_per_round,
            num_strata: e.num_strata,
            rounds: e.rounds,
            data_budget: match e.data_budget {
                Some(b) => DataBudget::Fixed(b),
                None => DataBudget::Ratio(e.sampling_ratio.unwrap_or(0.1)),
            },
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
            },
            sketch: SketchConfig {
                sketch_dim: self.sketch.sketch_dim,
                levels: self.sketch.levels,
            },
            privacy,
            partition: self.recipe(),
            model,
            master_seed: self.master_seed,
            stratify_max_iter: e.stratify_max_iter,
        };
        cfg.validate(&self.strategy())
            .map_err(|err| invalid("experiment", err.to_string()))?;
        Ok(cfg)
    }

    /// Loads or synthesizes the train and test splits.
    pub fn load_dataset(&self) -> Result<(Vec<Example>, Vec<Example>), IdxError> {
        match &self.dataset {
            DatasetSection::Synthetic {
                num_classes,
                input_dim,
                train_per_class,
                test_per_class,
                class_separation,
                seed,
            } => Ok(synthesize_split(
                *num_classes,
                *input_dim,
                *train_per_class,
                *test_per_class,
                *class_separation,
                seed.unwrap_or(self.master_seed),
            )),
            DatasetSection::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            )),
        }
    }

    /// Resolved config as TOML; loading it reproduces this config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `(input_dim, num_classes)` of a dataset.
pub fn dataset_shape(train: &[Example], test: &[Example]) -> (usize, usize) {
    let input_dim = train.first().map_or(0, |e| e.features.len());
    let num_classes = train
        .iter()
        .chain(test)
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(0);
    (input_dim, num_classes)
}
