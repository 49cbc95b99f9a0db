//! JSON run configuration. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use adlda_core::augment::{AugKind, Partition};
use adlda_core::data::objects::ObjectsSpec;
use adlda_core::data::synthetic::SyntheticSpec;
use adlda_core::model::{DomainHeadConfig, Extractor, ModelConfig, Weighting};
use adlda_core::train::{LambdaSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Re-roots a core validation error under `section`.
    fn from_core(section: &str, err: adlda_core::Error) -> Self {
        match err {
            adlda_core::Error::InvalidParameter { name, reason } => ConfigError::new(format!("{section}.{name}"), reason),
            other => ConfigError::new(section, other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub demo: DemoSection,
    #[serde(default)]
    pub cam: CamSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticDataset),
    Objects(ObjectsDataset),
    Cifar10(FileDataset),
    Mnist(FileDataset),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    #[serde(default)]
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectsDataset {
    #[serde(default)]
    pub spec: ObjectsSpec,
}

/// A directory holding the canonical files, optionally subsampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDataset {
    pub path: PathBuf,
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

impl DatasetSpec {
    /// Tagged enums lose the inner path on error, so the variant body is
    /// checked on its own first.
    fn check_fields(value: &serde_json::Value) -> Result<(), ConfigError> {
        let mut body = value.clone();
        let kind = body
            .as_object_mut()
            .and_then(|m| m.remove("kind"))
            .ok_or_else(|| ConfigError::new("dataset.kind", "missing"))?;
        fn check<T: serde::de::DeserializeOwned>(body: serde_json::Value) -> Result<(), ConfigError> {
            serde_path_to_error::deserialize::<_, T>(body)
                .map(|_| ())
                .map_err(|e| ConfigError::new(format!("dataset.{}", e.path()), e.into_inner().to_string()))
        }
        match kind.as_str() {
            Some("synthetic") => check::<SyntheticDataset>(body),
            Some("objects") => check::<ObjectsDataset>(body),
            Some("cifar10") | Some("mnist") => check::<FileDataset>(body),
            _ => Err(ConfigError::new(
                "dataset.kind",
                format!("unknown dataset {kind}, expected synthetic, objects, cifar10 or mnist"),
            )),
        }
    }
}

/// Architecture without the parts implied by the data and the partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub extractor: Extractor,
    pub label_hidden: Vec<usize>,
    pub label_bias: bool,
    pub domain_head: Option<DomainHeadConfig>,
    pub weighting: Weighting,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let cnn = ModelConfig::small_cnn([1, 1, 1], 1, 2);
        ModelSpec {
            extractor: cnn.extractor,
            label_hidden: cnn.label_hidden,
            label_bias: cnn.label_bias,
            domain_head: cnn.domain_head,
            weighting: cnn.weighting,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self, input: [usize; 3], class_count: usize, domain_count: usize) -> ModelConfig {
        ModelConfig {
            input,
            class_count,
            domain_count,
            extractor: self.extractor.clone(),
            label_hidden: self.label_hidden.clone(),
            label_bias: self.label_bias,
            domain_head: self.domain_head.clone(),
            weighting: self.weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    /// Family 0 must be `identity`.
    pub families: Vec<AugKind>,
    pub probabilities: Vec<f64>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        let p = Partition::standard();
        AugmentationSpec {
            families: p.families().iter().map(|f| f.kind.clone()).collect(),
            probabilities: p.probabilities().to_vec(),
        }
    }
}

impl AugmentationSpec {
    pub fn partition(&self) -> Result<Partition, ConfigError> {
        Partition::new(self.families.clone(), self.probabilities.clone())
            .map_err(|e| ConfigError::from_core("augmentation", e))
    }
}

/// [`TrainConfig`] minus the seed, which comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub eta: f64,
    pub lambda_max: f64,
    pub lambda_schedule: LambdaSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub eval_every: usize,
    pub emit_all_variants: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            eta: t.eta,
            lambda_max: t.lambda_max,
            lambda_schedule: t.lambda_schedule,
            epochs: t.epochs,
            batch_size: t.batch_size,
            momentum: t.momentum,
            eval_every: t.eval_every,
            emit_all_variants: t.emit_all_variants,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            lambda_max: self.lambda_max,
            lambda_schedule: self.lambda_schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
            eval_every: self.eval_every,
            emit_all_variants: self.emit_all_variants,
        }
    }
}

/// Settings of `synth-demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    /// DArate of condition (c).
    pub lambda: f64,
    pub seeds: Vec<u64>,
}

impl Default for DemoSection {
    fn default() -> Self {
        DemoSection {
            lambda: 0.3,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamSection {
    /// Overlay weight of the heatmap.
    pub alpha: f64,
}

impl Default for CamSection {
    fn default() -> Self {
        CamSection { alpha: 0.5 }
    }
}

impl RunConfig {
    /// Parses and validates; `version` is checked before anything else.
    pub fn parse(bytes: &[u8]) -> Result<Self, ConfigError> {
        let raw: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CONFIG_VERSION) => {}
            Some(v) => return Err(ConfigError::new("version", format!("unsupported version {v}, expected {CONFIG_VERSION}"))),
            None => return Err(ConfigError::new("version", "missing or not an integer")),
        }
        if let Some(ds) = raw.get("dataset") {
            DatasetSpec::check_fields(ds)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(raw).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { "<document>".into() } else { path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.dataset {
            DatasetSpec::Synthetic(SyntheticDataset { spec }) => {
                spec.validate().map_err(|e| ConfigError::from_core("dataset.spec", e))?;
            }
            DatasetSpec::Objects(ObjectsDataset { spec }) => {
                spec.validate().map_err(|e| ConfigError::from_core("dataset.spec", e))?;
            }
            DatasetSpec::Cifar10(FileDataset { path, train_subset, test_subset, .. })
            | DatasetSpec::Mnist(FileDataset { path, train_subset, test_subset, .. }) => {
                if !path.is_dir() {
                    return Err(ConfigError::new("dataset.path", format!("{} is not a directory", path.display())));
                }
                if *train_subset == Some(0) {
                    return Err(ConfigError::new("dataset.train_subset", "must be positive"));
                }
                if *test_subset == Some(0) {
                    return Err(ConfigError::new("dataset.test_subset", "must be positive"));
                }
            }
        }
        let partition = self.augmentation.partition()?;
        self.train.with_seed(self.seed).validate().map_err(|e| ConfigError::from_core("train", e))?;
        let (input, classes) = self.dataset.geometry();
        self.model
            .resolve(input, classes, partition.domain_count())
            .validate()
            .map_err(|e| ConfigError::from_core("model", e))?;
        if !(self.demo.lambda.is_finite() && self.demo.lambda > 0.0) {
            return Err(ConfigError::new("demo.lambda", "must be finite and > 0"));
        }
        if self.demo.seeds.is_empty() {
            return Err(ConfigError::new("demo.seeds", "must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.cam.alpha) {
            return Err(ConfigError::new("cam.alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

impl DatasetSpec {
    /// `[C, H, W]` and class count, known without reading any file.
    pub fn geometry(&self) -> ([usize; 3], usize) {
        use adlda_core::data::cifar;
        match self {
            DatasetSpec::Synthetic(SyntheticDataset { spec }) => ([1, spec.side, spec.side], spec.class_count),
            DatasetSpec::Objects(ObjectsDataset { spec }) => ([spec.channels, spec.side, spec.side], spec.class_count),
            DatasetSpec::Cifar10(_) => ([3, cifar::SIDE, cifar::SIDE], cifar::CLASS_COUNT),
            DatasetSpec::Mnist(_) => ([1, 28, 28], 10),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({"version": 1, "seed": 3, "dataset": {"kind": "synthetic"}})
    }

    fn parse(v: &serde_json::Value) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&serde_json::to_vec(v).unwrap())
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(&minimal()).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train, TrainSection::default());
        assert_eq!(c.augmentation.partition().unwrap(), Partition::standard());
        assert!(c.model.domain_head.is_some());
    }

    #[test]
    fn errors_name_the_field() {
        let mut v = minimal();
        v["train"] = serde_json::json!({"lambda_max": -0.5});
        assert_eq!(parse(&v).unwrap_err().field, "train.lambda_max");

        let mut v = minimal();
        v["train"] = serde_json::json!({"lamda_max": 0.5});
        let err = parse(&v).unwrap_err();
        assert!(err.message.contains("lamda_max"), "{err}");

        let mut v = minimal();
        v["augmentation"] = serde_json::json!({"families": [{"kind": "noise", "sigma": 0.1}, {"kind": "identity"}], "probabilities": [0.5, 0.5]});
        assert!(parse(&v).unwrap_err().field.starts_with("augmentation"));

        let mut v = minimal();
        v["dataset"] = serde_json::json!({"kind": "cifar10", "path": "/nonexistent/cifar"});
        assert_eq!(parse(&v).unwrap_err().field, "dataset.path");

        let mut v = minimal();
        v["dataset"]["spec"] = serde_json::json!({"side": "four"});
        assert_eq!(parse(&v).unwrap_err().field, "dataset.spec.side");
    }

    #[test]
    fn version_and_seed_are_required() {
        let mut v = minimal();
        v["version"] = serde_json::json!(2);
        assert_eq!(parse(&v).unwrap_err().field, "version");
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("seed");
        assert!(parse(&v).unwrap_err().message.contains("seed"));
        assert!(RunConfig::parse(b"{not json").is_err());
    }

    #[test]
    fn null_domain_head_disables_it() {
        let mut v = minimal();
        v["model"] = serde_json::json!({"domain_head": null, "extractor": {"kind": "mlp", "hidden": [8]}});
        let c = parse(&v).unwrap();
        assert!(c.model.domain_head.is_none());
    }
}
