//! Experiment configuration. Every section is optional; stage verbs fail
//! with a schema error when their section is missing. Relative paths resolve
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use oscope_core::forge::Template;
use oscope_core::probe::GroupKey;
use oscope_core::sim::LatentDistribution;
use oscope_core::StoreFormat;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub forge: Option<ForgeSection>,
    pub mock_encode: Option<MockSection>,
    pub probe: Option<ProbeSection>,
    pub train_probe: Option<TrainSection>,
    #[serde(rename = "match")]
    pub matching: Option<MatchSection>,
    pub stats: Option<StatsSection>,
    pub simulate: Option<SimulateSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeSection {
    /// Built-in vocabulary name or a path to a `name[\tsize]` file.
    pub vocabulary: String,
    pub n_objects: usize,
    pub count: usize,
    #[serde(default = "default_template")]
    pub template: Template,
    pub long_fillers: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub scenarios: bool,
    pub claim1: Option<Claim1Section>,
}

fn default_template() -> Template {
    Template::Short
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claim1Section {
    #[serde(default = "default_claim1_vocab")]
    pub vocabulary: String,
    pub count: usize,
}

fn default_claim1_vocab() -> String {
    "domainnet".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockSection {
    pub model_id: String,
    pub dim: usize,
    pub text_decay: f64,
    pub image_size_exponent: f64,
    pub text_jitter: f64,
    pub image_jitter: f64,
    pub large_scale: f64,
    pub format: StoreFormatName,
}

impl Default for MockSection {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            dim: 256,
            text_decay: 1.0,
            image_size_exponent: 0.0,
            text_jitter: 0.0,
            image_jitter: 0.0,
            large_scale: 3.0,
            format: StoreFormatName::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreFormatName {
    Binary,
    Jsonl,
}

impl StoreFormatName {
    pub fn format(self) -> StoreFormat {
        match self {
            StoreFormatName::Binary => StoreFormat::Binary,
            StoreFormatName::Jsonl => StoreFormat::Jsonl,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            StoreFormatName::Binary => "embs",
            StoreFormatName::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Captions,
    Scenes,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Explicit tasks; when empty the forged and mock-encoded outputs are
    /// probed (text-to-object, image-to-object, and the size-class sets).
    #[serde(default)]
    pub tasks: Vec<ProbeTaskSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTaskSpec {
    pub label: String,
    pub query_store: PathBuf,
    pub gallery_store: PathBuf,
    pub manifest: PathBuf,
    pub kind: ManifestKind,
    /// JSON object mapping gallery ids to object names; ids are names when absent.
    pub gallery_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub store: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    #[serde(default = "captions")]
    pub kind: ManifestKind,
    /// Groups to train one probe each for; all groups in the manifest by default.
    #[serde(default)]
    pub groups: Vec<GroupKey>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub optimizer: OptimizerSection,
}

fn captions() -> ManifestKind {
    ManifestKind::Captions
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub split_fraction: f64,
    pub cosine_decay: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = oscope_core::TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            l2: d.l2,
            split_fraction: d.split_fraction,
            cosine_decay: d.cosine_decay,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSection {
    pub image_store: Option<PathBuf>,
    pub text_store: Option<PathBuf>,
    /// Single-object text store keyed by object name, for the split-caption
    /// aggregate. Mitigation is skipped when neither this nor a forged
    /// default exists.
    pub object_store: Option<PathBuf>,
    /// Scenario pair manifests; defaults to the forged ones.
    #[serde(default)]
    pub pairs: Vec<PathBuf>,
    #[serde(default = "yes")]
    pub mitigation: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    pub label: Option<String>,
    pub analysis: Option<PathBuf>,
    /// One histogram per listed object count, plus the unfiltered one.
    #[serde(default)]
    pub n_objects: Vec<usize>,
    pub attention: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Recorded as metadata only; detection happens upstream.
    pub detection_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub theorem: Option<TheoremSection>,
    pub convergence: Option<ConvergenceSection>,
    pub toy: Option<ToySection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremSection {
    pub d: usize,
    pub k: usize,
    pub b: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub distribution: LatentDistribution,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub b: usize,
    pub k: usize,
    pub dims: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub distribution: LatentDistribution,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySection {
    pub d: usize,
    pub vocab_size: usize,
    pub n_positions: usize,
    pub gammas: Vec<f64>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub large_scale: f64,
    pub eval_every: usize,
    pub eval_captions: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        let d = oscope_core::sim::ToyConfig::default();
        Self {
            d: d.d,
            vocab_size: d.vocab_size,
            n_positions: d.n_positions,
            gammas: vec![0.5, 0.7, 0.9],
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            large_scale: d.large_scale,
            eval_every: d.eval_every,
            eval_captions: d.eval_captions,
        }
    }
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    let config = parse_config(&bytes)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir, bytes })
}

pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema(format!("at `{path}`: {}", e.inner()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = parse_config(br#"{"name": "x", "seed": 1}"#).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.forge.is_none());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = parse_config(br#"{"name": "x", "seed": 1, "forge": {"vocabulary": "comco", "n_objects": 4, "count": 2, "template": "medium"}}"#)
            .unwrap_err();
        match err {
            CliError::Schema(m) => assert!(m.contains("forge.template"), "{m}"),
            other => panic!("{other:?}"),
        }
        let err = parse_config(br#"{"name": "x"}"#).unwrap_err();
        assert!(matches!(err, CliError::Schema(m) if m.contains("seed")));
        let err = parse_config(br#"{"name": "x", "seed": 1, "mock_encode": {"dimm": 3}}"#).unwrap_err();
        assert!(matches!(err, CliError::Schema(m) if m.contains("mock_encode")));
    }

    #[test]
    fn group_keys_parse() {
        let c = parse_config(br#"{"name": "x", "seed": 1, "train_probe": {"groups": ["pos1", "large"]}}"#).unwrap();
        assert_eq!(c.train_probe.unwrap().groups, vec![GroupKey::Position(1), GroupKey::Large]);
    }
}
