use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{normalize, BlobsConfig, Dataset, DatasetManifest, DATA_DIR_ENV};
use crate::error::{config_err, Error, Result};
use crate::nn::{preset, NetworkSpec};
use crate::losses::RegularizerKind;
use crate::train::{BaselineConfig, CompressionConfig, LoopConfig, OptimizerConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Seed of the synthetic task; fixed across training seeds.
    pub seed: u64,
    pub blobs: BlobsConfig,
    /// Manifest of an IDX dataset, relative to `$ADVDISTILL_DATA_DIR` when set.
    pub manifest: Option<PathBuf>,
    /// Standardise both splits with train-split statistics.
    pub normalize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { kind: DatasetKind::Blobs, seed: 0, blobs: BlobsConfig::default(), manifest: None, normalize: true }
    }
}

impl DatasetConfig {
    /// Train and test splits, normalised when configured.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.kind {
            DatasetKind::Blobs => self.blobs.generate(self.seed)?,
            DatasetKind::Idx => {
                let Some(path) = &self.manifest else {
                    return config_err("dataset.manifest is required when dataset.kind = \"idx\"");
                };
                let path = match std::env::var_os(DATA_DIR_ENV) {
                    Some(root) if path.is_relative() => PathBuf::from(root).join(path),
                    _ => path.clone(),
                };
                DatasetManifest::load(&path)?.datasets()?
            }
        };
        if self.normalize {
            Ok((normalize(&train, &train)?, normalize(&test, &train)?))
        } else {
            Ok((train, test))
        }
    }
}

/// A preset name or a full inline specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkChoice {
    Preset(String),
    Inline(NetworkSpec),
}

impl NetworkChoice {
    pub fn resolve(&self, input_shape: &[usize], classes: usize) -> Result<NetworkSpec> {
        match self {
            Self::Preset(name) => preset(name, input_shape, classes),
            Self::Inline(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub network: NetworkChoice,
    /// Load this checkpoint instead of training a teacher.
    pub checkpoint: Option<PathBuf>,
    /// Train one teacher per seed instead of one shared teacher.
    pub per_seed: bool,
    pub optimizer: OptimizerConfig,
    pub training: LoopConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            network: NetworkChoice::Preset("teacher-mlp".into()),
            checkpoint: None,
            per_seed: false,
            optimizer: OptimizerConfig::default(),
            training: LoopConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub network: NetworkChoice,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { network: NetworkChoice::Preset("student-mlp".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Hidden-layer widths of each candidate discriminator.
    pub candidates: Vec<Vec<usize>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { candidates: vec![vec![128, 256, 128], vec![64, 64]] }
    }
}

/// Regularizer grid of `compress`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// When non-empty, one compression run per listed regularizer and seed,
    /// overriding `compression.regularizer`.
    pub regularizers: Vec<RegularizerKind>,
}

/// Rows of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SupervisedTeacher,
    SupervisedStudent,
    L2Logits,
    Kd,
    Adversarial,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Self::SupervisedTeacher, Self::SupervisedStudent, Self::L2Logits, Self::Kd, Self::Adversarial];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SupervisedTeacher => "supervised_teacher",
            Self::SupervisedStudent => "supervised_student",
            Self::L2Logits => "l2_logits",
            Self::Kd => "kd",
            Self::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { methods: Method::ALL.to_vec() }
    }
}

/// Everything a command needs. Every field has a default, so an empty file
/// is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    /// Optimizer of the student and the discriminator.
    pub optimizer: OptimizerConfig,
    /// Loop settings of student runs; the seed is replaced per run.
    pub training: LoopConfig,
    pub compression: CompressionConfig,
    pub baseline: BaselineConfig,
    pub grid: GridConfig,
    pub sweep: SweepConfig,
    pub compare: CompareConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: LoopConfig::default(),
            compression: CompressionConfig::default(),
            baseline: BaselineConfig::default(),
            grid: GridConfig::default(),
            sweep: SweepConfig::default(),
            compare: CompareConfig::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config_err("seeds must list at least one seed");
        }
        self.optimizer.validate()?;
        self.teacher.optimizer.validate()?;
        self.training.validate()?;
        self.teacher.training.validate()?;
        self.compression.validate()?;
        if self.dataset.kind == DatasetKind::Idx && self.dataset.manifest.is_none() {
            return config_err("dataset.manifest is required when dataset.kind = \"idx\"");
        }
        Ok(())
    }
}
