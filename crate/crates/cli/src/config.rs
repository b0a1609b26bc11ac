//! Run configuration and manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use redsc_core::data::{self, Dataset, SynthParams};
use redsc_core::model::Architecture;
use redsc_core::trainer::TrainConfig;
use redsc_core::{Array, Error, Result};

/// Where the images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth(SynthParams),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        subset: Option<Subset>,
    },
    PgmDir {
        root: PathBuf,
        height: usize,
        width: usize,
        #[serde(default)]
        subset: Option<Subset>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synth(SynthParams::acceptance())
    }
}

/// Random per-class selection, optionally over a random choice of classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subset {
    pub per_class: usize,
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// Defaults to the number of labelled classes.
    pub n_clusters: Option<usize>,
    pub seed: u64,
    /// Evaluate ERR every this many fine-tuning epochs; 0 disables.
    pub err_every: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig { n_clusters: None, seed: 0, err_every: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub lambda: f64,
    pub zero_diag: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { lambda: 1.0, zero_diag: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub clustering: ClusteringConfig,
    pub baseline: BaselineConfig,
}

/// A loaded dataset plus, for synthetic data, the pre-rescale matrix the
/// classical baseline runs on.
pub struct Loaded {
    pub dataset: Dataset,
    pub raw: Option<Array>,
}

impl Loaded {
    pub fn baseline_matrix(&self) -> Array {
        self.raw.clone().unwrap_or_else(|| self.dataset.flattened())
    }
}

impl RunConfig {
    /// Reads a config file. A manifest written by an earlier run is
    /// accepted too; its `config` section is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let body = match value.get("config") {
            Some(c) if value.get("tool").is_some() => c.clone(),
            _ => value,
        };
        let cfg: RunConfig =
            serde_json::from_value(body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.train.validate()?;
        if !(self.baseline.lambda >= 0.0 && self.baseline.lambda.is_finite()) {
            return Err(Error::Config(format!("baseline.lambda must be >= 0, got {}", self.baseline.lambda)));
        }
        if let Some(k) = self.clustering.n_clusters {
            if k < 2 {
                return Err(Error::Config(format!("clustering.n_clusters must be >= 2, got {k}")));
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Loaded> {
        let (dataset, raw, subset) = match &self.dataset {
            DatasetSpec::Synth(p) => {
                let s = data::synth_subspaces(p)?;
                (s.dataset, Some(s.raw), None)
            }
            DatasetSpec::Idx { images, labels, subset } => {
                for p in [images, labels] {
                    if !p.exists() {
                        return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                    }
                }
                (data::load_idx(images, labels)?, None, subset.as_ref())
            }
            DatasetSpec::PgmDir { root, height, width, subset } => {
                if !root.is_dir() {
                    return Err(Error::Config(format!("dataset directory {} does not exist", root.display())));
                }
                (data::load_image_dir(root, (*height, *width))?, None, subset.as_ref())
            }
        };
        let dataset = match subset {
            Some(s) => {
                let classes = match s.n_classes {
                    Some(k) => Some(data::choose_classes(dataset.n_classes(), k, s.seed)?),
                    None => None,
                };
                data::subset_select(&dataset, s.per_class, classes.as_deref(), s.seed)?
            }
            None => dataset,
        };
        Ok(Loaded { dataset, raw })
    }

    pub fn n_clusters(&self, ds: &Dataset) -> Result<usize> {
        match self.clustering.n_clusters {
            Some(k) => Ok(k),
            None if ds.labels.is_some() => Ok(ds.n_classes()),
            None => Err(Error::Config("clustering.n_clusters is required for unlabelled data".into())),
        }
    }
}

/// Self-description written next to every run's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub dataset: DatasetSummary,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub provenance: String,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: Option<usize>,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        DatasetSummary {
            name: ds.name.clone(),
            provenance: ds.provenance.clone(),
            n: ds.len(),
            height: ds.height(),
            width: ds.width(),
            n_classes: ds.labels.as_ref().map(|_| ds.n_classes()),
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("json encoding: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}
