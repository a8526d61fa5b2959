use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spc_core::{BlobSpec, SpcConfig, TheoryConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsSection {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub ambient_dim: usize,
    pub centroid_separation: f64,
    pub within_cluster_stddev: f64,
    pub seed: u64,
}

impl Default for BlobsSection {
    fn default() -> Self {
        BlobsSection {
            n_clusters: 4,
            points_per_cluster: 200,
            ambient_dim: 50,
            centroid_separation: 8.0,
            within_cluster_stddev: 1.0,
            seed: 0,
        }
    }
}

impl BlobsSection {
    pub fn spec(&self) -> BlobSpec {
        BlobSpec {
            n_clusters: self.n_clusters,
            points_per_cluster: self.points_per_cluster,
            ambient_dim: self.ambient_dim,
            centroid_separation: self.centroid_separation,
            within_cluster_stddev: self.within_cluster_stddev,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxSection {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Required when no label file is given.
    pub n_clusters: Option<usize>,
    /// Keep only the first `limit` images.
    pub limit: Option<usize>,
}

/// The whole config file. Every field has a default, so an empty file is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<DatasetKind>,
    pub spc: SpcConfig,
    pub blobs: BlobsSection,
    pub idx: IdxSection,
    pub theory: TheoryConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| e.to_string())
    }
}
