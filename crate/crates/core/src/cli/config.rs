use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contrastive::ToyConfig;
use crate::corpus::PrefilterConfig;
use crate::error::{Error, Result};

/// Artifact locations. Unset entries resolve to a fixed file name under `workdir`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub decisions: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub held_out: Option<PathBuf>,
    pub text_store: Option<PathBuf>,
    pub code_store: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub curated: Option<PathBuf>,
    pub dropped: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub batches: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub reranked: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub issues: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub audit: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    /// `stub`, `http(s)://...` or `cmd:...`.
    pub provider: String,
    /// Stub dimension. Remote providers report their own; `--dim` must match it.
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Resumed attempts after a failed batch.
    pub retries: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            provider: "stub".into(),
            dim: 256,
            batch_size: 64,
            max_in_flight: 4,
            timeout_secs: 60,
            retries: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborsSection {
    pub k_prime: usize,
    pub block: usize,
}

impl Default for NeighborsSection {
    fn default() -> Self {
        Self {
            k_prime: 128,
            block: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub k: usize,
    pub delta: f32,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { k: 2, delta: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub gamma: f64,
    pub pool_size: usize,
}

impl Default for MineSection {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            pool_size: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub batch_size: usize,
    pub negatives: usize,
    pub steps: usize,
    pub tau_start: f64,
    pub tau_end: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            batch_size: 128,
            negatives: 15,
            steps: 1000,
            tau_start: 0.05,
            tau_end: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    pub k: usize,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        Self { k: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub window: usize,
    pub stride: usize,
    pub depth: usize,
    /// `identity`, `stub`, `http(s)://...` or `cmd:...`.
    pub backend: String,
    pub timeout_secs: u64,
}

impl Default for RerankSection {
    fn default() -> Self {
        Self {
            window: 10,
            stride: 5,
            depth: 100,
            backend: "stub".into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListwiseSection {
    pub instances_per_tuple: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub min_s_pos: f32,
    pub pool_top: usize,
    pub teacher: String,
}

impl Default for ListwiseSection {
    fn default() -> Self {
        Self {
            instances_per_tuple: 5,
            min_size: 3,
            max_size: 10,
            min_s_pos: 0.8,
            pool_top: 20,
            teacher: "stub".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    pub depth: usize,
    /// Reranking backend; `none` keeps the retriever order.
    pub backend: String,
    /// `any` or `complete`.
    pub mode: String,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        Self {
            depth: 100,
            backend: "none".into(),
            mode: "any".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub sample_size: usize,
    pub seeds: usize,
    /// `stub`, `http(s)://...` or `cmd:...`.
    pub judge: String,
    /// Cosine threshold of the stub judge.
    pub stub_threshold: f32,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            sample_size: 100,
            seeds: 3,
            judge: "stub".into(),
            stub_threshold: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: vec!["mrr@10".into(), "ndcg@10".into(), "recall@100".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub prefilter: PrefilterConfig,
    pub embed: EmbedSection,
    pub neighbors: NeighborsSection,
    pub filter: FilterSection,
    pub mine: MineSection,
    pub sample: SampleSection,
    pub toy: ToyConfig,
    pub retrieve: RetrieveSection,
    pub rerank: RerankSection,
    pub listwise: ListwiseSection,
    pub localize: LocalizeSection,
    pub audit: AuditSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}
