//! Paired toy experiment: curated data with curriculum hard negatives against
//! unfiltered data with in-batch negatives only.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::contrastive::{train_toy, ToyConfig, ToyOutcome, ToySplit};
use crate::corpus::PairRecord;
use crate::curation::{
    build_negative_pools, consistency_filter, CuratedPair, FilterParams, MiningParams,
};
use crate::embedder::{store_hash, stub_embed, stub_features, Side, VectorStore};
use crate::error::Result;
use crate::simgraph::{compute_neighbors, NeighborParams};
use crate::synth::{topic_corpus, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Consistency filtering plus sampled hard negatives.
    Curated,
    /// All training pairs, in-batch negatives only.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub synth: SynthConfig,
    pub train: ToyConfig,
    pub filter: FilterParams,
    pub mining: MiningParams,
    pub k_prime: usize,
}

impl Default for ToyExperiment {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                topics: 200,
                pairs_per_topic: 10,
                noise_rate: 0.3,
                held_out_per_topic: 3,
                seed: 0,
            },
            train: ToyConfig {
                steps: 1000,
                negatives: 7,
                eval_every: 250,
                ..ToyConfig::default()
            },
            filter: FilterParams { k: 2, delta: 0.2 },
            mining: MiningParams {
                gamma: 0.95,
                pool_size: 20,
                seed: 0,
            },
            k_prime: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub train_pairs: usize,
    pub outcome: ToyOutcome,
}

fn features(texts: impl Iterator<Item = String>, dim: usize, n: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(n * dim);
    for t in texts {
        data.extend(stub_features(&t, dim)?);
    }
    Ok(Array2::from_shape_vec((n, dim), data).expect("row lengths fixed by dim"))
}

/// Stub features of both sides of `records`.
pub fn toy_split(records: &[&PairRecord], dim: usize) -> Result<ToySplit> {
    let n = records.len();
    ToySplit::new(
        records.iter().map(|r| r.id.clone()).collect(),
        features(records.iter().map(|r| r.text.clone()), dim, n)?,
        features(records.iter().map(|r| r.code.clone()), dim, n)?,
    )
}

fn stub_store(records: &[&PairRecord], side: Side, dim: usize) -> Result<VectorStore> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let rows = records
        .iter()
        .map(|r| {
            let s = match side {
                Side::Text => &r.text,
                Side::Code => &r.code,
            };
            Ok(stub_embed(s, dim)?.into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = store_hash("stub-3gram-v1", dim, side, &ids);
    VectorStore::from_rows(dim, side, ids, rows, hash)
}

/// Runs one arm with `seed` driving corpus generation, initialization and sampling.
pub fn run_arm(exp: &ToyExperiment, arm: Arm, seed: u64) -> Result<ArmResult> {
    let corpus = topic_corpus(&SynthConfig { seed, ..exp.synth })?;
    let dim = exp.train.feature_dim;
    let train: Vec<&PairRecord> = corpus
        .records
        .iter()
        .zip(&corpus.held_out)
        .filter(|(_, h)| !**h)
        .map(|(r, _)| r)
        .collect();
    let held: Vec<&PairRecord> = corpus
        .records
        .iter()
        .zip(&corpus.held_out)
        .filter(|(_, h)| **h)
        .map(|(r, _)| r)
        .collect();
    let train_split = toy_split(&train, dim)?;
    let held_split = toy_split(&held, dim)?;

    let cfg = ToyConfig { seed, ..exp.train };
    let (curated, pools, cfg) = match arm {
        Arm::Curated => {
            let texts = stub_store(&train, Side::Text, dim)?;
            let codes = stub_store(&train, Side::Code, dim)?;
            let params =
                NeighborParams::new(exp.k_prime, 64).requiring(exp.filter.k, exp.mining.pool_size);
            let cache = compute_neighbors(&texts, &codes, &params)?;
            let ids: HashSet<String> = cache.ids.iter().cloned().collect();
            let kept = consistency_filter(&cache, &ids, &exp.filter)?.kept;
            let pools = build_negative_pools(&cache, &kept, &MiningParams { seed, ..exp.mining })?;
            (kept, pools, cfg)
        }
        Arm::Baseline => {
            let all = train
                .iter()
                .map(|r| CuratedPair {
                    query_id: r.id.clone(),
                    positive_id: r.id.clone(),
                    s_pos: 0.0,
                    rank: 0,
                })
                .collect();
            (
                all,
                Vec::new(),
                ToyConfig {
                    negatives: 0,
                    ..cfg
                },
            )
        }
    };
    let outcome = train_toy(&cfg, &train_split, &curated, &pools, &held_split)?;
    Ok(ArmResult {
        arm,
        seed,
        train_pairs: curated.len(),
        outcome,
    })
}
