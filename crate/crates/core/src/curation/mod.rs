//! Dual consistency filtering and hard-negative pool construction.

mod audit;

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::simgraph::{id_ranks, rank_order, CacheRow, SimilarityCache};

pub use audit::{
    audit_pairs, parse_verdict, AuditConfig, AuditItem, AuditReport, AuditRow, Verdict,
    JUDGE_PROMPT_V1,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Positive must rank within the top `k` codes of its text.
    pub k: usize,
    /// Positive similarity must exceed `delta`.
    pub delta: f32,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { k: 2, delta: 0.7 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("filter k must be at least 1"));
        }
        if !(self.delta > -1.0 && self.delta < 1.0) {
            return Err(Error::param(format!(
                "delta must lie in (-1, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedPair {
    pub query_id: String,
    pub positive_id: String,
    pub s_pos: f32,
    /// 1 + number of codes ranked ahead of the positive.
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    RankFail,
    ThresholdFail,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub query_id: String,
    pub reason: DropReason,
    pub s_pos: f32,
    /// Exact rank, or `k_prime + 1` as a lower bound when the positive fell
    /// outside the stored neighbor list.
    pub rank: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<CuratedPair>,
    pub dropped: Vec<DroppedPair>,
}

impl FilterOutcome {
    pub fn summary(&self) -> String {
        let count = |r| self.dropped.iter().filter(|d| d.reason == r).count();
        format!(
            "kept {}\ndropped {}\n  rank_fail {}\n  threshold_fail {}\n  both {}\n",
            self.kept.len(),
            self.dropped.len(),
            count(DropReason::RankFail),
            count(DropReason::ThresholdFail),
            count(DropReason::Both)
        )
    }
}

/// Rank of the row's own code: codes with a strictly higher score, plus
/// equal-score codes with a smaller id, plus one.
fn positive_rank(cache: &SimilarityCache, ranks: &[u32], i: usize, row: &CacheRow) -> usize {
    let me = ranks[i];
    let mut ahead = 0;
    let mut seen = false;
    for n in &row.neighbors {
        if n.code as usize == i {
            seen = true;
            break;
        }
        if rank_order(n.score, ranks[n.code as usize], row.s_pos, me).is_lt() {
            ahead += 1;
        }
    }
    if !seen && row.neighbors.len() < cache.ids.len() {
        // the list was truncated before reaching the positive
        return row.neighbors.len().max(cache.k_prime) + 1;
    }
    ahead + 1
}

/// Keeps pair `i` iff its code ranks within the top `k` of text `i` and
/// `S_ii > delta`.
pub fn consistency_filter(
    cache: &SimilarityCache,
    corpus_ids: &HashSet<String>,
    params: &FilterParams,
) -> Result<FilterOutcome> {
    params.validate()?;
    if cache.k_prime < params.k {
        return Err(Error::param(format!(
            "cache K′ = {} is smaller than filter k = {}",
            cache.k_prime, params.k
        )));
    }
    if let Some(missing) = cache.ids.iter().find(|id| !corpus_ids.contains(*id)) {
        return Err(Error::Reference(format!(
            "cache query `{missing}` is not in the corpus"
        )));
    }
    let ranks = id_ranks(&cache.ids);
    let decisions: Vec<(usize, usize, bool, bool)> = cache
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let rank = positive_rank(cache, &ranks, i, row);
            (i, rank, rank <= params.k, row.s_pos > params.delta)
        })
        .collect();

    let mut out = FilterOutcome::default();
    for (i, rank, rank_ok, thresh_ok) in decisions {
        let id = &cache.ids[i];
        let s_pos = cache.rows[i].s_pos;
        let reason = match (rank_ok, thresh_ok) {
            (true, true) => {
                out.kept.push(CuratedPair {
                    query_id: id.clone(),
                    positive_id: id.clone(),
                    s_pos,
                    rank,
                });
                continue;
            }
            (false, true) => DropReason::RankFail,
            (true, false) => DropReason::ThresholdFail,
            (false, false) => DropReason::Both,
        };
        out.dropped.push(DroppedPair {
            query_id: id.clone(),
            reason,
            s_pos,
            rank,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    /// Negatives scoring above `gamma * s_pos` are treated as false negatives.
    pub gamma: f64,
    /// Maximum negatives kept per query.
    pub pool_size: usize,
    /// Seed for fallback pools.
    pub seed: u64,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            pool_size: 100,
            seed: 0,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::param(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.pool_size == 0 {
            return Err(Error::param("pool size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativePool {
    pub query_id: String,
    /// Score descending, ties by id ascending.
    pub entries: Vec<(String, f32)>,
    pub fallback_used: bool,
}

impl NegativePool {
    pub fn scores(&self) -> Vec<f32> {
        self.entries.iter().map(|e| e.1).collect()
    }
}

/// `gamma * s_pos`, evaluated in f64.
pub fn false_negative_cutoff(gamma: f64, s_pos: f32) -> f64 {
    gamma * s_pos as f64
}

/// Largest f32 not above `cutoff`.
fn f32_at_most(cutoff: f64) -> f32 {
    let c = cutoff as f32;
    if c as f64 > cutoff {
        c.next_down()
    } else {
        c
    }
}

/// For each curated pair, keeps the stored neighbors with score at most
/// `gamma * s_pos` (positive excluded), best first, truncated to the pool size.
///
/// An empty pool is replaced by `pool_size` codes drawn uniformly (seeded by
/// query id) from the corpus, excluding the positive and every neighbor above
/// the cutoff. Fallback entries carry the cutoff itself as their score, so
/// they are equally likely under softmax sampling.
pub fn build_negative_pools(
    cache: &SimilarityCache,
    curated: &[CuratedPair],
    params: &MiningParams,
) -> Result<Vec<NegativePool>> {
    params.validate()?;
    let index = cache.index();
    curated
        .par_iter()
        .map(|pair| {
            let i = *index.get(pair.query_id.as_str()).ok_or_else(|| {
                Error::Reference(format!(
                    "curated query `{}` is not in the cache",
                    pair.query_id
                ))
            })?;
            let pos = *index.get(pair.positive_id.as_str()).ok_or_else(|| {
                Error::Reference(format!(
                    "positive `{}` is not in the cache",
                    pair.positive_id
                ))
            })?;
            let row = &cache.rows[i];
            let cutoff = false_negative_cutoff(params.gamma, row.s_pos);
            let entries: Vec<(String, f32)> = row
                .neighbors
                .iter()
                .filter(|n| n.code as usize != pos && n.score as f64 <= cutoff)
                .take(params.pool_size)
                .map(|n| (cache.ids[n.code as usize].clone(), n.score))
                .collect();
            if !entries.is_empty() {
                return Ok(NegativePool {
                    query_id: pair.query_id.clone(),
                    entries,
                    fallback_used: false,
                });
            }

            let excluded: HashSet<usize> = row
                .neighbors
                .iter()
                .filter(|n| n.score as f64 > cutoff)
                .map(|n| n.code as usize)
                .chain(std::iter::once(pos))
                .collect();
            let eligible: Vec<usize> = (0..cache.ids.len())
                .filter(|j| !excluded.contains(j))
                .collect();
            let mut rng = keyed_rng(params.seed, "fallback-pool", &[pair.query_id.as_bytes()]);
            let take = params.pool_size.min(eligible.len());
            let mut picked: Vec<&String> = index::sample(&mut rng, eligible.len(), take)
                .into_iter()
                .map(|k| &cache.ids[eligible[k]])
                .collect();
            picked.sort();
            let score = f32_at_most(cutoff);
            Ok(NegativePool {
                query_id: pair.query_id.clone(),
                entries: picked.into_iter().map(|id| (id.clone(), score)).collect(),
                fallback_used: true,
            })
        })
        .collect()
}

/// Pools keyed by query id.
pub fn pools_by_query(pools: &[NegativePool]) -> HashMap<&str, &NegativePool> {
    pools.iter().map(|p| (p.query_id.as_str(), p)).collect()
}
