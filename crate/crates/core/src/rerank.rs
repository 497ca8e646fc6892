//! Sliding-window listwise reranking and teacher-labeled window generation.

use std::collections::{HashMap, HashSet};
use std::sync::LazyLock;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendRanking, RerankBackend};
use crate::curation::{CuratedPair, NegativePool};
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::protocol::RerankCandidate;
use crate::ranker::RankedList;

/// Identifier-window prompt; `{count}`, `{query}` and `{candidates}` are filled by [`render_prompt`].
pub const RERANK_PROMPT_V1: &str = include_str!("../resources/rerank_prompt_v1.txt");

pub fn render_prompt(query: &str, candidates: &[RerankCandidate]) -> String {
    let body: Vec<String> = candidates
        .iter()
        .map(|c| format!("[{}] {}", c.identifier, c.text))
        .collect();
    RERANK_PROMPT_V1
        .replace("{count}", &candidates.len().to_string())
        .replace("{query}", query)
        .replace("{candidates}", &body.join("\n"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankParams {
    pub window: usize,
    pub stride: usize,
    pub depth: usize,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            window: 10,
            stride: 5,
            depth: 100,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.stride && self.stride <= self.window && self.window <= self.depth) {
            return Err(Error::param(format!(
                "need 1 <= stride <= window <= depth, got stride {} window {} depth {}",
                self.stride, self.window, self.depth
            )));
        }
        Ok(())
    }
}

/// Half-open `[start, end)` windows over the first `min(depth, len)` entries,
/// in processing order (last window first).
pub fn window_positions(len: usize, params: &RerankParams) -> Vec<(usize, usize)> {
    let d = params.depth.min(len);
    if d == 0 {
        return Vec::new();
    }
    if d <= params.window {
        return vec![(0, d)];
    }
    let mut out = Vec::new();
    let mut start = d - params.window;
    loop {
        out.push((start, start + params.window));
        if start == 0 {
            break;
        }
        start = start.saturating_sub(params.stride);
    }
    out
}

static BRACKETED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\s*(-?\d+)\s*\]").expect("valid regex"));
static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("valid regex"));

/// Orders `window` (identifiers in window order) by the identifiers found in
/// `raw`: `[n]` tokens, or bare integers when there are none. Unknown
/// identifiers are dropped, repeats keep the first occurrence, and anything
/// missing is appended in window order.
pub fn parse_and_repair(raw: &str, window: &[u32]) -> Vec<u32> {
    let mut tokens: Vec<i64> = BRACKETED
        .captures_iter(raw)
        .filter_map(|c| c[1].parse().ok())
        .collect();
    if tokens.is_empty() {
        tokens = BARE
            .find_iter(raw)
            .filter_map(|m| m.as_str().parse().ok())
            .collect();
    }
    repair(&tokens, window)
}

pub fn repair(ranking: &[i64], window: &[u32]) -> Vec<u32> {
    let known: HashSet<u32> = window.iter().copied().collect();
    let mut seen = HashSet::with_capacity(window.len());
    let mut out = Vec::with_capacity(window.len());
    for &t in ranking {
        if let Ok(id) = u32::try_from(t) {
            if known.contains(&id) && seen.insert(id) {
                out.push(id);
            }
        }
    }
    out.extend(window.iter().filter(|id| !seen.contains(id)));
    out
}

fn backend_order(
    backend: &dyn RerankBackend,
    query: &str,
    cands: &[RerankCandidate],
) -> Result<Vec<u32>> {
    let ids: Vec<u32> = cands.iter().map(|c| c.identifier).collect();
    Ok(match backend.rank(query, cands)? {
        BackendRanking::Identifiers(r) => repair(&r, &ids),
        BackendRanking::Text(t) => parse_and_repair(&t, &ids),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankOutcome {
    pub list: RankedList,
    pub windows: usize,
    /// Windows left in input order because the backend failed.
    pub failures: usize,
}

/// Reorders the top `depth` entries window by window, back to front. Scores
/// of the top `depth` positions are kept in place so the list stays sorted by
/// score; only the ids move.
pub fn sliding_rerank(
    query: &str,
    ranked: &RankedList,
    texts: &HashMap<String, String>,
    params: &RerankParams,
    backend: &dyn RerankBackend,
) -> Result<RerankOutcome> {
    params.validate()?;
    if ranked.entries.is_empty() {
        return Err(Error::param(format!(
            "ranked list for `{}` is empty",
            ranked.query_id
        )));
    }
    let mut ids: Vec<String> = ranked.entries.iter().map(|e| e.0.clone()).collect();
    let positions = window_positions(ids.len(), params);
    let mut failures = 0;
    for &(start, end) in &positions {
        if end - start < 2 {
            continue;
        }
        let cands = ids[start..end]
            .iter()
            .enumerate()
            .map(|(k, id)| {
                let text = texts
                    .get(id)
                    .ok_or_else(|| Error::Reference(format!("no text for candidate `{id}`")))?;
                Ok(RerankCandidate {
                    identifier: k as u32 + 1,
                    text: text.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match backend_order(backend, query, &cands) {
            Ok(order) => {
                let window: Vec<String> = order
                    .iter()
                    .map(|&y| ids[start + y as usize - 1].clone())
                    .collect();
                ids[start..end].clone_from_slice(&window);
            }
            Err(e) => {
                failures += 1;
                log::warn!(
                    "rerank window {start}..{end} of `{}` failed: {e}",
                    ranked.query_id
                );
            }
        }
    }
    Ok(RerankOutcome {
        list: RankedList {
            query_id: ranked.query_id.clone(),
            entries: ids
                .into_iter()
                .zip(ranked.entries.iter().map(|e| e.1))
                .collect(),
        },
        windows: positions.len(),
        failures,
    })
}

/// Reranks many queries in parallel; `queries` maps query id to text.
pub fn sliding_rerank_batch(
    runs: &[RankedList],
    queries: &HashMap<String, String>,
    texts: &HashMap<String, String>,
    params: &RerankParams,
    backend: &dyn RerankBackend,
) -> Result<Vec<RerankOutcome>> {
    runs.par_iter()
        .map(|run| {
            let q = queries
                .get(&run.query_id)
                .ok_or_else(|| Error::Reference(format!("no text for query `{}`", run.query_id)))?;
            sliding_rerank(q, run, texts, params, backend)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCandidate {
    pub identifier: u32,
    pub candidate_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseInstance {
    pub query_id: String,
    pub query: String,
    pub candidates: Vec<InstanceCandidate>,
    pub teacher_ranking: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListwiseParams {
    pub instances_per_tuple: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Only tuples with the positive at rank 1 and at least this similarity.
    pub min_s_pos: f32,
    /// Pool entries eligible for windows, best first.
    pub pool_top: usize,
    pub seed: u64,
}

impl Default for ListwiseParams {
    fn default() -> Self {
        Self {
            instances_per_tuple: 5,
            min_size: 3,
            max_size: 10,
            min_s_pos: 0.8,
            pool_top: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ListwiseOutcome {
    pub instances: Vec<ListwiseInstance>,
    pub selected_tuples: usize,
    /// Tuples with fewer than `min_size` candidates available.
    pub too_small: usize,
    /// Instances dropped because the teacher failed.
    pub teacher_failures: usize,
}

/// Draws `instances_per_tuple` shuffled windows per selected tuple from the
/// positive and its top pool entries, and labels each with the teacher's order.
pub fn gen_listwise_data(
    curated: &[CuratedPair],
    pools: &[NegativePool],
    query_texts: &HashMap<String, String>,
    code_texts: &HashMap<String, String>,
    teacher: &dyn RerankBackend,
    params: &ListwiseParams,
) -> Result<ListwiseOutcome> {
    if !(3 <= params.min_size && params.min_size <= params.max_size) {
        return Err(Error::param("window sizes need 3 <= min <= max"));
    }
    let pools: HashMap<&str, &NegativePool> =
        pools.iter().map(|p| (p.query_id.as_str(), p)).collect();
    let selected: Vec<&CuratedPair> = curated
        .iter()
        .filter(|c| c.rank == 1 && c.s_pos >= params.min_s_pos)
        .collect();
    let text_of = |map: &HashMap<String, String>, id: &str| {
        map.get(id)
            .cloned()
            .ok_or_else(|| Error::Reference(format!("no text for `{id}`")))
    };

    type Slot = Result<Option<ListwiseInstance>>;
    let per_tuple: Vec<(bool, Vec<Slot>)> = selected
        .par_iter()
        .map(|pair| {
            let pool = match pools.get(pair.query_id.as_str()) {
                Some(p) => *p,
                None => {
                    return (
                        false,
                        vec![Err(Error::Reference(format!(
                            "no pool for `{}`",
                            pair.query_id
                        )))],
                    )
                }
            };
            let mut members: Vec<&str> = vec![pair.positive_id.as_str()];
            members.extend(
                pool.entries
                    .iter()
                    .take(params.pool_top)
                    .map(|e| e.0.as_str()),
            );
            if members.len() < params.min_size {
                return (true, Vec::new());
            }
            let query = match text_of(query_texts, &pair.query_id) {
                Ok(q) => q,
                Err(e) => return (false, vec![Err(e)]),
            };
            let slots = (0..params.instances_per_tuple)
                .map(|k| {
                    let mut rng = keyed_rng(
                        params.seed,
                        "listwise",
                        &[pair.query_id.as_bytes(), &(k as u64).to_le_bytes()],
                    );
                    let size = rng
                        .random_range(params.min_size..=params.max_size)
                        .min(members.len());
                    let mut picked = index::sample(&mut rng, members.len(), size).into_vec();
                    picked.shuffle(&mut rng);
                    let candidates = picked
                        .iter()
                        .enumerate()
                        .map(|(j, &m)| {
                            Ok(InstanceCandidate {
                                identifier: j as u32 + 1,
                                candidate_id: members[m].to_string(),
                                text: text_of(code_texts, members[m])?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let wire: Vec<RerankCandidate> = candidates
                        .iter()
                        .map(|c| RerankCandidate {
                            identifier: c.identifier,
                            text: c.text.clone(),
                        })
                        .collect();
                    match backend_order(teacher, &query, &wire) {
                        Ok(teacher_ranking) => Ok(Some(ListwiseInstance {
                            query_id: pair.query_id.clone(),
                            query: query.clone(),
                            candidates,
                            teacher_ranking,
                        })),
                        Err(e) => {
                            log::warn!("teacher failed on `{}` instance {k}: {e}", pair.query_id);
                            Ok(None)
                        }
                    }
                })
                .collect();
            (false, slots)
        })
        .collect();

    let mut out = ListwiseOutcome {
        selected_tuples: selected.len(),
        ..Default::default()
    };
    for (small, slots) in per_tuple {
        if small {
            out.too_small += 1;
        }
        for s in slots {
            match s? {
                Some(inst) => out.instances.push(inst),
                None => out.teacher_failures += 1,
            }
        }
    }
    Ok(out)
}
