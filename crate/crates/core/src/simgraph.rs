//! Sparse stand-in for the full text×code similarity matrix: per text, the
//! exact top-K′ codes plus the score of its own paired code.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{dot, Reader, VectorStore};
use crate::error::{Error, Result};
use crate::hashing::FieldHasher;

/// Codes scored per inner tile when scanning the code store.
const CODE_TILE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Index into [`SimilarityCache::ids`].
    pub code: u32,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheRow {
    /// Score of the text against its own code (the diagonal entry).
    pub s_pos: f32,
    /// Best codes first: score descending, then code id ascending.
    pub neighbors: Vec<Neighbor>,
}

/// Row `i` belongs to pair `ids[i]`; its positive code is code `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityCache {
    pub k_prime: usize,
    pub lineage: String,
    pub ids: Vec<String>,
    pub rows: Vec<CacheRow>,
}

#[derive(Clone, Debug)]
pub struct NeighborParams {
    pub k_prime: usize,
    /// Text rows per work unit.
    pub block: usize,
    /// Smallest acceptable K′ for the downstream stages.
    pub min_k_prime: usize,
}

impl Default for NeighborParams {
    fn default() -> Self {
        Self {
            k_prime: 128,
            block: 64,
            min_k_prime: 1,
        }
    }
}

impl NeighborParams {
    pub fn new(k_prime: usize, block: usize) -> Self {
        Self {
            k_prime,
            block,
            min_k_prime: 1,
        }
    }

    /// K′ must cover both the filter cutoff `k` and a pool of `pool_size`
    /// negatives plus the positive.
    pub fn requiring(mut self, filter_k: usize, pool_size: usize) -> Self {
        self.min_k_prime = filter_k.max(pool_size + 1);
        self
    }
}

/// Position of each id in lexicographic order; the tie-break key.
pub fn id_ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut ranks = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i as usize] = r as u32;
    }
    ranks
}

/// `Less` when `a` ranks before `b`: higher score first, then smaller id.
#[inline]
pub fn rank_order(a_score: f32, a_rank: u32, b_score: f32, b_rank: u32) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then(a_rank.cmp(&b_rank))
}

#[derive(Clone, Copy)]
struct HeapItem {
    score: f32,
    rank: u32,
    code: u32,
}

// Greater = worse, so the heap top is the entry to evict.
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.score, self.rank, other.score, other.rank)
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

/// Bounded running selection of the best `k` (score, id-rank) entries.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<HeapItem>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, code: u32, score: f32, rank: u32) {
        let item = HeapItem { score, rank, code };
        if self.heap.len() < self.k {
            self.heap.push(item);
        } else if let Some(top) = self.heap.peek() {
            if item < *top {
                self.heap.pop();
                self.heap.push(item);
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|h| Neighbor {
                code: h.code,
                score: h.score,
            })
            .collect()
    }
}

fn check_stores(texts: &VectorStore, codes: &VectorStore) -> Result<()> {
    if texts.dim() != codes.dim() {
        return Err(Error::DimensionMismatch {
            expected: texts.dim(),
            actual: codes.dim(),
        });
    }
    if texts.ids() != codes.ids() {
        return Err(Error::Reference(
            "text and code stores hold different record ids".into(),
        ));
    }
    Ok(())
}

fn lineage(texts: &VectorStore, codes: &VectorStore, k_prime: usize) -> String {
    FieldHasher::new()
        .field(texts.content_hash())
        .field(codes.content_hash())
        .u64(k_prime as u64)
        .finish_hex()
}

/// Exact top-K′ neighbors of every text over the whole code store, computed in
/// parallel blocks of text rows with a bounded heap per row. The result does
/// not depend on `block`.
pub fn compute_neighbors(
    texts: &VectorStore,
    codes: &VectorStore,
    params: &NeighborParams,
) -> Result<SimilarityCache> {
    check_stores(texts, codes)?;
    if params.block == 0 {
        return Err(Error::param("block size must be at least 1"));
    }
    if params.k_prime < params.min_k_prime.max(1) {
        return Err(Error::param(format!(
            "K′ = {} is below the required minimum {}",
            params.k_prime,
            params.min_k_prime.max(1)
        )));
    }
    let n = texts.len();
    let ranks = id_ranks(texts.ids());
    let k = params.k_prime.min(n);

    let blocks: Vec<usize> = (0..n).step_by(params.block).collect();
    let rows: Vec<Vec<CacheRow>> = blocks
        .par_iter()
        .map(|&start| {
            let end = (start + params.block).min(n);
            let mut heaps: Vec<TopK> = (start..end).map(|_| TopK::new(k)).collect();
            for tile in (0..n).step_by(CODE_TILE) {
                let tile_end = (tile + CODE_TILE).min(n);
                for (r, heap) in (start..end).zip(heaps.iter_mut()) {
                    let t = texts.row(r);
                    for c in tile..tile_end {
                        heap.push(c as u32, dot(t, codes.row(c)), ranks[c]);
                    }
                }
            }
            (start..end)
                .zip(heaps)
                .map(|(r, heap)| CacheRow {
                    s_pos: dot(texts.row(r), codes.row(r)),
                    neighbors: heap.into_sorted(),
                })
                .collect()
        })
        .collect();

    Ok(SimilarityCache {
        k_prime: params.k_prime,
        lineage: lineage(texts, codes, params.k_prime),
        ids: texts.ids().to_vec(),
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Test oracle: materializes every score, sorts each row completely and
/// truncates. Quadratic memory.
pub fn brute_force_neighbors(
    texts: &VectorStore,
    codes: &VectorStore,
    k_prime: usize,
) -> Result<SimilarityCache> {
    check_stores(texts, codes)?;
    let n = texts.len();
    let ids = texts.ids();
    let table: Vec<Vec<f32>> = (0..n)
        .map(|i| (0..n).map(|j| dot(texts.row(i), codes.row(j))).collect())
        .collect();
    let rows = table
        .iter()
        .enumerate()
        .map(|(i, scores)| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| ids[a].cmp(&ids[b]))
            });
            order.truncate(k_prime);
            CacheRow {
                s_pos: scores[i],
                neighbors: order
                    .into_iter()
                    .map(|j| Neighbor {
                        code: j as u32,
                        score: scores[j],
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(SimilarityCache {
        k_prime,
        lineage: lineage(texts, codes, k_prime),
        ids: ids.to_vec(),
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    kind: String,
    version: u32,
    k_prime: usize,
    lineage: String,
    ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    query_id: String,
    s_pos: f32,
    neighbors: Vec<(String, f32)>,
}

const BIN_MAGIC: &[u8; 4] = b"CCSC";

impl SimilarityCache {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect()
    }

    /// Checks ordering, length and uniqueness invariants of every row.
    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.ids.len() {
            return Err(Error::Data("cache row count differs from id count".into()));
        }
        let ranks = id_ranks(&self.ids);
        let want = self.k_prime.min(self.ids.len());
        for (i, row) in self.rows.iter().enumerate() {
            if row.neighbors.len() != want {
                return Err(Error::Data(format!(
                    "row `{}` has {} neighbors, expected {want}",
                    self.ids[i],
                    row.neighbors.len()
                )));
            }
            for w in row.neighbors.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a.code as usize) >= self.ids.len() || (b.code as usize) >= self.ids.len() {
                    return Err(Error::Data(format!(
                        "row `{}` references an unknown code",
                        self.ids[i]
                    )));
                }
                if rank_order(
                    a.score,
                    ranks[a.code as usize],
                    b.score,
                    ranks[b.code as usize],
                ) != Ordering::Less
                {
                    return Err(Error::Data(format!(
                        "row `{}` is not strictly ordered",
                        self.ids[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
        } else {
            self.save_jsonl(path)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cache = if path.extension().is_some_and(|e| e == "bin") {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            Self::from_bytes(&bytes)?
        } else {
            Self::load_jsonl(path)?
        };
        cache.validate()?;
        Ok(cache)
    }

    fn save_jsonl(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_value(JsonHeader {
            kind: "similarity_cache".into(),
            version: 1,
            k_prime: self.k_prime,
            lineage: self.lineage.clone(),
            ids: self.ids.clone(),
        })
        .map_err(|e| Error::Data(e.to_string()))?;
        let rows = self.rows.iter().enumerate().map(|(i, r)| {
            serde_json::to_value(JsonRow {
                query_id: self.ids[i].clone(),
                s_pos: r.s_pos,
                neighbors: r
                    .neighbors
                    .iter()
                    .map(|n| (self.ids[n.code as usize].clone(), n.score))
                    .collect(),
            })
            .expect("row serializes")
        });
        crate::jsonl::write(path, std::iter::once(header).chain(rows))
    }

    fn load_jsonl(path: &Path) -> Result<Self> {
        let lines: Vec<serde_json::Value> = crate::jsonl::read(path)?;
        let mut it = lines.into_iter();
        let header: JsonHeader = it
            .next()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: missing similarity cache header",
                    path.display()
                ))
            })?;
        let index: HashMap<&str, u32> = header
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let mut rows = Vec::with_capacity(header.ids.len());
        for (line, v) in it.enumerate() {
            let row: JsonRow = serde_json::from_value(v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: e.to_string(),
            })?;
            if header.ids.get(rows.len()) != Some(&row.query_id) {
                return Err(Error::Data(format!(
                    "{}: row for `{}` out of order",
                    path.display(),
                    row.query_id
                )));
            }
            let neighbors = row
                .neighbors
                .into_iter()
                .map(|(id, score)| {
                    index
                        .get(id.as_str())
                        .map(|&code| Neighbor { code, score })
                        .ok_or_else(|| {
                            Error::Reference(format!("neighbor `{id}` not in cache id table"))
                        })
                })
                .collect::<Result<_>>()?;
            rows.push(CacheRow {
                s_pos: row.s_pos,
                neighbors,
            });
        }
        Ok(SimilarityCache {
            k_prime: header.k_prime,
            lineage: header.lineage,
            ids: header.ids,
            rows,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BIN_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.k_prime as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.lineage.len() as u32).to_le_bytes());
        out.extend_from_slice(self.lineage.as_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for row in &self.rows {
            out.extend_from_slice(&row.s_pos.to_le_bytes());
            out.extend_from_slice(&(row.neighbors.len() as u32).to_le_bytes());
            for n in &row.neighbors {
                out.extend_from_slice(&n.code.to_le_bytes());
                out.extend_from_slice(&n.score.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != BIN_MAGIC {
            return Err(Error::Data("not a similarity cache (bad magic)".into()));
        }
        if r.u32()? != 1 {
            return Err(Error::Data("unsupported similarity cache version".into()));
        }
        let k_prime = r.u32()? as usize;
        let count = r.u64()? as usize;
        let text = |r: &mut Reader| -> Result<String> {
            let len = r.u32()? as usize;
            std::str::from_utf8(r.take(len)?)
                .map(str::to_string)
                .map_err(|e| Error::Data(e.to_string()))
        };
        let lineage = text(&mut r)?;
        let ids = (0..count)
            .map(|_| text(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let s_pos = r.f32()?;
            let len = r.u32()? as usize;
            let mut neighbors = Vec::with_capacity(len);
            for _ in 0..len {
                let code = r.u32()?;
                let score = r.f32()?;
                neighbors.push(Neighbor { code, score });
            }
            rows.push(CacheRow { s_pos, neighbors });
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes in similarity cache".into()));
        }
        Ok(SimilarityCache {
            k_prime,
            lineage,
            ids,
            rows,
        })
    }
}
