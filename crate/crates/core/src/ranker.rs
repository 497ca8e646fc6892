//! Exact dense retrieval and ranking metrics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedder::{dot, VectorStore};
use crate::error::{Error, Result};
use crate::simgraph::{id_ranks, TopK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    /// Score descending, ties by id ascending.
    pub entries: Vec<(String, f32)>,
}

impl RankedList {
    /// 1-based position of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.0 == id).map(|p| p + 1)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.0.as_str())
    }
}

/// Read-only search structure over a candidate store.
pub struct SearchIndex<'a> {
    store: &'a VectorStore,
    ranks: Vec<u32>,
}

impl<'a> SearchIndex<'a> {
    pub fn new(store: &'a VectorStore) -> Self {
        Self {
            store,
            ranks: id_ranks(store.ids()),
        }
    }

    pub fn store(&self) -> &VectorStore {
        self.store
    }

    pub fn search(&self, query_id: &str, query: &[f32], k: usize) -> Result<RankedList> {
        if query.len() != self.store.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.store.dim(),
                actual: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        let mut top = TopK::new(k.min(self.store.len()));
        for (j, row) in self.store.rows().enumerate() {
            top.push(j as u32, dot(query, row), self.ranks[j]);
        }
        Ok(RankedList {
            query_id: query_id.to_string(),
            entries: top
                .into_sorted()
                .into_iter()
                .map(|n| (self.store.ids()[n.code as usize].clone(), n.score))
                .collect(),
        })
    }

    /// One ranked list per query row, in query order.
    pub fn search_batch(&self, queries: &VectorStore, k: usize) -> Result<Vec<RankedList>> {
        (0..queries.len())
            .into_par_iter()
            .map(|i| self.search(&queries.ids()[i], queries.row(i), k))
            .collect()
    }
}

pub fn search(store: &VectorStore, query_id: &str, query: &[f32], k: usize) -> Result<RankedList> {
    SearchIndex::new(store).search(query_id, query, k)
}

pub fn search_batch(
    store: &VectorStore,
    queries: &VectorStore,
    k: usize,
) -> Result<Vec<RankedList>> {
    SearchIndex::new(store).search_batch(queries, k)
}

/// Relevant candidate ids per query.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mrr,
    Ndcg,
    Recall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub k: usize,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, k: usize) -> Self {
        Self { kind, k }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Mrr => "MRR",
            MetricKind::Ndcg => "nDCG",
            MetricKind::Recall => "Recall",
        };
        write!(f, "{name}@{}", self.k)
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    /// Accepts `mrr@10`, `ndcg@10`, `recall@100` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| Error::Usage(format!("metric `{s}` must look like name@k")))?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "mrr" => MetricKind::Mrr,
            "ndcg" => MetricKind::Ndcg,
            "recall" => MetricKind::Recall,
            other => return Err(Error::Usage(format!("unknown metric `{other}`"))),
        };
        let k: usize = k.parse().ok().filter(|&k| k > 0).ok_or_else(|| {
            Error::Usage(format!("metric cutoff in `{s}` must be a positive integer"))
        })?;
        Ok(Self { kind, k })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    /// Queries scored 0 because they have no relevant candidates.
    pub empty_qrels: Vec<String>,
}

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 1) as f64).log2()
}

/// Metric value of one ranked list against its relevant set.
pub fn metric_value(ids: &[&str], relevant: &BTreeSet<String>, spec: MetricSpec) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let top = &ids[..ids.len().min(spec.k)];
    match spec.kind {
        MetricKind::Mrr => top
            .iter()
            .position(|id| relevant.contains(*id))
            .map_or(0.0, |p| 1.0 / (p + 1) as f64),
        MetricKind::Ndcg => {
            let dcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, id)| relevant.contains(**id))
                .map(|(i, _)| discount(i + 1))
                .sum();
            let ideal: f64 = (1..=relevant.len().min(spec.k)).map(discount).sum();
            dcg / ideal
        }
        MetricKind::Recall => {
            top.iter().filter(|id| relevant.contains(**id)).count() as f64 / relevant.len() as f64
        }
    }
}

pub fn compute_metrics(
    runs: &[RankedList],
    qrels: &Qrels,
    spec: MetricSpec,
) -> Result<MetricReport> {
    if spec.k == 0 {
        return Err(Error::param("metric cutoff must be at least 1"));
    }
    let empty = BTreeSet::new();
    let mut per_query = Vec::with_capacity(runs.len());
    let mut empty_qrels = Vec::new();
    for run in runs {
        let ids: Vec<&str> = run.ids().collect();
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Data(format!(
                "run for query `{}` lists candidate `{dup}` twice",
                run.query_id
            )));
        }
        let relevant = qrels.get(&run.query_id).unwrap_or(&empty);
        if relevant.is_empty() {
            empty_qrels.push(run.query_id.clone());
        }
        per_query.push((run.query_id.clone(), metric_value(&ids, relevant, spec)));
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|p| p.1).sum::<f64>() / per_query.len() as f64
    };
    Ok(MetricReport {
        metric: spec.to_string(),
        per_query,
        mean,
        empty_qrels,
    })
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

/// TREC run format: `query_id Q0 candidate_id rank score tag`.
pub fn write_run(path: &Path, runs: &[RankedList], tag: &str) -> Result<()> {
    let mut w = create(path)?;
    for run in runs {
        for (i, (id, score)) in run.entries.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {} {}", run.query_id, id, i + 1, score, tag)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads 6-column TREC runs or the 5-column variant without `Q0`. Entries are
/// ordered by the rank column; query order follows first appearance.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, String, f32)>> = BTreeMap::new();
    for (n, line) in lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let (q, c, r, s) = match f.len() {
            6 => (f[0], f[2], f[3], f[4]),
            5 => (f[0], f[1], f[2], f[3]),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("expected 5 or 6 columns, found {}", f.len()),
                })
            }
        };
        let bad = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message: format!("invalid {what}"),
        };
        let rank: usize = r.parse().map_err(|_| bad("rank"))?;
        let score: f32 = s.parse().map_err(|_| bad("score"))?;
        if !rows.contains_key(q) {
            order.push(q.to_string());
        }
        rows.entry(q.to_string())
            .or_default()
            .push((rank, c.to_string(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut e = rows.remove(&q).unwrap_or_default();
            e.sort_by_key(|x| x.0);
            RankedList {
                query_id: q,
                entries: e.into_iter().map(|(_, c, s)| (c, s)).collect(),
            }
        })
        .collect())
}

/// Qrels: `query_id 0 candidate_id relevance`.
pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut w = create(path)?;
    for (q, rel) in qrels {
        for c in rel {
            writeln!(w, "{q} 0 {c} 1").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads 4-column qrels or the 3-column `query_id candidate_id relevance`
/// variant. Zero-relevance lines register the query with no relevant ids.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (n, line) in lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let (qid, cid, rel) = match f.len() {
            0 => continue,
            4 => (f[0], f[2], f[3]),
            3 => (f[0], f[1], f[2]),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("expected 3 or 4 columns, found {}", f.len()),
                })
            }
        };
        let rel: i64 = rel.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message: "invalid relevance".into(),
        })?;
        let entry = q.entry(qid.to_string()).or_default();
        if rel > 0 {
            entry.insert(cid.to_string());
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::Side;

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: ids.iter().map(|i| (i.to_string(), 0.0)).collect(),
        }
    }

    fn rel(ids: &[&str]) -> Qrels {
        let mut q = Qrels::new();
        q.insert("q".into(), ids.iter().map(|s| s.to_string()).collect());
        q
    }

    #[test]
    fn spot_values() {
        let r = [list(&["a", "b", "c"])];
        let mrr = compute_metrics(&r, &rel(&["c"]), MetricSpec::new(MetricKind::Mrr, 100)).unwrap();
        assert_eq!(mrr.mean, 1.0 / 3.0);
        let ndcg =
            compute_metrics(&r, &rel(&["b"]), MetricSpec::new(MetricKind::Ndcg, 10)).unwrap();
        assert_eq!(ndcg.mean, 1.0 / 3f64.log2());
        let rec = compute_metrics(
            &r,
            &rel(&["a", "z"]),
            MetricSpec::new(MetricKind::Recall, 2),
        )
        .unwrap();
        assert_eq!(rec.mean, 0.5);
    }

    #[test]
    fn empty_qrels_flagged_and_duplicates_rejected() {
        let r = compute_metrics(&[list(&["a"])], &Qrels::new(), "mrr@10".parse().unwrap()).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.empty_qrels, vec!["q".to_string()]);
        assert!(compute_metrics(
            &[list(&["a", "a"])],
            &rel(&["a"]),
            "mrr@10".parse().unwrap()
        )
        .is_err());
    }

    #[test]
    fn metric_spec_parsing() {
        let s: MetricSpec = "nDCG@10".parse().unwrap();
        assert_eq!(s, MetricSpec::new(MetricKind::Ndcg, 10));
        assert_eq!(s.to_string(), "nDCG@10");
        assert!("mrr@0".parse::<MetricSpec>().is_err());
        assert!("map@5".parse::<MetricSpec>().is_err());
    }

    fn store(rows: Vec<Vec<f32>>, ids: &[&str]) -> VectorStore {
        VectorStore::from_rows(
            rows[0].len(),
            Side::Code,
            ids.iter().map(|s| s.to_string()).collect(),
            rows,
            [0; 32],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_ranks_first_and_ties_by_id() {
        let s = store(
            vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            &["z", "b", "a"],
        );
        let r = search(&s, "q", &[1.0, 0.0], 10).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), vec!["a", "b", "z"]);
        assert_eq!(r.entries[0].1, 1.0);
        assert!(matches!(
            search(&s, "q", &[1.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn run_and_qrels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let runs = vec![
            RankedList {
                query_id: "q2".into(),
                entries: vec![("c1".into(), 0.5), ("c0".into(), 0.25)],
            },
            RankedList {
                query_id: "q1".into(),
                entries: vec![("c0".into(), 0.75)],
            },
        ];
        let p = dir.path().join("run.trec");
        write_run(&p, &runs, "t").unwrap();
        assert_eq!(read_run(&p).unwrap(), runs);
        let qp = dir.path().join("qrels");
        std::fs::write(&qp, "q1 0 c0 1\nq2 c1 1\nq3 0 c9 0\n").unwrap();
        let q = read_qrels(&qp).unwrap();
        assert_eq!(q["q2"].len(), 1);
        assert!(q["q3"].is_empty());
        let qp2 = dir.path().join("qrels2");
        write_qrels(&qp2, &q).unwrap();
        let back = read_qrels(&qp2).unwrap();
        assert_eq!(back["q1"], q["q1"]);
    }
}
