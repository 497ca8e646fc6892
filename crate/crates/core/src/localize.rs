//! Function localization for repository issues: retrieve, optionally rerank,
//! roll functions up to files, and score top-k hits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::RerankBackend;
use crate::embedder::{store_hash, EmbeddingProvider, Side, Vector, VectorStore};
use crate::error::{Error, Result};
use crate::ranker::{RankedList, SearchIndex};
use crate::rerank::{sliding_rerank, RerankParams};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub function_id: String,
    pub file_path: String,
    pub name: String,
    #[serde(default)]
    pub docstring: String,
    pub body: String,
}

impl FunctionRecord {
    /// Text embedded for retrieval and shown to rerankers.
    pub fn candidate_text(&self) -> String {
        format!("{}\n{}", self.docstring, self.body)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabels {
    pub instance_id: String,
    pub issue: String,
    pub gold_function_ids: BTreeSet<String>,
    #[serde(default)]
    pub gold_files: BTreeSet<String>,
}

impl GoldLabels {
    /// Adds the file of every gold function to `gold_files`. Gold functions
    /// missing from the snapshot are a referential error.
    pub fn resolve(&self, snapshot: &[FunctionRecord]) -> Result<GoldLabels> {
        let files: HashMap<&str, &str> = snapshot
            .iter()
            .map(|f| (f.function_id.as_str(), f.file_path.as_str()))
            .collect();
        let mut out = self.clone();
        for id in &self.gold_function_ids {
            let file = files.get(id.as_str()).ok_or_else(|| {
                Error::Reference(format!(
                    "gold function `{id}` of instance `{}` is not in the snapshot",
                    self.instance_id
                ))
            })?;
            out.gold_files.insert(file.to_string());
        }
        Ok(out)
    }
}

fn check_snapshot(snapshot: &[FunctionRecord]) -> Result<()> {
    if snapshot.is_empty() {
        return Err(Error::Data("snapshot holds no functions".into()));
    }
    let mut seen = HashSet::new();
    for f in snapshot {
        if f.file_path.is_empty() {
            return Err(Error::Data(format!(
                "function `{}` has an empty file path",
                f.function_id
            )));
        }
        if !seen.insert(f.function_id.as_str()) {
            return Err(Error::Data(format!(
                "duplicate function id `{}` in snapshot",
                f.function_id
            )));
        }
    }
    Ok(())
}

/// Embedded snapshot ready for repeated issue queries.
pub struct SnapshotIndex {
    store: VectorStore,
    texts: HashMap<String, String>,
    files: HashMap<String, String>,
}

impl SnapshotIndex {
    pub fn build(snapshot: &[FunctionRecord], provider: &dyn EmbeddingProvider) -> Result<Self> {
        check_snapshot(snapshot)?;
        let ids: Vec<String> = snapshot.iter().map(|f| f.function_id.clone()).collect();
        let texts: Vec<String> = snapshot
            .iter()
            .map(FunctionRecord::candidate_text)
            .collect();
        let dim = provider.dimension()?;
        let rows = provider.embed(&texts)?;
        let hash = store_hash(&provider.identity(), dim, Side::Code, &ids);
        let store = VectorStore::from_rows(dim, Side::Code, ids.clone(), rows, hash)?;
        Ok(Self {
            store,
            texts: ids.iter().cloned().zip(texts).collect(),
            files: snapshot
                .iter()
                .map(|f| (f.function_id.clone(), f.file_path.clone()))
                .collect(),
        })
    }

    pub fn files(&self) -> &HashMap<String, String> {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }
}

/// Top-`depth` functions for an issue, optionally reranked.
pub fn localize(
    instance_id: &str,
    issue: &str,
    index: &SnapshotIndex,
    provider: &dyn EmbeddingProvider,
    depth: usize,
    rerank: Option<(&RerankParams, &dyn RerankBackend)>,
) -> Result<RankedList> {
    if issue.trim().is_empty() {
        return Err(Error::Data(format!(
            "issue text of `{instance_id}` is empty"
        )));
    }
    let raw = provider
        .embed(&[issue.to_string()])?
        .pop()
        .ok_or_else(|| Error::Backend("provider returned no vector for the issue".into()))?;
    let q = Vector::normalized(raw)?;
    let ranked = SearchIndex::new(&index.store).search(instance_id, q.as_slice(), depth)?;
    match rerank {
        None => Ok(ranked),
        Some((params, backend)) => {
            Ok(sliding_rerank(issue, &ranked, &index.texts, params, backend)?.list)
        }
    }
}

/// Files in order of the first ranked function they contain.
pub fn file_rollup(ranked: &RankedList, files: &HashMap<String, String>) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for id in ranked.ids() {
        let f = files
            .get(id)
            .ok_or_else(|| Error::Reference(format!("function `{id}` has no file")))?;
        if seen.insert(f.as_str()) {
            out.push(f.clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub functions: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitMode {
    /// At least one gold item within the top k.
    Any,
    /// Every gold item within the top k.
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationKs {
    pub files: Vec<usize>,
    pub functions: Vec<usize>,
}

impl Default for LocalizationKs {
    fn default() -> Self {
        Self {
            files: vec![1, 2, 3],
            functions: vec![5, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceHits {
    pub instance_id: String,
    pub file_hits: Vec<bool>,
    pub function_hits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub mode: HitMode,
    pub file_accuracy: Vec<(usize, f64)>,
    pub function_accuracy: Vec<(usize, f64)>,
    pub per_instance: Vec<InstanceHits>,
}

impl LocalizationReport {
    pub fn render_table(&self) -> String {
        let mut head = String::new();
        let mut vals = String::new();
        for (k, a) in &self.file_accuracy {
            let _ = write!(head, " {:>12}", format!("File@{k}"));
            let _ = write!(vals, " {:>12.2}", 100.0 * a);
        }
        for (k, a) in &self.function_accuracy {
            let _ = write!(head, " {:>12}", format!("Function@{k}"));
            let _ = write!(vals, " {:>12.2}", 100.0 * a);
        }
        let mode = match self.mode {
            HitMode::Any => "any",
            HitMode::Complete => "complete",
        };
        format!("{:<10}{head}\n{mode:<10}{vals}\n", "hit mode")
    }
}

fn hit(ranked: &[String], gold: &BTreeSet<String>, k: usize, mode: HitMode) -> bool {
    if gold.is_empty() {
        return false;
    }
    let top = &ranked[..ranked.len().min(k)];
    match mode {
        HitMode::Any => top.iter().any(|x| gold.contains(x)),
        HitMode::Complete => gold.iter().all(|g| top.contains(g)),
    }
}

/// Scores predictions against resolved gold labels (see [`GoldLabels::resolve`]).
pub fn eval_localization(
    predictions: &[Prediction],
    gold: &[GoldLabels],
    ks: &LocalizationKs,
    mode: HitMode,
) -> Result<LocalizationReport> {
    let by_id: HashMap<&str, &GoldLabels> =
        gold.iter().map(|g| (g.instance_id.as_str(), g)).collect();
    let predicted: HashSet<&str> = predictions.iter().map(|p| p.instance_id.as_str()).collect();
    if let Some(g) = gold
        .iter()
        .find(|g| !predicted.contains(g.instance_id.as_str()))
    {
        return Err(Error::Reference(format!(
            "instance `{}` has no prediction",
            g.instance_id
        )));
    }
    let mut per_instance = Vec::with_capacity(predictions.len());
    for p in predictions {
        let g = by_id.get(p.instance_id.as_str()).ok_or_else(|| {
            Error::Reference(format!("instance `{}` has no gold labels", p.instance_id))
        })?;
        per_instance.push(InstanceHits {
            instance_id: p.instance_id.clone(),
            file_hits: ks
                .files
                .iter()
                .map(|&k| hit(&p.files, &g.gold_files, k, mode))
                .collect(),
            function_hits: ks
                .functions
                .iter()
                .map(|&k| hit(&p.functions, &g.gold_function_ids, k, mode))
                .collect(),
        });
    }
    let n = per_instance.len().max(1) as f64;
    let acc = |pick: &dyn Fn(&InstanceHits) -> bool| {
        per_instance.iter().filter(|h| pick(h)).count() as f64 / n
    };
    Ok(LocalizationReport {
        mode,
        file_accuracy: ks
            .files
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, acc(&|h| h.file_hits[j])))
            .collect(),
        function_accuracy: ks
            .functions
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, acc(&|h| h.function_hits[j])))
            .collect(),
        per_instance,
    })
}
