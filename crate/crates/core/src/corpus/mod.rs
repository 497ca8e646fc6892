//! Pair corpora: ingestion, validation, heuristic prefiltering and stats.

mod docstring;
mod prefilter;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::FieldHasher;

pub use docstring::extract_docstring;
pub use prefilter::{prefilter, scrub_text, PrefilterConfig, SyntaxCheck};

/// One (docstring, function) pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub text: String,
    pub code: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    NonEnglish,
    TooShort,
    BadUnicodeOrMarkup,
    UnparseableCode,
    Duplicate,
    Passed,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FilterReason::NonEnglish => "non_english",
            FilterReason::TooShort => "too_short",
            FilterReason::BadUnicodeOrMarkup => "bad_unicode_or_markup",
            FilterReason::UnparseableCode => "unparseable_code",
            FilterReason::Duplicate => "duplicate",
            FilterReason::Passed => "passed",
        };
        f.write_str(s)
    }
}

/// Audit-trail entry for one record. `kept` is derived from `reason`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub record_id: String,
    pub kept: bool,
    pub reason: FilterReason,
}

impl FilterDecision {
    pub fn new(record_id: impl Into<String>, reason: FilterReason) -> Self {
        Self {
            record_id: record_id.into(),
            kept: reason == FilterReason::Passed,
            reason,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub ingested: usize,
    pub kept: usize,
    pub dropped: usize,
    pub drops: BTreeMap<FilterReason, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub languages: BTreeMap<String, LanguageStats>,
}

impl CorpusStats {
    fn ingest(&mut self, language: &str) {
        let s = self.languages.entry(language.to_string()).or_default();
        s.ingested += 1;
        s.kept += 1;
    }

    fn drop_one(&mut self, language: &str, reason: FilterReason) {
        let s = self.languages.entry(language.to_string()).or_default();
        s.kept -= 1;
        s.dropped += 1;
        *s.drops.entry(reason).or_default() += 1;
    }

    /// Plain-text table: one row per language, one column per drop reason.
    pub fn render_table(&self) -> String {
        let reasons = [
            FilterReason::NonEnglish,
            FilterReason::TooShort,
            FilterReason::BadUnicodeOrMarkup,
            FilterReason::UnparseableCode,
            FilterReason::Duplicate,
        ];
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>9}",
            "language", "ingested", "kept", "dropped"
        );
        for r in reasons {
            out.push_str(&format!(" {:>22}", r.to_string()));
        }
        out.push('\n');
        for (lang, s) in &self.languages {
            out.push_str(&format!(
                "{:<12} {:>9} {:>9} {:>9}",
                lang, s.ingested, s.kept, s.dropped
            ));
            for r in reasons {
                out.push_str(&format!(" {:>22}", s.drops.get(&r).copied().unwrap_or(0)));
            }
            out.push('\n');
        }
        out
    }
}

/// Validated records plus the decisions taken on records that were dropped.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub records: Vec<PairRecord>,
    pub decisions: Vec<FilterDecision>,
    pub stats: CorpusStats,
}

impl Corpus {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn by_id(&self) -> HashMap<&str, &PairRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }
}

/// Stable id for records that arrive without one.
pub fn derive_id(language: &str, text: &str, code: &str) -> String {
    let h = FieldHasher::new().str(text).str(code).finish_hex();
    format!("{language}-{}", &h[..16])
}

/// Reads a pair file (one JSON object per line). `language` tags records that
/// carry no `language` key of their own.
///
/// Exact (text, code) duplicates collapse onto the lexicographically smallest
/// id; the others are recorded as `duplicate` decisions.
pub fn ingest_pairs(path: &Path, language: &str) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        raw.push(parse_line(path, idx + 1, &line, language)?);
    }
    Ok(dedupe(raw))
}

fn parse_line(path: &Path, line: usize, text: &str, language: &str) -> Result<PairRecord> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;

    let string_field = |name: &'static str, required: bool| -> Result<Option<String>> {
        match obj.get(name) {
            None | Some(serde_json::Value::Null) if required => Err(Error::MissingField {
                path: path.to_path_buf(),
                line,
                field: name,
            }),
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(parse_err(format!("field `{name}` must be a string"))),
        }
    };

    let text = string_field("text", true)?.unwrap_or_default();
    let code = string_field("code", true)?.unwrap_or_default();
    let language = string_field("language", false)?.unwrap_or_else(|| language.to_string());
    let id = match string_field("id", false)? {
        Some(id) if !id.is_empty() => id,
        _ => derive_id(&language, &text, &code),
    };
    Ok(PairRecord {
        id,
        text,
        code,
        language,
        repo: string_field("repo", false)?,
        path: string_field("path", false)?,
    })
}

fn dedupe(raw: Vec<PairRecord>) -> Corpus {
    let mut stats = CorpusStats::default();
    let mut winner: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, r) in raw.iter().enumerate() {
        stats.ingest(&r.language);
        winner
            .entry((r.text.as_str(), r.code.as_str()))
            .and_modify(|w| {
                if raw[*w].id > r.id {
                    *w = i;
                }
            })
            .or_insert(i);
    }

    let mut keep = vec![false; raw.len()];
    for &i in winner.values() {
        keep[i] = true;
    }
    let mut decisions = Vec::new();
    for (i, r) in raw.iter().enumerate() {
        if !keep[i] {
            stats.drop_one(&r.language, FilterReason::Duplicate);
            decisions.push(FilterDecision::new(r.id.clone(), FilterReason::Duplicate));
        }
    }
    decisions.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let records = raw
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    Corpus {
        records,
        decisions,
        stats,
    }
}

/// Checks the id-uniqueness invariant over kept records.
pub fn ensure_unique_ids(corpus: &Corpus) -> Result<()> {
    let mut seen = HashMap::new();
    for r in &corpus.records {
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::Data(format!(
                "duplicate record id `{}` with differing content",
                r.id
            )));
        }
    }
    Ok(())
}

/// Applies [`prefilter`] to every record in parallel and folds the result into
/// the corpus. Decisions are merged in record-id order.
pub fn prefilter_corpus(corpus: Corpus, rules: &PrefilterConfig) -> Result<Corpus> {
    let verdicts: Vec<FilterDecision> = corpus
        .records
        .par_iter()
        .map(|r| prefilter(r, rules))
        .collect::<Result<_>>()?;

    let Corpus {
        records,
        mut decisions,
        mut stats,
    } = corpus;
    let mut kept = Vec::with_capacity(records.len());
    for (record, verdict) in records.into_iter().zip(verdicts) {
        if verdict.kept {
            kept.push(record);
        } else {
            stats.drop_one(&record.language, verdict.reason);
            decisions.push(verdict);
        }
    }
    decisions.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(Corpus {
        records: kept,
        decisions,
        stats,
    })
}
