use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backend::JudgeBackend;
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;

/// Prompt shown to model judges; `{query}` and `{code}` are substituted by the provider.
pub const JUDGE_PROMPT_V1: &str = include_str!("../../resources/judge_prompt_v1.txt");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditItem {
    pub corpus: String,
    pub language: String,
    pub query: String,
    pub code: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

/// Leading yes/no word, case-insensitive, surrounding punctuation ignored.
pub fn parse_verdict(answer: &str) -> Verdict {
    let word: String = answer
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Unparseable,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Pairs sampled per (corpus, language) group and seed.
    pub sample_size: usize,
    pub seeds: usize,
    pub base_seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            sample_size: 100,
            seeds: 3,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub corpus: String,
    pub language: String,
    /// Percent judged correct, one entry per seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub judged: usize,
    pub unparseable: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub failures: usize,
}

impl AuditReport {
    pub fn is_partial(&self) -> bool {
        self.failures > 0
    }

    /// One line per corpus, one column per language plus the language average.
    pub fn render_table(&self) -> String {
        let langs: Vec<&str> = {
            let mut l: Vec<&str> = self.rows.iter().map(|r| r.language.as_str()).collect();
            l.sort();
            l.dedup();
            l
        };
        let mut by_corpus: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        for r in &self.rows {
            by_corpus
                .entry(&r.corpus)
                .or_default()
                .insert(&r.language, r.mean);
        }
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "Dataset");
        for l in &langs {
            let _ = write!(out, " {l:>10}");
        }
        let _ = writeln!(out, " {:>10}", "Avg");
        for (corpus, vals) in by_corpus {
            let _ = write!(out, "{corpus:<16}");
            for l in &langs {
                match vals.get(l) {
                    Some(v) => {
                        let _ = write!(out, " {v:>10.1}");
                    }
                    None => {
                        let _ = write!(out, " {:>10}", "-");
                    }
                }
            }
            let avg = vals.values().sum::<f64>() / vals.len() as f64;
            let _ = writeln!(out, " {avg:>10.1}");
        }
        if self.failures > 0 {
            let _ = writeln!(out, "partial report: {} judge calls failed", self.failures);
        }
        out
    }
}

/// Samples each (corpus, language) group per seed and asks the judge about
/// every sampled pair. Percentages are over pairs that got an answer;
/// unparseable answers count as "no".
pub fn audit_pairs(
    items: &[AuditItem],
    judge: &dyn JudgeBackend,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    if cfg.sample_size == 0 || cfg.seeds == 0 {
        return Err(Error::param(
            "audit sample size and seed count must be at least 1",
        ));
    }
    if items.is_empty() {
        return Err(Error::param("nothing to audit"));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&AuditItem>> = BTreeMap::new();
    for it in items {
        groups
            .entry((&it.corpus, &it.language))
            .or_default()
            .push(it);
    }

    let mut report = AuditReport::default();
    for ((corpus, language), members) in groups {
        let mut row = AuditRow {
            corpus: corpus.to_string(),
            language: language.to_string(),
            per_seed: Vec::with_capacity(cfg.seeds),
            mean: 0.0,
            std: 0.0,
            judged: 0,
            unparseable: 0,
            failures: 0,
        };
        for s in 0..cfg.seeds {
            let seed = cfg.base_seed.wrapping_add(s as u64);
            let mut rng = keyed_rng(seed, "audit", &[corpus.as_bytes(), language.as_bytes()]);
            let take = cfg.sample_size.min(members.len());
            let mut picked = index::sample(&mut rng, members.len(), take).into_vec();
            picked.sort_unstable();
            let (mut yes, mut answered) = (0usize, 0usize);
            for i in picked {
                let it = members[i];
                match judge.judge(&it.query, &it.code) {
                    Ok(answer) => {
                        answered += 1;
                        match parse_verdict(&answer) {
                            Verdict::Yes => yes += 1,
                            Verdict::No => {}
                            Verdict::Unparseable => {
                                row.unparseable += 1;
                                log::warn!("unparseable judge answer {answer:?}, counted as no");
                            }
                        }
                    }
                    Err(e) => {
                        row.failures += 1;
                        log::warn!("judge call failed: {e}");
                    }
                }
            }
            row.judged += answered;
            if answered > 0 {
                row.per_seed.push(100.0 * yes as f64 / answered as f64);
            }
        }
        if !row.per_seed.is_empty() {
            let n = row.per_seed.len() as f64;
            row.mean = row.per_seed.iter().sum::<f64>() / n;
            row.std = (row
                .per_seed
                .iter()
                .map(|v| (v - row.mean).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
        }
        report.failures += row.failures;
        report.rows.push(row);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Always;
    impl JudgeBackend for Always {
        fn judge(&self, _: &str, _: &str) -> Result<String> {
            Ok("Yes.".into())
        }
    }

    struct Substring;
    impl JudgeBackend for Substring {
        fn judge(&self, q: &str, c: &str) -> Result<String> {
            Ok(if c.contains(q) { "yes" } else { "no" }.into())
        }
    }

    struct Broken;
    impl JudgeBackend for Broken {
        fn judge(&self, q: &str, _: &str) -> Result<String> {
            if q.ends_with('0') {
                Err(Error::Backend("down".into()))
            } else {
                Ok("maybe".into())
            }
        }
    }

    fn items(n: usize, matching: usize) -> Vec<AuditItem> {
        (0..n)
            .map(|i| AuditItem {
                corpus: "csn".into(),
                language: "python".into(),
                query: format!("query{i}"),
                code: if i < matching {
                    format!("# query{i}\npass")
                } else {
                    "pass".into()
                },
            })
            .collect()
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict(" Yes, it does"), Verdict::Yes);
        assert_eq!(parse_verdict("NO."), Verdict::No);
        assert_eq!(parse_verdict("nope"), Verdict::Unparseable);
        assert_eq!(parse_verdict(""), Verdict::Unparseable);
    }

    #[test]
    fn always_yes_is_full_marks() {
        let r = audit_pairs(&items(10, 0), &Always, &AuditConfig::default()).unwrap();
        assert_eq!(r.rows[0].mean, 100.0);
    }

    #[test]
    fn substring_judge_on_seven_of_ten() {
        let cfg = AuditConfig {
            sample_size: 10,
            seeds: 3,
            base_seed: 5,
        };
        let r = audit_pairs(&items(10, 7), &Substring, &cfg).unwrap();
        assert_eq!(r.rows[0].per_seed, vec![70.0; 3]);
        assert_eq!(r.rows[0].std, 0.0);
        assert!(r.render_table().contains("70.0"));
    }

    #[test]
    fn failures_give_partial_report() {
        let cfg = AuditConfig {
            sample_size: 10,
            seeds: 1,
            base_seed: 0,
        };
        let r = audit_pairs(&items(10, 0), &Broken, &cfg).unwrap();
        assert_eq!(r.failures, 1);
        assert_eq!(r.rows[0].unparseable, 9);
        assert_eq!(r.rows[0].mean, 0.0);
        assert!(r.render_table().contains("partial"));
    }

    #[test]
    fn prompt_has_slots() {
        assert!(JUDGE_PROMPT_V1.contains("{query}") && JUDGE_PROMPT_V1.contains("{code}"));
    }
}
