use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FilterDecision, FilterReason, PairRecord};
use crate::error::{Error, Result};

/// How code validity is decided.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "command")]
pub enum SyntaxCheck {
    /// Balanced brackets and string delimiters.
    #[default]
    Balanced,
    /// External parser: code on stdin; exit 0 = parses, exit 1 = does not.
    /// Any other outcome is a hook failure.
    Command(Vec<String>),
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrefilterConfig {
    /// Minimum share of ASCII letters among alphabetic characters.
    pub min_english_ratio: f64,
    /// Minimum number of whitespace-separated tokens in the text.
    pub min_text_tokens: usize,
    pub syntax: SyntaxCheck,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        Self {
            min_english_ratio: 0.90,
            min_text_tokens: 3,
            syntax: SyntaxCheck::Balanced,
        }
    }
}

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?|ftp)://\S+|\bwww\.\S+").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z][^<>]*>").unwrap());
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(?:[A-Za-z]+|#[0-9]+|#x[0-9A-Fa-f]+);").unwrap());

fn is_bad_char(c: char) -> bool {
    c == '\u{FFFD}'
        || (c.is_control() && !matches!(c, '\n' | '\t' | '\r'))
        || matches!(c, '\u{200B}'..='\u{200F}' | '\u{2028}'..='\u{202E}' | '\u{FEFF}')
        || matches!(c, '\u{E000}'..='\u{F8FF}')
}

/// Removes URLs, markup tags, HTML entities and bad Unicode characters.
/// Returns the scrubbed text and whether anything was removed.
pub fn scrub_text(text: &str) -> (String, bool) {
    let a = URL.replace_all(text, " ");
    let b = TAG.replace_all(&a, " ");
    let c = ENTITY.replace_all(&b, " ");
    let out: String = c
        .chars()
        .map(|ch| if is_bad_char(ch) { ' ' } else { ch })
        .collect();
    let changed = out != text;
    (out, changed)
}

fn english_ok(text: &str, min_ratio: f64) -> bool {
    let (ascii, total) = text
        .chars()
        .filter(|c| c.is_alphabetic())
        .fold((0usize, 0usize), |(a, t), c| {
            (a + c.is_ascii_alphabetic() as usize, t + 1)
        });
    total > 0 && ascii as f64 / total as f64 >= min_ratio
}

/// Heuristic keep/drop decision for one record. Checks run in order: English,
/// length, markup scrub, code syntax. Long texts are never dropped.
///
/// A text that is short only because the scrub removed URLs or markup is
/// reported as `bad_unicode_or_markup` rather than `too_short`.
pub fn prefilter(record: &PairRecord, rules: &PrefilterConfig) -> Result<FilterDecision> {
    let reason = decide(record, rules)?;
    Ok(FilterDecision::new(record.id.clone(), reason))
}

fn decide(record: &PairRecord, rules: &PrefilterConfig) -> Result<FilterReason> {
    if !english_ok(&record.text, rules.min_english_ratio) {
        return Ok(FilterReason::NonEnglish);
    }
    let (scrubbed, changed) = scrub_text(&record.text);
    let raw_tokens = record.text.split_whitespace().count();
    let kept_tokens = scrubbed.split_whitespace().count();
    if raw_tokens < rules.min_text_tokens && !changed {
        return Ok(FilterReason::TooShort);
    }
    if kept_tokens < rules.min_text_tokens {
        return Ok(FilterReason::BadUnicodeOrMarkup);
    }
    if record.code.trim().is_empty() {
        return Ok(FilterReason::UnparseableCode);
    }
    let parses = match &rules.syntax {
        SyntaxCheck::Balanced => balanced(&record.code, &record.language),
        SyntaxCheck::Command(cmd) => run_hook(cmd, &record.code, &record.language)?,
        SyntaxCheck::Disabled => true,
    };
    Ok(if parses {
        FilterReason::Passed
    } else {
        FilterReason::UnparseableCode
    })
}

fn run_hook(cmd: &[String], code: &str, language: &str) -> Result<bool> {
    let (prog, args) = cmd
        .split_first()
        .ok_or_else(|| Error::SyntaxHook("empty parser command".into()))?;
    let mut child = Command::new(prog)
        .args(args)
        .env("CODECURATE_LANGUAGE", language)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| Error::SyntaxHook(format!("cannot spawn `{prog}`: {e}")))?;
    if let Some(mut stdin) = child.stdin.take() {
        // a parser that exits before reading everything is still allowed to answer
        let _ = stdin.write_all(code.as_bytes());
    }
    let status = child
        .wait()
        .map_err(|e| Error::SyntaxHook(format!("`{prog}`: {e}")))?;
    match status.code() {
        Some(0) => Ok(true),
        Some(1) => Ok(false),
        Some(c) => Err(Error::SyntaxHook(format!(
            "`{prog}` exited with status {c}"
        ))),
        None => Err(Error::SyntaxHook(format!("`{prog}` terminated by signal"))),
    }
}

/// Balanced `()`, `[]`, `{}` and closed string literals, skipping comments.
/// Comment syntax follows the language tag (`#` for python/ruby/shell-like
/// languages, `//` and `/* */` for C-family ones, both for php).
pub(crate) fn balanced(code: &str, language: &str) -> bool {
    let lang = language.to_ascii_lowercase();
    let hash_comments = matches!(
        lang.as_str(),
        "python" | "ruby" | "php" | "shell" | "bash" | "r" | "perl"
    );
    let slash_comments = !matches!(lang.as_str(), "python" | "ruby" | "shell" | "bash" | "r");
    let single_quote_strings = lang != "rust";
    let triple = lang == "python";

    let chars: Vec<char> = code.chars().collect();
    let mut stack = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match c {
            '#' if hash_comments => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '/' if slash_comments && next == Some('/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '/' if slash_comments && next == Some('*') => {
                i += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return false;
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                continue;
            }
            '"' | '\'' | '`' => {
                if c == '\'' && !single_quote_strings {
                    i += 1;
                    continue;
                }
                match skip_string(&chars, i, triple) {
                    Some(end) => {
                        i = end;
                        continue;
                    }
                    None => return false,
                }
            }
            '(' | '[' | '{' => stack.push(c),
            ')' | ']' | '}' => {
                let open = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                if stack.pop() != Some(open) {
                    return false;
                }
            }
            _ => {}
        }
        i += 1;
    }
    stack.is_empty()
}

/// Returns the index just past the string literal opening at `start`.
fn skip_string(chars: &[char], start: usize, allow_triple: bool) -> Option<usize> {
    let q = chars[start];
    let is_triple =
        allow_triple && chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let multiline = is_triple || q == '`';
    let mut i = start + if is_triple { 3 } else { 1 };
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            i += 2;
            continue;
        }
        if c == '\n' && !multiline {
            return None;
        }
        if c == q {
            if !is_triple {
                return Some(i + 1);
            }
            if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                return Some(i + 3);
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, code: &str) -> PairRecord {
        PairRecord {
            id: "r".into(),
            text: text.into(),
            code: code.into(),
            language: "python".into(),
            repo: None,
            path: None,
        }
    }

    fn reason(text: &str, code: &str) -> FilterReason {
        prefilter(&rec(text, code), &PrefilterConfig::default())
            .unwrap()
            .reason
    }

    #[test]
    fn plain_english_docstring_passes() {
        assert_eq!(
            reason(
                "Returns the sum of two integers",
                "def add(a, b):\n    return a + b\n"
            ),
            FilterReason::Passed
        );
    }

    #[test]
    fn markup_only_text_is_bad_markup() {
        assert_eq!(
            reason("<p>http://x.y</p>", "def f(): pass"),
            FilterReason::BadUnicodeOrMarkup
        );
    }

    #[test]
    fn long_texts_are_kept() {
        let text = vec!["word"; 300].join(" ");
        assert_eq!(reason(&text, "def f(): pass"), FilterReason::Passed);
    }

    #[test]
    fn non_english_and_short() {
        assert_eq!(
            reason("Возвращает сумму двух чисел", "def f(): pass"),
            FilterReason::NonEnglish
        );
        assert_eq!(
            reason("12 34 56", "def f(): pass"),
            FilterReason::NonEnglish
        );
        assert_eq!(
            reason("Adds numbers", "def f(): pass"),
            FilterReason::TooShort
        );
        assert_eq!(
            reason("Adds numbers \u{FFFD}\u{FFFD}", "def f(): pass"),
            FilterReason::BadUnicodeOrMarkup
        );
    }

    #[test]
    fn mostly_ascii_with_accent_passes() {
        // 1 of 30 letters non-ASCII
        assert_eq!(
            reason("Computes the café checksum for inputs", "def f(): pass"),
            FilterReason::Passed
        );
    }

    #[test]
    fn unbalanced_code_is_unparseable() {
        assert_eq!(
            reason("Returns the sum of two integers", "def f(a, b:\n  return a"),
            FilterReason::UnparseableCode
        );
        assert_eq!(
            reason("Returns the sum of two integers", "x = 'open"),
            FilterReason::UnparseableCode
        );
        assert_eq!(
            reason("Returns the sum of two integers", "   "),
            FilterReason::UnparseableCode
        );
    }

    #[test]
    fn balanced_ignores_comments_and_strings() {
        assert!(balanced(
            "def f():\n    # don't ( panic\n    return \"(\"\n",
            "python"
        ));
        assert!(balanced(
            "def f():\n    \"\"\"It's a doc ( \"\"\"\n    return 1\n",
            "python"
        ));
        assert!(balanced(
            "fn f<'a>(x: &'a str) -> &'a str { x } // ]",
            "rust"
        ));
        assert!(balanced(
            "function f() { /* ( */ return `a${b}`; }",
            "javascript"
        ));
        assert!(!balanced("function f() { return [1, 2; }", "javascript"));
        assert!(!balanced("/* never closed", "java"));
    }

    #[test]
    fn decisions_are_pure() {
        let r = rec(
            "Returns the sum of two integers",
            "def add(a, b): return a + b",
        );
        let cfg = PrefilterConfig::default();
        assert_eq!(prefilter(&r, &cfg).unwrap(), prefilter(&r, &cfg).unwrap());
    }

    #[cfg(unix)]
    #[test]
    fn external_hook_verdicts_and_failures() {
        let mut cfg = PrefilterConfig::default();
        let r = rec(
            "Returns the sum of two integers",
            "def add(a, b): return a + b",
        );

        cfg.syntax = SyntaxCheck::Command(vec![
            "sh".into(),
            "-c".into(),
            "cat >/dev/null; exit 0".into(),
        ]);
        assert_eq!(prefilter(&r, &cfg).unwrap().reason, FilterReason::Passed);

        cfg.syntax = SyntaxCheck::Command(vec![
            "sh".into(),
            "-c".into(),
            "cat >/dev/null; exit 1".into(),
        ]);
        assert_eq!(
            prefilter(&r, &cfg).unwrap().reason,
            FilterReason::UnparseableCode
        );

        cfg.syntax = SyntaxCheck::Command(vec!["sh".into(), "-c".into(), "exit 7".into()]);
        assert!(matches!(prefilter(&r, &cfg), Err(Error::SyntaxHook(_))));

        cfg.syntax = SyntaxCheck::Command(vec!["/definitely/not/a/parser".into()]);
        assert!(matches!(prefilter(&r, &cfg), Err(Error::SyntaxHook(_))));
    }
}
