//! Wire formats shared with external model backends.
//!
//! Embedding: `{probe: true}` -> `{dimension}`; `{texts}` -> `{embeddings}`.
//! Rerank: `{query, candidates: [{identifier, text}]}` -> `{ranking: [int]}`.
//! Judge: `{query, code}` -> `{answer: "yes" | "no"}`.
//! Any endpoint may answer `{error: string}` instead.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRequest {
    pub probe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub dimension: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub identifier: u32,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub query: String,
    pub candidates: Vec<RerankCandidate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub ranking: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub query: String,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub answer: String,
}

/// Returns the backend's error message if `v` is an error object.
pub fn error_message(v: &Value) -> Option<String> {
    let obj = v.as_object()?;
    match obj.get("error")? {
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn object<'a>(
    v: &'a Value,
    what: &str,
    problems: &mut Vec<String>,
) -> Option<&'a serde_json::Map<String, Value>> {
    let o = v.as_object();
    if o.is_none() {
        problems.push(format!("{what}: expected an object"));
    }
    o
}

/// Schema check for a probe response. Returns the list of violations.
pub fn validate_probe_response(v: &Value) -> Vec<String> {
    let mut p = Vec::new();
    if let Some(o) = object(v, "probe response", &mut p) {
        match o.get("dimension").and_then(Value::as_u64) {
            Some(d) if d > 0 => {}
            _ => p.push("probe response: `dimension` must be a positive integer".into()),
        }
    }
    p
}

/// Schema check for an embed response to a request with `n_inputs` texts.
/// All vectors must share one length.
pub fn validate_embed_response(v: &Value, n_inputs: usize) -> Vec<String> {
    let mut p = Vec::new();
    let Some(o) = object(v, "embed response", &mut p) else {
        return p;
    };
    let Some(rows) = o.get("embeddings").and_then(Value::as_array) else {
        p.push("embed response: `embeddings` must be an array".into());
        return p;
    };
    if rows.len() != n_inputs {
        p.push(format!(
            "embed response: {} vectors for {} inputs",
            rows.len(),
            n_inputs
        ));
    }
    let mut width = None;
    for (i, row) in rows.iter().enumerate() {
        match row.as_array() {
            Some(vals) if vals.iter().all(Value::is_number) => {
                if vals.is_empty() {
                    p.push(format!("embed response: vector {i} is empty"));
                }
                if *width.get_or_insert(vals.len()) != vals.len() {
                    p.push(format!(
                        "embed response: vector {i} has length {} (expected {})",
                        vals.len(),
                        width.unwrap()
                    ));
                }
            }
            _ => p.push(format!(
                "embed response: vector {i} is not an array of numbers"
            )),
        }
    }
    p
}

/// Schema check for a rerank response: `ranking` must be a list of integers.
/// Whether it is a permutation is the caller's concern (it gets repaired).
pub fn validate_rerank_response(v: &Value) -> Vec<String> {
    let mut p = Vec::new();
    if let Some(o) = object(v, "rerank response", &mut p) {
        match o.get("ranking").and_then(Value::as_array) {
            Some(items) if items.iter().all(|x| x.as_i64().is_some()) => {}
            _ => p.push("rerank response: `ranking` must be an array of integers".into()),
        }
    }
    p
}

pub fn validate_judge_response(v: &Value) -> Vec<String> {
    let mut p = Vec::new();
    if let Some(o) = object(v, "judge response", &mut p) {
        match o.get("answer").and_then(Value::as_str) {
            Some("yes") | Some("no") => {}
            _ => p.push("judge response: `answer` must be \"yes\" or \"no\"".into()),
        }
    }
    p
}
