//! Stub backend answering the wire protocols on stdin/stdout, one JSON object per line.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use crate::backend::{BackendRanking, JudgeBackend, RerankBackend, StubJudge, StubReranker};
use crate::embedder::{EmbeddingProvider, StubProvider};
use crate::protocol::{EmbedRequest, JudgeRequest, RerankRequest};

pub struct StubServer {
    pub dim: usize,
    pub judge_threshold: f32,
}

impl StubServer {
    /// Route is inferred from the request shape.
    pub fn handle(&self, request: &Value) -> Value {
        let Some(obj) = request.as_object() else {
            return json!({"error": "request must be a JSON object"});
        };
        if obj.get("probe").and_then(Value::as_bool) == Some(true) {
            return json!({"dimension": self.dim});
        }
        if obj.contains_key("texts") {
            return match serde_json::from_value::<EmbedRequest>(request.clone()) {
                Ok(req) => match (StubProvider { dim: self.dim }).embed(&req.texts) {
                    Ok(rows) => json!({"embeddings": rows}),
                    Err(e) => json!({"error": e.to_string()}),
                },
                Err(e) => json!({"error": format!("invalid embed request: {e}")}),
            };
        }
        if obj.contains_key("candidates") {
            return match serde_json::from_value::<RerankRequest>(request.clone()) {
                Ok(req) => match (StubReranker { dim: self.dim }).rank(&req.query, &req.candidates)
                {
                    Ok(BackendRanking::Identifiers(r)) => json!({"ranking": r}),
                    Ok(BackendRanking::Text(t)) => {
                        json!({"error": format!("unexpected text ranking {t}")})
                    }
                    Err(e) => json!({"error": e.to_string()}),
                },
                Err(e) => json!({"error": format!("invalid rerank request: {e}")}),
            };
        }
        if obj.contains_key("code") {
            return match serde_json::from_value::<JudgeRequest>(request.clone()) {
                Ok(req) => {
                    let judge = StubJudge {
                        dim: self.dim,
                        threshold: self.judge_threshold,
                    };
                    match judge.judge(&req.query, &req.code) {
                        Ok(a) => json!({"answer": a}),
                        Err(e) => json!({"error": e.to_string()}),
                    }
                }
                Err(e) => json!({"error": format!("invalid judge request: {e}")}),
            };
        }
        if obj.contains_key("query") {
            return json!({"error": "invalid request: `query` needs `candidates` (rerank) or `code` (judge)"});
        }
        json!({"error": "unrecognized request"})
    }

    pub fn serve(&self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = match serde_json::from_str::<Value>(&line) {
                Ok(v) => self.handle(&v),
                Err(e) => json!({"error": format!("invalid JSON: {e}")}),
            };
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{
        validate_embed_response, validate_judge_response, validate_probe_response,
        validate_rerank_response,
    };

    #[test]
    fn responses_are_schema_valid() {
        let s = StubServer {
            dim: 16,
            judge_threshold: 0.3,
        };
        assert!(validate_probe_response(&s.handle(&json!({"probe": true}))).is_empty());
        assert!(validate_embed_response(&s.handle(&json!({"texts": ["a b", "c"]})), 2).is_empty());
        let r = s.handle(&json!({"query": "q", "candidates": [{"identifier": 1, "text": "x"}, {"identifier": 2, "text": "q"}]}));
        assert!(validate_rerank_response(&r).is_empty());
        assert!(
            validate_judge_response(&s.handle(&json!({"query": "sum", "code": "sum"}))).is_empty()
        );
        assert!(s.handle(&json!({"query": "q"})).get("error").is_some());
        assert!(s
            .handle(&json!({"query": "q", "candidates": 3}))
            .get("error")
            .is_some());
    }

    #[test]
    fn line_protocol() {
        let s = StubServer {
            dim: 8,
            judge_threshold: 0.3,
        };
        let mut out = Vec::new();
        s.serve(&b"{\"probe\":true}\n\nnot json\n"[..], &mut out)
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"dimension":8}"#);
        assert!(lines[1].contains("error"));
    }
}
