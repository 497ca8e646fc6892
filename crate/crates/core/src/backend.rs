//! Transports to external model backends and the backend traits consumed by
//! reranking and auditing.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::embedder::{dot, stub_embed};
use crate::error::{Error, Result};
use crate::protocol::{
    self, JudgeRequest, JudgeResponse, RerankCandidate, RerankRequest, RerankResponse,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Embed,
    Rerank,
    Judge,
}

impl Route {
    pub fn path(self) -> &'static str {
        match self {
            Route::Embed => "/embed",
            Route::Rerank => "/rerank",
            Route::Judge => "/judge",
        }
    }
}

/// Request/response channel carrying one JSON object each way.
pub trait Transport: Send + Sync {
    fn call(&self, route: Route, request: &Value) -> Result<Value>;
    fn describe(&self) -> String;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn call(&self, route: Route, request: &Value) -> Result<Value> {
        (**self).call(route, request)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub trait TransportExt: Transport {
    fn call_typed<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        route: Route,
        req: &Req,
    ) -> Result<Resp> {
        let body = serde_json::to_value(req).map_err(|e| Error::Backend(e.to_string()))?;
        let value = self.call(route, &body)?;
        if let Some(msg) = protocol::error_message(&value) {
            return Err(Error::Backend(format!(
                "{} {}: {msg}",
                self.describe(),
                route.path()
            )));
        }
        serde_json::from_value(value).map_err(|e| {
            Error::Backend(format!(
                "{} {}: malformed response: {e}",
                self.describe(),
                route.path()
            ))
        })
    }
}

impl<T: Transport + ?Sized> TransportExt for T {}

/// HTTP POST of JSON bodies to `<base>/embed`, `<base>/rerank`, `<base>/judge`.
pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, route: Route, request: &Value) -> Result<Value> {
        let url = format!("{}{}", self.base, route.path());
        match self.agent.post(&url).send_json(request) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| Error::Backend(format!("{url}: invalid JSON body: {e}"))),
            // error statuses may still carry a protocol error object
            Err(ureq::Error::Status(code, resp)) => match resp.into_json::<Value>() {
                Ok(v) if protocol::error_message(&v).is_some() => Ok(v),
                _ => Err(Error::Backend(format!("{url}: HTTP {code}"))),
            },
            Err(e) => Err(Error::Backend(format!("{url}: {e}"))),
        }
    }

    fn describe(&self) -> String {
        self.base.clone()
    }
}

struct ProcessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Spawned process exchanging one JSON object per line on stdin/stdout.
pub struct ProcessTransport {
    command: Vec<String>,
    io: Mutex<ProcessIo>,
}

impl ProcessTransport {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (prog, args) = command
            .split_first()
            .ok_or_else(|| Error::Backend("empty backend command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot spawn `{prog}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_vec(),
            io: Mutex::new(ProcessIo {
                child,
                stdin,
                stdout,
            }),
        })
    }
}

impl Transport for ProcessTransport {
    fn call(&self, _route: Route, request: &Value) -> Result<Value> {
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::Backend("backend process lock poisoned".into()))?;
        let mut line = serde_json::to_string(request).map_err(|e| Error::Backend(e.to_string()))?;
        line.push('\n');
        io.stdin
            .write_all(line.as_bytes())
            .and_then(|_| io.stdin.flush())
            .map_err(|e| Error::Backend(format!("{}: write failed: {e}", self.describe())))?;
        let mut reply = String::new();
        let n = io
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Backend(format!("{}: read failed: {e}", self.describe())))?;
        if n == 0 {
            return Err(Error::Backend(format!(
                "{}: process closed its output",
                self.describe()
            )));
        }
        serde_json::from_str(&reply)
            .map_err(|e| Error::Backend(format!("{}: invalid JSON line: {e}", self.describe())))
    }

    fn describe(&self) -> String {
        format!("cmd:{}", self.command.join(" "))
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

/// Opens `http://...` / `https://...` or `cmd:<program> <args...>` endpoints.
pub fn connect(endpoint: &str, timeout: Duration) -> Result<Box<dyn Transport>> {
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        Ok(Box::new(HttpTransport::new(endpoint, timeout)))
    } else if let Some(cmd) = endpoint.strip_prefix("cmd:") {
        let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        Ok(Box::new(ProcessTransport::spawn(&parts)?))
    } else {
        Err(Error::Usage(format!(
            "unrecognized backend endpoint `{endpoint}` (expected http://..., https://... or cmd:...)"
        )))
    }
}

/// What a reranking backend produced for one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendRanking {
    Identifiers(Vec<i64>),
    /// Free-form generation such as `[2] > [1] > [3]`.
    Text(String),
}

pub trait RerankBackend: Send + Sync {
    fn rank(&self, query: &str, candidates: &[RerankCandidate]) -> Result<BackendRanking>;
}

/// Returns the window unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityReranker;

impl RerankBackend for IdentityReranker {
    fn rank(&self, _query: &str, candidates: &[RerankCandidate]) -> Result<BackendRanking> {
        Ok(BackendRanking::Identifiers(
            candidates.iter().map(|c| c.identifier as i64).collect(),
        ))
    }
}

/// Orders candidates by stub-embedding cosine to the query (ties by identifier).
#[derive(Clone, Copy, Debug)]
pub struct StubReranker {
    pub dim: usize,
}

impl RerankBackend for StubReranker {
    fn rank(&self, query: &str, candidates: &[RerankCandidate]) -> Result<BackendRanking> {
        let q = stub_embed(query, self.dim)?;
        let mut scored = candidates
            .iter()
            .map(|c| {
                Ok((
                    dot(q.as_slice(), stub_embed(&c.text, self.dim)?.as_slice()),
                    c.identifier,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(BackendRanking::Identifiers(
            scored.into_iter().map(|(_, id)| id as i64).collect(),
        ))
    }
}

pub struct RemoteReranker<T: Transport>(pub T);

impl<T: Transport> RerankBackend for RemoteReranker<T> {
    fn rank(&self, query: &str, candidates: &[RerankCandidate]) -> Result<BackendRanking> {
        let resp: RerankResponse = self.0.call_typed(
            Route::Rerank,
            &RerankRequest {
                query: query.to_string(),
                candidates: candidates.to_vec(),
            },
        )?;
        Ok(BackendRanking::Identifiers(resp.ranking))
    }
}

/// Answers whether `code` fully answers `query`; the raw answer is parsed by
/// the caller.
pub trait JudgeBackend: Send + Sync {
    fn judge(&self, query: &str, code: &str) -> Result<String>;
}

/// Says "yes" when the stub-embedding cosine reaches `threshold`.
#[derive(Clone, Copy, Debug)]
pub struct StubJudge {
    pub dim: usize,
    pub threshold: f32,
}

impl JudgeBackend for StubJudge {
    fn judge(&self, query: &str, code: &str) -> Result<String> {
        let s = dot(
            stub_embed(query, self.dim)?.as_slice(),
            stub_embed(code, self.dim)?.as_slice(),
        );
        Ok(if s >= self.threshold { "yes" } else { "no" }.to_string())
    }
}

pub struct RemoteJudge<T: Transport>(pub T);

impl<T: Transport> JudgeBackend for RemoteJudge<T> {
    fn judge(&self, query: &str, code: &str) -> Result<String> {
        let resp: JudgeResponse = self.0.call_typed(
            Route::Judge,
            &JudgeRequest {
                query: query.to_string(),
                code: code.to_string(),
            },
        )?;
        Ok(resp.answer)
    }
}
