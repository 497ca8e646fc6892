//! Unit-norm embeddings of texts and codes behind a pluggable provider.

mod store;
mod stub;

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::backend::{Route, Transport, TransportExt};
use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::hashing::FieldHasher;
use crate::protocol::{EmbedRequest, EmbedResponse, ProbeRequest, ProbeResponse};

pub(crate) use store::Reader;
pub use store::{Side, VectorStore};
pub use stub::{stub_embed, stub_features};

/// Dot product accumulated in f64 in index order, rounded once to f32.
///
/// Every similarity in the crate goes through this function so that scores
/// computed along different paths compare bit-for-bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc as f32
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f32>);

impl Vector {
    /// L2-normalizes `values`. Zero or non-finite vectors are rejected.
    pub fn normalized(values: Vec<f32>) -> Result<Self> {
        let norm = values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Data("vector has zero or non-finite norm".into()));
        }
        Ok(Vector(
            values
                .into_iter()
                .map(|v| (v as f64 / norm) as f32)
                .collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &Vector) -> f32 {
        dot(&self.0, &other.0)
    }
}

/// Source of raw (not necessarily normalized) embeddings.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity used in content hashes (model name, endpoint, ...).
    fn identity(&self) -> String;
    /// Fixed output dimension for the session.
    fn dimension(&self) -> Result<usize>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Hermetic provider backed by [`stub_embed`].
#[derive(Clone, Debug)]
pub struct StubProvider {
    pub dim: usize,
}

impl EmbeddingProvider for StubProvider {
    fn identity(&self) -> String {
        format!("stub-3gram-v1/d{}", self.dim)
    }

    fn dimension(&self) -> Result<usize> {
        Ok(self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        texts
            .iter()
            .map(|t| stub_embed(t, self.dim).map(Vector::into_inner))
            .collect()
    }
}

/// Provider speaking the embedding wire protocol over any [`Transport`].
pub struct RemoteProvider<T: Transport> {
    transport: T,
    dim: OnceLock<usize>,
}

impl<T: Transport> RemoteProvider<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            dim: OnceLock::new(),
        }
    }
}

impl<T: Transport> EmbeddingProvider for RemoteProvider<T> {
    fn identity(&self) -> String {
        self.transport.describe()
    }

    fn dimension(&self) -> Result<usize> {
        if let Some(d) = self.dim.get() {
            return Ok(*d);
        }
        let resp: ProbeResponse = self
            .transport
            .call_typed(Route::Embed, &ProbeRequest { probe: true })?;
        if resp.dimension == 0 {
            return Err(Error::Backend("provider reported dimension 0".into()));
        }
        Ok(*self.dim.get_or_init(|| resp.dimension))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp: EmbedResponse = self.transport.call_typed(
            Route::Embed,
            &EmbedRequest {
                texts: texts.to_vec(),
            },
        )?;
        Ok(resp.embeddings)
    }
}

#[derive(Clone, Debug)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Batches issued concurrently; assembly stays in record order.
    pub max_in_flight: usize,
    /// Dimension the caller expects; `None` accepts the provider's.
    pub expected_dim: Option<usize>,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_in_flight: 4,
            expected_dim: None,
        }
    }
}

/// Rows embedded so far. Passing the same progress back into
/// [`embed_corpus_resume`] after a failure continues from the last completed batch.
#[derive(Clone, Debug, Default)]
pub struct EmbedProgress {
    pub rows: Vec<Vec<f32>>,
}

/// Content hash of (provider identity, dimension, side, record ids).
pub fn store_hash(provider_identity: &str, dim: usize, side: Side, ids: &[String]) -> [u8; 32] {
    let mut h = FieldHasher::new();
    h.str(provider_identity).u64(dim as u64).str(side.as_str());
    for id in ids {
        h.str(id);
    }
    h.finish()
}

pub fn embed_corpus(
    records: &[PairRecord],
    provider: &dyn EmbeddingProvider,
    side: Side,
    opts: &EmbedOptions,
) -> Result<VectorStore> {
    embed_corpus_resume(records, provider, side, opts, &mut EmbedProgress::default())
}

pub fn embed_corpus_resume(
    records: &[PairRecord],
    provider: &dyn EmbeddingProvider,
    side: Side,
    opts: &EmbedOptions,
    progress: &mut EmbedProgress,
) -> Result<VectorStore> {
    if opts.batch_size == 0 || opts.max_in_flight == 0 {
        return Err(Error::param(
            "batch size and in-flight limit must be at least 1",
        ));
    }
    let dim = provider.dimension()?;
    if let Some(expected) = opts.expected_dim {
        if expected != dim {
            return Err(Error::DimensionMismatch {
                expected,
                actual: dim,
            });
        }
    }
    let inputs: Vec<String> = records
        .iter()
        .map(|r| match side {
            Side::Text => r.text.clone(),
            Side::Code => r.code.clone(),
        })
        .collect();
    let total = inputs.len();
    if progress.rows.len() > total {
        progress.rows.clear();
    }

    let group = opts.batch_size * opts.max_in_flight;
    while progress.rows.len() < total {
        let start = progress.rows.len();
        let end = (start + group).min(total);
        let batches: Vec<&[String]> = inputs[start..end].chunks(opts.batch_size).collect();
        let results: Vec<Result<Vec<Vec<f32>>>> = batches
            .par_iter()
            .map(|batch| {
                let out = provider.embed(batch)?;
                if out.len() != batch.len() {
                    return Err(Error::Backend(format!(
                        "provider returned {} vectors for {} inputs",
                        out.len(),
                        batch.len()
                    )));
                }
                if let Some(bad) = out.iter().find(|v| v.len() != dim) {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: bad.len(),
                    });
                }
                Ok(out)
            })
            .collect();
        for r in results {
            match r {
                Ok(rows) => progress.rows.extend(rows),
                Err(e @ Error::DimensionMismatch { .. }) => return Err(e),
                Err(e) => {
                    return Err(Error::EmbedInterrupted {
                        completed: progress.rows.len(),
                        total,
                        message: e.to_string(),
                    })
                }
            }
        }
    }

    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let hash = store_hash(&provider.identity(), dim, side, &ids);
    VectorStore::from_rows(dim, side, ids, std::mem::take(&mut progress.rows), hash)
}
