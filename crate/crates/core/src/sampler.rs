//! Curriculum negative sampling: annealed softmax draws from each query's pool.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curation::{CuratedPair, NegativePool};
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub total_steps: usize,
}

impl CurriculumSchedule {
    pub fn new(total_steps: usize) -> Self {
        Self {
            tau_start: 0.05,
            tau_end: 0.001,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0 && self.tau_start >= self.tau_end && self.tau_start.is_finite()) {
            return Err(Error::param(format!(
                "schedule needs tau_start >= tau_end > 0, got {} -> {}",
                self.tau_start, self.tau_end
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        Ok(())
    }
}

/// Linear interpolation from `tau_start` at step 0 to `tau_end` at the last step.
pub fn tau_at(step: usize, schedule: &CurriculumSchedule) -> Result<f64> {
    schedule.validate()?;
    if step >= schedule.total_steps {
        return Err(Error::param(format!(
            "step {step} is outside the schedule of {} steps",
            schedule.total_steps
        )));
    }
    if schedule.total_steps == 1 {
        return Ok(schedule.tau_start);
    }
    let frac = step as f64 / (schedule.total_steps - 1) as f64;
    Ok(schedule.tau_start + frac * (schedule.tau_end - schedule.tau_start))
}

/// Softmax of `scores / tau`, max-subtracted.
pub fn softmax(scores: &[f32], tau: f64) -> Vec<f64> {
    let max = scores
        .iter()
        .fold(f64::NEG_INFINITY, |m, &s| m.max(s as f64));
    let w: Vec<f64> = scores
        .iter()
        .map(|&s| ((s as f64 - max) / tau).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Draws `m` distinct indices; each draw is a softmax over the indices not yet taken.
pub fn sample_indices<R: Rng + ?Sized>(
    scores: &[f32],
    m: usize,
    tau: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(scores.len());
    while out.len() < m && !remaining.is_empty() {
        let max = remaining
            .iter()
            .fold(f64::NEG_INFINITY, |a, &i| a.max(scores[i] as f64));
        weights.clear();
        weights.extend(
            remaining
                .iter()
                .map(|&i| ((scores[i] as f64 - max) / tau).exp()),
        );
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                pick = k;
                break;
            }
            u -= w;
        }
        out.push(remaining.remove(pick));
    }
    out
}

/// Identifies one sampling decision.
#[derive(Clone, Copy, Debug)]
pub struct RngKey<'a> {
    pub seed: u64,
    pub query_id: &'a str,
    pub step: u64,
}

impl RngKey<'_> {
    pub fn rng(&self) -> rand_chacha::ChaCha8Rng {
        keyed_rng(
            self.seed,
            "negatives",
            &[self.query_id.as_bytes(), &self.step.to_le_bytes()],
        )
    }
}

pub fn sample_negatives(
    pool: &NegativePool,
    m: usize,
    tau: f64,
    key: RngKey<'_>,
) -> Result<Vec<String>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if pool.entries.len() < m {
        return Err(Error::PoolTooSmall {
            query_id: pool.query_id.clone(),
            available: pool.entries.len(),
            requested: m,
        });
    }
    let scores = pool.scores();
    let picked = sample_indices(&scores, m, tau, &mut key.rng());
    Ok(picked
        .into_iter()
        .map(|i| pool.entries[i].0.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub step: usize,
    pub tau_prime: f64,
    pub items: Vec<BatchItem>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchParams {
    /// Queries per batch (N).
    pub batch_size: usize,
    /// Sampled negatives per query (M); 0 leaves only in-batch negatives.
    pub negatives: usize,
    pub seed: u64,
}

impl Default for BatchParams {
    fn default() -> Self {
        Self {
            batch_size: 128,
            negatives: 15,
            seed: 0,
        }
    }
}

/// Deterministic batch sequence. Batch `step` depends only on the inputs and
/// `step`, so a stream can start anywhere.
pub struct BatchStream<'a> {
    queries: Vec<&'a CuratedPair>,
    pools: HashMap<&'a str, &'a NegativePool>,
    schedule: CurriculumSchedule,
    params: BatchParams,
    steps_per_epoch: usize,
    epoch_cache: Option<(usize, Vec<usize>)>,
    next: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        curated: &'a [CuratedPair],
        pools: &'a [NegativePool],
        schedule: CurriculumSchedule,
        params: BatchParams,
    ) -> Result<Self> {
        schedule.validate()?;
        if params.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if curated.len() < params.batch_size {
            return Err(Error::param(format!(
                "{} curated queries cannot fill a batch of {}",
                curated.len(),
                params.batch_size
            )));
        }
        let pools: HashMap<&str, &NegativePool> =
            pools.iter().map(|p| (p.query_id.as_str(), p)).collect();
        if params.negatives > 0 {
            for q in curated {
                let pool = pools.get(q.query_id.as_str()).ok_or_else(|| {
                    Error::Reference(format!("no negative pool for query `{}`", q.query_id))
                })?;
                if pool.entries.len() < params.negatives {
                    return Err(Error::PoolTooSmall {
                        query_id: q.query_id.clone(),
                        available: pool.entries.len(),
                        requested: params.negatives,
                    });
                }
            }
        }
        Ok(Self {
            queries: curated.iter().collect(),
            pools,
            schedule,
            params,
            steps_per_epoch: curated.len() / params.batch_size,
            epoch_cache: None,
            next: 0,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// Positions the stream so that the next batch is `step`.
    pub fn seek(&mut self, step: usize) {
        self.next = step;
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.queries.len()).collect();
            order.shuffle(&mut keyed_rng(
                self.params.seed,
                "epoch",
                &[&(epoch as u64).to_le_bytes()],
            ));
            self.epoch_cache = Some((epoch, order));
        }
        &self.epoch_cache.as_ref().unwrap().1
    }

    pub fn batch_at(&mut self, step: usize) -> Result<TrainingBatch> {
        let tau = tau_at(step, &self.schedule)?;
        let epoch = step / self.steps_per_epoch;
        let offset = (step % self.steps_per_epoch) * self.params.batch_size;
        let n = self.params.batch_size;
        let members: Vec<usize> = self.epoch_order(epoch)[offset..offset + n].to_vec();
        let items = members
            .par_iter()
            .map(|&qi| {
                let q = self.queries[qi];
                let negative_ids = if self.params.negatives == 0 {
                    Vec::new()
                } else {
                    let key = RngKey {
                        seed: self.params.seed,
                        query_id: &q.query_id,
                        step: step as u64,
                    };
                    sample_negatives(
                        self.pools[q.query_id.as_str()],
                        self.params.negatives,
                        tau,
                        key,
                    )?
                };
                Ok(BatchItem {
                    query_id: q.query_id.clone(),
                    positive_id: q.positive_id.clone(),
                    negative_ids,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingBatch {
            step,
            tau_prime: tau,
            items,
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<TrainingBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.schedule.total_steps {
            return None;
        }
        let step = self.next;
        self.next += 1;
        Some(self.batch_at(step))
    }
}

/// All batches of the schedule in step order.
pub fn emit_batches(
    curated: &[CuratedPair],
    pools: &[NegativePool],
    schedule: CurriculumSchedule,
    params: BatchParams,
) -> Result<Vec<TrainingBatch>> {
    BatchStream::new(curated, pools, schedule, params)?.collect()
}
