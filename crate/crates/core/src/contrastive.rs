//! InfoNCE with in-batch and hard negatives on a linear bi-encoder whose
//! weights are shared by the text and code sides.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curation::{CuratedPair, NegativePool};
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::sampler::{BatchParams, BatchStream, CurriculumSchedule, TrainingBatch};

/// Projection `F -> d` followed by L2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEncoder {
    pub w: Array2<f64>,
}

impl LinearEncoder {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("encoder weights must be finite"));
        }
        Ok(Self { w })
    }

    /// Entries uniform in `±sqrt(3/F)`, keyed by `seed`.
    pub fn random(feature_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = keyed_rng(seed, "toy-init", &[]);
        let a = (3.0 / feature_dim as f64).sqrt();
        let w = Array2::from_shape_fn((feature_dim, embed_dim), |_| rng.random_range(-a..a));
        Self { w }
    }

    pub fn feature_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.project(x)?.1)
    }

    /// Returns (row norms of xW, normalized rows).
    fn project(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        if x.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: x.ncols(),
            });
        }
        let mut z = x.dot(&self.w);
        let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(i) = norms.iter().position(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(Error::Data(format!(
                "row {i} projects to a zero or non-finite vector"
            )));
        }
        for (mut row, n) in z.rows_mut().into_iter().zip(norms.iter()) {
            row /= *n;
        }
        Ok((norms, z))
    }
}

/// Encoded batch: `negatives` holds `M` rows per anchor, anchor-major.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
    pub tau: f64,
}

/// Raw features for the same layout as [`ContrastiveBatch`].
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
}

fn check_shapes(n: usize, p: (usize, usize), neg: (usize, usize), d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("batch is empty"));
    }
    if p.0 != n || p.1 != d || neg.1 != d || !neg.0.is_multiple_of(n) {
        return Err(Error::param(format!(
            "inconsistent batch shapes: {n}x{d} anchors, {}x{} positives, {}x{} negatives",
            p.0, p.1, neg.0, neg.1
        )));
    }
    Ok(())
}

fn candidates(positives: &Array2<f64>, negatives: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(0), &[positives.view(), negatives.view()]).expect("column counts checked")
}

/// Mean loss and `dL/dlogits` for logits `A Cᵀ / τ` where candidate `i` is
/// anchor `i`'s positive.
fn loss_and_logit_grad(logits: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut g = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[i];
        for (j, &v) in row.iter().enumerate() {
            g[[i, j]] = (v - lse).exp() / n as f64;
        }
        g[[i, i]] -= 1.0 / n as f64;
    }
    (total / n as f64, g)
}

pub fn infonce_loss(batch: &ContrastiveBatch) -> Result<f64> {
    let (n, d) = batch.anchors.dim();
    check_shapes(n, batch.positives.dim(), batch.negatives.dim(), d)?;
    if batch.tau.is_nan() || batch.tau <= 0.0 {
        return Err(Error::param("loss temperature must be positive"));
    }
    let c = candidates(&batch.positives, &batch.negatives);
    let logits = batch.anchors.dot(&c.t()) / batch.tau;
    Ok(loss_and_logit_grad(&logits).0)
}

/// Gradient through `h = z/|z|`: `(g - (g·h) h) / |z|` per row.
fn through_normalization(g: &Array2<f64>, h: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = g.clone();
    for ((mut o, hr), n) in out.rows_mut().into_iter().zip(h.rows()).zip(norms.iter()) {
        let gh = o.dot(&hr);
        o.scaled_add(-gh, &hr);
        o /= *n;
    }
    out
}

/// Mean loss and its gradient with respect to the encoder weights.
pub fn infonce_grad(
    enc: &LinearEncoder,
    feats: &FeatureBatch,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, f) = feats.anchors.dim();
    check_shapes(n, feats.positives.dim(), feats.negatives.dim(), f)?;
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param("loss temperature must be positive"));
    }
    let (na, ha) = enc.project(feats.anchors.view())?;
    let (np, hp) = enc.project(feats.positives.view())?;
    let (nn, hn) = if feats.negatives.nrows() == 0 {
        (Array1::zeros(0), Array2::zeros((0, enc.embed_dim())))
    } else {
        enc.project(feats.negatives.view())?
    };
    let c = candidates(&hp, &hn);
    let logits = ha.dot(&c.t()) / tau;
    let (loss, gl) = loss_and_logit_grad(&logits);

    let g_anchor = gl.dot(&c) / tau;
    let g_cand = gl.t().dot(&ha) / tau;
    let dza = through_normalization(&g_anchor, &ha, &na);
    let dzp = through_normalization(&g_cand.slice(s![..n, ..]).to_owned(), &hp, &np);
    let mut grad = feats.anchors.t().dot(&dza) + feats.positives.t().dot(&dzp);
    if feats.negatives.nrows() > 0 {
        let dzn = through_normalization(&g_cand.slice(s![n.., ..]).to_owned(), &hn, &nn);
        grad += &feats.negatives.t().dot(&dzn);
    }
    Ok((loss, grad))
}

/// Average of per-batch losses and gradients.
pub fn infonce_grad_mean(
    enc: &LinearEncoder,
    batches: &[FeatureBatch],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    if batches.is_empty() {
        return Err(Error::param("no batches"));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(enc.w.raw_dim());
    for b in batches {
        let (l, g) = infonce_grad(enc, b, tau)?;
        loss += l;
        grad += &g;
    }
    let k = batches.len() as f64;
    Ok((loss / k, grad / k))
}

/// Feature rows for text and code of each pair.
#[derive(Clone, Debug)]
pub struct ToySplit {
    pub ids: Vec<String>,
    pub text: Array2<f64>,
    pub code: Array2<f64>,
}

impl ToySplit {
    pub fn new(ids: Vec<String>, text: Array2<f64>, code: Array2<f64>) -> Result<Self> {
        if ids.len() != text.nrows() || ids.len() != code.nrows() || text.ncols() != code.ncols() {
            return Err(Error::param("toy split shapes disagree"));
        }
        Ok(Self { ids, text, code })
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub tau: f64,
    pub lr: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            feature_dim: 256,
            embed_dim: 32,
            tau: 0.07,
            lr: 0.5,
            steps: 300,
            eval_every: 50,
            batch_size: 32,
            negatives: 3,
            tau_start: 0.05,
            tau_end: 0.001,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceRecord {
    Step {
        step: usize,
        tau_prime: f64,
        loss: f64,
    },
    Eval {
        step: usize,
        mrr: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyOutcome {
    pub trace: Vec<TraceRecord>,
    pub encoder: LinearEncoder,
    pub final_mrr: f64,
}

/// Held-out MRR@10: each text retrieves among all held-out codes; the code
/// with the same id is the answer. Ties are broken by id.
pub fn eval_mrr10(enc: &LinearEncoder, split: &ToySplit) -> Result<f64> {
    let q = enc.encode(split.text.view())?;
    let c = enc.encode(split.code.view())?;
    let scores = q.dot(&c.t());
    let n = split.ids.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let target = scores[[i, i]];
        let ahead = (0..n)
            .filter(|&j| {
                let s = scores[[i, j]];
                s > target || (s == target && split.ids[j] < split.ids[i])
            })
            .count();
        if ahead < 10 {
            total += 1.0 / (ahead + 1) as f64;
        }
    }
    Ok(total / n as f64)
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

fn batch_features(
    batch: &TrainingBatch,
    train: &ToySplit,
    index: &HashMap<&str, usize>,
) -> Result<FeatureBatch> {
    let look = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Reference(format!("`{id}` is not in the training split")))
    };
    let mut a = Vec::new();
    let mut p = Vec::new();
    let mut neg = Vec::new();
    for item in &batch.items {
        a.push(look(&item.query_id)?);
        p.push(look(&item.positive_id)?);
        for id in &item.negative_ids {
            neg.push(look(id)?);
        }
    }
    Ok(FeatureBatch {
        anchors: gather(&train.text, &a),
        positives: gather(&train.code, &p),
        negatives: gather(&train.code, &neg),
    })
}

/// Plain gradient descent on batches streamed from the curriculum sampler.
pub fn train_toy(
    cfg: &ToyConfig,
    train: &ToySplit,
    curated: &[CuratedPair],
    pools: &[NegativePool],
    held_out: &ToySplit,
) -> Result<ToyOutcome> {
    if cfg.feature_dim != train.text.ncols() {
        return Err(Error::DimensionMismatch {
            expected: cfg.feature_dim,
            actual: train.text.ncols(),
        });
    }
    if cfg.eval_every == 0 {
        return Err(Error::param("eval_every must be at least 1"));
    }
    let schedule = CurriculumSchedule {
        tau_start: cfg.tau_start,
        tau_end: cfg.tau_end,
        total_steps: cfg.steps,
    };
    let params = BatchParams {
        batch_size: cfg.batch_size,
        negatives: cfg.negatives,
        seed: cfg.seed,
    };
    let stream = BatchStream::new(curated, pools, schedule, params)?;
    let index = train.index();
    let mut enc = LinearEncoder::random(cfg.feature_dim, cfg.embed_dim, cfg.seed);
    let mut trace = vec![TraceRecord::Eval {
        step: 0,
        mrr: eval_mrr10(&enc, held_out)?,
    }];
    let mut final_mrr = match trace[0] {
        TraceRecord::Eval { mrr, .. } => mrr,
        _ => unreachable!(),
    };
    for batch in stream {
        let batch = batch?;
        let feats = batch_features(&batch, train, &index)?;
        let (loss, grad) = infonce_grad(&enc, &feats, cfg.tau)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step: batch.step });
        }
        enc.w.scaled_add(-cfg.lr, &grad);
        if enc.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: batch.step });
        }
        trace.push(TraceRecord::Step {
            step: batch.step,
            tau_prime: batch.tau_prime,
            loss,
        });
        let done = batch.step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            final_mrr = eval_mrr10(&enc, held_out)?;
            trace.push(TraceRecord::Eval {
                step: done,
                mrr: final_mrr,
            });
        }
    }
    Ok(ToyOutcome {
        trace,
        encoder: enc,
        final_mrr,
    })
}
