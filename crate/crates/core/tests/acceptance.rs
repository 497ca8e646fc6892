//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codecurate::backend::{BackendRanking, IdentityReranker, RerankBackend};
use codecurate::contrastive::{
    infonce_grad, infonce_loss, ContrastiveBatch, FeatureBatch, LinearEncoder,
};
use codecurate::curation::{
    build_negative_pools, consistency_filter, CuratedPair, DropReason, FilterOutcome, FilterParams,
    MiningParams, NegativePool,
};
use codecurate::embedder::{stub_embed, Side, StubProvider, VectorStore};
use codecurate::hashing::keyed_rng;
use codecurate::localize::{
    eval_localization, file_rollup, localize, GoldLabels, HitMode, LocalizationKs, Prediction,
    SnapshotIndex,
};
use codecurate::protocol::RerankCandidate;
use codecurate::ranker::{metric_value, MetricKind, MetricSpec, RankedList};
use codecurate::rerank::{gen_listwise_data, sliding_rerank, ListwiseParams, RerankParams};
use codecurate::sampler::{sample_negatives, RngKey};
use codecurate::simgraph::{
    compute_neighbors, CacheRow, Neighbor, NeighborParams, SimilarityCache,
};
use codecurate::synth::{snapshot_fixture, topic_corpus, SynthConfig};
use codecurate::toy::{run_arm, Arm, ToyExperiment};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: &[(&str, fn() -> Outcome)] = &[
        ("filtering oracle equivalence", filtering_oracle_equivalence),
        ("default-parameter conformance", default_parameter_conformance),
        ("sampling distribution", sampling_distribution),
        ("InfoNCE correctness", infonce_correctness),
        ("toy curriculum benefit", toy_curriculum_benefit),
        ("metric correctness", metric_correctness),
        ("sliding-window property", sliding_window_property),
        ("listwise data generation", listwise_generation),
        ("localization harness", localization_harness),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// shared oracles

/// Reference score: f64 products summed in index order, one rounding to f32.
fn score(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s as f32
}

fn full_table(texts: &VectorStore, codes: &VectorStore) -> Vec<Vec<f32>> {
    (0..texts.len())
        .map(|i| {
            (0..codes.len())
                .map(|j| score(texts.row(i), codes.row(j)))
                .collect()
        })
        .collect()
}

/// Every column of row `i`, best first (score descending, id ascending).
fn sorted_row(row: &[f32], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

fn oracle_rank(row: &[f32], ids: &[String], i: usize) -> usize {
    1 + (0..row.len())
        .filter(|&j| j != i && (row[j] > row[i] || (row[j] == row[i] && ids[j] < ids[i])))
        .count()
}

/// Largest f32 not above a positive `x`.
fn f32_floor(x: f64) -> f32 {
    let c = x as f32;
    if (c as f64) > x {
        f32::from_bits(c.to_bits() - 1)
    } else {
        c
    }
}

struct OraclePool {
    entries: Vec<(String, f32)>,
    fallback: bool,
}

fn oracle_pool(
    table: &[Vec<f32>],
    ids: &[String],
    i: usize,
    k_prime: usize,
    gamma: f64,
    pool_size: usize,
    seed: u64,
) -> OraclePool {
    let row = &table[i];
    let cutoff = gamma * row[i] as f64;
    let listed: Vec<usize> = sorted_row(row, ids).into_iter().take(k_prime).collect();
    let entries: Vec<(String, f32)> = listed
        .iter()
        .filter(|&&j| j != i && row[j] as f64 <= cutoff)
        .take(pool_size)
        .map(|&j| (ids[j].clone(), row[j]))
        .collect();
    if !entries.is_empty() {
        return OraclePool {
            entries,
            fallback: false,
        };
    }
    let above: HashSet<usize> = listed
        .iter()
        .copied()
        .filter(|&j| row[j] as f64 > cutoff)
        .collect();
    let eligible: Vec<usize> = (0..ids.len())
        .filter(|&j| j != i && !above.contains(&j))
        .collect();
    let mut rng = keyed_rng(seed, "fallback-pool", &[ids[i].as_bytes()]);
    let take = pool_size.min(eligible.len());
    let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|k| ids[eligible[k]].clone())
        .collect();
    picked.sort();
    let s = f32_floor(cutoff);
    OraclePool {
        entries: picked.into_iter().map(|id| (id, s)).collect(),
        fallback: true,
    }
}

fn stub_stores(records: &[(String, String, String)], dim: usize) -> (VectorStore, VectorStore) {
    let ids: Vec<String> = records.iter().map(|r| r.0.clone()).collect();
    let rows = |pick: fn(&(String, String, String)) -> &String| {
        records
            .iter()
            .map(|r| stub_embed(pick(r), dim).unwrap().into_inner())
            .collect::<Vec<_>>()
    };
    let texts =
        VectorStore::from_rows(dim, Side::Text, ids.clone(), rows(|r| &r.1), [1; 32]).unwrap();
    let codes = VectorStore::from_rows(dim, Side::Code, ids, rows(|r| &r.2), [2; 32]).unwrap();
    (texts, codes)
}

// ---------------------------------------------------------------------------
// 1

fn filtering_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut pairs_checked = 0;
    let mut pools_checked = 0;
    let mut fallbacks = 0;
    let mut kept_total = 0;
    for c in 0..24u64 {
        let topics = 10 + 2 * c as usize;
        let per_topic = 4 + (c as usize % 7);
        let corpus = topic_corpus(&SynthConfig {
            topics,
            pairs_per_topic: per_topic,
            noise_rate: 0.1 + 0.05 * (c % 6) as f64,
            held_out_per_topic: 0,
            seed: 1000 + c,
        })
        .map_err(|e| e.to_string())?;
        let n = corpus.records.len();
        ensure!(n <= 500, "corpus {c} has {n} pairs");
        let records: Vec<(String, String, String)> = corpus
            .records
            .iter()
            .map(|r| (r.id.clone(), r.text.clone(), r.code.clone()))
            .collect();
        let dim = [32, 64, 128][c as usize % 3];
        let (texts, codes) = stub_stores(&records, dim);
        let k_prime = [8, 16, 32, n][c as usize % 4];
        let block = [1, 7, 64][(c as usize / 3) % 3];
        let filter = FilterParams {
            k: 1 + c as usize % 3,
            delta: 0.15 + 0.05 * (c % 4) as f32,
        };
        let mining = MiningParams {
            gamma: [0.95, 0.8, 0.6][c as usize % 3],
            pool_size: (k_prime - 1).min(5 + c as usize % 6),
            seed: c,
        };

        let cache = compute_neighbors(&texts, &codes, &NeighborParams::new(k_prime, block))
            .map_err(|e| e.to_string())?;
        let ids_set: HashSet<String> = texts.ids().iter().cloned().collect();
        let outcome = consistency_filter(&cache, &ids_set, &filter).map_err(|e| e.to_string())?;
        let pools =
            build_negative_pools(&cache, &outcome.kept, &mining).map_err(|e| e.to_string())?;

        let ids = texts.ids();
        let table = full_table(&texts, &codes);
        let kept: HashMap<&str, &CuratedPair> = outcome
            .kept
            .iter()
            .map(|k| (k.query_id.as_str(), k))
            .collect();
        let dropped: HashMap<&str, _> = outcome
            .dropped
            .iter()
            .map(|d| (d.query_id.as_str(), d))
            .collect();
        ensure!(
            kept.len() + dropped.len() == n,
            "corpus {c}: {} decisions for {n} pairs",
            kept.len() + dropped.len()
        );
        for i in 0..n {
            let row = &table[i];
            let rank = oracle_rank(row, ids, i);
            let rank_ok = rank <= filter.k;
            let thresh_ok = row[i] > filter.delta;
            let id = ids[i].as_str();
            // rank is exact inside the stored list and K′+1 beyond it
            let reported = if rank <= k_prime { rank } else { k_prime + 1 };
            match (rank_ok && thresh_ok, kept.get(id), dropped.get(id)) {
                (true, Some(p), None) => {
                    ensure!(
                        p.rank == rank && p.s_pos == row[i],
                        "corpus {c}: kept `{id}` rank {} vs {rank}",
                        p.rank
                    )
                }
                (false, None, Some(d)) => {
                    let reason = match (rank_ok, thresh_ok) {
                        (false, true) => DropReason::RankFail,
                        (true, false) => DropReason::ThresholdFail,
                        _ => DropReason::Both,
                    };
                    ensure!(
                        d.reason == reason && d.rank == reported && d.s_pos == row[i],
                        "corpus {c}: dropped `{id}` {:?}/{} vs {reason:?}/{reported}",
                        d.reason,
                        d.rank
                    );
                }
                _ => {
                    return Err(format!(
                        "corpus {c}: decision mismatch for `{id}` (oracle rank {rank})"
                    ))
                }
            }
            pairs_checked += 1;
        }
        kept_total += outcome.kept.len();

        let index: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        ensure!(pools.len() == outcome.kept.len(), "corpus {c}: pool count");
        for pool in &pools {
            let i = index[pool.query_id.as_str()];
            let want = oracle_pool(
                &table,
                ids,
                i,
                k_prime,
                mining.gamma,
                mining.pool_size,
                mining.seed,
            );
            ensure!(
                pool.entries == want.entries && pool.fallback_used == want.fallback,
                "corpus {c}: pool of `{}` differs",
                pool.query_id
            );
            fallbacks += want.fallback as usize;
            pools_checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s (limit 30s)");
    Ok(format!(
        "24 corpora, {pairs_checked} decisions ({kept_total} kept), {pools_checked} pools ({fallbacks} fallback), 0 mismatches"
    ))
}

// ---------------------------------------------------------------------------
// 2

const PAIR_IDS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Cache from a hand-written score table, neighbor lists truncated to `k_prime`.
fn cache_from_table(table: &[[f32; 6]; 6], k_prime: usize) -> SimilarityCache {
    let ids: Vec<String> = PAIR_IDS.iter().map(|s| s.to_string()).collect();
    let rows = table
        .iter()
        .enumerate()
        .map(|(i, row)| CacheRow {
            s_pos: row[i],
            neighbors: sorted_row(row, &ids)
                .into_iter()
                .take(k_prime)
                .map(|j| Neighbor {
                    code: j as u32,
                    score: row[j],
                })
                .collect(),
        })
        .collect();
    let cache = SimilarityCache {
        k_prime,
        lineage: "hand-built".into(),
        ids,
        rows,
    };
    cache.validate().expect("fixture cache is well formed");
    cache
}

fn decisions(outcome: &FilterOutcome) -> HashMap<String, (Option<DropReason>, usize)> {
    let mut out: HashMap<String, (Option<DropReason>, usize)> = outcome
        .kept
        .iter()
        .map(|k| (k.query_id.clone(), (None, k.rank)))
        .collect();
    out.extend(
        outcome
            .dropped
            .iter()
            .map(|d| (d.query_id.clone(), (Some(d.reason), d.rank))),
    );
    out
}

fn entries(pool: &NegativePool) -> Vec<(&str, f32)> {
    pool.entries
        .iter()
        .map(|(id, s)| (id.as_str(), *s))
        .collect()
}

fn default_parameter_conformance() -> Outcome {
    let filter = FilterParams::default();
    let mining = MiningParams::default();
    ensure!(
        filter.k == 2 && filter.delta == 0.7 && mining.gamma == 0.95,
        "defaults are not k=2, δ=0.7, γ=0.95"
    );
    let ids_set: HashSet<String> = PAIR_IDS.iter().map(|s| s.to_string()).collect();

    // rows are texts, columns codes; the diagonal is s_pos
    let filtering = [
        [0.75, 0.80, 0.30, 0.20, 0.10, 0.00], // one neighbor above
        [0.80, 0.75, 0.78, 0.10, 0.10, 0.10], // two neighbors above
        [0.10, 0.20, 0.69, 0.30, 0.10, 0.10], // below delta at rank 1
        [0.70, 0.10, 0.10, 0.65, 0.68, 0.20], // both
        [0.10, 0.20, 0.30, 0.40, 0.90, 0.50],
        [0.75, 0.10, 0.10, 0.20, 0.30, 0.75], // tie with a smaller id
    ];
    let cache = cache_from_table(&filtering, 6);
    let out = consistency_filter(&cache, &ids_set, &filter).map_err(|e| e.to_string())?;
    let got = decisions(&out);
    let want: [(&str, Option<DropReason>, usize); 6] = [
        ("a", None, 2),
        ("b", Some(DropReason::RankFail), 3),
        ("c", Some(DropReason::ThresholdFail), 1),
        ("d", Some(DropReason::Both), 3),
        ("e", None, 1),
        ("f", None, 2),
    ];
    for (id, reason, rank) in want {
        ensure!(
            got[id] == (reason, rank),
            "filter `{id}`: got {:?}, want {:?}",
            got[id],
            (reason, rank)
        );
    }
    let pools = build_negative_pools(
        &cache,
        &out.kept,
        &MiningParams {
            pool_size: 3,
            ..mining
        },
    )
    .map_err(|e| e.to_string())?;
    let by_q: HashMap<&str, &NegativePool> =
        pools.iter().map(|p| (p.query_id.as_str(), p)).collect();
    ensure!(
        entries(by_q["a"]) == [("c", 0.30), ("d", 0.20), ("e", 0.10)],
        "pool a: {:?}",
        entries(by_q["a"])
    );
    ensure!(
        entries(by_q["e"]) == [("f", 0.50), ("d", 0.40), ("c", 0.30)],
        "pool e: {:?}",
        entries(by_q["e"])
    );
    ensure!(
        entries(by_q["f"]) == [("e", 0.30), ("d", 0.20), ("b", 0.10)],
        "pool f: {:?}",
        entries(by_q["f"])
    );

    let mining_table = [
        [0.80, 0.77, 0.75, 0.10, 0.10, 0.10], // cutoff 0.76
        [0.10, 0.80, 0.79, 0.78, 0.10, 0.10], // every listed negative above cutoff
        [0.10, 0.10, 0.90, 0.20, 0.10, 0.10],
        [0.10, 0.10, 0.20, 0.85, 0.30, 0.10],
        [0.10, 0.30, 0.10, 0.10, 0.88, 0.20],
        [0.20, 0.10, 0.10, 0.10, 0.10, 0.92],
    ];
    let cache = cache_from_table(&mining_table, 3);
    let out = consistency_filter(&cache, &ids_set, &filter).map_err(|e| e.to_string())?;
    ensure!(
        out.kept.len() == 6,
        "mining fixture: {} kept",
        out.kept.len()
    );
    let cutoff = 0.95 * 0.8f32 as f64;
    ensure!((cutoff - 0.76).abs() < 1e-6, "cutoff {cutoff}");
    let pools = build_negative_pools(
        &cache,
        &out.kept,
        &MiningParams {
            pool_size: 2,
            ..mining
        },
    )
    .map_err(|e| e.to_string())?;
    let by_q: HashMap<&str, &NegativePool> =
        pools.iter().map(|p| (p.query_id.as_str(), p)).collect();
    ensure!(
        entries(by_q["a"]) == [("c", 0.75)] && !by_q["a"].fallback_used,
        "pool a: {:?}",
        entries(by_q["a"])
    );
    let fb = by_q["b"];
    ensure!(
        fb.fallback_used && fb.entries.len() == 2,
        "pool b is not a 2-entry fallback: {fb:?}"
    );
    ensure!(
        fb.entries
            .iter()
            .all(|(id, s)| ["a", "e", "f"].contains(&id.as_str()) && (*s as f64) <= cutoff),
        "fallback pool b draws outside the eligible codes: {fb:?}"
    );
    ensure!(
        pools.iter().filter(|p| p.fallback_used).count() == 1,
        "unexpected fallbacks"
    );
    Ok("filter a kept@2, b rank_fail, c threshold_fail, d both, f tie kept@2; 0.77 removed, 0.75 kept; fallback pool of 2".into())
}

// ---------------------------------------------------------------------------
// 3

fn analytic_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let w: Vec<f64> = scores.iter().map(|s| (s / tau).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn first_draw_counts(
    pool: &NegativePool,
    tau: f64,
    draws: u64,
    seed: u64,
) -> Result<Vec<u64>, String> {
    let mut counts = vec![0u64; pool.entries.len()];
    for step in 0..draws {
        let key = RngKey {
            seed,
            query_id: &pool.query_id,
            step,
        };
        let pick = sample_negatives(pool, 1, tau, key).map_err(|e| e.to_string())?;
        let j = pool.entries.iter().position(|e| e.0 == pick[0]).unwrap();
        counts[j] += 1;
    }
    Ok(counts)
}

fn sampling_distribution() -> Outcome {
    const DRAWS: u64 = 100_000;
    let pool = NegativePool {
        query_id: "q".into(),
        entries: vec![("x".into(), 0.9), ("y".into(), 0.8), ("z".into(), 0.7)],
        fallback_used: false,
    };
    let p = analytic_softmax(&[0.9, 0.8, 0.7], 0.05);
    for (a, b) in p.iter().zip([0.86681, 0.11731, 0.01588]) {
        ensure!((a - b).abs() < 5e-6, "analytic softmax {p:?}");
    }
    let counts = first_draw_counts(&pool, 0.05, DRAWS, 17)?;
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / DRAWS as f64).collect();
    for (f, q) in freq.iter().zip(&p) {
        ensure!((f - q).abs() <= 0.01, "marginal {f:.5} vs {q:.5}");
    }
    let chi2: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&o, q)| {
            let e = q * DRAWS as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // chi-square, 2 degrees of freedom, alpha 0.001
    ensure!(chi2 < 13.8155, "chi-square {chi2:.3} rejects");

    let mut tops = Vec::new();
    for tau in [0.05, 0.02, 0.005, 0.001] {
        let c = first_draw_counts(&pool, tau, DRAWS, 17)?;
        tops.push(c[0] as f64 / DRAWS as f64);
    }
    ensure!(
        tops.windows(2).all(|w| w[0] <= w[1]),
        "top frequency not monotone: {tops:?}"
    );
    Ok(format!(
        "marginals ({:.5}, {:.5}, {:.5}), chi2 {chi2:.3} < 13.8155, top frequency {:?}",
        freq[0], freq[1], freq[2], tops
    ))
}

// ---------------------------------------------------------------------------
// 4

fn reference_loss(w: &Array2<f64>, feats: &FeatureBatch, tau: f64) -> f64 {
    let encode = |x: &Array2<f64>| -> Vec<Vec<f64>> {
        x.outer_iter()
            .map(|row| {
                let z: Vec<f64> = (0..w.ncols())
                    .map(|c| (0..w.nrows()).map(|r| row[r] * w[[r, c]]).sum())
                    .collect();
                let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                z.into_iter().map(|v| v / n).collect()
            })
            .collect()
    };
    let a = encode(&feats.anchors);
    let mut cands = encode(&feats.positives);
    cands.extend(encode(&feats.negatives));
    let mut total = 0.0;
    for (i, ai) in a.iter().enumerate() {
        let logits: Vec<f64> = cands
            .iter()
            .map(|c| ai.iter().zip(c).map(|(x, y)| x * y).sum::<f64>() / tau)
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total += -(logits[i].exp() / z).ln();
    }
    total / a.len() as f64
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn infonce_correctness() -> Outcome {
    let start = Instant::now();
    for (n, m) in [(2usize, 1usize), (4, 3), (8, 15)] {
        let d = 4;
        let same = Array2::from_shape_fn((n, d), |(_, c)| if c == 0 { 1.0 } else { 0.0 });
        let negs = Array2::from_shape_fn((n * m, d), |(_, c)| if c == 0 { 1.0 } else { 0.0 });
        let loss = infonce_loss(&ContrastiveBatch {
            anchors: same.clone(),
            positives: same,
            negatives: negs,
            tau: 0.07,
        })
        .map_err(|e| e.to_string())?;
        let want = ((n * (m + 1)) as f64).ln();
        ensure!(
            (loss - want).abs() <= 1e-6,
            "equal-similarity loss {loss} vs ln {} = {want}",
            n * (m + 1)
        );
    }

    let (n, m, f, d, tau, h) = (6, 2, 24, 8, 0.07, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let feats = FeatureBatch {
            anchors: random_matrix(&mut rng, n, f),
            positives: random_matrix(&mut rng, n, f),
            negatives: random_matrix(&mut rng, n * m, f),
        };
        let w = random_matrix(&mut rng, f, d);
        let enc = LinearEncoder::new(w.clone()).map_err(|e| e.to_string())?;
        let (loss, grad) = infonce_grad(&enc, &feats, tau).map_err(|e| e.to_string())?;
        ensure!(
            (loss - reference_loss(&w, &feats, tau)).abs() < 1e-10,
            "loss disagrees with the reference"
        );
        for r in 0..f {
            for c in 0..d {
                let mut plus = w.clone();
                plus[[r, c]] += h;
                let mut minus = w.clone();
                minus[[r, c]] -= h;
                let fd = (reference_loss(&plus, &feats, tau) - reference_loss(&minus, &feats, tau))
                    / (2.0 * h);
                let a = grad[[r, c]];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst <= 1e-4, "max relative gradient error {worst:.3e}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s (limit 60s)");
    Ok(format!(
        "ln(N(M+1)) within 1e-6 for (2,1),(4,3),(8,15); max relative gradient error {worst:.2e} over 20 batches"
    ))
}

// ---------------------------------------------------------------------------
// 5

fn toy_curriculum_benefit() -> Outcome {
    let start = Instant::now();
    let exp = ToyExperiment::default();
    ensure!(
        exp.synth.topics == 200
            && exp.synth.pairs_per_topic == 10
            && exp.train.feature_dim == 256
            && exp.train.embed_dim == 32,
        "experiment shape differs from 200x10, F=256, d=32"
    );
    let mut curated = Vec::new();
    let mut baseline = Vec::new();
    for seed in 0..5 {
        curated.push(
            run_arm(&exp, Arm::Curated, seed)
                .map_err(|e| e.to_string())?
                .outcome
                .final_mrr,
        );
        baseline.push(
            run_arm(&exp, Arm::Baseline, seed)
                .map_err(|e| e.to_string())?
                .outcome
                .final_mrr,
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = mean(&curated) - mean(&baseline);
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 600.0, "took {secs:.1}s (limit 600s)");
    let detail = format!(
        "held-out MRR@10 curated {:.4} vs baseline {:.4} (gain {gain:.4}, 5 seeds)",
        mean(&curated),
        mean(&baseline)
    );
    ensure!(gain >= 0.05, "{detail} is below 0.05");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6

fn reference_metric(
    ranked: &[String],
    relevant: &BTreeSet<String>,
    kind: MetricKind,
    k: usize,
) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let cut = ranked.len().min(k);
    match kind {
        MetricKind::Mrr => {
            for (i, id) in ranked[..cut].iter().enumerate() {
                if relevant.contains(id) {
                    return 1.0 / (i as f64 + 1.0);
                }
            }
            0.0
        }
        MetricKind::Ndcg => {
            let gain = |pos: usize| std::f64::consts::LN_2 / ((pos + 1) as f64).ln();
            let mut dcg = 0.0;
            for (i, id) in ranked[..cut].iter().enumerate() {
                if relevant.contains(id) {
                    dcg += gain(i + 1);
                }
            }
            let mut idcg = 0.0;
            for pos in 1..=relevant.len().min(k) {
                idcg += gain(pos);
            }
            dcg / idcg
        }
        MetricKind::Recall => {
            ranked[..cut]
                .iter()
                .filter(|id| relevant.contains(*id))
                .count() as f64
                / relevant.len() as f64
        }
    }
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let universe: Vec<String> = (0..200).map(|i| format!("c{i:03}")).collect();
        let len = rng.random_range(1..=150);
        let ranked: Vec<String> = universe.choose_multiple(&mut rng, len).cloned().collect();
        let n_rel = rng.random_range(0..=6);
        let relevant: BTreeSet<String> =
            universe.choose_multiple(&mut rng, n_rel).cloned().collect();
        let refs: Vec<&str> = ranked.iter().map(String::as_str).collect();
        for kind in [MetricKind::Mrr, MetricKind::Ndcg, MetricKind::Recall] {
            for k in [1, 3, 5, 10, 20, 100] {
                let got = metric_value(&refs, &relevant, MetricSpec::new(kind, k));
                let want = reference_metric(&ranked, &relevant, kind, k);
                worst = worst.max((got - want).abs());
                compared += 1;
            }
        }
    }
    ensure!(worst <= 1e-10, "max deviation {worst:.3e}");

    let ids = ["x", "y", "g"];
    let gold: BTreeSet<String> = ["g".to_string()].into();
    let mrr = metric_value(&ids, &gold, MetricSpec::new(MetricKind::Mrr, 100));
    ensure!(
        mrr == 1.0 / 3.0,
        "MRR@100 with the answer at rank 3 is {mrr}"
    );
    let ids = ["x", "g", "y"];
    let ndcg = metric_value(&ids, &gold, MetricSpec::new(MetricKind::Ndcg, 10));
    ensure!(
        ndcg == 1.0 / 3f64.log2(),
        "nDCG@10 with the answer at rank 2 is {ndcg}"
    );
    Ok(format!(
        "{compared} values on 50 fixtures, max deviation {worst:.1e}; MRR 1/3 and nDCG 1/log2(3) exact"
    ))
}

// ---------------------------------------------------------------------------
// 7

/// Puts every candidate whose text is "relevant" first, others in window order.
struct PerfectOracle;

impl RerankBackend for PerfectOracle {
    fn rank(
        &self,
        _query: &str,
        candidates: &[RerankCandidate],
    ) -> codecurate::Result<BackendRanking> {
        let (rel, rest): (Vec<_>, Vec<_>) = candidates.iter().partition(|c| c.text == "relevant");
        Ok(BackendRanking::Identifiers(
            rel.iter()
                .chain(rest.iter())
                .map(|c| c.identifier as i64)
                .collect(),
        ))
    }
}

/// Answers with random, often malformed rankings.
struct Chaos(Mutex<ChaCha8Rng>);

impl RerankBackend for Chaos {
    fn rank(
        &self,
        _query: &str,
        candidates: &[RerankCandidate],
    ) -> codecurate::Result<BackendRanking> {
        let mut rng = self.0.lock().unwrap();
        let n = candidates.len() as i64;
        Ok(match rng.random_range(0..5) {
            0 => {
                let mut ids: Vec<i64> = (1..=n).collect();
                ids.shuffle(&mut *rng);
                BackendRanking::Identifiers(ids)
            }
            1 => BackendRanking::Identifiers(
                (0..rng.random_range(0..2 * n))
                    .map(|_| rng.random_range(-2..n + 3))
                    .collect(),
            ),
            2 => BackendRanking::Text(
                (0..rng.random_range(0..n + 2))
                    .map(|_| format!("[{}]", rng.random_range(0..n + 3)))
                    .collect::<Vec<_>>()
                    .join(" > "),
            ),
            3 => BackendRanking::Text("I cannot rank these.".into()),
            _ => return Err(codecurate::Error::Backend("window failed".into())),
        })
    }
}

fn listing(n: usize, relevant: Option<usize>) -> (RankedList, HashMap<String, String>) {
    let ids: Vec<String> = (0..n).map(|i| format!("d{i:03}")).collect();
    let list = RankedList {
        query_id: "q".into(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), 1.0 - i as f32 * 1e-3))
            .collect(),
    };
    let texts = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                id.clone(),
                if Some(i) == relevant {
                    "relevant"
                } else {
                    "other"
                }
                .to_string(),
            )
        })
        .collect();
    (list, texts)
}

fn is_permutation(a: &RankedList, b: &RankedList) -> bool {
    let mut x: Vec<&str> = a.ids().collect();
    let mut y: Vec<&str> = b.ids().collect();
    x.sort();
    y.sort();
    x == y && a.entries.len() == b.entries.len()
}

fn sliding_window_property() -> Outcome {
    let params = RerankParams {
        window: 10,
        stride: 5,
        depth: 100,
    };
    for p in 0..100 {
        let (list, texts) = listing(100, Some(p));
        let out = sliding_rerank("q", &list, &texts, &params, &PerfectOracle)
            .map_err(|e| e.to_string())?;
        ensure!(out.windows == 19, "{} windows", out.windows);
        ensure!(
            out.list.entries[0].0 == list.entries[p].0,
            "item starting at rank {} did not reach rank 1",
            p + 1
        );
        ensure!(
            is_permutation(&list, &out.list),
            "oracle output is not a permutation"
        );
    }
    let (list, texts) = listing(100, None);
    let out = sliding_rerank("q", &list, &texts, &params, &IdentityReranker)
        .map_err(|e| e.to_string())?;
    ensure!(out.list == list, "identity backend changed the list");

    let chaos = Chaos(Mutex::new(ChaCha8Rng::seed_from_u64(7)));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10_000 {
        let n = rng.random_range(1..=130);
        let (mut list, texts) = listing(n, None);
        list.entries.shuffle(&mut rng);
        let out = sliding_rerank("q", &list, &texts, &params, &chaos).map_err(|e| e.to_string())?;
        ensure!(
            is_permutation(&list, &out.list),
            "trial {trial}: output is not a permutation"
        );
        ensure!(
            out.list.entries[100.min(n)..] == list.entries[100.min(n)..],
            "trial {trial}: tail moved"
        );
    }
    Ok("all 100 start ranks promoted to rank 1 in 19 windows; identity unchanged; 10^4 randomized trials permutations".into())
}

// ---------------------------------------------------------------------------
// 8

/// Orders a window by cached similarity, looked up through the candidate text.
struct ScoreOracle(HashMap<String, f32>);

impl RerankBackend for ScoreOracle {
    fn rank(
        &self,
        _query: &str,
        candidates: &[RerankCandidate],
    ) -> codecurate::Result<BackendRanking> {
        let mut c: Vec<&RerankCandidate> = candidates.iter().collect();
        c.sort_by(|a, b| self.0[&b.text].total_cmp(&self.0[&a.text]));
        Ok(BackendRanking::Identifiers(
            c.iter().map(|c| c.identifier as i64).collect(),
        ))
    }
}

fn listwise_generation() -> Outcome {
    let mut curated = Vec::new();
    let mut pools = Vec::new();
    let mut queries = HashMap::new();
    let mut codes = HashMap::new();
    let mut cached: HashMap<String, f32> = HashMap::new();
    let mut by_id: HashMap<String, f32> = HashMap::new();
    for t in 0..10 {
        let q = format!("q{t}");
        let s_pos = 0.85 + 0.01 * t as f32;
        curated.push(CuratedPair {
            query_id: q.clone(),
            positive_id: q.clone(),
            s_pos,
            rank: 1,
        });
        queries.insert(q.clone(), format!("query {t}"));
        let mut entries = Vec::new();
        for j in 0..15 {
            let id = format!("n{t}-{j:02}");
            entries.push((id, 0.8 - 0.03 * j as f32));
        }
        for (id, s) in std::iter::once((q.clone(), s_pos)).chain(entries.iter().cloned()) {
            let text = format!("code of {id}");
            codes.insert(id.clone(), text.clone());
            cached.insert(text, s);
            by_id.insert(format!("{q}/{id}"), s);
        }
        pools.push(NegativePool {
            query_id: q,
            entries,
            fallback_used: false,
        });
    }
    let params = ListwiseParams::default();
    ensure!(
        params.instances_per_tuple == 5 && params.min_size == 3 && params.max_size == 10,
        "listwise defaults are not 5 instances of 3..=10"
    );
    let out = gen_listwise_data(
        &curated,
        &pools,
        &queries,
        &codes,
        &ScoreOracle(cached),
        &params,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        out.instances.len() == 50,
        "{} instances",
        out.instances.len()
    );
    let mut violations = 0;
    for inst in &out.instances {
        let n = inst.candidates.len();
        ensure!((3..=10).contains(&n), "window of {n}");
        let mut ranking = inst.teacher_ranking.clone();
        ranking.sort();
        ensure!(
            ranking == (1..=n as u32).collect::<Vec<_>>(),
            "ranking {:?} is not a permutation",
            inst.teacher_ranking
        );
        let score_of = |ident: u32| {
            let c = inst
                .candidates
                .iter()
                .find(|c| c.identifier == ident)
                .unwrap();
            by_id[&format!("{}/{}", inst.query_id, c.candidate_id)]
        };
        let scores: Vec<f32> = inst.teacher_ranking.iter().map(|&i| score_of(i)).collect();
        violations += scores.windows(2).filter(|w| w[0] < w[1]).count();
    }
    ensure!(violations == 0, "{violations} ordering violations");
    Ok("50 instances from 10 tuples, sizes within [3,10], valid permutations, 0 score-order violations".into())
}

// ---------------------------------------------------------------------------
// 9

fn localization_harness() -> Outcome {
    // hand-tallied benchmark: gold file and gold function positions per instance
    let file_rank: [Option<usize>; 20] = [
        Some(1),
        Some(1),
        Some(1),
        Some(1),
        Some(1),
        Some(1),
        Some(1),
        Some(2),
        Some(2),
        Some(2),
        Some(2),
        Some(3),
        Some(3),
        Some(3),
        Some(4),
        Some(4),
        Some(5),
        None,
        None,
        Some(1),
    ];
    let func_rank: [Option<usize>; 20] = [
        Some(1),
        Some(2),
        Some(3),
        Some(4),
        Some(5),
        Some(5),
        Some(6),
        Some(7),
        Some(8),
        Some(9),
        Some(10),
        Some(10),
        Some(11),
        Some(12),
        Some(20),
        None,
        Some(1),
        Some(2),
        Some(50),
        Some(6),
    ];
    let place = |prefix: &str, gold: &str, rank: Option<usize>, len: usize| -> Vec<String> {
        let mut v: Vec<String> = (0..len).map(|j| format!("{prefix}{j}")).collect();
        if let Some(r) = rank {
            v[r - 1] = gold.to_string();
        }
        v
    };
    let mut preds = Vec::new();
    let mut gold = Vec::new();
    for i in 0..20 {
        let gf = format!("src/gold{i}.py");
        let gfn = format!("{gf}::fix");
        preds.push(Prediction {
            instance_id: format!("i{i:02}"),
            functions: place("other.py::f", &gfn, func_rank[i], 60),
            files: place("other", &gf, file_rank[i], 8),
        });
        gold.push(GoldLabels {
            instance_id: format!("i{i:02}"),
            issue: "broken".into(),
            gold_function_ids: [gfn].into(),
            gold_files: [gf].into(),
        });
    }
    let report = eval_localization(&preds, &gold, &LocalizationKs::default(), HitMode::Any)
        .map_err(|e| e.to_string())?;
    // file@1 8/20, file@2 12/20, file@3 15/20; function@5 8/20, function@10 15/20
    let want_files = [(1, 0.40), (2, 0.60), (3, 0.75)];
    let want_funcs = [(5, 0.40), (10, 0.75)];
    ensure!(
        report.file_accuracy == want_files,
        "file accuracy {:?}",
        report.file_accuracy
    );
    ensure!(
        report.function_accuracy == want_funcs,
        "function accuracy {:?}",
        report.function_accuracy
    );

    // pipeline predictions on a synthetic snapshot against a brute-force scan
    let fx = snapshot_fixture(10, 6, 20, 3).map_err(|e| e.to_string())?;
    let provider = StubProvider { dim: 256 };
    let index = SnapshotIndex::build(&fx.functions, &provider).map_err(|e| e.to_string())?;
    let file_of: HashMap<String, String> = fx
        .functions
        .iter()
        .map(|f| (f.function_id.clone(), f.file_path.clone()))
        .collect();
    let mut preds = Vec::new();
    for g in &fx.gold {
        let ranked = localize(&g.instance_id, &g.issue, &index, &provider, 100, None)
            .map_err(|e| e.to_string())?;
        preds.push(Prediction {
            instance_id: g.instance_id.clone(),
            functions: ranked.ids().map(str::to_string).collect(),
            files: file_rollup(&ranked, &file_of).map_err(|e| e.to_string())?,
        });
    }
    let resolved: Vec<GoldLabels> = fx
        .gold
        .iter()
        .map(|g| g.resolve(&fx.functions))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let ks = LocalizationKs::default();
    for mode in [HitMode::Any, HitMode::Complete] {
        let report = eval_localization(&preds, &resolved, &ks, mode).map_err(|e| e.to_string())?;
        for (kind, got, items) in [
            ("file", &report.file_accuracy, 0),
            ("function", &report.function_accuracy, 1),
        ] {
            for &(k, acc) in got.iter() {
                let mut hits = 0;
                for (p, g) in preds.iter().zip(&resolved) {
                    // first-occurrence rollup recomputed from the function order
                    let mut files: Vec<&str> = Vec::new();
                    for f in &p.functions {
                        if !files.contains(&file_of[f].as_str()) {
                            files.push(&file_of[f]);
                        }
                    }
                    let (ranked, wanted): (Vec<&str>, Vec<&String>) = if items == 0 {
                        (files, g.gold_files.iter().collect())
                    } else {
                        (
                            p.functions.iter().map(String::as_str).collect(),
                            g.gold_function_ids.iter().collect(),
                        )
                    };
                    let top = &ranked[..ranked.len().min(k)];
                    let ok = match mode {
                        HitMode::Any => wanted.iter().any(|w| top.contains(&w.as_str())),
                        HitMode::Complete => wanted.iter().all(|w| top.contains(&w.as_str())),
                    };
                    hits += ok as usize;
                }
                let want = hits as f64 / preds.len() as f64;
                ensure!(acc == want, "{kind}@{k} ({mode:?}) {acc} vs oracle {want}");
            }
            ensure!(
                got.windows(2).all(|w| w[0].1 <= w[1].1),
                "{kind} accuracy not monotone in k: {got:?}"
            );
        }
    }
    Ok("hand benchmark file@1/2/3 = .40/.60/.75, function@5/10 = .40/.75; pipeline predictions match brute-force scan; monotone in k".into())
}

// ---------------------------------------------------------------------------
// 10

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::full_pipeline(a.path());
    let first = start.elapsed();
    common::full_pipeline(b.path());
    let left = common::snapshot_dir(a.path());
    let right = common::snapshot_dir(b.path());
    ensure!(
        left.keys().eq(right.keys()),
        "different artifact sets: {:?} vs {:?}",
        left.keys().collect::<Vec<_>>(),
        right.keys().collect::<Vec<_>>()
    );
    let differing: Vec<&String> = left.keys().filter(|k| left[*k] != right[*k]).collect();
    ensure!(differing.is_empty(), "artifacts differ: {differing:?}");
    ensure!(
        first < Duration::from_secs(60),
        "one pipeline run took {first:?}"
    );
    Ok(format!(
        "{} files byte-identical across two runs of {} stages; one run {:.1}s",
        left.len(),
        common::PIPELINE.len(),
        first.as_secs_f64()
    ))
}
