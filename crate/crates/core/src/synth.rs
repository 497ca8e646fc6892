//! Synthetic topic-structured (text, code) corpora with controllable noise.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::localize::{FunctionRecord, GoldLabels};

/// (code name, text phrasings)
const ACTIONS: &[(&str, &[&str])] = &[
    ("load", &["load", "read", "fetch"]),
    ("save", &["save", "write", "store"]),
    ("parse", &["parse", "decode", "interpret"]),
    ("validate", &["validate", "check", "verify"]),
    ("merge", &["merge", "combine", "join"]),
    ("sort", &["sort", "order", "arrange"]),
    ("filter", &["filter", "select", "screen"]),
    ("count", &["count", "tally", "enumerate"]),
    ("compress", &["compress", "pack", "shrink"]),
    ("encrypt", &["encrypt", "encipher", "scramble"]),
    ("render", &["render", "draw", "display"]),
    ("send", &["send", "transmit", "dispatch"]),
    ("cache", &["cache", "memoize", "remember"]),
    ("split", &["split", "divide", "partition"]),
    ("convert", &["convert", "transform", "translate"]),
    ("delete", &["delete", "remove", "erase"]),
];

const OBJECTS: &[(&str, &[&str])] = &[
    ("config", &["config file", "configuration", "settings file"]),
    ("user", &["user record", "user account", "user profile"]),
    ("image", &["image", "picture", "bitmap"]),
    ("invoice", &["invoice", "bill", "billing statement"]),
    (
        "matrix",
        &["matrix", "two dimensional array", "grid of numbers"],
    ),
    ("email", &["email", "mail message", "email message"]),
    ("token", &["token", "auth token", "access token"]),
    ("graph", &["graph", "network of nodes", "node graph"]),
    ("csv", &["csv table", "comma separated file", "spreadsheet"]),
    ("log", &["log file", "log entries", "event log"]),
    ("session", &["session", "login session", "user session"]),
    ("order", &["order", "purchase order", "customer order"]),
    ("packet", &["packet", "network packet", "datagram"]),
    ("schema", &["schema", "table schema", "database schema"]),
    ("vector", &["vector", "list of floats", "numeric vector"]),
    ("report", &["report", "summary report", "status report"]),
    ("playlist", &["playlist", "song list", "music queue"]),
    ("ticket", &["ticket", "support ticket", "issue ticket"]),
    (
        "sensor",
        &["sensor reading", "sensor sample", "device measurement"],
    ),
    ("comment", &["comment", "user comment", "review comment"]),
];

const MODIFIERS: &[(&str, &[&str])] = &[
    (
        "retry",
        &["with retry", "retrying on failure", "with retries"],
    ),
    ("async", &["async", "asynchronously", "without blocking"]),
    ("batch", &["in batches", "batch by batch", "in chunks"]),
    (
        "strict",
        &["in strict mode", "strictly", "rejecting anomalies"],
    ),
    ("cached", &["cached", "using a cache", "with caching"]),
    ("gzip", &["with gzip", "gzip compressed", "as gzip data"]),
    ("utf8", &["as utf8", "using utf8 encoding", "in unicode"]),
    ("sorted", &["sorted", "in sorted order", "preserving order"]),
    (
        "limit",
        &["up to a limit", "with a size limit", "bounded by a maximum"],
    ),
    (
        "verbose",
        &["verbose", "with verbose logging", "logging every step"],
    ),
    ("locked", &["locked", "under a lock", "thread safely"]),
    (
        "dryrun",
        &["as a dryrun", "in dryrun mode", "without side effects"],
    ),
];

const TEMPLATES: &[&str] = &[
    "{a} the {o} {m}",
    "{a} a {o} {m}",
    "{a} {o} {m}",
    "Helper to {a} the {o} {m}",
    "{a} the given {o} {m}.",
];

/// Canonical phrasing half of the time, otherwise a uniform synonym.
fn phrase<'a, R: Rng>(words: &[&'a str], rng: &mut R) -> &'a str {
    if rng.random_bool(0.5) {
        words[0]
    } else {
        words.choose(rng).expect("synonyms")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub topics: usize,
    pub pairs_per_topic: usize,
    /// Fraction of pairs whose code is swapped with another topic's code.
    pub noise_rate: f64,
    /// Last pairs of every topic, kept clean and marked held out.
    pub held_out_per_topic: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 200,
            pairs_per_topic: 10,
            noise_rate: 0.3,
            held_out_per_topic: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub records: Vec<PairRecord>,
    /// Topic index of each record's text.
    pub topic: Vec<usize>,
    /// Whether the record's code belongs to another pair.
    pub noisy: Vec<bool>,
    pub held_out: Vec<bool>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn render_code(action: &str, object: &str, modifier: &str, variant: usize) -> String {
    let name = format!("{action}_{object}_{modifier}");
    match variant % 3 {
        0 => format!(
            "def {name}({object}):\n    return {action}({object}, mode=\"{modifier}\")\n"
        ),
        1 => format!(
            "def {name}(path):\n    {object} = open_{object}(path)\n    return {action}_{object}({object}, {modifier}=True)\n"
        ),
        _ => format!(
            "def {name}(items):\n    return [{action}(x, \"{modifier}\") for x in items]\n"
        ),
    }
}

/// `topics × pairs_per_topic` pairs. Topics are distinct (action, object)
/// combinations; pairs within a topic use distinct modifiers and paraphrased
/// descriptions. Ids are `t{topic:03}-p{pair:02}`.
pub fn topic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let combos = ACTIONS.len() * OBJECTS.len();
    if cfg.topics == 0 || cfg.topics > combos {
        return Err(Error::param(format!(
            "topic count must lie in 1..={combos}"
        )));
    }
    if cfg.pairs_per_topic == 0 || cfg.pairs_per_topic > MODIFIERS.len() {
        return Err(Error::param(format!(
            "pairs per topic must lie in 1..={}",
            MODIFIERS.len()
        )));
    }
    if cfg.held_out_per_topic >= cfg.pairs_per_topic {
        return Err(Error::param(
            "held-out pairs must leave training pairs in every topic",
        ));
    }
    if !(0.0..1.0).contains(&cfg.noise_rate) {
        return Err(Error::param("noise rate must lie in [0, 1)"));
    }
    let mut rng = keyed_rng(cfg.seed, "synth-corpus", &[]);
    let mut all: Vec<usize> = (0..combos).collect();
    all.shuffle(&mut rng);
    all.truncate(cfg.topics);

    let mut records = Vec::with_capacity(cfg.topics * cfg.pairs_per_topic);
    let mut topic = Vec::with_capacity(records.capacity());
    let mut held_out = Vec::with_capacity(records.capacity());
    for (t, combo) in all.iter().enumerate() {
        let (action, a_words) = ACTIONS[combo / OBJECTS.len()];
        let (object, o_words) = OBJECTS[combo % OBJECTS.len()];
        let mut mods: Vec<usize> = (0..MODIFIERS.len()).collect();
        mods.shuffle(&mut rng);
        for (p, &mi) in mods.iter().take(cfg.pairs_per_topic).enumerate() {
            let (modifier, m_words) = MODIFIERS[mi];
            let template = TEMPLATES.choose(&mut rng).expect("templates");
            let text = template
                .replace("{a}", phrase(a_words, &mut rng))
                .replace("{o}", phrase(o_words, &mut rng))
                .replace("{m}", phrase(m_words, &mut rng));
            let text = capitalize(&text);
            records.push(PairRecord {
                id: format!("t{t:03}-p{p:02}"),
                text,
                code: render_code(action, object, modifier, rng.random_range(0..3)),
                language: "python".into(),
                repo: Some(format!("synthetic/topic{t:03}")),
                path: None,
            });
            topic.push(t);
            held_out.push(p >= cfg.pairs_per_topic - cfg.held_out_per_topic);
        }
    }

    // swap codes between training pairs of distinct topics
    let n = records.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| !held_out[i]).collect();
    let swaps = ((order.len() as f64 * cfg.noise_rate) / 2.0).round() as usize;
    order.shuffle(&mut rng);
    let mut noisy = vec![false; n];
    let mut pending: Option<usize> = None;
    let mut done = 0;
    for i in order {
        if done == swaps {
            break;
        }
        match pending {
            Some(j) if topic[j] != topic[i] => {
                let code = std::mem::take(&mut records[i].code);
                records[i].code = std::mem::replace(&mut records[j].code, code);
                noisy[i] = true;
                noisy[j] = true;
                pending = None;
                done += 1;
            }
            Some(_) => {}
            None => pending = Some(i),
        }
    }
    Ok(SynthCorpus {
        records,
        topic,
        noisy,
        held_out,
    })
}

#[derive(Clone, Debug)]
pub struct SnapshotFixture {
    pub functions: Vec<FunctionRecord>,
    pub gold: Vec<GoldLabels>,
}

/// Repository snapshot with one topic per file, plus `instances` issues each
/// describing one function.
pub fn snapshot_fixture(
    files: usize,
    functions_per_file: usize,
    instances: usize,
    seed: u64,
) -> Result<SnapshotFixture> {
    let corpus = topic_corpus(&SynthConfig {
        topics: files,
        pairs_per_topic: functions_per_file,
        noise_rate: 0.0,
        held_out_per_topic: 0,
        seed,
    })?;
    if instances > corpus.records.len() {
        return Err(Error::param("more instances than functions"));
    }
    let functions: Vec<FunctionRecord> = corpus
        .records
        .iter()
        .zip(&corpus.topic)
        .map(|(r, t)| {
            let name = r.code["def ".len()..]
                .split('(')
                .next()
                .unwrap_or_default()
                .to_string();
            let file_path = format!("pkg/module{t:03}.py");
            FunctionRecord {
                function_id: format!("{file_path}::{name}"),
                file_path,
                name,
                docstring: r.text.clone(),
                body: r.code.clone(),
            }
        })
        .collect();
    let mut rng = keyed_rng(seed, "synth-issues", &[]);
    let picks = rand::seq::index::sample(&mut rng, functions.len(), instances).into_vec();
    let gold = picks
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let func = &functions[f];
            GoldLabels {
                instance_id: format!("issue-{i:03}"),
                issue: format!(
                    "{} does not work: it should {} but raises an error instead.",
                    func.name,
                    corpus.records[f].text.to_lowercase().trim_end_matches('.')
                ),
                gold_function_ids: [func.function_id.clone()].into(),
                gold_files: Default::default(),
            }
        })
        .collect();
    Ok(SnapshotFixture { functions, gold })
}
