//! Content-addressed caches and the bi/tri/hyper cost model.
//!
//! Keys are exact strings. Caches start empty, grow without bound and
//! never evict. Resident bytes count payload scalars at 8 bytes each; key
//! strings are tracked separately in `key_bytes`.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderProvider;
use crate::error::{Error, Result};
use crate::hypernet::{self, ConditionOperator, HyperNetParams, Mode};
use crate::linalg::Vector;

const F64_BYTES: u64 = std::mem::size_of::<f64>() as u64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub resident_bytes: u64,
    pub key_bytes: u64,
    /// Encoder invocations.
    pub heavy_ops: u64,
    /// Composition or projection invocations.
    pub light_ops: u64,
    /// Hypernetwork operator generations.
    pub generation_ops: u64,
}

impl CacheStats {
    fn finish(mut self) -> Self {
        self.hit_rate = if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        };
        self
    }

    /// Field-wise sum with the hit rate recomputed.
    pub fn merge(&self, other: &CacheStats) -> CacheStats {
        CacheStats {
            lookups: self.lookups + other.lookups,
            hits: self.hits + other.hits,
            misses: self.misses + other.misses,
            hit_rate: 0.0,
            resident_bytes: self.resident_bytes + other.resident_bytes,
            key_bytes: self.key_bytes + other.key_bytes,
            heavy_ops: self.heavy_ops + other.heavy_ops,
            light_ops: self.light_ops + other.light_ops,
            generation_ops: self.generation_ops + other.generation_ops,
        }
        .finish()
    }
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    heavy: AtomicU64,
    generation: AtomicU64,
    resident: AtomicU64,
    keys: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> CacheStats {
        let hits = self.hits.load(Ordering::Relaxed);
        let misses = self.misses.load(Ordering::Relaxed);
        CacheStats {
            lookups: hits + misses,
            hits,
            misses,
            resident_bytes: self.resident.load(Ordering::Relaxed),
            key_bytes: self.keys.load(Ordering::Relaxed),
            heavy_ops: self.heavy.load(Ordering::Relaxed),
            generation_ops: self.generation.load(Ordering::Relaxed),
            ..CacheStats::default()
        }
        .finish()
    }
}

/// Generic unbounded string-keyed cache. Concurrent readers, exclusive
/// insertion. When two threads miss the same key at once both compute,
/// one insert wins and both misses are counted.
#[derive(Debug)]
struct Store<V> {
    map: RwLock<HashMap<String, Arc<V>>>,
    counters: Counters,
}

impl<V> Default for Store<V> {
    fn default() -> Self {
        Store {
            map: RwLock::new(HashMap::new()),
            counters: Counters::default(),
        }
    }
}

impl<V> Store<V> {
    fn get_or_try_insert(&self, key: &str, bytes: impl Fn(&V) -> u64, make: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
        if let Some(v) = self.map.read().expect("cache lock").get(key) {
            self.counters.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(v));
        }
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        let v = Arc::new(make()?);
        let mut map = self.map.write().expect("cache lock");
        let entry = map.entry(key.to_owned()).or_insert_with(|| {
            self.counters.resident.fetch_add(bytes(&v), Ordering::Relaxed);
            self.counters.keys.fetch_add(key.len() as u64, Ordering::Relaxed);
            Arc::clone(&v)
        });
        Ok(Arc::clone(entry))
    }

    fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }
}

/// Sentence or condition embeddings keyed by text.
#[derive(Debug, Default)]
pub struct EmbeddingCache(Store<Vector>);

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        self.0.counters.snapshot()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generated condition operators keyed by condition text.
#[derive(Debug, Default)]
pub struct OperatorCache(Store<ConditionOperator>);

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        self.0.counters.snapshot()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn cached_embed(cache: &EmbeddingCache, provider: &EncoderProvider, text: &str) -> Result<Arc<Vector>> {
    cache.0.get_or_try_insert(
        text,
        |v| v.dim() as u64 * F64_BYTES,
        || {
            let v = provider.embed(text)?;
            cache.0.counters.heavy.fetch_add(1, Ordering::Relaxed);
            Ok(v)
        },
    )
}

/// `W_c` for `condition`, generated on a miss from the encoded condition.
pub fn cached_operator(
    cache: &OperatorCache,
    params: &HyperNetParams,
    provider: &EncoderProvider,
    condition: &str,
) -> Result<Arc<ConditionOperator>> {
    if !params.mode().is_hyper() {
        return Err(Error::WrongMode {
            expected: "full|lowrank",
            actual: params.mode().as_str(),
        });
    }
    let c = &cache.0.counters;
    cache.0.get_or_try_insert(
        condition,
        |op| op.resident_bytes() as u64,
        || {
            let h_c = provider.embed(condition)?;
            c.heavy.fetch_add(1, Ordering::Relaxed);
            let op = hypernet::generate_condition_matrix(params, &h_c)?;
            c.generation.fetch_add(1, Ordering::Relaxed);
            Ok(op)
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Sentence and condition encoded jointly.
    Bi,
    /// Sentence and condition encoded separately, composed by a light op.
    Tri,
    /// Like `Tri`, but conditions are cached as generated operators.
    Hyper,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Bi => "bi",
            Architecture::Tri => "tri",
            Architecture::Hyper => "hyper",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bi" => Ok(Architecture::Bi),
            "tri" => Ok(Architecture::Tri),
            "hyper" => Ok(Architecture::Hyper),
            _ => Err(Error::invalid(format!("unknown architecture {s:?}; expected bi|tri|hyper"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub architecture: Architecture,
    /// `(sentence, condition)` in arrival order.
    pub requests: Vec<(String, String)>,
}

impl WorkloadSpec {
    pub fn new(architecture: Architecture, requests: Vec<(String, String)>) -> Result<Self> {
        if requests.is_empty() {
            return Err(Error::Empty("workload requests"));
        }
        Ok(WorkloadSpec { architecture, requests })
    }
}

/// Joint bi-encoder input for a request.
pub fn joint_text(sentence: &str, condition: &str) -> String {
    format!("{sentence} [SEP] {condition}")
}

/// Every `(sentence i, condition j)` once, sentence-major.
pub fn cross_stream(n_sentences: usize, n_conditions: usize) -> Vec<(String, String)> {
    let mut out = Vec::with_capacity(n_sentences * n_conditions);
    for i in 0..n_sentences {
        for j in 0..n_conditions {
            out.push((format!("sentence {i}"), format!("condition {j}")));
        }
    }
    out
}

/// The cross stream in a seeded random order.
pub fn shuffled_cross_stream(n_sentences: usize, n_conditions: usize, seed: u64) -> Vec<(String, String)> {
    let mut out = cross_stream(n_sentences, n_conditions);
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

fn condition_bytes(arch: Architecture, nh: usize, nk: Option<usize>) -> u64 {
    let nh = nh as u64;
    match (arch, nk) {
        (Architecture::Hyper, None) => nh * nh * F64_BYTES,
        (Architecture::Hyper, Some(nk)) => 2 * nh * nk as u64 * F64_BYTES,
        _ => nh * F64_BYTES,
    }
}

/// Counts what the architecture would do on the stream without running any
/// encoder. For `Hyper`, `nk = None` means full operators.
pub fn simulate_workload(spec: &WorkloadSpec, nh: usize, nk: Option<usize>) -> CacheStats {
    let mut s = CacheStats::default();
    let mut seen_joint: HashSet<String> = HashSet::new();
    let mut seen_s: HashSet<&str> = HashSet::new();
    let mut seen_c: HashSet<&str> = HashSet::new();
    let vec_bytes = nh as u64 * F64_BYTES;
    let cond_bytes = condition_bytes(spec.architecture, nh, nk);
    for (sent, cond) in &spec.requests {
        match spec.architecture {
            Architecture::Bi => {
                s.lookups += 1;
                let key = joint_text(sent, cond);
                if seen_joint.contains(&key) {
                    s.hits += 1;
                } else {
                    s.misses += 1;
                    s.heavy_ops += 1;
                    s.resident_bytes += vec_bytes;
                    s.key_bytes += key.len() as u64;
                    seen_joint.insert(key);
                }
            }
            Architecture::Tri | Architecture::Hyper => {
                s.lookups += 2;
                if seen_s.insert(sent) {
                    s.misses += 1;
                    s.heavy_ops += 1;
                    s.resident_bytes += vec_bytes;
                    s.key_bytes += sent.len() as u64;
                } else {
                    s.hits += 1;
                }
                if seen_c.insert(cond) {
                    s.misses += 1;
                    s.heavy_ops += 1;
                    s.resident_bytes += cond_bytes;
                    s.key_bytes += cond.len() as u64;
                    if spec.architecture == Architecture::Hyper {
                        s.generation_ops += 1;
                    }
                } else {
                    s.hits += 1;
                }
                s.light_ops += 1;
            }
        }
    }
    s.finish()
}

/// One architecture to time in [`bench_report`].
#[derive(Clone, Copy, Debug)]
pub enum BenchArm<'a> {
    Bi,
    Tri,
    Hyper(&'a HyperNetParams),
}

impl BenchArm<'_> {
    pub fn label(&self) -> String {
        match self {
            BenchArm::Bi => "bi".into(),
            BenchArm::Tri => "tri".into(),
            BenchArm::Hyper(p) => match p.mode() {
                Mode::Lowrank => "hyper-lowrank".into(),
                m => format!("hyper-{m}"),
            },
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            BenchArm::Bi => Architecture::Bi,
            BenchArm::Tri => Architecture::Tri,
            BenchArm::Hyper(_) => Architecture::Hyper,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub architecture: String,
    pub requests: u64,
    pub stats: CacheStats,
    pub wall_ms: f64,
}

pub const BENCH_TSV_HEADER: &str =
    "architecture\trequests\theavy_ops\tlight_ops\thits\tmisses\thit_rate\tresident_bytes\twall_ms";

impl BenchRow {
    pub fn tsv_line(&self) -> String {
        let s = &self.stats;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{:.3}",
            self.architecture, self.requests, s.heavy_ops, s.light_ops, s.hits, s.misses, s.hit_rate, s.resident_bytes, self.wall_ms
        )
    }
}

pub fn bench_tsv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_TSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.tsv_line());
    }
    out
}

/// Runs one pass of the stream with fresh caches and returns the stats and
/// a checksum of the outputs (keeps the work observable).
fn run_pass(arm: &BenchArm<'_>, requests: &[(String, String)], provider: &EncoderProvider) -> Result<(CacheStats, f64)> {
    let mut checksum = 0.0;
    let mut light = 0u64;
    let stats = match arm {
        BenchArm::Bi => {
            let cache = EmbeddingCache::new();
            for (s, c) in requests {
                let v = cached_embed(&cache, provider, &joint_text(s, c))?;
                checksum += v.as_slice()[0];
            }
            cache.stats()
        }
        BenchArm::Tri => {
            let cache = EmbeddingCache::new();
            for (s, c) in requests {
                let h_s = cached_embed(&cache, provider, s)?;
                let h_c = cached_embed(&cache, provider, c)?;
                let out = hypernet::hadamard_compose(&h_c, &h_s)?;
                light += 1;
                checksum += out.as_slice()[0];
            }
            cache.stats()
        }
        BenchArm::Hyper(params) => {
            let sents = EmbeddingCache::new();
            let ops = OperatorCache::new();
            for (s, c) in requests {
                let h_s = cached_embed(&sents, provider, s)?;
                let op = cached_operator(&ops, params, provider, c)?;
                let out = hypernet::project(&op, &h_s)?;
                light += 1;
                checksum += out.as_slice()[0];
            }
            sents.stats().merge(&ops.stats())
        }
    };
    Ok((
        CacheStats {
            light_ops: light,
            ..stats
        },
        checksum,
    ))
}

/// Times sequential, batch-of-one cached execution of `requests` for each
/// arm. Each repetition starts from empty caches; counts and `wall_ms` are
/// totals over repetitions, `resident_bytes` is the per-pass footprint.
pub fn bench_report(
    requests: &[(String, String)],
    arms: &[BenchArm<'_>],
    provider: &EncoderProvider,
    repetitions: usize,
) -> Result<Vec<BenchRow>> {
    if requests.is_empty() {
        return Err(Error::Empty("workload requests"));
    }
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        if let BenchArm::Hyper(p) = arm {
            if p.nh() != provider.dim() {
                return Err(Error::dims(p.nh(), provider.dim()));
            }
        }
        let mut total = CacheStats::default();
        let mut resident = 0;
        let mut sink = 0.0;
        let start = Instant::now();
        for _ in 0..repetitions {
            let (s, c) = run_pass(arm, requests, provider)?;
            resident = s.resident_bytes;
            total = total.merge(&s);
            sink += c;
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(sink);
        total.resident_bytes = resident;
        rows.push(BenchRow {
            architecture: arm.label(),
            requests: (requests.len() * repetitions) as u64,
            stats: total,
            wall_ms,
        });
    }
    Ok(rows)
}
