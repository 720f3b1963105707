//! Small generated datasets whose ground truth is known exactly.
//!
//! C-STS: the embedding is cut into `n_conditions` contiguous blocks and
//! condition `k` asks about block `k` only. The gold label of
//! `(s1, s2, c_k)` is the cosine between the two sentences' block `k`,
//! rescaled to `[1, 5]`. Sentence embeddings share a common mean direction
//! with equal weight in every block, so each condition's subspace has a
//! distinct centroid once projected.
//!
//! KG: entities live in a low-dimensional latent space embedded
//! isometrically into `nh` dims. Relation `r` is a random orthogonal map
//! `Q_r` there; entities are grown by applying relations plus noise, and
//! `(h, r, t)` is a fact iff `t` is the best match to `Q_r z_h` with
//! cosine above 0.9.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{inverse_relation, CstsQuadruplet, KgTriple};
use crate::encoder::EmbeddingStore;
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};

/// Weight of the shared sentence mean relative to the isotropic part.
pub const SENTENCE_MEAN_WEIGHT: f64 = 1.0;
/// Dimension of the sentence variation inside each condition block.
pub const CSTS_BLOCK_RANK: usize = 4;
pub const KG_LATENT_DIM: usize = 8;
pub const KG_FACT_THRESHOLD: f64 = 0.9;
/// Norm of the noise added when growing an entity from a parent.
const KG_GROWTH_NOISE: f64 = 0.3;

pub fn sentence_text(pair: usize, which: usize) -> String {
    format!("pair {pair} sentence {which}")
}

pub fn condition_text(k: usize) -> String {
    format!("condition {k}")
}

pub fn entity_text(i: usize) -> String {
    format!("entity {i}")
}

pub fn relation_text(r: usize) -> String {
    format!("relation {r}")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Condition-like embedding: isotropic Gaussian with `E‖h‖² = 1`.
pub fn random_condition_embedding(rng: &mut ChaCha8Rng, nh: usize) -> Vector {
    Vector::new(gaussian(rng, nh, 1.0 / (nh as f64).sqrt())).expect("finite")
}

#[derive(Clone, Debug)]
pub struct SyntheticCsts {
    pub quads: Vec<CstsQuadruplet>,
    pub store: EmbeddingStore,
    pub conditions: Vec<String>,
    pub n_conditions: usize,
    pub block: usize,
}

impl SyntheticCsts {
    /// Splits by `pair_id`: the last `⌈test_fraction·n_pairs⌉` pairs are held
    /// out. Pairs are i.i.d., so order is as good as a shuffle.
    pub fn split(&self, test_fraction: f64) -> (Vec<CstsQuadruplet>, Vec<CstsQuadruplet>) {
        let n_pairs = self.quads.iter().map(|q| q.pair_id).max().map_or(0, |m| m + 1);
        let n_test = (test_fraction * n_pairs as f64).ceil() as u64;
        let cut = n_pairs - n_test.min(n_pairs);
        self.quads.iter().cloned().partition(|q| q.pair_id < cut)
    }

    /// The ideal operator for condition `k`: keep block `k`, zero the rest.
    pub fn oracle_similarity(&self, q: &CstsQuadruplet) -> Result<f64> {
        let k = self
            .conditions
            .iter()
            .position(|c| *c == q.condition)
            .ok_or_else(|| Error::MissingEmbedding(q.condition.clone()))?;
        let get = |t: &str| self.store.get(t).ok_or_else(|| Error::MissingEmbedding(t.into()));
        let a = block_of(get(&q.sentence1)?, k, self.block);
        let b = block_of(get(&q.sentence2)?, k, self.block);
        linalg::cosine_similarity(&a, &b)
    }
}

fn block_of(v: &Vector, k: usize, block: usize) -> Vector {
    Vector::from_vec(v.as_slice()[k * block..(k + 1) * block].to_vec())
}

pub fn make_synthetic_csts(n_pairs: usize, n_conditions: usize, nh: usize, seed: u64) -> Result<SyntheticCsts> {
    make_synthetic_csts_with_rank(n_pairs, n_conditions, nh, CSTS_BLOCK_RANK, seed)
}

/// As [`make_synthetic_csts`], with the variation inside each block confined
/// to a random `block_rank`-dimensional subspace (capped at the block size).
pub fn make_synthetic_csts_with_rank(
    n_pairs: usize,
    n_conditions: usize,
    nh: usize,
    block_rank: usize,
    seed: u64,
) -> Result<SyntheticCsts> {
    if n_conditions < 2 || !nh.is_multiple_of(n_conditions) {
        return Err(Error::invalid(format!(
            "nh ({nh}) must be divisible by n_conditions ({n_conditions}) and n_conditions >= 2"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::Empty("n_pairs"));
    }
    if block_rank == 0 {
        return Err(Error::invalid("block_rank must be positive"));
    }
    let block = nh / n_conditions;
    let rank = block_rank.min(block);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(nh);
    let conditions: Vec<String> = (0..n_conditions).map(condition_text).collect();
    for c in &conditions {
        store.insert(c.clone(), random_condition_embedding(&mut rng, nh))?;
    }
    let bases: Vec<Vec<Vec<f64>>> = (0..n_conditions)
        .map(|_| orthonormal_columns(&mut rng, block, rank))
        .collect();
    let mean = SENTENCE_MEAN_WEIGHT / (nh as f64).sqrt();
    let z_std = 1.0 / ((n_conditions * rank) as f64).sqrt();
    let sentence = |rng: &mut ChaCha8Rng| {
        let mut v = vec![mean; nh];
        for (k, basis) in bases.iter().enumerate() {
            for b in basis {
                let z: f64 = rng.sample::<f64, _>(StandardNormal) * z_std;
                linalg::axpy(z, b, &mut v[k * block..(k + 1) * block]);
            }
        }
        Vector::from_vec(unit(v))
    };
    let mut quads = Vec::with_capacity(2 * n_pairs);
    for i in 0..n_pairs {
        let (s1, s2) = (sentence(&mut rng), sentence(&mut rng));
        let cos: Vec<f64> = (0..n_conditions)
            .map(|k| linalg::cosine_similarity(&block_of(&s1, k, block), &block_of(&s2, k, block)))
            .collect::<Result<_>>()?;
        let hi = argmax(&cos);
        let lo = argmax(&cos.iter().map(|c| -c).collect::<Vec<_>>());
        let (t1, t2) = (sentence_text(i, 1), sentence_text(i, 2));
        store.insert(t1.clone(), s1)?;
        store.insert(t2.clone(), s2)?;
        for k in [hi, lo] {
            quads.push(CstsQuadruplet {
                sentence1: t1.clone(),
                sentence2: t2.clone(),
                condition: conditions[k].clone(),
                label: 3.0 + 2.0 * cos[k],
                pair_id: i as u64,
            });
        }
    }
    Ok(SyntheticCsts {
        quads,
        store,
        conditions,
        n_conditions,
        block,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Column-orthonormal `rows×cols` matrix (row-major) by Gram–Schmidt.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d = linalg::dot_slice(&v, b);
            linalg::axpy(-d, b, &mut v);
        }
        let n = linalg::norm(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

#[derive(Clone, Debug)]
pub struct SyntheticKg {
    pub train: Vec<KgTriple>,
    pub valid: Vec<KgTriple>,
    pub test: Vec<KgTriple>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub store: EmbeddingStore,
    latent: Vec<Vec<f64>>,
    maps: Vec<Vec<Vec<f64>>>,
}

impl SyntheticKg {
    pub fn all_triples(&self) -> impl Iterator<Item = &KgTriple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Entity ranking for `(h, r, ?)` under the generating map, best first.
    pub fn generator_ranking(&self, head: &str, relation: &str) -> Result<Vec<String>> {
        let hi = self.entity_index(head)?;
        let ri = self
            .relations
            .iter()
            .position(|r| r == relation)
            .ok_or_else(|| Error::MissingEmbedding(relation.into()))?;
        let target = apply(&self.maps[ri], &self.latent[hi]);
        let mut scored: Vec<(f64, &String)> = self
            .entities
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != hi)
            .map(|(i, e)| (linalg::dot_slice(&target, &self.latent[i]), e))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(scored.into_iter().map(|(_, e)| e.clone()).collect())
    }

    fn entity_index(&self, e: &str) -> Result<usize> {
        self.entities
            .iter()
            .position(|x| x == e)
            .ok_or_else(|| Error::MissingEmbedding(e.into()))
    }
}

fn apply(q: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    q.iter().map(|row| linalg::dot_slice(row, z)).collect()
}

pub fn make_synthetic_kg(n_entities: usize, n_relations: usize, nh: usize, seed: u64) -> Result<SyntheticKg> {
    if n_entities < 4 || n_relations < 2 {
        return Err(Error::invalid("need n_entities >= 4 and n_relations >= 2"));
    }
    let d = KG_LATENT_DIM.min(nh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // embedding columns: nh×d isometry
    let cols = orthonormal_columns(&mut rng, nh, d);
    let maps: Vec<Vec<Vec<f64>>> = (0..n_relations)
        .map(|_| orthonormal_columns(&mut rng, d, d))
        .collect();

    let n_roots = (n_entities / 10).max(2);
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(n_entities);
    let noise_std = KG_GROWTH_NOISE / (d as f64).sqrt();
    for i in 0..n_entities {
        let z = if i < n_roots {
            unit(gaussian(&mut rng, d, 1.0))
        } else {
            let parent = rng.random_range(0..i);
            let r = rng.random_range(0..n_relations);
            let base = apply(&maps[r], &latent[parent]);
            let noise = gaussian(&mut rng, d, noise_std);
            unit(base.iter().zip(&noise).map(|(a, b)| a + b).collect())
        };
        latent.push(z);
    }

    let entities: Vec<String> = (0..n_entities).map(entity_text).collect();
    let relations: Vec<String> = (0..n_relations).map(relation_text).collect();
    let mut triples = Vec::new();
    let mut per_relation = vec![0usize; n_relations];
    for h in 0..n_entities {
        for (r, q) in maps.iter().enumerate() {
            let target = apply(q, &latent[h]);
            let (mut best, mut best_cos) = (usize::MAX, f64::NEG_INFINITY);
            for (t, z) in latent.iter().enumerate() {
                if t == h {
                    continue;
                }
                let c = linalg::dot_slice(&target, z);
                if c > best_cos {
                    best = t;
                    best_cos = c;
                }
            }
            if best_cos > KG_FACT_THRESHOLD {
                triples.push(KgTriple::new(entities[h].clone(), relations[r].clone(), entities[best].clone())?);
                per_relation[r] += 1;
            }
        }
    }
    if let Some(r) = per_relation.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("relation {r} has no facts")));
    }

    triples.shuffle(&mut rng);
    let n = triples.len();
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    if n_valid == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::invalid(format!("degenerate graph: only {n} facts")));
    }
    let test = triples.split_off(n_train + n_valid);
    let valid = triples.split_off(n_train);
    let train = triples;

    let mut store = EmbeddingStore::new(nh);
    for (e, z) in entities.iter().zip(&latent) {
        let mut h = vec![0.0; nh];
        for (zi, col) in z.iter().zip(&cols) {
            linalg::axpy(*zi, col, &mut h);
        }
        store.insert(e.clone(), Vector::new(h)?)?;
    }
    for r in &relations {
        store.insert(r.clone(), random_condition_embedding(&mut rng, nh))?;
        store.insert(inverse_relation(r), random_condition_embedding(&mut rng, nh))?;
    }
    Ok(SyntheticKg {
        train,
        valid,
        test,
        entities,
        relations,
        store,
        latent,
        maps,
    })
}
