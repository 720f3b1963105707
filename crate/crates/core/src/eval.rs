//! Metrics and analyses.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CstsQuadruplet, KgTriple};
use crate::encoder::EncoderProvider;
use crate::error::{Error, Result};
use crate::hypernet;
use crate::linalg::{self, Vector};
use crate::losses::LossConfig;
use crate::trainer::Model;

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 points"));
    }
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation of a constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMetrics {
    pub spearman: f64,
    pub pearson: f64,
}

/// Predicted similarity in native label units for each quadruplet.
pub fn predict_csts<'a>(model: &Model, provider: &EncoderProvider, quads: &'a [CstsQuadruplet], cfg: &LossConfig) -> Result<Vec<f64>> {
    let mut cache: HashMap<&'a str, Vector> = HashMap::new();
    let mut get = |t: &'a str| -> Result<Vector> {
        if let Some(v) = cache.get(t) {
            return Ok(v.clone());
        }
        let v = provider.embed(t)?;
        cache.insert(t, v.clone());
        Ok(v)
    };
    let mut ops: HashMap<&str, hypernet::ConditionOperator> = HashMap::new();
    let mut out = Vec::with_capacity(quads.len());
    for q in quads {
        let (s1, s2, c) = (get(&q.sentence1)?, get(&q.sentence2)?, get(&q.condition)?);
        let (a, b) = if model.params.mode().is_hyper() {
            if !ops.contains_key(q.condition.as_str()) {
                ops.insert(&q.condition, hypernet::generate_condition_matrix(&model.params, &c)?);
            }
            let op = &ops[q.condition.as_str()];
            (hypernet::project(op, &s1)?, hypernet::project(op, &s2)?)
        } else {
            (model.compose(&c, &s1)?, model.compose(&c, &s2)?)
        };
        out.push(cfg.unit_to_label(linalg::cosine_similarity(&a, &b)?));
    }
    Ok(out)
}

pub fn evaluate_csts(model: &Model, provider: &EncoderProvider, quads: &[CstsQuadruplet], cfg: &LossConfig) -> Result<CorrelationMetrics> {
    let pred = predict_csts(model, provider, quads, cfg)?;
    let gold: Vec<f64> = quads.iter().map(|q| q.label).collect();
    Ok(CorrelationMetrics {
        spearman: spearman(&pred, &gold)?,
        pearson: pearson(&pred, &gold)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResult {
    pub query_id: usize,
    /// 1-based, after filtering.
    pub gold_rank: usize,
    pub candidate_count: usize,
}

/// Filtered rank of `gold` among scored candidates. Filtered candidates
/// (other than gold) are dropped; equal scores are ordered by candidate text.
pub fn rank_from_scores(
    query_id: usize,
    scores: &[(&str, f64)],
    gold: &str,
    filter: &HashSet<String>,
) -> Result<RankingResult> {
    let gold_score = scores
        .iter()
        .find(|(c, _)| *c == gold)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::invalid(format!("gold {gold:?} is not a candidate")))?;
    let mut rank = 1;
    let mut count = 0;
    for (c, s) in scores {
        if *c != gold && filter.contains(*c) {
            continue;
        }
        count += 1;
        if *s > gold_score || (*s == gold_score && *c < gold) {
            rank += 1;
        }
    }
    Ok(RankingResult {
        query_id,
        gold_rank: rank,
        candidate_count: count,
    })
}

/// Ranks `query.tail` among `candidates` by `φ(compose(r, h), candidate)`.
pub fn rank_entities(
    model: &Model,
    provider: &EncoderProvider,
    query: &KgTriple,
    candidates: &[String],
    filter: &HashSet<String>,
) -> Result<RankingResult> {
    let h_hr = model.compose(&provider.embed(&query.relation)?, &provider.embed(&query.head)?)?;
    let scores: Vec<(&str, f64)> = candidates
        .iter()
        .map(|c| Ok((c.as_str(), linalg::cosine_similarity(&h_hr, &provider.embed(c)?)?)))
        .collect::<Result<_>>()?;
    rank_from_scores(0, &scores, &query.tail, filter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    /// Keyed by `k`.
    pub hits: BTreeMap<usize, f64>,
}

pub fn mrr_hits(results: &[RankingResult], ks: &[usize]) -> Result<RankMetrics> {
    if results.is_empty() {
        return Err(Error::Empty("ranking results"));
    }
    let n = results.len() as f64;
    let mrr = results.iter().map(|r| 1.0 / r.gold_rank as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| (k, results.iter().filter(|r| r.gold_rank <= k).count() as f64 / n))
        .collect();
    Ok(RankMetrics { mrr, hits })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPredictionReport {
    pub tail: RankMetrics,
    pub head: Option<RankMetrics>,
    /// Mean of the two directions (equal to `tail` when head prediction is off).
    pub overall: RankMetrics,
}

pub const DEFAULT_KS: [usize; 3] = [1, 3, 10];

/// Filtered link prediction over every entity. Head prediction asks
/// `(t, inverse r, ?)`.
pub fn evaluate_link_prediction(
    model: &Model,
    provider: &EncoderProvider,
    queries: &[KgTriple],
    known: &[KgTriple],
    entities: &[String],
    both_directions: bool,
) -> Result<LinkPredictionReport> {
    let ent_vecs: Vec<Vector> = entities.iter().map(|e| provider.embed(e)).collect::<Result<_>>()?;
    let mut true_tails: HashMap<(&str, &str), HashSet<String>> = HashMap::new();
    let inverse: Vec<KgTriple> = known.iter().map(KgTriple::inverse).collect();
    for t in known.iter().chain(&inverse) {
        true_tails
            .entry((t.head.as_str(), t.relation.as_str()))
            .or_default()
            .insert(t.tail.clone());
    }
    let empty = HashSet::new();
    let mut ops: HashMap<String, Option<hypernet::ConditionOperator>> = HashMap::new();
    let mut run = |qs: &[KgTriple]| -> Result<Vec<RankingResult>> {
        let mut out = Vec::with_capacity(qs.len());
        for (qi, q) in qs.iter().enumerate() {
            let h = provider.embed(&q.head)?;
            let c = provider.embed(&q.relation)?;
            if !ops.contains_key(&q.relation) {
                let op = if model.params.mode().is_hyper() {
                    Some(hypernet::generate_condition_matrix(&model.params, &c)?)
                } else {
                    None
                };
                ops.insert(q.relation.clone(), op);
            }
            let h_hr = match &ops[&q.relation] {
                Some(op) => hypernet::project(op, &h)?,
                None => model.compose(&c, &h)?,
            };
            let scores: Vec<(&str, f64)> = entities
                .iter()
                .zip(&ent_vecs)
                .map(|(e, v)| Ok((e.as_str(), linalg::cosine_similarity(&h_hr, v)?)))
                .collect::<Result<_>>()?;
            let filter = true_tails
                .get(&(q.head.as_str(), q.relation.as_str()))
                .unwrap_or(&empty);
            out.push(rank_from_scores(qi, &scores, &q.tail, filter)?);
        }
        Ok(out)
    };
    let tail_results = run(queries)?;
    let tail = mrr_hits(&tail_results, &DEFAULT_KS)?;
    let head = if both_directions {
        let inv: Vec<KgTriple> = queries.iter().map(KgTriple::inverse).collect();
        Some(mrr_hits(&run(&inv)?, &DEFAULT_KS)?)
    } else {
        None
    };
    let overall = match &head {
        Some(h) => RankMetrics {
            mrr: (tail.mrr + h.mrr) / 2.0,
            hits: tail
                .hits
                .iter()
                .map(|(k, v)| (*k, (v + h.hits[k]) / 2.0))
                .collect(),
        },
        None => tail.clone(),
    };
    Ok(LinkPredictionReport { tail, head, overall })
}

/// Partitions `items` by whether their condition occurred in training.
pub fn split_seen_unseen<'a, T>(
    train_conditions: &HashSet<String>,
    items: &'a [T],
    condition: impl Fn(&T) -> &str,
) -> (Vec<&'a T>, Vec<&'a T>) {
    items
        .iter()
        .partition(|it| train_conditions.contains(condition(it)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

pub const DEFAULT_KMEANS_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeds. Stops when assignments stop
/// changing or after `max_iters` updates.
pub fn kmeans(points: &[Vector], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} points", points.len())));
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::dims(dim, p.dim()));
    }
    let pts: Vec<&[f64]> = points.iter().map(Vector::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..pts.len())];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, pts[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("positive mass");
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && x < d {
                    pick = i;
                    break;
                }
                x -= d;
            }
            pick
        } else {
            // Only duplicates remain; take any unchosen index.
            let free: Vec<usize> = (0..pts.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(&pts) {
            *d = d.min(sq_dist(p, pts[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| pts[i].to_vec()).collect();

    let mut assignments: Vec<usize> = pts.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in pts.iter().zip(&assignments) {
            linalg::axpy(1.0, p, &mut sums[a]);
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = pts.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = pts
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        iterations,
    })
}

/// Group-size-weighted entropy (natural log) of cluster assignments within
/// each label group. 0 when every group sits in a single cluster.
pub fn impurity<L: Eq + Hash>(assignments: &[usize], labels: &[L]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::dims(labels.len(), assignments.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("impurity input"));
    }
    let mut groups: HashMap<&L, HashMap<usize, usize>> = HashMap::new();
    for (l, &a) in labels.iter().zip(assignments) {
        *groups.entry(l).or_default().entry(a).or_default() += 1;
    }
    let total = labels.len() as f64;
    let mut out = 0.0;
    for counts in groups.values() {
        let size: usize = counts.values().sum();
        let size = size as f64;
        let entropy: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / size;
                -p * p.ln()
            })
            .sum();
        out += size / total * entropy;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub impurity: f64,
}

/// One point of the before/after clustering analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPoint {
    pub point_id: usize,
    pub sentence: String,
    pub condition: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAnalysis {
    pub points: Vec<ClusterPoint>,
    pub before: ClusterReport,
    pub after: ClusterReport,
}

/// Clusters `(sentence, condition)` points with k-means before projection
/// (raw sentence embedding) and after (composed embedding), and scores each
/// clustering by the impurity of the condition groups.
pub fn cluster_analysis(
    model: &Model,
    provider: &EncoderProvider,
    points: &[(String, String)],
    k: usize,
    seed: u64,
) -> Result<ClusterAnalysis> {
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} points", points.len())));
    }
    let mut ops: HashMap<&str, (Vector, Option<hypernet::ConditionOperator>)> = HashMap::new();
    let mut cond_ids: HashMap<&str, usize> = HashMap::new();
    let mut before = Vec::with_capacity(points.len());
    let mut after = Vec::with_capacity(points.len());
    let mut labels = Vec::with_capacity(points.len());
    for (s, c) in points {
        if !ops.contains_key(c.as_str()) {
            let h_c = provider.embed(c)?;
            let op = if model.params.mode().is_hyper() {
                Some(hypernet::generate_condition_matrix(&model.params, &h_c)?)
            } else {
                None
            };
            ops.insert(c, (h_c, op));
        }
        let next = cond_ids.len();
        labels.push(*cond_ids.entry(c).or_insert(next));
        let h_s = provider.embed(s)?;
        let (h_c, op) = &ops[c.as_str()];
        after.push(match op {
            Some(op) => hypernet::project(op, &h_s)?,
            None => model.compose(h_c, &h_s)?,
        });
        before.push(h_s);
    }
    let report = |pts: &[Vector]| -> Result<ClusterReport> {
        let km = kmeans(pts, k, seed, DEFAULT_KMEANS_ITERS)?;
        let imp = impurity(&km.assignments, &labels)?;
        Ok(ClusterReport {
            k,
            assignments: km.assignments,
            impurity: imp,
        })
    };
    Ok(ClusterAnalysis {
        before: report(&before)?,
        after: report(&after)?,
        points: points
            .iter()
            .enumerate()
            .map(|(i, (s, c))| ClusterPoint {
                point_id: i,
                sentence: s.clone(),
                condition: c.clone(),
            })
            .collect(),
    })
}

/// Cluster report TSV: `point_id`, `condition`, `cluster`.
pub fn cluster_tsv(points: &[ClusterPoint], report: &ClusterReport) -> String {
    let mut out = String::from("point_id\tcondition\tcluster\n");
    for (p, a) in points.iter().zip(&report.assignments) {
        out.push_str(&format!("{}\t{}\t{}\n", p.point_id, p.condition, a));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusReport {
    pub var_hyper: f64,
    pub var_diag: f64,
    pub hyper_norms: Vec<f64>,
    pub diag_norms: Vec<f64>,
}

/// Variance across conditions of the normalized Frobenius norm of the
/// generated operator versus `diag(h_c)`.
pub fn frobenius_variance_report(model: &Model, provider: &EncoderProvider, conditions: &[String]) -> Result<FrobeniusReport> {
    if conditions.is_empty() {
        return Err(Error::Empty("conditions"));
    }
    let mut hyper_norms = Vec::with_capacity(conditions.len());
    let mut diag_norms = Vec::with_capacity(conditions.len());
    for c in conditions {
        let h_c = provider.embed(c)?;
        let op = hypernet::generate_condition_matrix(&model.params, &h_c)?;
        hyper_norms.push(op.normalized_frobenius());
        diag_norms.push(hypernet::ConditionOperator::Diagonal(h_c).normalized_frobenius());
    }
    Ok(FrobeniusReport {
        var_hyper: linalg::variance(&hyper_norms)?,
        var_diag: linalg::variance(&diag_norms)?,
        hyper_norms,
        diag_norms,
    })
}
