//! Training objectives with analytic gradients.
//!
//! Every loss here is a function of cosine similarities between projected
//! embeddings. The `*_grad` variants return `∂L/∂input` for each input
//! vector; the trainer chains those back through the composer.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};

/// Smallest learnable KGC temperature.
pub const TAU_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau_csts: f64,
    /// Initial value; the trainer learns it.
    pub tau_kgc: f64,
    pub gamma: f64,
    pub use_self_neg: bool,
    pub use_prebatch_neg: bool,
    pub prebatch_size: usize,
    /// Include the contrastive twin term in the C-STS objective.
    pub use_cl: bool,
    /// Native C-STS label range, mapped affinely onto `[0, 1]`.
    pub label_min: f64,
    pub label_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau_csts: 1.5,
            tau_kgc: 0.05,
            gamma: 0.02,
            use_self_neg: true,
            use_prebatch_neg: true,
            prebatch_size: 2,
            use_cl: true,
            label_min: 1.0,
            label_max: 5.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_csts > 0.0) {
            return Err(Error::invalid("tau_csts must be > 0"));
        }
        if !(self.tau_kgc >= TAU_FLOOR) {
            return Err(Error::invalid(format!("tau_kgc must be >= {TAU_FLOOR}")));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("gamma must be >= 0"));
        }
        if !(self.label_max > self.label_min) {
            return Err(Error::invalid("label_max must exceed label_min"));
        }
        Ok(())
    }

    pub fn label_to_unit(&self, y: f64) -> f64 {
        (y - self.label_min) / (self.label_max - self.label_min)
    }

    pub fn unit_to_label(&self, s: f64) -> f64 {
        self.label_min + s * (self.label_max - self.label_min)
    }
}

/// Cosine similarity with its gradients.
pub(crate) fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let (na, nb) = (linalg::norm(a), linalg::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let inv = 1.0 / (na * nb);
    let phi = linalg::dot_slice(a, b) * inv;
    let da = a.iter().zip(b).map(|(x, y)| y * inv - phi * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x * inv - phi * y / (nb * nb)).collect();
    Ok((phi, da, db))
}

/// `ln Σ e^{z_i}` and the softmax of `z`.
fn log_softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|x| (x - m).exp()).sum();
    let lse = m + s.ln();
    (lse, z.iter().map(|x| (x - lse).exp()).collect())
}

/// `−ln softmax(z)₀`, accurate when the first logit dominates.
fn nll_first(z: &[f64]) -> f64 {
    let m = z[1..].iter().map(|x| x - z[0]).fold(f64::NEG_INFINITY, f64::max);
    if m <= 0.0 {
        z[1..].iter().map(|x| (x - z[0]).exp()).sum::<f64>().ln_1p()
    } else {
        m + ((-m).exp() + z[1..].iter().map(|x| (x - z[0] - m).exp()).sum::<f64>()).ln()
    }
}

/// Loss value and gradients of the C-STS twin InfoNCE term with respect to
/// `φ_hi` and `φ_lo`.
fn csts_cl_from_phi(phi_hi: f64, phi_lo: f64, tau: f64) -> (f64, f64, f64) {
    let z = [phi_hi / tau, phi_lo / tau];
    let (_, p) = log_softmax(&z);
    let loss = nll_first(&z);
    (loss, -p[1] / tau, p[1] / tau)
}

/// Twin InfoNCE: the pair under `c_high` is the positive, the pair under
/// `c_low` the only negative.
pub fn loss_csts_cl(h1_hi: &Vector, h2_hi: &Vector, h1_lo: &Vector, h2_lo: &Vector, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be > 0"));
    }
    let phi_hi = linalg::cosine_similarity(h1_hi, h2_hi)?;
    let phi_lo = linalg::cosine_similarity(h1_lo, h2_lo)?;
    Ok(csts_cl_from_phi(phi_hi, phi_lo, tau).0)
}

/// `(φ(h1c, h2c) − y)²`, with `y` already on the cosine scale.
pub fn loss_csts_mse(h1c: &Vector, h2c: &Vector, y: f64) -> Result<f64> {
    let phi = linalg::cosine_similarity(h1c, h2c)?;
    Ok((phi - y).powi(2))
}

/// Per-instance C-STS loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CstsTerms {
    pub mse: f64,
    pub cl: f64,
}

impl CstsTerms {
    pub fn total(&self) -> f64 {
        self.mse + self.cl
    }
}

/// Projected embeddings of one twin instance plus gradient slots.
pub(crate) struct TwinGrads {
    pub terms: CstsTerms,
    /// `∂L/∂` for `[h1_hi, h2_hi, h1_lo, h2_lo]`.
    pub grads: [Vec<f64>; 4],
}

/// Loss and input gradients for one twin instance. Labels are in unit range.
pub(crate) fn csts_instance_grad(
    h: [&[f64]; 4],
    y_hi: f64,
    y_lo: f64,
    cfg: &LossConfig,
) -> Result<TwinGrads> {
    let (phi_hi, d1h, d2h) = cosine_grad(h[0], h[1])?;
    let (phi_lo, d1l, d2l) = cosine_grad(h[2], h[3])?;
    let mse = (phi_hi - y_hi).powi(2) + (phi_lo - y_lo).powi(2);
    let mut g_hi = 2.0 * (phi_hi - y_hi);
    let mut g_lo = 2.0 * (phi_lo - y_lo);
    let mut cl = 0.0;
    if cfg.use_cl {
        let (l, gh, gl) = csts_cl_from_phi(phi_hi, phi_lo, cfg.tau_csts);
        cl = l;
        g_hi += gh;
        g_lo += gl;
    }
    let sc = |v: Vec<f64>, s: f64| v.into_iter().map(|x| x * s).collect::<Vec<_>>();
    Ok(TwinGrads {
        terms: CstsTerms { mse, cl },
        grads: [sc(d1h, g_hi), sc(d2h, g_hi), sc(d1l, g_lo), sc(d2l, g_lo)],
    })
}

/// One projected C-STS quadruplet: `(h_{s1 c}, h_{s2 c}, y)` in native
/// label units, tagged with its twin group.
#[derive(Clone, Debug)]
pub struct ProjectedQuad {
    pub pair_id: u64,
    pub h1: Vector,
    pub h2: Vector,
    pub label: f64,
}

/// Groups quadruplets into `(high, low)` twins by `pair_id`, preserving
/// first-seen order. The higher label is the high twin; on ties the first
/// seen is. Fails unless every id occurs exactly twice.
pub fn pair_twins<T, F>(items: &[T], pair_id: F, label: impl Fn(&T) -> f64) -> Result<Vec<(usize, usize)>>
where
    F: Fn(&T) -> u64,
{
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, it) in items.iter().enumerate() {
        let id = pair_id(it);
        let g = groups.entry(id).or_default();
        if g.is_empty() {
            order.push(id);
        }
        g.push(i);
    }
    order
        .into_iter()
        .map(|id| {
            let g = &groups[&id];
            if g.len() != 2 {
                return Err(Error::invalid(format!(
                    "pair_id {id} has {} quadruplets, twins need exactly 2",
                    g.len()
                )));
            }
            let (a, b) = (g[0], g[1]);
            Ok(if label(&items[b]) > label(&items[a]) { (b, a) } else { (a, b) })
        })
        .collect()
}

/// Mean over twin instances of `MSE(high) + MSE(low) + CL`.
pub fn loss_csts_total(batch: &[ProjectedQuad], cfg: &LossConfig) -> Result<f64> {
    Ok(csts_terms_mean(batch, cfg)?.total())
}

/// Like [`loss_csts_total`] but reports the two terms separately.
pub fn csts_terms_mean(batch: &[ProjectedQuad], cfg: &LossConfig) -> Result<CstsTerms> {
    let twins = pair_twins(batch, |q| q.pair_id, |q| q.label)?;
    if twins.is_empty() {
        return Err(Error::Empty("C-STS batch"));
    }
    let mut sum = CstsTerms::default();
    for (hi, lo) in &twins {
        let (a, b) = (&batch[*hi], &batch[*lo]);
        let t = csts_instance_grad(
            [a.h1.as_slice(), a.h2.as_slice(), b.h1.as_slice(), b.h2.as_slice()],
            cfg.label_to_unit(a.label),
            cfg.label_to_unit(b.label),
            cfg,
        )?
        .terms;
        sum.mse += t.mse;
        sum.cl += t.cl;
    }
    let n = twins.len() as f64;
    Ok(CstsTerms {
        mse: sum.mse / n,
        cl: sum.cl / n,
    })
}

pub(crate) struct KgcGrad {
    pub loss: f64,
    pub d_hr: Vec<f64>,
    pub d_tau: f64,
}

pub(crate) fn kgc_grad(h_hr: &[f64], h_t: &[f64], negatives: &[&[f64]], gamma: f64, tau: f64) -> Result<KgcGrad> {
    if negatives.is_empty() {
        return Err(Error::Empty("KGC negatives"));
    }
    if !(tau >= TAU_FLOOR) {
        return Err(Error::invalid(format!("tau must be >= {TAU_FLOOR}, got {tau}")));
    }
    let mut phis = Vec::with_capacity(negatives.len() + 1);
    let mut dphis = Vec::with_capacity(negatives.len() + 1);
    let (p, d, _) = cosine_grad(h_hr, h_t)?;
    phis.push(p - gamma);
    dphis.push(d);
    for n in negatives {
        let (p, d, _) = cosine_grad(h_hr, n)?;
        phis.push(p);
        dphis.push(d);
    }
    let z: Vec<f64> = phis.iter().map(|p| p / tau).collect();
    let (_, prob) = log_softmax(&z);
    let loss = nll_first(&z);
    let mut d_hr = vec![0.0; h_hr.len()];
    let mut d_tau = 0.0;
    for (i, (pi, dphi)) in prob.iter().zip(&dphis).enumerate() {
        let dz = pi - if i == 0 { 1.0 } else { 0.0 };
        linalg::axpy(dz / tau, dphi, &mut d_hr);
        d_tau -= dz * z[i] / tau;
    }
    Ok(KgcGrad { loss, d_hr, d_tau })
}

/// InfoNCE with an additive margin on the positive:
/// `−log e^{(φ⁺−γ)/τ} / (e^{(φ⁺−γ)/τ} + Σ_j e^{φ_j/τ})`.
pub fn loss_kgc(h_hr: &Vector, h_t: &Vector, negatives: &[Vector], gamma: f64, tau: f64) -> Result<f64> {
    let negs: Vec<&[f64]> = negatives.iter().map(Vector::as_slice).collect();
    Ok(kgc_grad(h_hr.as_slice(), h_t.as_slice(), &negs, gamma, tau)?.loss)
}

/// One embedded triple inside a KGC batch.
#[derive(Clone, Debug)]
pub struct KgItem {
    pub head: String,
    pub tail: String,
    pub h_head: Vector,
    pub h_tail: Vector,
}

/// Tail embeddings from the most recent completed batches.
#[derive(Clone, Debug, Default)]
pub struct PrebatchQueue {
    capacity: usize,
    batches: VecDeque<Vec<(String, Vector)>>,
}

impl PrebatchQueue {
    pub fn new(capacity: usize) -> Self {
        PrebatchQueue {
            capacity,
            batches: VecDeque::new(),
        }
    }

    pub fn push(&mut self, batch: &[KgItem]) {
        if self.capacity == 0 {
            return;
        }
        if self.batches.len() == self.capacity {
            self.batches.pop_front();
        }
        self.batches
            .push_back(batch.iter().map(|it| (it.tail.clone(), it.h_tail.clone())).collect());
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Vector)> {
        self.batches.iter().flatten()
    }
}

/// Negatives for item `i`: other in-batch tails, optionally the head itself
/// and pre-batch tails. Anything whose text equals the gold tail is dropped.
pub fn assemble_negatives<'a>(
    batch: &'a [KgItem],
    i: usize,
    cfg: &LossConfig,
    prebatch: &'a PrebatchQueue,
) -> Vec<&'a Vector> {
    let gold = &batch[i].tail;
    let mut out: Vec<&Vector> = batch
        .iter()
        .enumerate()
        .filter(|(j, it)| *j != i && it.tail != *gold)
        .map(|(_, it)| &it.h_tail)
        .collect();
    if cfg.use_self_neg && batch[i].head != *gold {
        out.push(&batch[i].h_head);
    }
    if cfg.use_prebatch_neg {
        out.extend(prebatch.iter().filter(|(t, _)| t != gold).map(|(_, v)| v));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub checked: usize,
    /// `max |a − n| / max(1, |a|, |n|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares `analytic` against central differences of `loss` at `x0`.
/// `coords` restricts the check to a subset; `None` checks all.
pub fn grad_check<F>(
    mut loss: F,
    x0: &[f64],
    analytic: &[f64],
    epsilon: f64,
    coords: Option<&[usize]>,
) -> Result<GradientCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must be in [1e-7, 1e-3], got {epsilon}")));
    }
    if analytic.len() != x0.len() {
        return Err(Error::dims(x0.len(), analytic.len()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x0.len()).collect();
            &all
        }
    };
    let mut x = x0.to_vec();
    let mut report = GradientCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let finite = |v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("loss {v}")))
        }
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + epsilon;
        let up = finite(loss(&x)?)?;
        x[i] = orig - epsilon;
        let down = finite(loss(&x)?)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::new((0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    /// Unit vectors with a prescribed cosine to `[1, 0]`.
    fn at_cos(c: f64) -> Vector {
        v(&[c, (1.0 - c * c).max(0.0).sqrt()])
    }

    #[test]
    fn csts_cl_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rv(&mut rng, 6), rv(&mut rng, 6));
        for tau in [0.05, 1.0, 1.5] {
            let l = loss_csts_cl(&a, &b, &a, &b, tau).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
        }
        let e = v(&[1.0, 0.0]);
        let l = loss_csts_cl(&e, &e, &e, &e.scale(-1.0), 1.0).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);
        assert!(loss_csts_cl(&e, &e, &e, &e, 0.0).is_err());
        assert!(matches!(
            loss_csts_cl(&Vector::zeros(2), &e, &e, &e, 1.0),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn csts_cl_rises_toward_ln2_with_tau() {
        let e = v(&[1.0, 0.0]);
        let (hi, lo) = (at_cos(0.8), at_cos(-0.3));
        let mut prev = 0.0;
        let mut tau = 0.0;
        for k in 0..40 {
            tau = 0.01 * 1.3f64.powi(k);
            let l = loss_csts_cl(&e, &hi, &e, &lo, tau).unwrap();
            assert!(l > prev, "tau {tau}: {l} <= {prev}");
            assert!(l < std::f64::consts::LN_2);
            prev = l;
        }
        // ln(1 + e^{-Δ/τ}) ≈ ln 2 − Δ/(2τ) for large τ
        assert!(std::f64::consts::LN_2 - prev < 1.1 / (2.0 * tau) + 1e-6);
    }

    #[test]
    fn csts_cl_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h: Vec<Vector> = (0..4).map(|_| rv(&mut rng, 5)).collect();
        let base = loss_csts_cl(&h[0], &h[1], &h[2], &h[3], 1.5).unwrap();
        let scaled = loss_csts_cl(&h[0].scale(3.0), &h[1], &h[2].scale(0.1), &h[3], 1.5).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let e = v(&[1.0, 0.0]);
        assert!(loss_csts_mse(&e, &at_cos(0.6), 0.6).unwrap().abs() < 1e-24);
        assert!((loss_csts_mse(&e, &e, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (rv(&mut rng, 7), rv(&mut rng, 7));
        let y = 0.3;
        let (phi, da, db) = cosine_grad(a.as_slice(), b.as_slice()).unwrap();
        let analytic: Vec<f64> = da
            .iter()
            .chain(&db)
            .map(|g| 2.0 * (phi - y) * g)
            .collect();
        let x0: Vec<f64> = a.as_slice().iter().chain(b.as_slice()).copied().collect();
        let rep = grad_check(
            |x| loss_csts_mse(&v(&x[..7]), &v(&x[7..]), y),
            &x0,
            &analytic,
            1e-6,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    fn quad(pair_id: u64, h1: Vector, h2: Vector, label: f64) -> ProjectedQuad {
        ProjectedQuad { pair_id, h1, h2, label }
    }

    #[test]
    fn csts_total_is_ln2_when_labels_fit() {
        let cfg = LossConfig::default();
        let e = v(&[1.0, 0.0]);
        // φ = 0.5 ⇒ unit label 0.5 ⇒ native 3.0
        let h = at_cos(0.5);
        let batch: Vec<_> = (0..3)
            .flat_map(|i| [quad(i, e.clone(), h.clone(), 3.0), quad(i, e.clone(), h.clone(), 3.0)])
            .collect();
        let total = loss_csts_total(&batch, &cfg).unwrap();
        assert!((total - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn csts_total_mean_and_resummation() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut batch = Vec::new();
        for i in 0..3 {
            for _ in 0..2 {
                batch.push(quad(i, rv(&mut rng, 5), rv(&mut rng, 5), rng.random_range(1.0..5.0)));
            }
        }
        let total = loss_csts_total(&batch, &cfg).unwrap();

        let mut hand = 0.0;
        for i in 0..3 {
            let (a, b) = (&batch[2 * i], &batch[2 * i + 1]);
            let (hi, lo) = if b.label > a.label { (b, a) } else { (a, b) };
            let u = |y: f64| (y - 1.0) / 4.0;
            hand += loss_csts_mse(&hi.h1, &hi.h2, u(hi.label)).unwrap()
                + loss_csts_mse(&lo.h1, &lo.h2, u(lo.label)).unwrap()
                + loss_csts_cl(&hi.h1, &hi.h2, &lo.h1, &lo.h2, 1.5).unwrap();
        }
        assert!((total - hand / 3.0).abs() < 1e-12);

        let mut doubled = batch.clone();
        doubled.extend(batch.iter().map(|q| quad(q.pair_id + 100, q.h1.clone(), q.h2.clone(), q.label)));
        assert!((loss_csts_total(&doubled, &cfg).unwrap() - total).abs() < 1e-12);

        batch.pop();
        assert!(loss_csts_total(&batch, &cfg).is_err());
    }

    #[test]
    fn kgc_identities() {
        let e = v(&[1.0, 0.0]);
        // φ_pos − γ = φ_neg with one negative
        let gamma = 0.2;
        let l = loss_kgc(&e, &at_cos(0.7), &[at_cos(0.5)], gamma, 0.05).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9);
        let l = loss_kgc(&e, &e, &[e.scale(-1.0)], 0.0, 1.0).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!(matches!(loss_kgc(&e, &e, &[], 0.0, 1.0), Err(Error::Empty(_))));
        assert!(loss_kgc(&e, &e, std::slice::from_ref(&e), 0.0, 1e-4).is_err());
    }

    #[test]
    fn kgc_more_negatives_never_decrease_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (q, t) = (rv(&mut rng, 8), rv(&mut rng, 8));
            let mut negs = vec![rv(&mut rng, 8)];
            let mut prev = loss_kgc(&q, &t, &negs, 0.02, 0.05).unwrap();
            for _ in 0..10 {
                negs.push(rv(&mut rng, 8));
                let l = loss_kgc(&q, &t, &negs, 0.02, 0.05).unwrap();
                assert!(l >= prev);
                prev = l;
            }
        }
    }

    #[test]
    fn losses_finite_and_bounded_at_small_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let h: Vec<Vector> = (0..6).map(|_| rv(&mut rng, 4)).collect();
            let l = loss_kgc(&h[0], &h[1], &h[2..], 0.0, TAU_FLOOR).unwrap();
            assert!(l.is_finite() && l >= 0.0);
            let tau = 0.5;
            // with γ = 0: loss < ln(1+N) + (φ_max_neg − φ_pos)/τ slack ≤ ln(1+N) + 2/τ
            let l = loss_kgc(&h[0], &h[1], &h[2..], 0.0, tau).unwrap();
            assert!(l < (5f64).ln() + 2.0 / tau);
            let l = loss_csts_cl(&h[0], &h[1], &h[2], &h[3], TAU_FLOOR).unwrap();
            assert!(l.is_finite() && l >= 0.0);
        }
    }

    #[test]
    fn kgc_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, t) = (rv(&mut rng, 6), rv(&mut rng, 6));
        let negs: Vec<Vector> = (0..4).map(|_| rv(&mut rng, 6)).collect();
        let nslices: Vec<&[f64]> = negs.iter().map(Vector::as_slice).collect();
        let tau = 0.3;
        let g = kgc_grad(q.as_slice(), t.as_slice(), &nslices, 0.02, tau).unwrap();
        let mut x0 = q.as_slice().to_vec();
        x0.push(tau);
        let mut analytic = g.d_hr.clone();
        analytic.push(g.d_tau);
        let rep = grad_check(
            |x| loss_kgc(&v(&x[..6]), &t, &negs, 0.02, x[6]),
            &x0,
            &analytic,
            1e-6,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    fn item(head: &str, tail: &str, rng: &mut ChaCha8Rng) -> KgItem {
        KgItem {
            head: head.into(),
            tail: tail.into(),
            h_head: rv(rng, 3),
            h_tail: rv(rng, 3),
        }
    }

    #[test]
    fn negative_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let off = LossConfig {
            use_self_neg: false,
            use_prebatch_neg: false,
            ..LossConfig::default()
        };
        let q = PrebatchQueue::new(2);

        let one = vec![item("a", "b", &mut rng)];
        let negs = assemble_negatives(&one, 0, &off, &q);
        assert!(negs.is_empty());
        let owned: Vec<Vector> = negs.into_iter().cloned().collect();
        assert!(loss_kgc(&one[0].h_head, &one[0].h_tail, &owned, 0.0, 0.05).is_err());

        let four: Vec<_> = [("a", "w"), ("b", "x"), ("c", "y"), ("d", "z")]
            .iter()
            .map(|(h, t)| item(h, t, &mut rng))
            .collect();
        assert_eq!(assemble_negatives(&four, 0, &off, &q).len(), 3);

        // gold tail "x" repeated: the duplicate is excluded
        let dup: Vec<_> = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "z")]
            .iter()
            .map(|(h, t)| item(h, t, &mut rng))
            .collect();
        let negs = assemble_negatives(&dup, 0, &off, &q);
        assert_eq!(negs.len(), 2);
        // enumeration oracle
        let expect: Vec<&Vector> = dup[1..]
            .iter()
            .filter(|it| it.tail != "x")
            .map(|it| &it.h_tail)
            .collect();
        assert_eq!(negs, expect);

        let on = LossConfig::default();
        let mut q = PrebatchQueue::new(2);
        q.push(&four);
        q.push(&dup);
        q.push(&four);
        // in-batch 3 + self 1 + prebatch (dup minus gold "w"? none match "w") 4 + four minus "w" 3
        assert_eq!(assemble_negatives(&four, 0, &on, &q).len(), 3 + 1 + 4 + 3);
    }

    #[test]
    fn grad_check_rejects_bad_epsilon_and_reports_zero_for_unused() {
        let x0 = [1.0, 2.0];
        assert!(grad_check(|x| Ok(x[0]), &x0, &[1.0, 0.0], 0.0, None).is_err());
        let rep = grad_check(|x| Ok(x[0] * x[0]), &x0, &[2.0, 0.0], 1e-5, Some(&[1])).unwrap();
        assert_eq!(rep.max_rel_error, 0.0);
        assert!(grad_check(|_| Ok(f64::NAN), &x0, &[0.0, 0.0], 1e-5, None).is_err());
    }
}
