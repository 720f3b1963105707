//! Optimization of the composer over frozen embeddings.
//!
//! The graph per example is small and fixed (lookup → operator generation →
//! projection → cosine → loss), so gradients are pushed back by hand through
//! each stage rather than through a general tape. Operators are generated
//! once per distinct condition per batch and their gradients accumulated
//! there before flowing into the hypernetwork weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{twin_instances, CstsQuadruplet, KgTriple, TwinInstance};
use crate::encoder::{EmbeddingStore, EncoderProvider};
use crate::error::{Error, Result};
use crate::hypernet::{
    self, concat_backward, concat_forward, concat_input, dropout_mask, generate_backward,
    project_backward, project_traced, ConditionOperator, HyperNetParams, Mode, OperatorGrad,
    ParamGrads, ProjectTrace,
};
use crate::linalg::Vector;
use crate::losses::{
    self, assemble_negatives, csts_instance_grad, CstsTerms, GradientCheckReport, KgItem,
    LossConfig, PrebatchQueue, TAU_FLOOR,
};
use crate::optim::AdamW;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Csts,
    Kgc,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csts" => Ok(Task::Csts),
            "kgc" => Ok(Task::Kgc),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub mode: Mode,
    pub nh: usize,
    /// Low-rank width; defaults to `⌊nh/12⌋`.
    pub nk: Option<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    /// Keep the hypernetwork bias; when false it is zeroed and frozen.
    pub use_bias: bool,
    /// KGC: also train on `(t, inverse r, h)`.
    pub add_inverse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Csts,
            mode: Mode::Full,
            nh: 64,
            nk: None,
            lr: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            loss: LossConfig::default(),
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            dropout_p: hypernet::DEFAULT_DROPOUT,
            use_bias: true,
            add_inverse: true,
        }
    }
}

impl TrainConfig {
    pub fn rank(&self) -> usize {
        self.nk.unwrap_or_else(|| hypernet::default_rank(self.nh))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nh == 0 {
            return Err(Error::invalid("nh must be positive"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::invalid("lr must be >= 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if self.mode == Mode::Lowrank && !(1..=self.nh).contains(&self.rank()) {
            return Err(Error::invalid(format!("nk must be in 1..={}", self.nh)));
        }
        if self.task == Task::Csts && self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.loss.validate()
    }
}

/// Everything the trainer learns: composer params and the KGC temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: HyperNetParams,
    pub tau_kgc: f64,
}

impl Model {
    pub fn init(cfg: &TrainConfig) -> Result<Model> {
        let mut params = hypernet::init_params(cfg.mode, cfg.nh, cfg.rank(), cfg.seed)?;
        if cfg.mode == Mode::Concat {
            params.set_dropout(cfg.dropout_p)?;
        }
        if !cfg.use_bias {
            params.disable_bias();
        }
        Ok(Model {
            params,
            tau_kgc: cfg.loss.tau_kgc,
        })
    }

    /// Composer params followed by `tau_kgc`.
    pub fn flat(&self) -> Vec<f64> {
        let mut x = self.params.flat();
        x.push(self.tau_kgc);
        x
    }

    pub fn set_flat(&mut self, x: &[f64]) -> Result<()> {
        let n = self.params.num_scalars();
        if x.len() != n + 1 {
            return Err(Error::dims(n + 1, x.len()));
        }
        self.params.set_flat(&x[..n])?;
        self.tau_kgc = x[n];
        Ok(())
    }

    pub fn compose(&self, h_c: &Vector, h_s: &Vector) -> Result<Vector> {
        hypernet::compose(&self.params, h_c, h_s)
    }
}

/// Gradients for every learnable scalar of a [`Model`].
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub params: ParamGrads,
    pub tau_kgc: f64,
}

impl ModelGrads {
    pub fn zeros(m: &Model) -> Self {
        ModelGrads {
            params: m.params.zero_grads(),
            tau_kgc: 0.0,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut g = self.params.flat();
        g.push(self.tau_kgc);
        g
    }
}

/// Provider outputs for every text the trainer touches, computed once.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    map: HashMap<String, Vector>,
}

impl EmbeddingTable {
    pub fn build<'a>(provider: &EncoderProvider, texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut map = HashMap::new();
        for t in texts {
            if !map.contains_key(t) {
                map.insert(t.to_owned(), provider.embed(t)?);
            }
        }
        Ok(EmbeddingTable { map })
    }

    pub fn get(&self, text: &str) -> Result<&Vector> {
        self.map
            .get(text)
            .ok_or_else(|| Error::MissingEmbedding(text.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

enum Trace {
    Hyper { slot: usize, proj: ProjectTrace },
    Concat { x: Vec<f64> },
    Hadamard,
}

/// Per-batch composition with operator reuse and gradient accumulation.
struct BatchComposer<'a> {
    params: &'a HyperNetParams,
    index: HashMap<&'a str, usize>,
    conds: Vec<&'a Vector>,
    ops: Vec<ConditionOperator>,
    op_grads: Vec<OperatorGrad>,
}

impl<'a> BatchComposer<'a> {
    fn new(params: &'a HyperNetParams) -> Self {
        BatchComposer {
            params,
            index: HashMap::new(),
            conds: Vec::new(),
            ops: Vec::new(),
            op_grads: Vec::new(),
        }
    }

    fn slot(&mut self, text: &'a str, h_c: &'a Vector) -> Result<usize> {
        if let Some(&s) = self.index.get(text) {
            return Ok(s);
        }
        if h_c.dim() != self.params.nh() {
            return Err(Error::dims(self.params.nh(), h_c.dim()));
        }
        let s = self.conds.len();
        self.index.insert(text, s);
        self.conds.push(h_c);
        if self.params.mode().is_hyper() {
            let op = hypernet::generate_condition_matrix(self.params, h_c)?;
            self.op_grads.push(OperatorGrad::zeros_like(&op));
            self.ops.push(op);
        }
        Ok(s)
    }

    fn forward(&self, slot: usize, h_s: &[f64], rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, Trace)> {
        let h_c = self.conds[slot].as_slice();
        match self.params.mode() {
            Mode::Full | Mode::Lowrank => {
                let (out, proj) = project_traced(&self.ops[slot], h_s)?;
                Ok((out, Trace::Hyper { slot, proj }))
            }
            Mode::Hadamard => {
                if h_s.len() != h_c.len() {
                    return Err(Error::dims(h_c.len(), h_s.len()));
                }
                Ok((h_c.iter().zip(h_s).map(|(a, b)| a * b).collect(), Trace::Hadamard))
            }
            Mode::Concat => {
                if h_s.len() != h_c.len() {
                    return Err(Error::dims(h_c.len(), h_s.len()));
                }
                let p = self.params.dropout_p();
                let mask = match rng {
                    Some(r) if p > 0.0 => Some(dropout_mask(2 * h_c.len(), p, r)),
                    _ => None,
                };
                let x = concat_input(h_c, h_s, mask.as_deref());
                Ok((concat_forward(self.params, &x), Trace::Concat { x }))
            }
        }
    }

    fn backward(&mut self, trace: &Trace, h_s: &[f64], g: &[f64], grads: &mut ParamGrads) {
        match trace {
            Trace::Hyper { slot, proj } => {
                project_backward(&self.ops[*slot], h_s, proj, g, &mut self.op_grads[*slot]);
            }
            Trace::Concat { x } => concat_backward(x, g, grads),
            Trace::Hadamard => {}
        }
    }

    fn finish(self, grads: &mut ParamGrads) {
        for (h_c, og) in self.conds.iter().zip(&self.op_grads) {
            generate_backward(self.params, h_c.as_slice(), og, grads);
        }
    }
}

/// Mean C-STS loss over `batch`; with `grads`, accumulates the gradient of
/// that mean.
pub fn csts_batch_loss(
    model: &Model,
    table: &EmbeddingTable,
    batch: &[&TwinInstance],
    cfg: &LossConfig,
    mut rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut ModelGrads>,
) -> Result<CstsTerms> {
    if batch.is_empty() {
        return Err(Error::Empty("C-STS batch"));
    }
    let mut comp = BatchComposer::new(&model.params);
    let mut sum = CstsTerms::default();
    let scale = 1.0 / batch.len() as f64;
    let mut pending = Vec::new();
    for inst in batch {
        let s1 = table.get(&inst.sentence1)?.as_slice();
        let s2 = table.get(&inst.sentence2)?.as_slice();
        let hi = comp.slot(&inst.cond_high, table.get(&inst.cond_high)?)?;
        let lo = comp.slot(&inst.cond_low, table.get(&inst.cond_low)?)?;
        let inputs = [(hi, s1), (hi, s2), (lo, s1), (lo, s2)];
        let mut outs = Vec::with_capacity(4);
        for (slot, h_s) in inputs {
            outs.push(comp.forward(slot, h_s, rng.as_deref_mut())?);
        }
        let t = csts_instance_grad(
            [&outs[0].0, &outs[1].0, &outs[2].0, &outs[3].0],
            cfg.label_to_unit(inst.label_high),
            cfg.label_to_unit(inst.label_low),
            cfg,
        )?;
        sum.mse += t.terms.mse * scale;
        sum.cl += t.terms.cl * scale;
        if grads.is_some() {
            pending.push((inputs, outs, t.grads));
        }
    }
    if let Some(g) = grads {
        for (inputs, outs, gs) in &pending {
            for (((_, h_s), (_, trace)), gi) in inputs.iter().zip(outs).zip(gs) {
                let gi: Vec<f64> = gi.iter().map(|x| x * scale).collect();
                comp.backward(trace, h_s, &gi, &mut g.params);
            }
        }
        comp.finish(&mut g.params);
    }
    Ok(sum)
}

/// Mean KGC loss over `batch`, negatives drawn per
/// [`losses::assemble_negatives`]. With `grads`, also accumulates
/// gradients for the composer and `tau_kgc`.
pub fn kgc_batch_loss(
    model: &Model,
    table: &EmbeddingTable,
    batch: &[&KgTriple],
    cfg: &LossConfig,
    prebatch: &PrebatchQueue,
    mut rng: Option<&mut ChaCha8Rng>,
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("KGC batch"));
    }
    let items = kg_items(table, batch)?;
    let mut comp = BatchComposer::new(&model.params);
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut pending = Vec::new();
    let mut d_tau = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let slot = comp.slot(&t.relation, table.get(&t.relation)?)?;
        let h_head = items[i].h_head.as_slice();
        let (h_hr, trace) = comp.forward(slot, h_head, rng.as_deref_mut())?;
        let negs: Vec<&[f64]> = assemble_negatives(&items, i, cfg, prebatch)
            .into_iter()
            .map(Vector::as_slice)
            .collect();
        let g = losses::kgc_grad(&h_hr, items[i].h_tail.as_slice(), &negs, cfg.gamma, model.tau_kgc)?;
        total += g.loss * scale;
        d_tau += g.d_tau * scale;
        if grads.is_some() {
            pending.push((h_head, trace, g.d_hr));
        }
    }
    if let Some(gr) = grads {
        for (h_s, trace, d) in &pending {
            let d: Vec<f64> = d.iter().map(|x| x * scale).collect();
            comp.backward(trace, h_s, &d, &mut gr.params);
        }
        comp.finish(&mut gr.params);
        gr.tau_kgc += d_tau;
    }
    Ok(total)
}

fn kg_items(table: &EmbeddingTable, batch: &[&KgTriple]) -> Result<Vec<KgItem>> {
    batch
        .iter()
        .map(|t| {
            Ok(KgItem {
                head: t.head.clone(),
                tail: t.tail.clone(),
                h_head: table.get(&t.head)?.clone(),
                h_tail: table.get(&t.tail)?.clone(),
            })
        })
        .collect()
}

pub enum TrainData {
    Csts(Vec<CstsQuadruplet>),
    Kgc(Vec<KgTriple>),
}

impl TrainData {
    fn task(&self) -> Task {
        match self {
            TrainData::Csts(_) => Task::Csts,
            TrainData::Kgc(_) => Task::Kgc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub task: Task,
    pub mode: Mode,
    pub seed: u64,
    /// Instance-weighted mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_tau_kgc: f64,
    pub checkpoint: Option<PathBuf>,
    pub wall_ms: f64,
}

/// Trains a fresh model on `data`. The provider is only read.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    provider: &EncoderProvider,
    checkpoint_path: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if data.task() != cfg.task {
        return Err(Error::invalid("data does not match configured task"));
    }
    if provider.dim() != cfg.nh {
        return Err(Error::invalid(format!(
            "provider dim {} does not match nh {}",
            provider.dim(),
            cfg.nh
        )));
    }
    let start = Instant::now();
    let mut model = Model::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_696e));
    let sizes: Vec<usize> = model
        .params
        .tensors()
        .iter()
        .map(|t| t.data.len())
        .chain([1])
        .collect();
    // Biases and the temperature are not decayed.
    let decay: Vec<bool> = model
        .params
        .tensors()
        .iter()
        .map(|t| !t.name.ends_with("_bias"))
        .chain([false])
        .collect();
    let mut opt = AdamW::new(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay, &sizes);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    match data {
        TrainData::Csts(quads) => {
            let twins = twin_instances(quads)?;
            if twins.is_empty() {
                return Err(Error::Empty("training data"));
            }
            let table = EmbeddingTable::build(
                provider,
                twins.iter().flat_map(|t| {
                    [&t.sentence1, &t.sentence2, &t.cond_high, &t.cond_low].map(String::as_str)
                }),
            )?;
            let mut order: Vec<usize> = (0..twins.len()).collect();
            for epoch in 0..cfg.epochs {
                order.shuffle(&mut rng);
                let mut acc = 0.0;
                for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    let batch: Vec<&TwinInstance> = chunk.iter().map(|&i| &twins[i]).collect();
                    let mut grads = ModelGrads::zeros(&model);
                    let terms = csts_batch_loss(&model, &table, &batch, &cfg.loss, Some(&mut rng), Some(&mut grads))?;
                    if !terms.total().is_finite() {
                        return Err(Error::TrainingDiverged {
                            epoch,
                            batch: b,
                            detail: format!("mse {} cl {}", terms.mse, terms.cl),
                        });
                    }
                    apply_step(&mut opt, &mut model, &grads, &decay);
                    acc += terms.total() * batch.len() as f64;
                }
                epoch_losses.push(acc / twins.len() as f64);
                debug!("epoch {epoch}: loss {:.6}", epoch_losses[epoch]);
            }
        }
        TrainData::Kgc(triples) => {
            if triples.is_empty() {
                return Err(Error::Empty("training data"));
            }
            let mut all: Vec<KgTriple> = triples.clone();
            if cfg.add_inverse {
                all.extend(triples.iter().map(KgTriple::inverse));
            }
            let table = EmbeddingTable::build(
                provider,
                all.iter()
                    .flat_map(|t| [&t.head, &t.relation, &t.tail].map(String::as_str)),
            )?;
            let mut order: Vec<usize> = (0..all.len()).collect();
            let mut queue = PrebatchQueue::new(if cfg.loss.use_prebatch_neg {
                cfg.loss.prebatch_size
            } else {
                0
            });
            for epoch in 0..cfg.epochs {
                order.shuffle(&mut rng);
                let mut acc = 0.0;
                for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    let batch: Vec<&KgTriple> = chunk.iter().map(|&i| &all[i]).collect();
                    let mut grads = ModelGrads::zeros(&model);
                    let loss = kgc_batch_loss(&model, &table, &batch, &cfg.loss, &queue, Some(&mut rng), Some(&mut grads))?;
                    if !loss.is_finite() {
                        return Err(Error::TrainingDiverged {
                            epoch,
                            batch: b,
                            detail: format!("kgc loss {loss}, tau {}", model.tau_kgc),
                        });
                    }
                    apply_step(&mut opt, &mut model, &grads, &decay);
                    model.tau_kgc = model.tau_kgc.max(TAU_FLOOR);
                    queue.push(&kg_items(&table, &batch)?);
                    acc += loss * batch.len() as f64;
                }
                epoch_losses.push(acc / all.len() as f64);
                debug!("epoch {epoch}: loss {:.6} tau {:.4}", epoch_losses[epoch], model.tau_kgc);
            }
        }
    }

    if let Some(p) = checkpoint_path {
        checkpoint::save(p, &model)?;
    }
    let report = TrainReport {
        task: cfg.task,
        mode: cfg.mode,
        seed: cfg.seed,
        epoch_losses,
        final_tau_kgc: model.tau_kgc,
        checkpoint: checkpoint_path.map(Path::to_path_buf),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    info!(
        "trained {} {} for {} epochs in {:.0} ms (seed {})",
        cfg.task_name(),
        cfg.mode,
        cfg.epochs,
        report.wall_ms,
        cfg.seed
    );
    Ok((model, report))
}

impl TrainConfig {
    fn task_name(&self) -> &'static str {
        match self.task {
            Task::Csts => "csts",
            Task::Kgc => "kgc",
        }
    }
}

fn apply_step(opt: &mut AdamW, model: &mut Model, grads: &ModelGrads, decay: &[bool]) {
    let mut tau = [model.tau_kgc];
    {
        let mut params: Vec<&mut [f64]> = model
            .params
            .tensors_mut()
            .iter_mut()
            .map(|t| t.data.as_mut_slice())
            .collect();
        params.push(&mut tau);
        let tau_grad = [grads.tau_kgc];
        let mut gs: Vec<&[f64]> = grads.params.tensors.iter().map(Vec::as_slice).collect();
        gs.push(&tau_grad);
        opt.step(&mut params, &gs, decay);
    }
    model.tau_kgc = tau[0];
}

type LossFn<'a> = dyn FnMut(&Model, Option<&mut ModelGrads>) -> Result<f64> + 'a;

/// Options for [`model_grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub nh: usize,
    pub nk: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Random configurations to check.
    pub probes: usize,
    /// Coordinates sampled per probe after the first; the first probe checks
    /// every scalar. `None` checks every scalar in every probe.
    pub coords_per_probe: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            nh: 16,
            nk: 4,
            epsilon: 1e-6,
            seed: 0,
            probes: 100,
            coords_per_probe: Some(64),
        }
    }
}

/// Random small C-STS/KGC problems with nontrivial params, used to compare
/// the analytic gradients of the batch losses against central differences.
pub fn model_grad_check(task: Task, mode: Mode, opts: &GradCheckOptions) -> Result<GradientCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(Error::invalid(format!(
            "epsilon must be in [1e-7, 1e-3], got {}",
            opts.epsilon
        )));
    }
    let mut worst: Option<GradientCheckReport> = None;
    let mut total_checked = 0;
    for probe in 0..opts.probes.max(1) {
        let seed = opts.seed.wrapping_mul(1_000_003).wrapping_add(probe as u64);
        let rep = grad_check_probe(task, mode, opts, seed, probe == 0)?;
        total_checked += rep.checked;
        if worst.as_ref().is_none_or(|w| rep.max_rel_error > w.max_rel_error) {
            worst = Some(rep);
        }
    }
    let mut w = worst.expect("at least one probe");
    w.checked = total_checked;
    Ok(w)
}

fn grad_check_probe(task: Task, mode: Mode, opts: &GradCheckOptions, seed: u64, full: bool) -> Result<GradientCheckReport> {
    let nh = opts.nh;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        task,
        mode,
        nh,
        nk: Some(opts.nk),
        seed,
        ..TrainConfig::default()
    };
    let mut model = Model::init(&cfg)?;
    // Push params away from init so every term carries gradient.
    let normal = Normal::new(0.0, 0.05).expect("valid std");
    for t in model.params.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
    }
    model.tau_kgc = rng.random_range(0.05..0.5);

    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let mut store = EmbeddingStore::new(nh);
    let rand_vec = |rng: &mut ChaCha8Rng| {
        Vector::new((0..nh).map(|_| unit.sample(rng)).collect()).expect("finite")
    };
    let loss_cfg = cfg.loss.clone();
    let x0 = model.flat();
    let mut grads = ModelGrads::zeros(&model);

    let mut eval: Box<LossFn> = match task {
        Task::Csts => {
            let conds: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
            for c in &conds {
                store.insert(c.clone(), rand_vec(&mut rng))?;
            }
            let mut twins = Vec::new();
            for i in 0..3 {
                let (s1, s2) = (format!("a{i}"), format!("b{i}"));
                store.insert(s1.clone(), rand_vec(&mut rng))?;
                store.insert(s2.clone(), rand_vec(&mut rng))?;
                let pick: Vec<&String> = conds.choose_multiple(&mut rng, 2).collect();
                twins.push(TwinInstance {
                    pair_id: i,
                    sentence1: s1,
                    sentence2: s2,
                    cond_high: pick[0].clone(),
                    cond_low: pick[1].clone(),
                    label_high: rng.random_range(3.0..5.0),
                    label_low: rng.random_range(1.0..3.0),
                });
            }
            let provider = EncoderProvider::Store(store);
            let table = EmbeddingTable::build(
                &provider,
                twins.iter().flat_map(|t| {
                    [&t.sentence1, &t.sentence2, &t.cond_high, &t.cond_low].map(String::as_str)
                }),
            )?;
            Box::new(move |m, g| {
                let batch: Vec<&TwinInstance> = twins.iter().collect();
                Ok(csts_batch_loss(m, &table, &batch, &loss_cfg, None, g)?.total())
            })
        }
        Task::Kgc => {
            let ents: Vec<String> = (0..6).map(|i| format!("e{i}")).collect();
            for e in &ents {
                store.insert(e.clone(), rand_vec(&mut rng))?;
            }
            for r in ["r0", "r1"] {
                store.insert(r, rand_vec(&mut rng))?;
            }
            let mut triples = Vec::new();
            for i in 0..4 {
                let h = &ents[i];
                let t = &ents[(i + 1 + rng.random_range(0..4)) % 6];
                triples.push(KgTriple::new(h.clone(), ["r0", "r1"][i % 2], t.clone())?);
            }
            let provider = EncoderProvider::Store(store);
            let table = EmbeddingTable::build(
                &provider,
                ents.iter().map(String::as_str).chain(["r0", "r1"]),
            )?;
            let mut queue = PrebatchQueue::new(1);
            let prev: Vec<KgTriple> = (0..3)
                .map(|i| KgTriple::new(ents[5 - i].clone(), "r0", ents[i].clone()))
                .collect::<Result<_>>()?;
            let prev_refs: Vec<&KgTriple> = prev.iter().collect();
            queue.push(&kg_items(&table, &prev_refs)?);
            Box::new(move |m, g| {
                let batch: Vec<&KgTriple> = triples.iter().collect();
                kgc_batch_loss(m, &table, &batch, &loss_cfg, &queue, None, g)
            })
        }
    };

    eval(&model, Some(&mut grads))?;
    let analytic = grads.flat();
    let coords: Option<Vec<usize>> = match (full, opts.coords_per_probe) {
        (false, Some(k)) if k < x0.len() => {
            let mut c = rand::seq::index::sample(&mut rng, x0.len(), k).into_vec();
            // always include the temperature
            c.push(x0.len() - 1);
            Some(c)
        }
        _ => None,
    };
    let mut probe_model = model.clone();
    losses::grad_check(
        |x| {
            probe_model.set_flat(x)?;
            eval(&probe_model, None)
        },
        &x0,
        &analytic,
        opts.epsilon,
        coords.as_deref(),
    )
}
