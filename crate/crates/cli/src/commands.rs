use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::{json, Value};

use condcl_core::cache::{bench_report, bench_tsv, cross_stream, shuffled_cross_stream, BenchArm};
use condcl_core::data::{entities, load_csts, load_triples, save_csts, save_triples};
use condcl_core::eval::{
    cluster_analysis, cluster_tsv, evaluate_csts, evaluate_link_prediction, frobenius_variance_report,
    split_seen_unseen,
};
use condcl_core::hypernet::{init_params, param_count};
use condcl_core::synthetic::{make_synthetic_csts, make_synthetic_kg};
use condcl_core::trainer::{model_grad_check, train as run_training, GradCheckOptions, TrainData};
use condcl_core::{checkpoint, CstsQuadruplet, EncoderProvider, KgTriple, Mode, Model, Task};

use crate::config::{require_file, required, RunConfig};
use crate::error::CliError;
use crate::Split;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn emit(value: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(path) = out {
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn emit_text(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, text)?;
    }
    Ok(())
}

fn load_data(task: Task, path: &Path) -> Result<TrainData, CliError> {
    Ok(match task {
        Task::Csts => TrainData::Csts(load_csts(path).map_err(CliError::input)?),
        Task::Kgc => TrainData::Kgc(load_triples(path).map_err(CliError::input)?),
    })
}

fn load_model(cfg: &RunConfig) -> Result<(Model, EncoderProvider), CliError> {
    let path = required(&cfg.checkpoint, "--checkpoint")?;
    let model = checkpoint::load(path).map_err(CliError::input)?;
    let provider = cfg.provider(model.params.nh())?;
    Ok((model, provider))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data_path = required(&cfg.train_data, "training data (--data)")?;
    let out = cfg
        .out
        .as_deref()
        .ok_or_else(|| CliError::usage("train needs --out DIR"))?;
    cfg.train.validate().map_err(CliError::input)?;
    let data = load_data(cfg.train.task, data_path)?;
    let provider = cfg.provider(cfg.train.nh)?;
    fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    info!(
        "training {:?} {} nh={} seed={}",
        cfg.train.task, cfg.train.mode, cfg.train.nh, cfg.train.seed
    );
    let (_, report) = run_training(&cfg.train, &data, &provider, Some(&ckpt)).map_err(CliError::run)?;
    emit(&serde_json::to_value(&report)?, Some(&out.join("report.json")))
}

fn conditions_of(quads: &[CstsQuadruplet]) -> HashSet<String> {
    quads.iter().map(|q| q.condition.clone()).collect()
}

fn pick<'a, T>(split: Split, seen: Vec<&'a T>, unseen: Vec<&'a T>, all: &'a [T]) -> Vec<&'a T> {
    match split {
        Split::Seen => seen,
        Split::Unseen => unseen,
        Split::Overall => all.iter().collect(),
    }
}

pub fn eval(cfg: &RunConfig, split: Split, both_directions: bool) -> Result<(), CliError> {
    let (model, provider) = load_model(cfg)?;
    let data_path = required(&cfg.eval_data, "evaluation data (--data)")?;
    let train_path = match (split, &cfg.train_data) {
        (Split::Overall, p) => p.as_deref().map(require_file).transpose()?,
        (_, p) => Some(required(p, "--train-data for a seen/unseen split")?),
    };
    let mut out = match cfg.train.task {
        Task::Csts => {
            let quads = load_csts(data_path).map_err(CliError::input)?;
            let train_conds = match train_path {
                Some(p) => conditions_of(&load_csts(p).map_err(CliError::input)?),
                None => HashSet::new(),
            };
            let (seen, unseen) = split_seen_unseen(&train_conds, &quads, |q| q.condition.as_str());
            let items: Vec<CstsQuadruplet> = pick(split, seen, unseen, &quads).into_iter().cloned().collect();
            let m = evaluate_csts(&model, &provider, &items, &cfg.train.loss).map_err(CliError::run)?;
            let mut v = serde_json::to_value(m)?;
            v["instances"] = json!(items.len());
            v
        }
        Task::Kgc => {
            let queries = load_triples(data_path).map_err(CliError::input)?;
            let train = match train_path {
                Some(p) => load_triples(p).map_err(CliError::input)?,
                None => Vec::new(),
            };
            let train_rels: HashSet<String> = train.iter().map(|t| t.relation.clone()).collect();
            let (seen, unseen) = split_seen_unseen(&train_rels, &queries, |t| t.relation.as_str());
            let items: Vec<KgTriple> = pick(split, seen, unseen, &queries).into_iter().cloned().collect();
            let known: Vec<KgTriple> = train.iter().chain(&queries).cloned().collect();
            let ents = entities(&known);
            let rep = evaluate_link_prediction(&model, &provider, &items, &known, &ents, both_directions)
                .map_err(CliError::run)?;
            let mut v = serde_json::to_value(&rep.overall)?;
            v["instances"] = json!(items.len());
            v
        }
    };
    out["split"] = json!(format!("{split:?}").to_lowercase());
    emit(&out, cfg.out.as_deref())
}

pub struct Stream {
    pub workload: Option<PathBuf>,
    pub sentences: usize,
    pub conditions: usize,
    pub shuffle: bool,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(require_file(path)?).map_err(|e| CliError::usage(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((s, c)) if !c.contains('\t') => out.push((s.to_owned(), c.to_owned())),
            _ => {
                return Err(CliError::usage(format!(
                    "{}:{}: expected sentence<TAB>condition",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn bench_cache(cfg: &RunConfig, stream: &Stream, arms: &[String], repetitions: usize) -> Result<(), CliError> {
    let requests = match &stream.workload {
        Some(p) => read_pairs(p)?,
        None if stream.shuffle => shuffled_cross_stream(stream.sentences, stream.conditions, cfg.train.seed),
        None => cross_stream(stream.sentences, stream.conditions),
    };
    if requests.is_empty() {
        return Err(CliError::usage("empty workload"));
    }
    if repetitions == 0 {
        return Err(CliError::usage("--repetitions must be positive"));
    }
    let nh = cfg.train.nh;
    let nk = cfg.train.rank();
    let provider = cfg.provider(nh)?;
    let full = init_params(Mode::Full, nh, nk, cfg.train.seed).map_err(CliError::input)?;
    let lowrank = init_params(Mode::Lowrank, nh, nk, cfg.train.seed).map_err(CliError::input)?;
    let arms = arms
        .iter()
        .map(|a| match a.as_str() {
            "bi" => Ok(BenchArm::Bi),
            "tri" => Ok(BenchArm::Tri),
            "hyper-full" => Ok(BenchArm::Hyper(&full)),
            "hyper-lowrank" => Ok(BenchArm::Hyper(&lowrank)),
            other => Err(CliError::usage(format!("unknown arm {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    info!(
        "bench: {} requests, {} arms, {repetitions} repetitions, {} encoder, seed={}",
        requests.len(),
        arms.len(),
        provider.kind(),
        cfg.train.seed
    );
    let rows = bench_report(&requests, &arms, &provider, repetitions).map_err(CliError::run)?;
    emit_text(&bench_tsv(&rows), cfg.out.as_deref())
}

pub enum PointSource {
    Tsv(PathBuf),
    Csts(PathBuf, usize),
}

fn first_seen<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|s| seen.insert(*s))
        .map(str::to_owned)
        .collect()
}

fn cluster_points(source: &PointSource) -> Result<Vec<(String, String)>, CliError> {
    match source {
        PointSource::Tsv(p) => read_pairs(p),
        PointSource::Csts(p, per_condition) => {
            let quads = load_csts(require_file(p)?).map_err(CliError::input)?;
            let conds = first_seen(quads.iter().map(|q| q.condition.as_str()));
            let sents = first_seen(quads.iter().map(|q| q.sentence1.as_str()));
            Ok(sents
                .into_iter()
                .take(per_condition * conds.len())
                .enumerate()
                .map(|(i, s)| (s, conds[i % conds.len()].clone()))
                .collect())
        }
    }
}

pub fn clusters(cfg: &RunConfig, source: &PointSource, k: Option<usize>) -> Result<(), CliError> {
    let (model, provider) = load_model(cfg)?;
    let points = cluster_points(source)?;
    let k = k.unwrap_or_else(|| first_seen(points.iter().map(|(_, c)| c.as_str())).len());
    let ca = cluster_analysis(&model, &provider, &points, k, cfg.train.seed).map_err(CliError::run)?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("before.tsv"), cluster_tsv(&ca.points, &ca.before))?;
        fs::write(dir.join("after.tsv"), cluster_tsv(&ca.points, &ca.after))?;
    }
    emit(
        &json!({
            "k": k,
            "points": points.len(),
            "seed": cfg.train.seed,
            "before": ca.before.impurity,
            "after": ca.after.impurity,
        }),
        None,
    )
}

pub enum ConditionSource {
    Lines(PathBuf),
    Csts(PathBuf),
}

pub fn frobenius(cfg: &RunConfig, source: &ConditionSource) -> Result<(), CliError> {
    let (model, provider) = load_model(cfg)?;
    let conditions = match source {
        ConditionSource::Lines(p) => {
            let text = fs::read_to_string(require_file(p)?).map_err(|e| CliError::usage(e.to_string()))?;
            first_seen(text.lines().map(str::trim).filter(|l| !l.is_empty()))
        }
        ConditionSource::Csts(p) => {
            let quads = load_csts(require_file(p)?).map_err(CliError::input)?;
            first_seen(quads.iter().map(|q| q.condition.as_str()))
        }
    };
    let rep = frobenius_variance_report(&model, &provider, &conditions).map_err(CliError::run)?;
    emit(
        &json!({
            "conditions": conditions.len(),
            "var_hyper": rep.var_hyper,
            "var_diag": rep.var_diag,
        }),
        cfg.out.as_deref(),
    )
}

fn score(cfg: &RunConfig, model: &Model, provider: &EncoderProvider, train: &TrainData, eval: &TrainData) -> Result<f64, CliError> {
    match (train, eval) {
        (_, TrainData::Csts(q)) => Ok(evaluate_csts(model, provider, q, &cfg.train.loss)
            .map_err(CliError::run)?
            .spearman),
        (TrainData::Kgc(tr), TrainData::Kgc(te)) => {
            let known: Vec<KgTriple> = tr.iter().chain(te).cloned().collect();
            let ents = entities(&known);
            let rep = evaluate_link_prediction(model, provider, te, &known, &ents, true).map_err(CliError::run)?;
            Ok(rep.overall.mrr)
        }
        _ => Err(CliError::usage("training and evaluation data disagree on task")),
    }
}

pub fn sweep_rank(cfg: &RunConfig, divisors: &[usize]) -> Result<(), CliError> {
    let nh = cfg.train.nh;
    let mut ranks = Vec::with_capacity(divisors.len());
    for &d in divisors {
        if d == 0 || d > nh {
            return Err(CliError::usage(format!("divisor {d} outside 1..={nh}")));
        }
        if !nh.is_multiple_of(d) {
            warn!("nh={nh} is not divisible by {d}; nk rounds down to {}", nh / d);
        }
        ranks.push(nh / d);
    }
    let train_data = load_data(cfg.train.task, required(&cfg.train_data, "training data (--data)")?)?;
    let eval_data = load_data(cfg.train.task, required(&cfg.eval_data, "--eval-data")?)?;
    let provider = cfg.provider(nh)?;
    let mut tsv = String::from("nk\tparam_count\tmetric\n");
    for nk in ranks {
        let mut tc = cfg.train.clone();
        tc.mode = Mode::Lowrank;
        tc.nk = Some(nk);
        let (model, _) = run_training(&tc, &train_data, &provider, None).map_err(CliError::run)?;
        let metric = score(cfg, &model, &provider, &train_data, &eval_data)?;
        info!("nk={nk}: {metric:.4}");
        tsv.push_str(&format!("{nk}\t{}\t{metric}\n", param_count(&model.params)));
    }
    emit_text(&tsv, cfg.out.as_deref())
}

pub fn gradcheck(opts: &GradCheckOptions) -> Result<(), CliError> {
    let mut worst = 0.0f64;
    let mut tsv = String::from("task\tmode\tchecked\tmax_rel_error\n");
    for (task, name) in [(Task::Csts, "csts"), (Task::Kgc, "kgc")] {
        for mode in [Mode::Full, Mode::Lowrank] {
            let rep = model_grad_check(task, mode, opts).map_err(CliError::input)?;
            tsv.push_str(&format!("{name}\t{mode}\t{}\t{:e}\n", rep.checked, rep.max_rel_error));
            worst = worst.max(rep.max_rel_error);
        }
    }
    print!("{tsv}");
    println!("max_rel_error\t{worst:e}");
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

pub fn make_csts(out: &Path, pairs: usize, conditions: usize, nh: usize, seed: u64, test_fraction: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(CliError::usage("--test-fraction must be in [0, 1)"));
    }
    let data = make_synthetic_csts(pairs, conditions, nh, seed).map_err(CliError::input)?;
    let (train, test) = data.split(test_fraction);
    fs::create_dir_all(out)?;
    save_csts(out.join("train.jsonl"), &train).map_err(CliError::run)?;
    save_csts(out.join("test.jsonl"), &test).map_err(CliError::run)?;
    data.store.save(out.join("embeddings.jsonl")).map_err(CliError::run)?;
    emit(
        &json!({"train": train.len(), "test": test.len(), "embeddings": data.store.len(), "seed": seed}),
        None,
    )
}

pub fn make_kg(out: &Path, n_entities: usize, n_relations: usize, nh: usize, seed: u64) -> Result<(), CliError> {
    let kg = make_synthetic_kg(n_entities, n_relations, nh, seed).map_err(CliError::input)?;
    fs::create_dir_all(out)?;
    save_triples(out.join("train.tsv"), &kg.train).map_err(CliError::run)?;
    save_triples(out.join("valid.tsv"), &kg.valid).map_err(CliError::run)?;
    save_triples(out.join("test.tsv"), &kg.test).map_err(CliError::run)?;
    kg.store.save(out.join("embeddings.jsonl")).map_err(CliError::run)?;
    emit(
        &json!({
            "train": kg.train.len(),
            "valid": kg.valid.len(),
            "test": kg.test.len(),
            "embeddings": kg.store.len(),
            "seed": seed,
        }),
        None,
    )
}
