//! Pretraining, finetuning, evaluation and embedding export.
//!
//! The training loops are single-threaded and fully determined by the
//! config seed. Pretraining draws parameter initialization from one
//! ChaCha8 stream and shuffling plus dropout from a second; the second
//! stream's position is checkpointed so a resumed run continues exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::canon::canonical_form;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::encoder::{apply_linear, encode, init_params, readout, Batch, ModelConfig};
use crate::labels::FunctionalGroupSet;
use crate::metrics::{cluster_metrics, rmse, roc_auc_multi, ClusterScores, MetricError};
use crate::objectives::{active_losses, loss_total, pretrain_losses, LossKind};
use crate::optim::{adam_step, AdamConfig, AdamState, ParamStore};
use crate::perception::murcko_scaffold;
use crate::preprocess::Sample;
use crate::smiles::parse_smiles;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no samples to train on")]
    NoSamples,
    #[error("expected {expected} label columns, found {found}")]
    LabelArityMismatch { expected: usize, found: usize },
    #[error("checkpoint does not fit this model: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Offset between the init stream seed and the shuffle/dropout stream seed.
const TRAIN_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn batches<T>(items: &[T], size: usize) -> impl Iterator<Item = &[T]> {
    items.chunks(size.max(1))
}

/// Mean per-epoch loss values; `None` for terms that were never computed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub ab: Option<f64>,
    pub frag: Option<f64>,
    pub topo: Option<f64>,
    pub scaf: Option<f64>,
    pub total: f64,
}

impl EpochLosses {
    pub fn get(&self, k: LossKind) -> Option<f64> {
        match k {
            LossKind::Ab => self.ab,
            LossKind::Frag => self.frag,
            LossKind::Topo => self.topo,
            LossKind::Scaf => self.scaf,
        }
    }

    pub const CSV_HEADER: &'static str = "epoch,L_ab,L_frag,L_topo,L_scaf,L_total";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.epoch, f(self.ab), f(self.frag), f(self.topo), f(self.scaf), self.total)
    }

    pub fn from_csv_row(line: &str) -> Option<Self> {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return None;
        }
        let f = |s: &str| if s.is_empty() { Some(None) } else { s.parse().ok().map(Some) };
        Some(EpochLosses {
            epoch: cells[0].parse().ok()?,
            ab: f(cells[1])?,
            frag: f(cells[2])?,
            topo: f(cells[3])?,
            scaf: f(cells[4])?,
            total: cells[5].parse().ok()?,
        })
    }
}

pub fn losses_csv(history: &[EpochLosses]) -> String {
    let mut s = format!("{}\n", EpochLosses::CSV_HEADER);
    for e in history {
        let _ = writeln!(s, "{}", e.csv_row());
    }
    s
}

fn parse_losses_csv(text: &str) -> Result<Vec<EpochLosses>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| EpochLosses::from_csv_row(l).ok_or_else(|| TrainError::Incompatible(format!("bad loss history row `{l}`"))))
        .collect()
}

/// Where pretraining writes its artifacts.
#[derive(Debug, Clone)]
pub struct PretrainPaths {
    pub last: PathBuf,
    pub best: PathBuf,
    pub losses: PathBuf,
}

impl PretrainPaths {
    /// `<out>`, `<out>.best` and `<out>.losses.csv`.
    pub fn from_out(out: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = out.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        PretrainPaths {
            last: out.to_path_buf(),
            best: with(".best"),
            losses: with(".losses.csv"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: ParamStore,
    pub history: Vec<EpochLosses>,
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub best_epoch: usize,
}

/// Config hash with the epoch budget masked out, so a run may be extended on resume.
fn resume_hash(cfg: &RunConfig) -> u64 {
    let mut c = cfg.clone();
    c.pretrain_epochs = 1;
    c.threads = 0;
    c.hash()
}

struct PretrainState {
    params: ParamStore,
    adam: AdamState,
    rng: ChaCha8Rng,
    history: Vec<EpochLosses>,
    best_epoch: usize,
    best_total: f64,
}

fn pretrain_checkpoint(cfg: &RunConfig, vocab_text: &str, st: &PretrainState) -> Checkpoint {
    let mut ck = Checkpoint {
        config_hash: cfg.hash(),
        ..Default::default()
    };
    ck.meta.insert("kind".into(), "pretrain".into());
    ck.meta.insert("epoch".into(), st.history.len().to_string());
    ck.meta.insert("adam_step".into(), st.adam.step.to_string());
    ck.meta.insert("rng_word_pos".into(), st.rng.get_word_pos().to_string());
    ck.meta.insert("resume_hash".into(), format!("{:016x}", resume_hash(cfg)));
    ck.meta.insert("arch_hash".into(), format!("{:016x}", cfg.architecture_hash()));
    ck.meta.insert("best_epoch".into(), st.best_epoch.to_string());
    ck.meta.insert("best_total".into(), st.best_total.to_string());
    for (name, t) in st.params.names().iter().zip(st.params.tensors()) {
        ck.tensors.push((name.clone(), t.clone()));
    }
    for (i, name) in st.params.names().iter().enumerate() {
        ck.tensors.push((format!("adam.m.{name}"), st.adam.m[i].clone()));
        ck.tensors.push((format!("adam.v.{name}"), st.adam.v[i].clone()));
    }
    ck.blobs.push(("config".into(), cfg.to_text().into_bytes()));
    ck.blobs.push(("vocab".into(), vocab_text.as_bytes().to_vec()));
    ck.blobs.push(("losses".into(), losses_csv(&st.history).into_bytes()));
    ck
}

fn fresh_state(cfg: &RunConfig) -> PretrainState {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_params(&cfg.model, &mut init_rng);
    PretrainState {
        adam: AdamState::new(&params),
        params,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM),
        history: Vec::new(),
        best_epoch: 0,
        best_total: f64::INFINITY,
    }
}

fn resumed_state(cfg: &RunConfig, ck: &Checkpoint) -> Result<PretrainState> {
    if ck.meta_value("kind")? != "pretrain" {
        return Err(TrainError::Incompatible("not a pretraining checkpoint".into()));
    }
    let expected = format!("{:016x}", resume_hash(cfg));
    if ck.meta_value("resume_hash")? != expected {
        return Err(CheckpointError::ConfigMismatch("resume needs the same settings apart from pretrain_epochs".into()).into());
    }
    let mut st = fresh_state(cfg);
    let names: Vec<String> = st.params.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let load = |n: &str| ck.tensor(n).cloned().ok_or_else(|| CheckpointError::Missing(n.to_string()));
        st.params.insert(name, load(name)?);
        st.adam.m[i] = load(&format!("adam.m.{name}"))?;
        st.adam.v[i] = load(&format!("adam.v.{name}"))?;
    }
    st.adam.step = ck.meta_parsed("adam_step")?;
    st.rng.set_word_pos(ck.meta_parsed("rng_word_pos")?);
    st.best_epoch = ck.meta_parsed("best_epoch")?;
    st.best_total = ck.meta_parsed("best_total")?;
    let text = String::from_utf8_lossy(ck.blob("losses").ok_or_else(|| CheckpointError::Missing("losses".into()))?).into_owned();
    st.history = parse_losses_csv(&text)?;
    Ok(st)
}

fn run_pretrain_epoch(samples: &[Sample], cfg: &RunConfig, st: &mut PretrainState) -> Result<EpochLosses> {
    let w = cfg.effective_weights();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut st.rng);
    let (mut sums, mut counts) = ([0.0f64; 4], [0usize; 4]);
    let (mut total_sum, mut n_batches) = (0.0, 0usize);
    for chunk in batches(&order, cfg.pretrain_batch) {
        let graphs: Vec<_> = chunk.iter().map(|&i| &samples[i].chg).collect();
        let targets: Vec<_> = chunk.iter().map(|&i| &samples[i].targets).collect();
        let batch = Batch::new(&graphs);
        let mut tape = Tape::new();
        let bound = st.params.bind(&mut tape);
        let emb = encode(&mut tape, &bound, &cfg.model, &batch, true, &mut st.rng)?;
        let terms = pretrain_losses(&mut tape, &bound, &cfg.model, &w, cfg.variant, emb, &batch, &targets)?;
        let total = loss_total(&mut tape, &terms, &w)?;
        for (k, kind) in LossKind::ALL.into_iter().enumerate() {
            if let Some(v) = terms.get(kind) {
                sums[k] += tape.value(v).item();
                counts[k] += 1;
            }
        }
        total_sum += tape.value(total).item();
        n_batches += 1;
        let grads = tape.backward(total)?;
        adam_step(&cfg.adam, &mut st.adam, &mut st.params, &bound.gradients(&grads))?;
    }
    let mean = |k: usize| (counts[k] > 0).then(|| sums[k] / counts[k] as f64);
    Ok(EpochLosses {
        epoch: st.history.len() + 1,
        ab: mean(0),
        frag: mean(1),
        topo: mean(2),
        scaf: mean(3),
        total: total_sum / n_batches.max(1) as f64,
    })
}

/// Runs pretraining up to `cfg.pretrain_epochs`, optionally continuing from
/// a checkpoint written by an earlier call. When `paths` is given, the last
/// checkpoint and loss CSV are rewritten after every epoch and the best
/// checkpoint (lowest mean `L_total`) whenever it improves.
pub fn pretrain(samples: &[Sample], cfg: &RunConfig, vocab_text: &str, resume: Option<&Checkpoint>, paths: Option<&PretrainPaths>) -> Result<PretrainOutput> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let w = cfg.effective_weights();
    if active_losses(cfg.variant, &w).is_empty() {
        warn!("no active loss terms (all weights zero or unsupported by the graph variant); parameters change only by weight decay");
    }
    let mut st = match resume {
        Some(ck) => resumed_state(cfg, ck)?,
        None => fresh_state(cfg),
    };
    let mut best = None;
    while st.history.len() < cfg.pretrain_epochs {
        let e = run_pretrain_epoch(samples, cfg, &mut st)?;
        info!("epoch {}: {}", e.epoch, e.csv_row());
        let improved = e.total < st.best_total;
        if improved {
            st.best_total = e.total;
            st.best_epoch = e.epoch;
        }
        st.history.push(e);
        if improved {
            let ck = pretrain_checkpoint(cfg, vocab_text, &st);
            if let Some(p) = paths {
                ck.write(&p.best)?;
            }
            best = Some(ck);
        }
        if let Some(p) = paths {
            pretrain_checkpoint(cfg, vocab_text, &st).write(&p.last)?;
            std::fs::write(&p.losses, losses_csv(&st.history))?;
        }
    }
    let last = pretrain_checkpoint(cfg, vocab_text, &st);
    let best = match best {
        Some(b) => b,
        // nothing improved in this call: the best is on disk from an earlier call, or this one
        None => match paths {
            Some(p) if p.best.exists() => Checkpoint::read(&p.best)?,
            _ => last.clone(),
        },
    };
    Ok(PretrainOutput {
        params: st.params,
        history: st.history,
        best_epoch: st.best_epoch,
        last,
        best,
    })
}

/// Run config and vocabulary stored in a checkpoint.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<(RunConfig, String)> {
    let cfg_text = ck.blob("config").ok_or_else(|| CheckpointError::Missing("config".into()))?;
    let cfg = RunConfig::from_text(&String::from_utf8_lossy(cfg_text))?;
    if cfg.hash() != ck.config_hash {
        return Err(CheckpointError::ConfigMismatch("stored config does not match its hash".into()).into());
    }
    let vocab = ck.blob("vocab").ok_or_else(|| CheckpointError::Missing("vocab".into()))?;
    Ok((cfg, String::from_utf8_lossy(vocab).into_owned()))
}

/// Encoder parameters (`enc.*`) from a checkpoint.
pub fn encoder_params(ck: &Checkpoint) -> ParamStore {
    let mut p = ParamStore::new();
    for (name, t) in ck.tensors.iter().filter(|(n, _)| n.starts_with("enc.")) {
        p.insert(name, t.clone());
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Regress,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Classify => "classify",
            TaskKind::Regress => "regress",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "classify" => Some(TaskKind::Classify),
            "regress" => Some(TaskKind::Regress),
            _ => None,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            TaskKind::Classify => "roc_auc",
            TaskKind::Regress => "rmse",
        }
    }

    /// Whether `a` is strictly better than `b`.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            TaskKind::Classify => a > b,
            TaskKind::Regress => a < b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOptions {
    pub task: TaskKind,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

fn n_tasks(samples: &[&[Sample]]) -> Result<usize> {
    let first = samples.iter().flat_map(|s| s.iter()).next().ok_or(TrainError::NoSamples)?;
    let t = first.labels.len();
    for s in samples.iter().flat_map(|s| s.iter()) {
        if s.labels.len() != t {
            return Err(TrainError::LabelArityMismatch {
                expected: t,
                found: s.labels.len(),
            });
        }
    }
    if t == 0 {
        return Err(TrainError::LabelArityMismatch { expected: 1, found: 0 });
    }
    Ok(t)
}

/// Fresh encoder plus linear head, with encoder weights optionally replaced by `init`.
pub fn finetune_params(cfg: &ModelConfig, n_tasks: usize, init: Option<&ParamStore>, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = init_params(cfg, &mut rng);
    let mut p = ParamStore::new();
    for (name, t) in full.names().iter().zip(full.tensors()) {
        if !name.starts_with("enc.") {
            continue;
        }
        let t = match init.and_then(|i| i.get(name)) {
            Some(w) if w.shape() == t.shape() => w.clone(),
            Some(_) => return Err(TrainError::Incompatible(format!("{name} has a different shape"))),
            None if init.is_some() => return Err(TrainError::Incompatible(format!("{name} missing"))),
            None => t.clone(),
        };
        p.insert(name, t);
    }
    let d = 4 * cfg.hidden;
    p.insert_uniform("ft.w", d, n_tasks, d, &mut rng);
    p.insert_uniform("ft.b", 1, n_tasks, d, &mut rng);
    Ok(p)
}

/// Prediction logits (classification) or values (regression), `graphs x tasks`.
pub fn forward_task(tape: &mut Tape, params: &ParamStore, cfg: &ModelConfig, batch: &Batch, train: bool, rng: &mut ChaCha8Rng) -> Result<(Var, crate::optim::Bound)> {
    let bound = params.bind(tape);
    let emb = encode(tape, &bound, cfg, batch, train, rng)?;
    let r = readout(tape, emb, batch)?;
    let out = apply_linear(tape, &bound, "ft", r)?;
    Ok((out, bound))
}

/// Masked mean loss over present labels; `None` when no label is present.
pub fn finetune_loss(tape: &mut Tape, out: Var, labels: &[&[Option<f64>]], task: TaskKind) -> Result<Option<Var>> {
    let (rows, cols) = tape.shape(out);
    let mut y = Vec::with_capacity(rows * cols);
    let mut mask = Vec::with_capacity(rows * cols);
    for l in labels {
        for v in l.iter() {
            y.push(v.unwrap_or(0.0));
            mask.push(if v.is_some() { 1.0 } else { 0.0 });
        }
    }
    let count: f64 = mask.iter().sum();
    if count == 0.0 {
        return Ok(None);
    }
    let y = Tensor::new(rows, cols, y);
    let mask = tape.constant(Tensor::new(rows, cols, mask));
    let per = match task {
        TaskKind::Classify => {
            let sp = tape.softplus(out);
            let yc = tape.constant(y);
            let yz = tape.mul(yc, out)?;
            tape.sub(sp, yz)?
        }
        TaskKind::Regress => {
            let yc = tape.constant(y);
            let d = tape.sub(out, yc)?;
            tape.mul(d, d)?
        }
    };
    let masked = tape.mul(per, mask)?;
    let s = tape.sum(masked);
    Ok(Some(tape.scale(s, 1.0 / count)))
}

/// Eval-mode predictions for every sample, one row per sample.
pub fn predict(params: &ParamStore, cfg: &ModelConfig, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in batches(samples, batch_size) {
        let graphs: Vec<_> = chunk.iter().map(|s| &s.chg).collect();
        let batch = Batch::new(&graphs);
        let mut tape = Tape::new();
        let (y, _) = forward_task(&mut tape, params, cfg, &batch, false, &mut rng)?;
        let v = tape.value(y);
        out.extend((0..v.rows).map(|r| v.row_slice(r).to_vec()));
    }
    Ok(out)
}

/// Task metric: mean ROC-AUC over tasks with both classes, or mean per-task RMSE.
/// Returns the value and the tasks that could not be scored.
pub fn task_metric(preds: &[Vec<f64>], labels: &[Vec<Option<f64>>], task: TaskKind) -> Result<(f64, Vec<usize>)> {
    match task {
        TaskKind::Classify => Ok(roc_auc_multi(preds, labels)?),
        TaskKind::Regress => {
            let t = labels.first().map_or(0, |l| l.len());
            let (mut sum, mut used, mut skipped) = (0.0, 0, Vec::new());
            for k in 0..t {
                let (p, y): (Vec<f64>, Vec<f64>) = preds.iter().zip(labels).filter_map(|(p, l)| l[k].map(|y| (p[k], y))).unzip();
                if y.is_empty() {
                    skipped.push(k);
                    continue;
                }
                sum += rmse(&p, &y)?;
                used += 1;
            }
            if used == 0 {
                return Err(MetricError::EmptyInput.into());
            }
            Ok((sum / used as f64, skipped))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub best_epoch: usize,
    pub valid_metric: f64,
    pub test_metric: f64,
    pub skipped_tasks: Vec<usize>,
    pub params: ParamStore,
    /// `(epoch, mean train loss, validation metric)`; NaN when unscorable.
    pub history: Vec<(usize, f64, f64)>,
}

/// End-to-end finetuning with validation-based model selection.
pub fn finetune(cfg: &ModelConfig, init: Option<&ParamStore>, train: &[Sample], valid: &[Sample], test: &[Sample], opts: &FinetuneOptions) -> Result<FinetuneResult> {
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let t = n_tasks(&[train, valid, test])?;
    let mut params = finetune_params(cfg, t, init, opts.seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ TRAIN_STREAM);
    let valid_labels: Vec<_> = valid.iter().map(|s| s.labels.clone()).collect();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n) = (0.0, 0);
        for chunk in batches(&order, opts.batch) {
            let graphs: Vec<_> = chunk.iter().map(|&i| &train[i].chg).collect();
            let labels: Vec<&[Option<f64>]> = chunk.iter().map(|&i| train[i].labels.as_slice()).collect();
            let batch = Batch::new(&graphs);
            let mut tape = Tape::new();
            let (out, bound) = forward_task(&mut tape, &params, cfg, &batch, true, &mut rng)?;
            let Some(loss) = finetune_loss(&mut tape, out, &labels, opts.task)? else {
                continue;
            };
            loss_sum += tape.value(loss).item();
            n += 1;
            let grads = tape.backward(loss)?;
            adam_step(&opts.adam, &mut adam, &mut params, &bound.gradients(&grads))?;
        }
        let preds = predict(&params, cfg, valid, opts.batch.max(64))?;
        let metric = match task_metric(&preds, &valid_labels, opts.task) {
            Ok((m, _)) => m,
            Err(TrainError::Metric(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        history.push((epoch, loss_sum / n.max(1) as f64, metric));
        let improves = match &best {
            None => true,
            Some((_, b, _)) => !metric.is_nan() && (b.is_nan() || opts.task.better(metric, *b)),
        };
        if improves {
            best = Some((epoch, metric, params.clone()));
        }
    }
    let (best_epoch, valid_metric, params) = best.ok_or(TrainError::NoSamples)?;
    let test_labels: Vec<_> = test.iter().map(|s| s.labels.clone()).collect();
    let preds = predict(&params, cfg, test, opts.batch.max(64))?;
    let (test_metric, skipped_tasks) = task_metric(&preds, &test_labels, opts.task)?;
    Ok(FinetuneResult {
        best_epoch,
        valid_metric,
        test_metric,
        skipped_tasks,
        params,
        history,
    })
}

/// Checkpoint of a finetuned model, loadable by [`load_finetuned`].
pub fn finetune_checkpoint(cfg: &RunConfig, vocab_text: &str, task: TaskKind, label_names: &[String], params: &ParamStore) -> Checkpoint {
    let mut ck = Checkpoint {
        config_hash: cfg.hash(),
        ..Default::default()
    };
    ck.meta.insert("kind".into(), "finetune".into());
    ck.meta.insert("task".into(), task.name().into());
    ck.meta.insert("labels".into(), label_names.join(","));
    for (name, t) in params.names().iter().zip(params.tensors()) {
        ck.tensors.push((name.clone(), t.clone()));
    }
    ck.blobs.push(("config".into(), cfg.to_text().into_bytes()));
    ck.blobs.push(("vocab".into(), vocab_text.as_bytes().to_vec()));
    ck
}

pub struct FinetunedModel {
    pub cfg: RunConfig,
    pub vocab_text: String,
    pub task: TaskKind,
    pub label_names: Vec<String>,
    pub params: ParamStore,
}

pub fn load_finetuned(ck: &Checkpoint) -> Result<FinetunedModel> {
    if ck.meta_value("kind")? != "finetune" {
        return Err(TrainError::Incompatible("not a finetuned checkpoint".into()));
    }
    let (cfg, vocab_text) = checkpoint_config(ck)?;
    let task = TaskKind::from_name(ck.meta_value("task")?).ok_or_else(|| CheckpointError::Format("unknown task".into()))?;
    let labels = ck.meta_value("labels")?;
    let label_names = if labels.is_empty() { Vec::new() } else { labels.split(',').map(String::from).collect() };
    let mut params = ParamStore::new();
    for (name, t) in &ck.tensors {
        params.insert(name, t.clone());
    }
    for name in ["ft.w", "ft.b"] {
        if !params.contains(name) {
            return Err(CheckpointError::Missing(name.into()).into());
        }
    }
    Ok(FinetunedModel {
        cfg,
        vocab_text,
        task,
        label_names,
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedLevel {
    Graph,
    Fragment,
    Bond,
}

impl EmbedLevel {
    pub fn name(self) -> &'static str {
        match self {
            EmbedLevel::Graph => "graph",
            EmbedLevel::Fragment => "fragment",
            EmbedLevel::Bond => "bond",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "graph" => Some(EmbedLevel::Graph),
            "fragment" => Some(EmbedLevel::Fragment),
            "bond" => Some(EmbedLevel::Bond),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub key: String,
    pub values: Vec<f64>,
}

/// Key for the graph level: canonical Murcko scaffold, `<acyclic>` without rings.
pub fn scaffold_key(smiles: &str) -> String {
    match parse_smiles(smiles) {
        Ok(m) => {
            let s = murcko_scaffold(&m);
            if s.atoms().is_empty() {
                "<acyclic>".into()
            } else {
                canonical_form(&s)
            }
        }
        Err(_) => "<unparsed>".into(),
    }
}

/// Eval-mode node embeddings grouped by level.
///
/// Graph rows use the graph node, or the atom mean when the variant has
/// none. Fragment rows cover fragments matching at least one functional
/// group, keyed by the first match. Bond rows cover every bond node.
pub fn export_embeddings(params: &ParamStore, cfg: &ModelConfig, samples: &[Sample], level: EmbedLevel) -> Result<Vec<EmbeddingRow>> {
    let fg_names: Vec<String> = FunctionalGroupSet::default_library().names().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    let mut base = 0;
    for chunk in batches(samples, 64) {
        let graphs: Vec<_> = chunk.iter().map(|s| &s.chg).collect();
        let batch = Batch::new(&graphs);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let emb = encode(&mut tape, &bound, cfg, &batch, false, &mut rng)?;
        let e = tape.value(emb);
        for (gi, (s, slots)) in chunk.iter().zip(&batch.graphs).enumerate() {
            let mol_id = base + gi;
            match level {
                EmbedLevel::Graph => {
                    let values = match slots.graph {
                        Some(r) => e.row_slice(r).to_vec(),
                        None => {
                            let mut v = vec![0.0; e.cols];
                            for &a in &slots.atoms {
                                v.iter_mut().zip(e.row_slice(a)).for_each(|(x, y)| *x += y / slots.atoms.len() as f64);
                            }
                            v
                        }
                    };
                    rows.push(EmbeddingRow {
                        id: format!("m{mol_id}"),
                        key: scaffold_key(&s.smiles),
                        values,
                    });
                }
                EmbedLevel::Fragment => {
                    for (f, &r) in slots.frags.iter().enumerate() {
                        let Some(k) = s.targets.frag_fg.get(f).and_then(|bits| bits.iter().position(|&b| b == 1)) else {
                            continue;
                        };
                        rows.push(EmbeddingRow {
                            id: format!("m{mol_id}.f{f}"),
                            key: fg_names[k].clone(),
                            values: e.row_slice(r).to_vec(),
                        });
                    }
                }
                EmbedLevel::Bond => {
                    if slots.bonds.is_empty() {
                        continue;
                    }
                    let m = parse_smiles(&s.smiles).map_err(|e| TrainError::Incompatible(e.to_string()))?;
                    for (b, &r) in slots.bonds.iter().enumerate() {
                        rows.push(EmbeddingRow {
                            id: format!("m{mol_id}.b{b}"),
                            key: m.bond(b).order.name().into(),
                            values: e.row_slice(r).to_vec(),
                        });
                    }
                }
            }
        }
        base += chunk.len();
    }
    Ok(rows)
}

pub fn write_embeddings_csv(rows: &[EmbeddingRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = rows.first().map_or(0, |r| r.values.len());
    let header: Vec<String> = ["id".to_string(), "key".to_string()].into_iter().chain((0..dim).map(|i| format!("e{i}"))).collect();
    out.write_record(&header).map_err(std::io::Error::from)?;
    for r in rows {
        let rec: Vec<String> = [r.id.clone(), r.key.clone()].into_iter().chain(r.values.iter().map(|v| v.to_string())).collect();
        out.write_record(&rec).map_err(std::io::Error::from)?;
    }
    out.flush()?;
    Ok(())
}

/// DBI and silhouette over exported rows. Keys with fewer than two rows are
/// dropped; each key keeps at most `max_per_key` rows, chosen by a seeded shuffle.
pub fn embedding_cluster_scores(rows: &[EmbeddingRow], max_per_key: Option<usize>, seed: u64) -> Result<(ClusterScores, usize)> {
    let mut keys: Vec<&str> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match keys.iter().position(|k| *k == r.key) {
            Some(g) => members[g].push(i),
            None => {
                keys.push(&r.key);
                members.push(vec![i]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (g, mut m) in members.into_iter().enumerate() {
        if m.len() < 2 {
            continue;
        }
        if let Some(cap) = max_per_key {
            if m.len() > cap {
                m.shuffle(&mut rng);
                m.truncate(cap);
                m.sort_unstable();
            }
        }
        for i in m {
            pts.push(rows[i].values.clone());
            labels.push(g);
        }
    }
    let scores = cluster_metrics(&pts, &labels)?;
    Ok((scores, pts.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chg::GraphVariant;
    use crate::dataset::load_csv_reader;
    use crate::preprocess::preprocess;
    use crate::vocab::build_vocab;

    fn tiny_cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply_text("hidden = 16\nlayers = 2\nproj_dim = 8\nfp_bits = 64\npretrain_epochs = 2\npretrain_batch = 4\nvocab_size = 20\n").unwrap();
        c
    }

    fn samples(text: &str) -> (Vec<Sample>, String) {
        let ds = load_csv_reader(text.as_bytes()).unwrap();
        let mols: Vec<_> = ds.records.iter().map(|r| r.mol.base.clone()).collect();
        let vocab = build_vocab(&mols, 20, 0).unwrap();
        let (s, _) = preprocess(&ds.records, &vocab, GraphVariant::Compositional, 64, 1).unwrap();
        (s, vocab.to_text())
    }

    const CORPUS: &str = "smiles\nCCO\nc1ccccc1O\nCC(=O)O\nCCN(CC)CC\nC1CCCCC1C(=O)OC\nNc1ccc(Cl)cc1\nCC#N\nOCC(O)CO\n";

    #[test]
    fn resume_is_bit_exact() {
        let (s, vocab) = samples(CORPUS);
        let cfg = tiny_cfg();
        let full = pretrain(&s, &cfg, &vocab, None, None).unwrap();
        let mut one = cfg.clone();
        one.pretrain_epochs = 1;
        let first = pretrain(&s, &one, &vocab, None, None).unwrap();
        let back = Checkpoint::from_bytes(&first.last.to_bytes()).unwrap();
        let resumed = pretrain(&s, &cfg, &vocab, Some(&back), None).unwrap();
        assert_eq!(resumed.history, full.history);
        assert_eq!(resumed.params, full.params);
    }

    #[test]
    fn zero_weights_only_decay() {
        let (s, vocab) = samples(CORPUS);
        let mut cfg = tiny_cfg();
        cfg.apply_text("lambda_ab = 0\nlambda_frag = 0\nlambda_topo = 0\nlambda_scaf = 0\n").unwrap();
        let out = pretrain(&s, &cfg, &vocab, None, None).unwrap();
        let init = init_params(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let steps = out.last.meta_parsed::<i32>("adam_step").unwrap();
        let shrink = (1.0 - cfg.adam.lr * cfg.adam.weight_decay).powi(steps);
        for (a, b) in init.tensors().iter().zip(out.params.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x * shrink - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
        assert!(out.history.iter().all(|e| e.total == 0.0 && e.ab.is_none()));
    }

    #[test]
    fn loss_csv_round_trip() {
        let e = EpochLosses {
            epoch: 3,
            ab: Some(0.1),
            frag: None,
            topo: Some(1.0 / 3.0),
            scaf: Some(2.5),
            total: 4.0,
        };
        let parsed = parse_losses_csv(&losses_csv(std::slice::from_ref(&e))).unwrap();
        assert_eq!(parsed, vec![e]);
    }

    #[test]
    fn masked_rows_leave_gradients_unchanged() {
        let (s, _) = samples("smiles,y1,y2\nCCO,1,0\nc1ccccc1O,0,\nCC(=O)O,,1\n");
        let cfg = tiny_cfg().model;
        let params = finetune_params(&cfg, 2, None, 1).unwrap();
        let grads_for = |rows: &[Sample]| {
            let graphs: Vec<_> = rows.iter().map(|s| &s.chg).collect();
            let labels: Vec<&[Option<f64>]> = rows.iter().map(|s| s.labels.as_slice()).collect();
            let batch = Batch::new(&graphs);
            let mut tape = Tape::new();
            let (out, bound) = forward_task(&mut tape, &params, &cfg, &batch, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let loss = finetune_loss(&mut tape, out, &labels, TaskKind::Classify).unwrap().unwrap();
            bound.gradients(&tape.backward(loss).unwrap())
        };
        let base = grads_for(&s[..2]);
        let mut padded = s[..2].to_vec();
        let mut extra = s[2].clone();
        extra.labels = vec![None, None];
        padded.push(extra);
        let with = grads_for(&padded);
        for (a, b) in base.iter().zip(&with) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn finetune_fits_constant_regression() {
        let (s, _) = samples("smiles,y\nCCO,2\nCCN,2\nCCC,2\nCCCl,2\nOCC,2\nNCC,2\n");
        let mut cfg = tiny_cfg().model;
        cfg.dropout = 0.0;
        let opts = FinetuneOptions {
            task: TaskKind::Regress,
            epochs: 1000,
            batch: 4,
            seed: 0,
            adam: AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
        };
        let r = finetune(&cfg, None, &s[..4], &s[4..5], &s[5..], &opts).unwrap();
        assert!(r.test_metric < 1e-2, "rmse {}", r.test_metric);
    }

    #[test]
    fn finetune_separable_classification() {
        let (s, _) = samples("smiles,y\nCCO,1\nc1ccccc1,0\nCCO,1\nc1ccccc1,0\n");
        let mut cfg = tiny_cfg().model;
        cfg.dropout = 0.0;
        let opts = FinetuneOptions {
            task: TaskKind::Classify,
            epochs: 30,
            batch: 2,
            seed: 0,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
        };
        let r = finetune(&cfg, None, &s[..2], &s[2..], &s[2..], &opts).unwrap();
        assert_eq!(r.test_metric, 1.0);
    }

    #[test]
    fn readout_width() {
        let (s, _) = samples(CORPUS);
        let cfg = ModelConfig::default();
        let params = finetune_params(&cfg, 1, None, 0).unwrap();
        assert_eq!(params.get("ft.w").unwrap().shape(), (1200, 1));
        let graphs: Vec<_> = s.iter().take(2).map(|s| &s.chg).collect();
        let batch = Batch::new(&graphs);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let emb = encode(&mut tape, &bound, &cfg, &batch, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = readout(&mut tape, emb, &batch).unwrap();
        assert_eq!(tape.shape(r), (2, 1200));
    }

    #[test]
    fn embedding_levels_and_keys() {
        let (s, vocab) = samples(CORPUS);
        let cfg = tiny_cfg();
        let params = init_params(&cfg.model, &mut ChaCha8Rng::seed_from_u64(0));
        let g = export_embeddings(&params, &cfg.model, &s, EmbedLevel::Graph).unwrap();
        assert_eq!(g.len(), s.len());
        assert_eq!(g[0].key, "<acyclic>");
        assert_eq!(g[1].key, "c1ccccc1");
        let b = export_embeddings(&params, &cfg.model, &s, EmbedLevel::Bond).unwrap();
        assert_eq!(b.len(), s.iter().map(|x| x.chg.n_bonds).sum::<usize>());
        assert!(b.iter().all(|r| ["single", "double", "triple", "aromatic"].contains(&r.key.as_str())));
        let f = export_embeddings(&params, &cfg.model, &s, EmbedLevel::Fragment).unwrap();
        assert!(f.iter().all(|r| FunctionalGroupSet::default_library().names().any(|n| n == r.key)));
        let (scores, n) = embedding_cluster_scores(&b, Some(10), 0).unwrap();
        assert!(n >= 4 && scores.dbi.is_finite());
        let other = init_params(&cfg.model, &mut ChaCha8Rng::seed_from_u64(1));
        assert_ne!(export_embeddings(&other, &cfg.model, &s, EmbedLevel::Graph).unwrap(), g);
        let mut csv = Vec::new();
        write_embeddings_csv(&g, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), s.len() + 1);
        assert!(text.starts_with("id,key,e0,"));
        let _ = vocab;
    }
}
