//! `chg`: command-line front end for vocabulary mining, preprocessing,
//! pretraining, finetuning, evaluation, embedding export and inspection.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use chgraph::checkpoint::Checkpoint;
use chgraph::chg::{build_chg_variant, GraphVariant};
use chgraph::config::RunConfig;
use chgraph::dataset::{load_csv, split, Dataset};
use chgraph::encoder::init_params;
use chgraph::labels::{compute_targets, FunctionalGroupSet};
use chgraph::perception::perceive;
use chgraph::preprocess::{corpus_hash, preprocess, vocab_hash, CacheFile, Sample};
use chgraph::smiles::parse_smiles;
use chgraph::train::{
    checkpoint_config, embedding_cluster_scores, encoder_params, export_embeddings, finetune, finetune_checkpoint, load_finetuned, predict, pretrain,
    task_metric, write_embeddings_csv, EmbedLevel, FinetuneOptions, PretrainPaths, TaskKind,
};
use chgraph::vocab::{build_vocab_with, decompose, Decomposition, FragmentVocab, MiningConfig};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "chg", version, about = "Compositional hierarchical molecular graphs and GIN pretraining")]
struct Cli {
    /// Cap on preprocessing worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: error, warn, info, debug.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Mine a fragment vocabulary from a SMILES corpus.
    VocabBuild {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Mine on a seeded random subset of this many molecules.
        #[arg(long)]
        max_molecules: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build graphs and pretraining targets into a binary cache.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one label record per molecule to this text file.
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Pretrain the encoder on a preprocessed cache.
    Pretrain {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finetune on a labeled CSV over several random splits.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Pretrained checkpoint; supplies the vocabulary and architecture.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = ["classify", "regress"])]
        task: String,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
        /// Ignore the checkpoint weights and start from random initialization.
        #[arg(long)]
        random_init: bool,
        /// Write the metrics report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for one finetuned checkpoint per seed.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a finetuned checkpoint on a labeled CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export node embeddings at one level, optionally with cluster scores.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["graph", "fragment", "bond"])]
        level: String,
        #[arg(long)]
        out: PathBuf,
        /// Use a randomly initialized encoder of the same architecture.
        #[arg(long)]
        random: bool,
        /// Print DBI and silhouette of the exported rows grouped by key.
        #[arg(long)]
        cluster: bool,
        /// Rows kept per key for cluster scores.
        #[arg(long, default_value_t = 200)]
        max_per_key: usize,
    },
    /// Print the graph tables, features and labels for one molecule.
    Inspect {
        #[arg(long)]
        smiles: String,
        /// Decompose with this vocabulary instead of one fragment per component.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value = "compositional", value_parser = ["atom", "hierarchical", "compositional"])]
        variant: String,
        #[arg(long, default_value_t = 2048)]
        fp_bits: usize,
    },
}

/// Defaults, then `CHG_SEED`, then the config file, then `--set` overrides.
fn load_config(args: &ConfigArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Ok(s) = std::env::var("CHG_SEED") {
        cfg.seed = s.trim().parse().with_context(|| format!("CHG_SEED=`{s}` is not an integer"))?;
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("config {}", path.display()))?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_vocab_text(text: &str) -> Result<FragmentVocab> {
    Ok(FragmentVocab::from_text(text)?)
}

fn vocab_build(corpus: &Path, size: usize, out: &Path, max_molecules: Option<usize>, seed: u64) -> Result<()> {
    let ds = load_csv(corpus)?;
    let mols: Vec<_> = ds.records.iter().map(|r| r.mol.base.clone()).collect();
    let vocab = build_vocab_with(
        &mols,
        &MiningConfig {
            target_size: size,
            seed,
            max_molecules,
        },
    )?;
    vocab.write(out)?;
    info!("wrote {} fragments to {}", vocab.len(), out.display());
    Ok(())
}

fn samples_for(ds: &Dataset, vocab: &FragmentVocab, cfg: &RunConfig, threads: usize) -> Result<Vec<Sample>> {
    let (samples, failed) = preprocess(&ds.records, vocab, cfg.variant, cfg.model.fp_bits, threads)?;
    if !failed.is_empty() {
        warn!("{} molecules could not be decomposed and were skipped", failed.len());
    }
    if samples.is_empty() {
        bail!("no usable molecules");
    }
    Ok(samples)
}

fn run_preprocess(corpus: &Path, vocab_path: &Path, out: &Path, labels_out: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let ds = load_csv(corpus)?;
    let vocab = FragmentVocab::read(vocab_path)?;
    let samples = samples_for(&ds, &vocab, cfg, cfg.threads)?;
    if let Some(p) = labels_out {
        let text: String = samples.iter().map(|s| s.label_record() + "\n").collect();
        std::fs::write(p, text)?;
    }
    let cache = CacheFile {
        corpus_hash: corpus_hash(&ds.records),
        vocab_hash: vocab_hash(&vocab),
        preprocess_hash: cfg.preprocess_hash(),
        vocab_text: vocab.to_text(),
        samples,
    };
    cache.write(out)?;
    info!("cached {} molecules in {}", cache.samples.len(), out.display());
    Ok(())
}

fn run_pretrain(cache_path: &Path, out: &Path, resume: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let cache = CacheFile::read(cache_path)?;
    if cache.preprocess_hash != cfg.preprocess_hash() {
        bail!("cache {} was built with a different graph variant or fp_bits; rerun preprocess", cache_path.display());
    }
    if vocab_hash(&read_vocab_text(&cache.vocab_text)?) != cache.vocab_hash {
        bail!("cache {} is corrupt: vocabulary hash mismatch", cache_path.display());
    }
    let resume = resume.map(Checkpoint::read).transpose()?;
    let paths = PretrainPaths::from_out(out);
    let result = pretrain(&cache.samples, cfg, &cache.vocab_text, resume.as_ref(), Some(&paths))?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        info!("L_total {} -> {} over {} epochs (best epoch {})", first.total, last.total, result.history.len(), result.best_epoch);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_finetune(data: &Path, ckpt_path: &Path, task: TaskKind, seeds: u64, random_init: bool, report: Option<&Path>, out_dir: Option<&Path>, cfg_args: &ConfigArgs, threads: usize) -> Result<()> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let (base, vocab_text) = checkpoint_config(&ckpt)?;
    let cfg = load_config(cfg_args, Some(base.clone()))?;
    if cfg.architecture_hash() != base.architecture_hash() || cfg.preprocess_hash() != base.preprocess_hash() {
        bail!("finetuning must keep the checkpoint's architecture and graph settings");
    }
    let vocab = read_vocab_text(&vocab_text)?;
    let ds = load_csv(data)?;
    if task == TaskKind::Classify {
        ds.check_binary()?;
    }
    let samples = samples_for(&ds, &vocab, &cfg, threads)?;
    let init = if random_init { None } else { Some(encoder_params(&ckpt)) };
    let metric = task.metric_name();
    let mut text = String::new();
    let _ = writeln!(text, "task = {}", task.name());
    let _ = writeln!(text, "metric = {metric}");
    let _ = writeln!(text, "init = {}", if random_init { "random" } else { "pretrained" });
    let _ = writeln!(text, "molecules = {}", samples.len());
    let _ = writeln!(text, "seeds = {seeds}");
    let mut tests = Vec::new();
    for seed in 0..seeds {
        let sp = split(samples.len(), seed)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let opts = FinetuneOptions {
            task,
            epochs: cfg.finetune_epochs,
            batch: cfg.finetune_batch,
            seed: cfg.seed.wrapping_add(seed),
            adam: cfg.adam,
        };
        let r = finetune(&cfg.model, init.as_ref(), &pick(&sp.train), &pick(&sp.valid), &pick(&sp.test), &opts)?;
        let _ = writeln!(text, "seed.{seed}.best_epoch = {}", r.best_epoch);
        let _ = writeln!(text, "seed.{seed}.valid_{metric} = {}", r.valid_metric);
        let _ = writeln!(text, "seed.{seed}.test_{metric} = {}", r.test_metric);
        if !r.skipped_tasks.is_empty() {
            let _ = writeln!(text, "seed.{seed}.skipped_tasks = {:?}", r.skipped_tasks);
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            finetune_checkpoint(&cfg, &vocab_text, task, &ds.label_names, &r.params).write(&dir.join(format!("seed{seed}.ckpt")))?;
        }
        tests.push(r.test_metric);
    }
    let mean = tests.iter().sum::<f64>() / tests.len() as f64;
    let std = (tests.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / tests.len() as f64).sqrt();
    let _ = writeln!(text, "test_{metric}_mean = {mean}");
    let _ = writeln!(text, "test_{metric}_std = {std}");
    write_or_print(report, &text)
}

fn run_eval(ckpt_path: &Path, data: &Path, report: Option<&Path>, threads: usize) -> Result<()> {
    let model = load_finetuned(&Checkpoint::read(ckpt_path)?)?;
    let vocab = read_vocab_text(&model.vocab_text)?;
    let ds = load_csv(data)?;
    if ds.n_tasks() != model.label_names.len() {
        bail!("data has {} label columns, the model predicts {}", ds.n_tasks(), model.label_names.len());
    }
    let samples = samples_for(&ds, &vocab, &model.cfg, threads)?;
    let preds = predict(&model.params, &model.cfg.model, &samples, 64)?;
    let labels: Vec<_> = samples.iter().map(|s| s.labels.clone()).collect();
    let (value, skipped) = task_metric(&preds, &labels, model.task)?;
    let mut text = String::new();
    let _ = writeln!(text, "task = {}", model.task.name());
    let _ = writeln!(text, "molecules = {}", samples.len());
    let _ = writeln!(text, "{} = {value}", model.task.metric_name());
    if !skipped.is_empty() {
        let _ = writeln!(text, "skipped_tasks = {skipped:?}");
    }
    write_or_print(report, &text)
}

#[allow(clippy::too_many_arguments)]
fn run_embed(ckpt_path: &Path, data: &Path, level: EmbedLevel, out: &Path, random: bool, cluster: bool, max_per_key: usize, threads: usize) -> Result<()> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let (cfg, vocab_text) = checkpoint_config(&ckpt)?;
    let vocab = read_vocab_text(&vocab_text)?;
    let ds = load_csv(data)?;
    let samples = samples_for(&ds, &vocab, &cfg, threads)?;
    let params = if random {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        init_params(&cfg.model, &mut rng)
    } else {
        encoder_params(&ckpt)
    };
    let rows = export_embeddings(&params, &cfg.model, &samples, level)?;
    write_embeddings_csv(&rows, std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    println!("rows = {}", rows.len());
    if cluster {
        let (scores, n) = embedding_cluster_scores(&rows, Some(max_per_key), cfg.seed)?;
        println!("clustered_rows = {n}");
        println!("dbi = {}", scores.dbi);
        println!("silhouette = {}", scores.silhouette);
    }
    Ok(())
}

fn run_inspect(smiles: &str, vocab: Option<&Path>, variant: GraphVariant, fp_bits: usize) -> Result<()> {
    let m = parse_smiles(smiles)?;
    let pm = perceive(&m)?;
    let d = match vocab {
        Some(p) => decompose(&m, &FragmentVocab::read(p)?)?,
        None => Decomposition::components(&m),
    };
    let g = build_chg_variant(&pm, &d, variant)?;
    let fgs = FunctionalGroupSet::default_library();
    let t = compute_targets(&pm, &d, &fgs, fp_bits);
    let sample = Sample {
        smiles: smiles.to_string(),
        chg: g,
        targets: t,
        labels: Vec::new(),
    };
    let mut out = sample.chg.dump();
    let _ = writeln!(out, "nodes {} edges {}", sample.chg.n_nodes(), sample.chg.n_edges());
    let names: Vec<&str> = fgs.names().collect();
    for (f, bits) in sample.targets.frag_fg.iter().enumerate() {
        let hits: Vec<&str> = bits.iter().zip(&names).filter(|(b, _)| **b == 1).map(|(_, n)| *n).collect();
        let _ = writeln!(out, "frag {f} groups {}", if hits.is_empty() { "-".to_string() } else { hits.join(",") });
    }
    let _ = writeln!(out, "labels {}", sample.label_record());
    print!("{out}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    match cli.command {
        Command::VocabBuild {
            corpus,
            size,
            out,
            max_molecules,
            seed,
        } => vocab_build(&corpus, size, &out, max_molecules, seed),
        Command::Preprocess {
            corpus,
            vocab,
            out,
            labels_out,
            cfg,
        } => {
            let mut cfg = load_config(&cfg, None)?;
            if cli.threads.is_some() {
                cfg.threads = threads;
            }
            run_preprocess(&corpus, &vocab, &out, labels_out.as_deref(), &cfg)
        }
        Command::Pretrain { cache, out, resume, cfg } => {
            let cfg = load_config(&cfg, None)?;
            run_pretrain(&cache, &out, resume.as_deref(), &cfg)
        }
        Command::Finetune {
            data,
            ckpt,
            task,
            seeds,
            random_init,
            report,
            out_dir,
            cfg,
        } => {
            let task = TaskKind::from_name(&task).expect("validated by clap");
            run_finetune(&data, &ckpt, task, seeds, random_init, report.as_deref(), out_dir.as_deref(), &cfg, threads)
        }
        Command::Eval { ckpt, data, report } => run_eval(&ckpt, &data, report.as_deref(), threads),
        Command::Embed {
            ckpt,
            data,
            level,
            out,
            random,
            cluster,
            max_per_key,
        } => run_embed(&ckpt, &data, EmbedLevel::from_name(&level).expect("validated by clap"), &out, random, cluster, max_per_key, threads),
        Command::Inspect {
            smiles,
            vocab,
            variant,
            fp_bits,
        } => run_inspect(&smiles, vocab.as_deref(), GraphVariant::from_name(&variant).expect("validated by clap"), fp_bits),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
