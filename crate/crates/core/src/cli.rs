//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input-data error, 2 usage or validation error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Backend, Real};
use crate::imagedb::{self, SampleMethod};
use crate::layers::LayerType;
use crate::net::Net;
use crate::pg_trainer::{self, CartPoleEnv, PolicyNet, TrainerConfig, Variant};
use crate::prototxt;
use crate::solver::{Solver, SolverConfig};
use crate::Error;

pub const SIGMOID_MODEL: &str = include_str!("../../../models/pg_sigmoid.prototxt");
pub const SOFTMAX_MODEL: &str = include_str!("../../../models/pg_softmax.prototxt");
pub const SL_MODEL: &str = include_str!("../../../models/sl_softmax.prototxt");

/// Header of the per-episode statistics written by `train-rl`.
pub const STATS_HEADER: &str = "episode,length,mean_return_last_100";

const BENCH_WARMUP: usize = 5;

#[derive(Debug, Parser)]
#[command(name = "blobnet", version, about = "CPU neural networks and policy-gradient Cart-Pole training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy on Cart-Pole with policy gradients.
    TrainRl(TrainRlArgs),
    /// Supervised training on an image dataset with softmax cross-entropy.
    TrainSl(TrainSlArgs),
    /// Time forward+backward passes of a model.
    Bench(BenchArgs),
    /// Format or check prototxt model files.
    #[command(subcommand)]
    Proto(ProtoCommand),
    /// Inspect image datasets.
    #[command(subcommand)]
    Db(DbCommand),
}

#[derive(Debug, Args)]
pub struct TrainRlArgs {
    #[arg(long, default_value = "sigmoid", value_parser = parse_variant)]
    pub variant: Variant,
    /// Model file; the shipped model for the variant when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_episodes: usize,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: Real,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: Real,
    /// Use raw discounted returns instead of standardized ones.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Statistics file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the final weights here.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainSlArgs {
    /// Dataset index file.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file ending in Softmax → MemoryLoss; a linear classifier when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: Real,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accuracy log; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Model file; the shipped sigmoid policy when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ProtoCommand {
    /// Print the canonical form of a model file.
    Fmt { file: PathBuf },
    /// Build the model and report every blob's shape.
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum DbCommand {
    /// Per-label entry counts.
    Stats { index: PathBuf },
    /// Empirical per-label frequencies of the sampler.
    Sample {
        index: PathBuf,
        #[arg(long, default_value = "uniform")]
        method: SampleMethod,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        /// Weight picks by each entry's boost.
        #[arg(long)]
        boost: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn data_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn usage_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(command: Command) -> CmdResult {
    match command {
        Command::TrainRl(a) => train_rl(&a),
        Command::TrainSl(a) => train_sl(&a),
        Command::Bench(a) => bench(&a),
        Command::Proto(ProtoCommand::Fmt { file }) => proto_fmt(&file),
        Command::Proto(ProtoCommand::Check { file, seed }) => proto_check(&file, seed),
        Command::Db(DbCommand::Stats { index }) => db_stats(&index),
        Command::Db(DbCommand::Sample {
            index,
            method,
            draws,
            boost,
            seed,
        }) => db_sample(&index, method, draws, boost, seed),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| data_error(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(data_error)
        }
    }
}

fn model_text(path: Option<&Path>, fallback: &str) -> std::result::Result<String, Failure> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| usage_error(format!("{}: {e}", p.display()))),
        None => Ok(fallback.to_string()),
    }
}

fn build_net(text: &str, seed: u64) -> crate::Result<Net> {
    let def = prototxt::parse(text)?;
    Net::build(&def, &Arc::new(Backend::new()), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn train_rl(a: &TrainRlArgs) -> CmdResult {
    let fallback = match a.variant {
        Variant::Sigmoid => SIGMOID_MODEL,
        Variant::Softmax => SOFTMAX_MODEL,
    };
    let text = model_text(a.model.as_deref(), fallback)?;
    let net = build_net(&text, a.seed).map_err(usage_error)?;
    let mut policy = PolicyNet::new(net, a.variant).map_err(usage_error)?;
    let cfg = TrainerConfig {
        variant: a.variant,
        gamma: a.gamma,
        episodes_per_batch: a.batch_episodes,
        normalize_returns: !a.no_normalize,
        max_episodes: a.episodes,
        seed: a.seed,
    };
    cfg.validate().map_err(usage_error)?;
    let solver = SolverConfig {
        learning_rate: a.lr,
        ..Default::default()
    };
    solver.validate().map_err(usage_error)?;

    let mut stats = String::from(STATS_HEADER);
    stats.push('\n');
    let mut best = 0;
    pg_trainer::train(&mut CartPoleEnv::default(), &mut policy, solver, &cfg, &mut |s| {
        let _ = writeln!(stats, "{},{},{:.4}", s.episode, s.length, s.mean_return_last_100);
        best = best.max(s.length);
        ControlFlow::Continue(())
    })
    .map_err(data_error)?;
    emit(a.out.as_deref(), &stats)?;
    if let Some(p) = &a.weights {
        let bytes = policy.net().snapshot_weights().map_err(data_error)?;
        fs::write(p, bytes).map_err(|e| data_error(format!("{}: {e}", p.display())))?;
    }
    eprintln!("trained {} episodes, longest episode {best} steps", a.episodes);
    Ok(())
}

fn train_sl(a: &TrainSlArgs) -> CmdResult {
    let ds = imagedb::load_dataset(&a.data).map_err(data_error)?;
    if ds.is_empty() {
        return Err(data_error(format!("{}: dataset is empty", a.data.display())));
    }
    let text = model_text(a.model.as_deref(), SL_MODEL)?;
    let net = build_net(&text, a.seed).map_err(usage_error)?;
    let mut clf = PolicyNet::new(net, Variant::Softmax).map_err(usage_error)?;
    let classes = clf.width() as i64;
    if let Some(e) = ds.entries().find(|e| e.label < 0 || e.label >= classes) {
        return Err(usage_error(format!(
            "image {} has label {} but the model has {classes} outputs",
            e.id, e.label
        )));
    }
    let mut solver = Solver::new(SolverConfig::sgd(a.lr)).map_err(usage_error)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let inputs: Vec<(Vec<Real>, usize)> = ds
        .entries()
        .map(|e| (e.tensor.iter().map(|&v| v as Real).collect(), e.label as usize))
        .collect();

    let mut log = String::from("iteration,accuracy\n");
    for iter in 0..a.iters {
        let entry = ds
            .sample(SampleMethod::LabelBalanced, false, &mut rng)
            .map_err(data_error)?;
        let x: Vec<Real> = entry.tensor.iter().map(|&v| v as Real).collect();
        let probs = clf.probabilities(&x).map_err(usage_error)?;
        let mut target = vec![0.0; probs.len()];
        target[entry.label as usize] = 1.0;
        let grad = crate::layers::softmax_xent_gradient(&probs, &target).map_err(data_error)?;
        clf.accumulate(&x, &grad).map_err(data_error)?;
        solver.apply_update(clf.net()).map_err(data_error)?;

        let mut correct = 0;
        for (x, label) in &inputs {
            let p = clf.probabilities(x).map_err(usage_error)?;
            let guess = (0..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best });
            correct += usize::from(guess == *label);
        }
        let _ = writeln!(log, "{},{:.4}", iter + 1, correct as f64 / inputs.len() as f64);
    }
    emit(a.out.as_deref(), &log)
}

fn bench(a: &BenchArgs) -> CmdResult {
    if a.iters == 0 {
        return Err(usage_error("--iters must be at least 1"));
    }
    let text = model_text(a.model.as_deref(), SIGMOID_MODEL)?;
    let mut net = build_net(&text, a.seed).map_err(usage_error)?;
    let inputs: Vec<(String, usize, usize)> = net
        .layers()
        .iter()
        .filter(|l| l.kind() == LayerType::MemoryData)
        .map(|l| {
            let shape = net.blob(&l.spec().tops[0]).expect("built").shape();
            (l.name().to_string(), shape.num(), shape.item_count())
        })
        .collect();
    if inputs.is_empty() {
        return Err(usage_error("bench needs a model with a MemoryData layer"));
    }
    let losses: Vec<String> = net
        .layers()
        .iter()
        .filter(|l| l.kind() == LayerType::MemoryLoss)
        .map(|l| l.name().to_string())
        .collect();
    for l in &losses {
        net.set_loss_hook(
            l,
            Box::new(|b: &crate::Blob| b.write_diff(&vec![1.0; b.count()])),
        )
        .map_err(usage_error)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut pass = |net: &mut Net| -> crate::Result<()> {
        for (name, batch, item) in &inputs {
            for _ in 0..*batch {
                let x: Vec<Real> = (0..*item).map(|_| rng.gen_range(-1.0..1.0)).collect();
                net.enqueue(name, &x)?;
            }
        }
        for b in net.forward()? {
            b.write_diff(&vec![1.0; b.count()])?;
        }
        net.backward()
    };
    for _ in 0..BENCH_WARMUP {
        pass(&mut net).map_err(data_error)?;
    }
    let start = Instant::now();
    for _ in 0..a.iters {
        pass(&mut net).map_err(data_error)?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / a.iters as f64;
    let name = match net.name() {
        "" => "unnamed",
        n => n,
    };
    let batch = inputs[0].1;
    emit(
        a.out.as_deref(),
        &format!("model\tbatch\tfwd_bwd_ms\n{name}\t{batch}\t{ms:.6}\n"),
    )
}

fn proto_fmt(file: &Path) -> CmdResult {
    let text = fs::read_to_string(file).map_err(|e| data_error(format!("{}: {e}", file.display())))?;
    let nodes = prototxt::parse_nodes(&text).map_err(data_error)?;
    emit(None, &prototxt::print_nodes(&nodes))
}

fn proto_check(file: &Path, seed: u64) -> CmdResult {
    let text = fs::read_to_string(file).map_err(|e| data_error(format!("{}: {e}", file.display())))?;
    let net = build_net(&text, seed).map_err(data_error)?;
    let mut report = String::new();
    for b in net.blobs() {
        let _ = writeln!(report, "{}\t{}", b.name(), b.shape());
    }
    emit(None, &report)
}

fn db_stats(index: &Path) -> CmdResult {
    let ds = imagedb::load_dataset(index).map_err(data_error)?;
    let mut report = String::new();
    for (label, count) in ds.label_counts() {
        let _ = writeln!(report, "label {label}: {count}");
    }
    emit(None, &report)
}

fn db_sample(index: &Path, method: SampleMethod, draws: usize, boost: bool, seed: u64) -> CmdResult {
    if draws == 0 {
        return Err(usage_error("--draws must be at least 1"));
    }
    let ds = imagedb::load_dataset(index).map_err(data_error)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for label in ds.label_counts().keys() {
        counts.insert(*label, 0);
    }
    for _ in 0..draws {
        let e = ds.sample(method, boost, &mut rng).map_err(data_error)?;
        *counts.entry(e.label).or_default() += 1;
    }
    let mut report = String::new();
    for (label, n) in counts {
        let _ = writeln!(report, "label {label}: {:.4}", n as f64 / draws as f64);
    }
    emit(None, &report)
}
