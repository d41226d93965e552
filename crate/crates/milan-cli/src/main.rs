//! `milan` — train a metric-learning hashing network on feature files,
//! encode binary codes, search them by Hamming distance, and run the
//! evaluation harness against the classic baselines.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use milan_core::dataset::{
    gen_synthetic, load_dataset, save_dataset, stratified_split, LabeledDataset, SplitSpec,
};
use milan_core::error::Error as CoreError;
use milan_core::eval::{
    bench_latency, evaluate, run_sweep, sweep_csv, ApNormalization, EvalOptions, Method,
    MethodArtifacts, SearchKind, SweepAxis, SweepContext, SweepSpec,
};
use milan_core::hashing::{binarize, load_codes, save_codes, HammingIndex, LshHasher};
use milan_core::miner::MiningMode;
use milan_core::net::embed;
use milan_core::objective::PushBalanceScope;
use milan_core::seeds::{self, stream_seed};
use milan_core::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "milan",
    version,
    about = "Metric-learning hashing and Hamming retrieval"
)]
struct Cli {
    /// Master seed; every stochastic component draws from its own stream
    /// derived from this value.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Emit machine-readable JSON where a human summary would be printed.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled feature file (Gaussian class clusters).
    GenSynth(GenSynthArgs),
    /// Train the hashing network on a feature file and keep the checkpoint
    /// with the best validation mAP.
    Train(TrainArgs),
    /// Encode a feature file into a hash-code file with a trained model.
    Encode(EncodeArgs),
    /// Load a code file, verify it, and print archive statistics.
    Index(IndexArgs),
    /// Rank an archive of codes against a query code (TSV: rank, id, distance).
    Query(QueryArgs),
    /// Evaluate a retrieval method (queries = test split, archive = train split).
    Eval(EvalArgs),
    /// Parameter sweeps and raw search-latency measurements.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Number of classes.
    #[arg(long)]
    classes: usize,
    /// Samples per class.
    #[arg(long)]
    per_class: usize,
    /// Feature dimension.
    #[arg(long)]
    dim: usize,
    /// Within-class noise scale.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Radius of the sphere the class means are drawn on.
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    /// Output feature file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SplitFlags {
    /// Fraction of each class assigned to the train pool.
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    /// Validation samples carved out of each class's train pool.
    #[arg(long, default_value_t = 20)]
    val_per_class: usize,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Hash code length K.
    #[arg(long)]
    hash_bits: Option<usize>,
    /// Hidden layer widths, comma separated (e.g. 1024,512).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    iters_per_epoch: Option<usize>,
    /// Validate every this many steps (0 disables model selection).
    #[arg(long)]
    eval_every: Option<usize>,
    /// Cutoff for validation mAP@k.
    #[arg(long)]
    val_top_k: Option<usize>,
    /// Triplet margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Weight of the saturation term.
    #[arg(long)]
    push_weight: Option<f64>,
    /// Weight of the bit-balance term.
    #[arg(long)]
    balance_weight: Option<f64>,
    /// Triplets per batch (M).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Triplet acceptance: random or margin-violating.
    #[arg(long, value_parser = parse_mining)]
    mining: Option<MiningMode>,
    #[arg(long)]
    max_resamples: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    /// Push/balance scope: all-slots or unique-images.
    #[arg(long, value_parser = parse_scope)]
    scope: Option<PushBalanceScope>,
    /// Scale inputs to unit L2 norm before the network.
    #[arg(long)]
    unit_norm: bool,
    #[arg(long)]
    neg_slope: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.hash_bits, self.hash_bits);
        set!(cfg.hidden_dims, self.hidden);
        set!(cfg.epochs, self.epochs);
        set!(cfg.iters_per_epoch, self.iters_per_epoch);
        set!(cfg.eval_every, self.eval_every);
        set!(cfg.val_top_k, self.val_top_k);
        set!(cfg.loss.margin, self.margin);
        set!(cfg.loss.push_weight, self.push_weight);
        set!(cfg.loss.balance_weight, self.balance_weight);
        set!(cfg.miner.batch_size, self.batch_size);
        set!(cfg.miner.mode, self.mining);
        set!(cfg.miner.max_resamples, self.max_resamples);
        set!(cfg.adam.learning_rate, self.learning_rate);
        set!(cfg.adam.beta1, self.beta1);
        set!(cfg.adam.beta2, self.beta2);
        set!(cfg.push_balance_scope, self.scope);
        set!(cfg.neg_slope, self.neg_slope);
        if self.unit_norm {
            cfg.unit_norm = true;
        }
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Input feature file.
    #[arg(long)]
    features: PathBuf,
    /// Output directory for checkpoint.miln and history.csv.
    #[arg(short, long)]
    out: PathBuf,
    /// JSON file with a (possibly partial) training configuration; explicit
    /// flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EncodeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Feature file to encode.
    #[arg(long)]
    features: PathBuf,
    /// Output code file.
    #[arg(short, long)]
    out: PathBuf,
    /// Also write the pre-quantization embeddings as a feature file
    /// (dim = K, original labels), e.g. for external 2-D projection.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Scale inputs to unit L2 norm before the network (must match training).
    #[arg(long)]
    unit_norm: bool,
}

#[derive(Args)]
struct IndexArgs {
    /// Code file to inspect.
    #[arg(long)]
    codes: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    /// Archive code file.
    #[arg(long)]
    archive: PathBuf,
    /// Code file holding the query (or queries; see --query-id).
    #[arg(long)]
    queries: PathBuf,
    /// Id of the query code inside --queries (default: the first code).
    #[arg(long)]
    query_id: Option<u64>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Input feature file; split into archive (train) and queries (test).
    #[arg(long)]
    features: PathBuf,
    /// Retrieval method: milan, lsh, raw-euclidean, raw-hamming.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Trained checkpoint (required for milan).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Projection count for lsh.
    #[arg(long)]
    hash_bits: Option<usize>,
    /// mAP cutoff k.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// AP normalization: min-relevant-k or by-k.
    #[arg(long, value_parser = parse_ap_norm)]
    ap_norm: Option<ApNormalization>,
    /// Scale inputs to unit L2 norm before the network (milan only).
    #[arg(long)]
    unit_norm: bool,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Sweep one axis: 'hash_bits=16,24,32', 'train_fraction=0.3,0.6' or
    /// 'top_k=10,20,50'. Emits CSV.
    #[arg(long)]
    sweep: Option<String>,
    /// Measure raw top-k search latency for a method instead of sweeping.
    #[arg(long, value_parser = parse_method)]
    latency: Option<Method>,
    /// Feature file (sweep mode).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Method under sweep.
    #[arg(long, value_parser = parse_method, default_value = "milan")]
    method: Method,
    /// mAP cutoff during sweeps.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Archive size for latency mode.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    /// Vector dimension for Euclidean / raw-Hamming latency runs.
    #[arg(long, default_value_t = 2048)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// Timed queries per latency run (after one warmup).
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    flags: TrainFlags,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn parse_mining(s: &str) -> Result<MiningMode, String> {
    match s {
        "random" => Ok(MiningMode::Random),
        "margin-violating" => Ok(MiningMode::MarginViolating),
        _ => Err(format!(
            "unknown mining mode '{s}'; valid: random, margin-violating"
        )),
    }
}

fn parse_scope(s: &str) -> Result<PushBalanceScope, String> {
    match s {
        "all-slots" => Ok(PushBalanceScope::AllSlots),
        "unique-images" => Ok(PushBalanceScope::UniqueImages),
        _ => Err(format!(
            "unknown scope '{s}'; valid: all-slots, unique-images"
        )),
    }
}

fn parse_ap_norm(s: &str) -> Result<ApNormalization, String> {
    match s {
        "min-relevant-k" => Ok(ApNormalization::MinRelevantK),
        "by-k" => Ok(ApNormalization::ByK),
        _ => Err(format!(
            "unknown AP normalization '{s}'; valid: min-relevant-k, by-k"
        )),
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenSynth(args) => cmd_gen_synth(cli, args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Encode(args) => cmd_encode(args),
        Command::Index(args) => cmd_index(cli, args),
        Command::Query(args) => cmd_query(args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Bench(args) => cmd_bench(cli, args),
    }
}

fn cmd_gen_synth(cli: &Cli, args: &GenSynthArgs) -> Result<(), CliError> {
    let ds = gen_synthetic(
        args.classes,
        args.per_class,
        args.dim,
        args.spread,
        args.separation,
        stream_seed(cli.seed, seeds::SYNTH),
    )?;
    save_dataset(&ds, &args.out)?;
    if cli.json {
        println!(
            "{}",
            json!({
                "path": args.out,
                "samples": ds.len(),
                "dim": ds.dim(),
                "classes": ds.class_count(),
            })
        );
    } else {
        println!(
            "wrote {}: N={} D={} C={}",
            args.out.display(),
            ds.len(),
            ds.dim(),
            ds.class_count()
        );
    }
    Ok(())
}

fn resolve_train_config(
    cli: &Cli,
    config_path: Option<&Path>,
    flags: &TrainFlags,
) -> Result<TrainConfig, CliError> {
    let base = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Runtime(format!("bad config file {}: {e}", path.display()))
            })?
        }
        None => TrainConfig::default(),
    };
    Ok(flags.apply(base).with_master_seed(cli.seed))
}

fn split_spec(cli: &Cli, flags: &SplitFlags) -> SplitSpec {
    SplitSpec {
        train_fraction: flags.train_fraction,
        val_per_class: flags.val_per_class,
        seed: stream_seed(cli.seed, seeds::SPLIT),
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_train_config(cli, args.config.as_deref(), &args.flags)?;
    let ds = load_dataset(&args.features)?;
    let spec = split_spec(cli, &args.split);
    let (train_ds, val_ds, test_ds) = stratified_split(&ds, &spec)?;
    let (params, history) = train(&train_ds, &val_ds, &cfg)?;

    fs::create_dir_all(&args.out)?;
    let checkpoint = args.out.join("checkpoint.miln");
    let history_path = args.out.join("history.csv");
    save_checkpoint(&params, &checkpoint)?;
    fs::write(&history_path, history.to_csv())?;

    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "config": cfg,
            "split": {
                "train_fraction": spec.train_fraction,
                "val_per_class": spec.val_per_class,
                "seed": spec.seed,
                "train": train_ds.len(),
                "val": val_ds.len(),
                "test": test_ds.len(),
            },
            "checkpoint": checkpoint,
            "history": history_path,
            "steps": history.entries.len(),
            "best_val_map": history.best_val_map(),
        }))
        .expect("serializable report")
    );
    Ok(())
}

fn cmd_encode(args: &EncodeArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&args.model)?;
    let ds = load_dataset(&args.features)?;
    if params.input_dim() != ds.dim() {
        return Err(CoreError::Validation(format!(
            "model expects {}-dim features, file has {}",
            params.input_dim(),
            ds.dim()
        ))
        .into());
    }
    let mut codes = Vec::with_capacity(ds.len());
    let mut flat_embeddings = args
        .embeddings
        .as_ref()
        .map(|_| Vec::with_capacity(ds.len() * params.output_dim()));
    for i in 0..ds.len() {
        let v = embed(&params, ds.feature(i), args.unit_norm)?;
        if let Some(flat) = &mut flat_embeddings {
            flat.extend(v.iter().map(|&x| x as f32));
        }
        codes.push(binarize(&v));
    }
    let ids: Vec<u64> = (0..ds.len() as u64).collect();
    save_codes(&args.out, &ids, &codes)?;
    if let (Some(path), Some(flat)) = (&args.embeddings, flat_embeddings) {
        let emb_ds = LabeledDataset::new(
            flat,
            ds.labels().to_vec(),
            params.output_dim(),
            ds.class_count(),
        )?;
        save_dataset(&emb_ds, path)?;
        eprintln!("wrote embeddings -> {}", path.display());
    }
    eprintln!(
        "encoded {} items at K={} -> {}",
        codes.len(),
        params.output_dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_index(cli: &Cli, args: &IndexArgs) -> Result<(), CliError> {
    let (ids, codes) = load_codes(&args.codes)?;
    let index = HammingIndex::build(ids, &codes, None)?;
    if cli.json {
        println!(
            "{}",
            json!({
                "path": args.codes,
                "items": index.len(),
                "code_bits": index.code_len(),
                "mean_ones_fraction": index.mean_ones_fraction(),
            })
        );
    } else {
        println!(
            "{}: {} codes of {} bits, mean ones fraction {:.4}",
            args.codes.display(),
            index.len(),
            index.code_len(),
            index.mean_ones_fraction()
        );
    }
    Ok(())
}

fn cmd_query(args: &QueryArgs) -> Result<(), CliError> {
    let (ids, codes) = load_codes(&args.archive)?;
    let index = HammingIndex::build(ids, &codes, None)?;
    let (query_ids, query_codes) = load_codes(&args.queries)?;
    let position = match args.query_id {
        Some(id) => query_ids.iter().position(|&q| q == id).ok_or_else(|| {
            CliError::Usage(format!("query id {id} not present in the query file"))
        })?,
        None => 0,
    };
    let query = query_codes
        .get(position)
        .ok_or_else(|| CliError::Usage("query file holds no codes".into()))?;
    for (rank, (id, dist)) in index.search_topk(query, args.top_k)?.iter().enumerate() {
        println!("{}\t{}\t{}", rank + 1, id, dist);
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.features)?;
    let spec = split_spec(cli, &args.split);
    let (train_ds, _val_ds, test_ds) = stratified_split(&ds, &spec)?;
    let opts = EvalOptions {
        top_k: args.k,
        ap_norm: args.ap_norm.unwrap_or_default(),
        unit_norm: args.unit_norm,
    };
    let report = match args.method {
        Method::Milan => {
            let model = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method milan requires --model".into()))?;
            let params = load_checkpoint(model)?;
            evaluate(&MethodArtifacts::Milan(&params), &test_ds, &train_ds, &opts)?
        }
        Method::Lsh => {
            let bits = args
                .hash_bits
                .ok_or_else(|| CliError::Usage("--method lsh requires --hash-bits".into()))?;
            let hasher = LshHasher::new(ds.dim(), bits, stream_seed(cli.seed, seeds::LSH))?;
            evaluate(&MethodArtifacts::Lsh(&hasher), &test_ds, &train_ds, &opts)?
        }
        Method::RawEuclidean => {
            evaluate(&MethodArtifacts::RawEuclidean, &test_ds, &train_ds, &opts)?
        }
        Method::RawHamming => evaluate(&MethodArtifacts::RawHamming, &test_ds, &train_ds, &opts)?,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable report")
    );
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<(), CliError> {
    match (&args.sweep, args.latency) {
        (Some(_), Some(_)) => Err(CliError::Usage(
            "--sweep and --latency are mutually exclusive".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "bench needs either --sweep or --latency".into(),
        )),
        (Some(sweep), None) => cmd_bench_sweep(cli, args, sweep),
        (None, Some(method)) => cmd_bench_latency(cli, args, method),
    }
}

fn cmd_bench_sweep(cli: &Cli, args: &BenchArgs, sweep: &str) -> Result<(), CliError> {
    let (axis_name, values) = sweep
        .split_once('=')
        .ok_or_else(|| CliError::Usage("expected --sweep axis=v1,v2,...".into()))?;
    let axis: SweepAxis = axis_name
        .parse()
        .map_err(|e: CoreError| CliError::Usage(e.to_string()))?;
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad sweep value '{v}'")))
        })
        .collect::<Result<_, _>>()?;
    let features = args
        .features
        .as_ref()
        .ok_or_else(|| CliError::Usage("--sweep requires --features".into()))?;
    let dataset = load_dataset(features)?;
    let ctx = SweepContext {
        dataset: &dataset,
        split: split_spec(cli, &args.split),
        train: args
            .flags
            .apply(TrainConfig::default())
            .with_master_seed(cli.seed),
        method: args.method,
        eval: EvalOptions {
            top_k: args.k,
            ..Default::default()
        },
        lsh_seed: stream_seed(cli.seed, seeds::LSH),
    };
    let rows = run_sweep(&SweepSpec { axis, values }, &ctx)?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn cmd_bench_latency(cli: &Cli, args: &BenchArgs, method: Method) -> Result<(), CliError> {
    let kind = match method {
        // --hash-bits (default 32) sets the code length for hash methods
        Method::Milan | Method::Lsh => SearchKind::Hamming {
            bits: args.flags.hash_bits.unwrap_or(32),
        },
        Method::RawHamming => SearchKind::Hamming { bits: args.dim },
        Method::RawEuclidean => SearchKind::Euclidean { dim: args.dim },
    };
    let stats = bench_latency(kind, args.n, args.top_k, args.reps, cli.seed)?;
    if cli.json {
        println!(
            "{}",
            json!({
                "method": method.name(),
                "n": args.n,
                "top_k": args.top_k,
                "reps": args.reps,
                "mean_us": stats.mean_us,
                "p50_us": stats.p50_us,
                "p95_us": stats.p95_us,
            })
        );
    } else {
        println!("method,n,top_k,reps,mean_us,p50_us,p95_us");
        println!(
            "{},{},{},{},{},{},{}",
            method.name(),
            args.n,
            args.top_k,
            args.reps,
            stats.mean_us,
            stats.p50_us,
            stats.p95_us
        );
    }
    Ok(())
}
