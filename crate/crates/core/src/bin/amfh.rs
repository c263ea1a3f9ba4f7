use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amfh::bench::run_bench;
use amfh::centers::{audit_centers, build_center_table};
use amfh::config::KeyValueConfig;
use amfh::encoder::{EncodeMode, EncodeOptions};
use amfh::eval::{hamming_rank, mean_average_precision};
use amfh::io;
use amfh::labels::LabelSet;
use amfh::protocol::{
    ablate, encode_batches, sweep_delta, sweep_range, train_on_bundle, PipelineConfig, DELTA_GRID,
};
use amfh::synth::{generate_synthetic, DatasetBundle, SynthSpec};
use amfh::{Error, Result};

#[derive(Parser)]
#[command(name = "amfh", version, about = "Adaptive multi-modal fusion hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle
    Synth(SynthArgs),
    /// Build and audit a hash center table
    Centers(CentersArgs),
    /// Train a model on a bundle's training split
    Train(TrainArgs),
    /// Encode features into binary codes
    Encode(EncodeArgs),
    /// Rank a code database for each query code
    Query(QueryArgs),
    /// Compute mean average precision
    Eval(EvalArgs),
    /// Run the acceptance benchmark
    Bench(BenchArgs),
    /// Retrain and evaluate over a grid of regularization weights
    SweepDelta(SweepArgs),
    /// Compare adaptive and fixed encoding on a noisy stream
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Key-value spec file
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Base preset: standard, noisy or ablation
    #[arg(long, default_value = "standard")]
    preset: String,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CentersArgs {
    #[arg(long)]
    bits: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory
    #[arg(long)]
    data: PathBuf,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// Key-value config; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    center_seed: Option<u64>,
    #[arg(long)]
    kernel_width: Option<f64>,
    /// Also write the center table
    #[arg(long)]
    centers_out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Bundle directory; encodes the split named by --split
    #[arg(long, conflicts_with = "features")]
    data: Option<PathBuf>,
    /// train, query, retrieval, online or stream
    #[arg(long, default_value = "online")]
    split: String,
    /// Feature files, one per modality, comma-separated
    #[arg(long, value_delimiter = ',')]
    features: Vec<PathBuf>,
    #[arg(long, default_value = "adaptive")]
    mode: EncodeMode,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    /// Modalities treated as absent, comma-separated
    #[arg(long, value_delimiter = ',')]
    missing: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Write per-batch modality weights as text
    #[arg(long)]
    weights_trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    db_codes: PathBuf,
    /// Bundle directory supplying labels for --query-split and --db-split
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "query")]
    query_split: String,
    #[arg(long, default_value = "retrieval")]
    db_split: String,
    /// Label files used instead of a bundle
    #[arg(long, requires = "db_labels")]
    query_labels: Option<PathBuf>,
    #[arg(long, requires = "query_labels")]
    db_labels: Option<PathBuf>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Write a key-value report with per-query AP
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Bundle directory; a synthetic bundle is generated when absent
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: PipelineArgs,
    /// Regularization weights, comma-separated
    #[arg(long, value_delimiter = ',')]
    deltas: Vec<f64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: PipelineArgs,
    #[arg(long)]
    weights_trace: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            print_error("usage", text.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            print_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn print_error(kind: &str, message: &str) {
    let message = message.lines().next().unwrap_or("").replace('"', "'");
    eprintln!("error: kind={kind} message=\"{message}\"");
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Centers(a) => centers(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::SweepDelta(a) => sweep(a),
        Command::Ablate(a) => ablation(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let mut spec = match a.preset.as_str() {
        "standard" => SynthSpec::standard(0.3, seed),
        "noisy" => SynthSpec::noisy_stream(0.3, 1.0, seed),
        "ablation" => SynthSpec::ablation(seed),
        other => return Err(Error::Invalid(format!("unknown preset {other:?}"))),
    };
    if let Some(path) = &a.spec {
        spec = SynthSpec::from_config(&KeyValueConfig::load(path)?, spec)?;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.spread {
        spec.cluster_spread = vec![s; spec.modality_dims.len()];
    }
    spec.validate()?;
    let bundle = generate_synthetic(&spec)?;
    bundle.store(&a.out)?;
    write_text(&a.out.join("spec.txt"), &spec.to_config().to_text())?;
    println!(
        "wrote {} samples, {} modalities, {} stream batches to {}",
        bundle.num_samples(),
        bundle.modalities.len(),
        bundle.stream.len(),
        a.out.display()
    );
    Ok(())
}

fn centers(a: CentersArgs) -> Result<()> {
    let table = build_center_table(a.bits, a.classes, a.seed)?;
    let audit = audit_centers(&table);
    println!("r* = {}", table.order());
    println!("method = {:?}", table.method());
    println!("seed = {}", table.seed());
    println!("average distance = {:.4}", audit.average);
    println!("minimum distance = {}", audit.minimum);
    println!("threshold = {:.4}", audit.threshold);
    println!("{}", if audit.passed { "PASS" } else { "FAIL" });
    if let Some(out) = &a.out {
        io::store_centers(&table, out)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => KeyValueConfig::load(p)?,
        None => KeyValueConfig::default(),
    };
    let mut cfg = PipelineConfig::default();
    cfg.bits = a.bits.map_or_else(|| file.get_or("bits", cfg.bits), Ok)?;
    cfg.center_seed = a
        .center_seed
        .map_or_else(|| file.get_or("center_seed", cfg.center_seed), Ok)?;
    let t = &mut cfg.train;
    t.delta = a.delta.map_or_else(|| file.get_or("delta", t.delta), Ok)?;
    t.num_anchors = a
        .anchors
        .map_or_else(|| file.get_or("anchors", t.num_anchors), Ok)?;
    t.seed = a.seed.map_or_else(|| file.get_or("seed", t.seed), Ok)?;
    t.max_iters = a
        .max_iters
        .map_or_else(|| file.get_or("max_iters", t.max_iters), Ok)?;
    t.rel_tol = a.tol.map_or_else(|| file.get_or("tol", t.rel_tol), Ok)?;
    t.kernel_width = match a.kernel_width {
        Some(w) => Some(w),
        None => file.get("kernel_width")?,
    };

    let bundle = DatasetBundle::load(&a.data)?;
    let (centers, model) = train_on_bundle(&bundle, &cfg)?;
    io::store_model(&model, &a.out)?;
    if let Some(path) = &a.centers_out {
        io::store_centers(&centers, path)?;
    }
    println!("iterations = {}", model.objective_trace.len());
    println!("converged = {}", model.converged);
    if let Some(last) = model.objective_trace.last() {
        println!("objective = {last:.6}");
    }
    let weights: Vec<String> = model
        .train_weights
        .iter()
        .map(|w| format!("{w:.6}"))
        .collect();
    println!("weights = {}", weights.join(" "));
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let opts = EncodeOptions {
        max_iters: a.max_iters,
        rel_tol: a.tol,
    };
    let (bundle, batches, order) = match &a.data {
        Some(dir) => {
            let bundle = DatasetBundle::load(dir)?;
            if a.split == "stream" {
                let order = bundle.split.online();
                let batches = bundle.stream_or_chunks(&order, a.batch_size);
                (bundle, batches, order)
            } else {
                let order = bundle.split.by_name(&a.split)?;
                let batches = DatasetBundle {
                    stream: Vec::new(),
                    ..bundle.clone()
                }
                .stream_or_chunks(&order, a.batch_size);
                (bundle, batches, order)
            }
        }
        None => {
            if a.features.is_empty() {
                return Err(Error::Invalid(
                    "either --data or --features is required".into(),
                ));
            }
            let modalities = a
                .features
                .iter()
                .map(io::load_features)
                .collect::<Result<Vec<_>>>()?;
            let n = modalities[0].ncols();
            if let Some(x) = modalities.iter().find(|x| x.ncols() != n) {
                return Err(Error::Shape(format!(
                    "feature files hold {n} and {} samples",
                    x.ncols()
                )));
            }
            let bundle = DatasetBundle {
                modalities,
                labels: LabelSet::single(&vec![0; n]),
                split: Default::default(),
                stream: Vec::new(),
            };
            let order: Vec<usize> = (0..n).collect();
            let batches = bundle.stream_or_chunks(&order, a.batch_size);
            (bundle, batches, order)
        }
    };
    let encoded = encode_batches(&model, &bundle, &batches, a.mode, &opts, &a.missing)?;
    let codes = encoded.codes_for(&order)?;
    io::store_codes(&codes, &a.out)?;
    if let Some(path) = &a.weights_trace {
        let trace = io::weight_trace_to_text(
            encoded
                .batches
                .iter()
                .enumerate()
                .map(|(b, (_, r))| (b, r.dynamic_weights.as_slice())),
        );
        write_text(path, &trace)?;
    }
    println!(
        "encoded {} samples in {} batches ({})",
        codes.len(),
        encoded.batches.len(),
        a.mode
    );
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let db = io::load_codes(&a.db)?;
    let queries = io::load_codes(&a.queries)?;
    let mut out = std::io::stdout().lock();
    for q in 0..queries.len() {
        let ranked = hamming_rank(&queries.column_signs(q), &db)?;
        let top: Vec<String> = ranked
            .ranked_indices
            .iter()
            .zip(&ranked.distances)
            .take(a.top_k)
            .map(|(i, d)| format!("{i}:{d}"))
            .collect();
        match writeln!(out, "{q}\t{}", top.join(" ")) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
            other => other?,
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let query_codes = io::load_codes(&a.query_codes)?;
    let db_codes = io::load_codes(&a.db_codes)?;
    let (q_labels, db_labels) = match (&a.data, &a.query_labels, &a.db_labels) {
        (_, Some(q), Some(d)) => (io::load_labels(q)?, io::load_labels(d)?),
        (Some(dir), _, _) => {
            let bundle = DatasetBundle::load(dir)?;
            let q = bundle.split.by_name(&a.query_split)?;
            let d = bundle.split.by_name(&a.db_split)?;
            (bundle.labels.select(&q), bundle.labels.select(&d))
        }
        _ => {
            return Err(Error::Invalid(
                "labels required: pass --data or --query-labels with --db-labels".into(),
            ))
        }
    };
    let report = mean_average_precision(&query_codes, &q_labels, &db_codes, &db_labels, a.cutoff)?;
    print!("{}", report.to_key_value(false));
    if let Some(path) = &a.report {
        write_text(path, &report.to_key_value(true))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let report = run_bench(a.seed);
    print!("{}", report.to_text(true));
    if let Some(path) = &a.report {
        write_text(path, &report.to_text(false))?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::Invalid(
            "one or more acceptance criteria failed".into(),
        ))
    }
}

fn pipeline_inputs(
    a: &PipelineArgs,
    fallback: fn(u64) -> SynthSpec,
) -> Result<(DatasetBundle, PipelineConfig)> {
    let bundle = match &a.data {
        Some(dir) => DatasetBundle::load(dir)?,
        None => generate_synthetic(&fallback(a.seed))?,
    };
    let cfg = PipelineConfig {
        bits: a.bits,
        cutoff: a.cutoff,
        ..PipelineConfig::default()
    };
    Ok((bundle, cfg))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (bundle, cfg) = pipeline_inputs(&a.common, |seed| SynthSpec::standard(0.3, seed))?;
    let deltas = if a.deltas.is_empty() {
        DELTA_GRID.to_vec()
    } else {
        a.deltas
    };
    let points = sweep_delta(&bundle, &cfg, &deltas)?;
    let mut text = String::from("delta map iterations\n");
    for p in &points {
        text.push_str(&format!("{:e} {:.6} {}\n", p.delta, p.map, p.iterations));
    }
    text.push_str(&format!("range {:.6}\n", sweep_range(&points)));
    print!("{text}");
    if let Some(out) = &a.common.out {
        write_text(out, &text)?;
    }
    Ok(())
}

fn ablation(a: AblateArgs) -> Result<()> {
    let (bundle, cfg) = pipeline_inputs(&a.common, SynthSpec::ablation)?;
    let report = ablate(&bundle, &cfg)?;
    let mut text = String::new();
    text.push_str(&format!("adaptive_map = {:.6}\n", report.adaptive_map));
    text.push_str(&format!("fixed_map = {:.6}\n", report.fixed_map));
    text.push_str(&format!(
        "corrupted_batches = {}\n",
        report.corrupted_batches
    ));
    text.push_str(&format!(
        "corrupted_heaviest = {}\n",
        report.corrupted_heaviest
    ));
    text.push_str(&format!(
        "adaptive_ge_fixed = {}\n",
        report.adaptive_map >= report.fixed_map
    ));
    print!("{text}");
    if let Some(out) = &a.common.out {
        write_text(out, &text)?;
    }
    if let Some(path) = &a.weights_trace {
        let trace = io::weight_trace_to_text(
            report
                .adaptive_weights
                .iter()
                .enumerate()
                .map(|(b, w)| (b, w.as_slice())),
        );
        write_text(path, &trace)?;
    }
    Ok(())
}
