//! Command-line front end: run experiments, optimize power splits, audit
//! checkpoints, and prepare datasets.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure, 2 bad
//! configuration, 3 infeasible channel/power settings.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use esqfl_core::config::{DataSource, RunConfig};
use esqfl_core::data::Example;
use esqfl_core::esqnn::EsqnnParams;
use esqfl_core::federate::run_experiment;
use esqfl_core::metrics::{emit_csv, entropy_audit, fidelity_audit, EntropyAuditConfig};
use esqfl_core::poweropt::{closed_form_l2_low_snr, optimize_allocation, Objective};
use esqfl_core::Error;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "esqfl", version, about = "Entangled slimmable quantum federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a federated experiment described by a JSON config.
    Train(TrainArgs),
    /// Optimize the superposition-coding power allocation.
    OptimizePower(OptimizePowerArgs),
    /// Audit a checkpoint: per-depth fidelity and bipartite entropy.
    Audit(AuditArgs),
    /// Ingest and partition a dataset, writing shard files and histograms.
    DatasetPrep(DatasetPrepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for manifest, CSV, checkpoint and summary.
    #[arg(long, default_value = "esqfl-out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Device-parallel worker threads (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Force the synthetic dataset regardless of the config.
    #[arg(long)]
    synthetic: bool,
    /// MNIST directory override (also honors ESQFL_MNIST_DIR).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizePowerArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long, default_value_t = 17.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    u_prime: f64,
    #[arg(long, default_value_t = 1e-2)]
    grid_step: f64,
    /// Evaluate the low-SNR two-level closed form instead of searching.
    #[arg(long)]
    closed_form: bool,
    /// Optimize the literal exponential-sum objective instead of Σ p^-2.
    #[arg(long)]
    literal_objective: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON report path.
    #[arg(long, default_value = "audit.json")]
    out: PathBuf,
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DatasetPrepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for shard files.
    #[arg(long, default_value = "esqfl-data")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Infeasible { .. } | Error::Divergence(_) => EXIT_INFEASIBLE,
        Error::Config(_)
        | Error::Argument(_)
        | Error::DimensionMismatch(_)
        | Error::Validation(_)
        | Error::Ingestion { .. } => EXIT_CONFIG,
        Error::Io { .. } => EXIT_RUNTIME,
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code_for(err))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Manifest written before training starts; `ended_at` is patched in on
/// success, so its absence marks a partial run.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    version: String,
    seed: u64,
    started_at: String,
    ended_at: Option<String>,
    config: RunConfig,
    outputs: ManifestOutputs,
}

#[derive(Serialize, Deserialize)]
struct ManifestOutputs {
    csv: String,
    checkpoint: String,
    summary: String,
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    synthetic: bool,
    mnist_dir: Option<PathBuf>,
) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.federation.seed = seed;
    }
    if synthetic {
        cfg.data.source = DataSource::Synthetic;
    }
    let env_dir = std::env::var_os("ESQFL_MNIST_DIR").map(PathBuf::from);
    if let Some(dir) = mnist_dir.or(env_dir) {
        if cfg.data.mnist_dir.is_none() {
            cfg.data.mnist_dir = Some(dir);
        }
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, args.seed, args.synthetic, args.mnist_dir.clone())?;
    let fl = cfg.fl_config()?;
    let (shards, testset) = cfg.prepare_data()?;

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.federation.seed,
        started_at: chrono::Utc::now().to_rfc3339(),
        ended_at: None,
        config: cfg.clone(),
        outputs: ManifestOutputs {
            csv: "rounds.csv".into(),
            checkpoint: "checkpoint.bin".into(),
            summary: "summary.json".into(),
        },
    };
    write_json(&manifest_path, &manifest)?;

    let run = || run_experiment(&fl, &shards, &testset);
    let (logs, params) = if args.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {}-thread pool: {e}", args.workers)))?;
        pool.install(run)?
    } else {
        run()?
    };

    let csv_path = args.out.join("rounds.csv");
    emit_csv(&logs, fl.power.levels().max(fl.model.num_layers), &csv_path)?;
    let ckpt_path = args.out.join("checkpoint.bin");
    std::fs::write(&ckpt_path, params.to_le_bytes()).map_err(|e| io_err(&ckpt_path, e))?;

    let last_eval = logs.iter().rev().find(|l| l.accuracy.is_some());
    let summary = serde_json::json!({
        "rounds": logs.len(),
        "skipped_rounds": logs.iter().filter(|l| l.skipped).count(),
        "final_loss": logs.last().map(|l| l.loss),
        "final_eval": last_eval,
    });
    write_json(&args.out.join("summary.json"), &summary)?;

    manifest.ended_at = Some(chrono::Utc::now().to_rfc3339());
    write_json(&manifest_path, &manifest)?;

    if let Some(log) = last_eval {
        if let Some(acc) = &log.accuracy {
            let cells: Vec<String> = acc
                .iter()
                .enumerate()
                .map(|(i, a)| format!("depth{}={a:.4}", i + 1))
                .collect();
            println!("final accuracy: {}", cells.join(" "));
        }
    }
    println!("run artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_optimize_power(args: &OptimizePowerArgs) -> Result<(), Error> {
    if args.closed_form {
        let result = closed_form_l2_low_snr(args.u_prime).map_err(|e| match e {
            // Out-of-domain u' is an infeasible request at the CLI surface.
            Error::Validation(msg) => Error::Infeasible { index: 1, detail: msg },
            other => other,
        })?;
        for (i, v) in result.nu.nu.iter().enumerate() {
            println!("nu_{}={v:.6}", i + 1);
        }
        println!("sic_feasible={}", result.sic_feasible);
        if !result.sic_feasible {
            eprintln!(
                "warning: the closed form violates nu_1 > u' * nu_2 at u' = {}; \
                 successive decoding of message 1 would treat message 2 as fatal interference",
                args.u_prime
            );
        }
        return Ok(());
    }

    if args.layers < 2 {
        return Err(Error::Infeasible {
            index: args.layers,
            detail: "superposition coding needs at least 2 levels".into(),
        });
    }
    let channel = esqfl_core::channel::ChannelConfig::from_snr_db(args.snr_db, args.u_prime)?;
    let objective = if args.literal_objective {
        Objective::LiteralExp
    } else {
        Objective::InverseSquareSum
    };
    let out = optimize_allocation(args.layers, &channel, args.grid_step, objective)?;
    for (i, v) in out.nu.nu.iter().enumerate() {
        println!("nu_{}={v:.6}", i + 1);
    }
    println!("objective={:.6}", out.objective);
    let p = esqfl_core::channel::closed_form_p(&out.nu, &channel)?;
    for (i, v) in p.iter().enumerate() {
        println!("p_{}={v:.6}", i + 1);
    }
    println!("feasible=true");
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, None, args.synthetic, args.mnist_dir.clone())?;
    let model = cfg.model_config();
    model.validate()?;
    let bytes = std::fs::read(&args.checkpoint).map_err(|e| io_err(&args.checkpoint, e))?;
    let params = EsqnnParams::from_le_bytes(model.num_layers, model.num_qubits, &bytes)?;
    let (_, testset) = cfg.prepare_data()?;
    if testset.is_empty() {
        return Err(Error::Config("audit needs a nonempty test set".into()));
    }

    let fidelity = fidelity_audit(&model, &params, &testset)?;
    let entropy_cfg = EntropyAuditConfig {
        bipartition: cfg.federation.entropy_bipartition.clone(),
        thresholds: cfg.federation.entropy_thresholds.clone(),
    };
    let entropy = entropy_audit(&model, &params, &testset, &entropy_cfg)?;

    println!("depth  fidelity_vs_full  entropy_bipartite_bits");
    for depth in 1..=model.num_layers {
        let fid = if depth < model.num_layers {
            format!("{:.6}", fidelity[depth - 1])
        } else {
            "1.000000".into()
        };
        println!("{depth:>5}  {fid:>16}  {:>22.6}", entropy.per_depth[depth - 1]);
    }
    if let Some(flag) = entropy.train_indicator {
        println!("train_indicator={flag}");
    }

    let report = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "test_examples": testset.len(),
        "fidelity": fidelity,
        "entropy_bipartite": entropy.per_depth,
        "entropy_encoding": entropy.encoding,
        "train_indicator": entropy.train_indicator,
    });
    write_json(&args.out, &report)
}

fn cmd_dataset_prep(args: &DatasetPrepArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config, args.seed, args.synthetic, args.mnist_dir.clone())?;
    let (shards, testset) = cfg.prepare_data()?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let shards_path = args.out.join("shards.json");
    write_json(&shards_path, &shards)?;
    let test_path = args.out.join("testset.json");
    write_json(&test_path, &testset)?;

    println!("device  count  class_histogram");
    for (k, shard) in shards.iter().enumerate() {
        let mut hist = [0usize; 4];
        for e in shard {
            hist[usize::from(e.label)] += 1;
        }
        println!("{k:>6}  {:>5}  {hist:?}", shard.len());
    }
    let total: usize = shards.iter().map(Vec::len).sum();
    println!(
        "wrote {total} training examples across {} shards and {} test examples to {}",
        shards.len(),
        testset.len(),
        args.out.display()
    );
    let _schema_check: Option<&Example> = shards.first().and_then(|s| s.first());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::OptimizePower(args) => cmd_optimize_power(args),
        Command::Audit(args) => cmd_audit(args),
        Command::DatasetPrep(args) => cmd_dataset_prep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(&err),
    }
}
