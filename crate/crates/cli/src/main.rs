//! `drotail` — experiment front end for the distributionally robust
//! centroid loss.
//!
//! Subcommands: `synth` (dataset files), `train` (the three-stage pipeline),
//! `sweep` (one run per value of a config key), `probe` (nearest-centroid
//! accuracy per layer), `boundgap` (bound-tightness across a radius grid),
//! `coverage` (Monte-Carlo radius coverage vs the closed form), and `eval`
//! (reports for a trained checkpoint).
//!
//! All configuration flows through flat `key = value` configs; any key can
//! be overridden on the command line as `--key value` *after* the named
//! flags (e.g. `drotail train --config run.conf --train.lambda 0.7`). Every
//! artifact embeds the resolved config hash and seed, so every number is
//! regenerable from the artifact alone.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use drotail::config::RunConfig;
use drotail::data::LongTailDataset;
use drotail::epsilon::EpsilonPolicy;
use drotail::eval;
use drotail::losses;
use drotail::trainer::{RunReport, Trainer};
use drotail::{batch::FeatureBatch, centroids::CentroidBank};
use drotail::{Error, Result};

/// Environment variable overriding the run-directory root.
const RUN_ROOT_ENV: &str = "DROTAIL_RUN_ROOT";

#[derive(Parser)]
#[command(
    name = "drotail",
    version,
    about = "Distributionally robust centroid loss for long-tail representation learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic long-tailed dataset file.
    Synth(SynthArgs),
    /// Run the three-stage training pipeline and write run artifacts.
    Train(TrainArgs),
    /// One training run per value of a config key; aggregate accuracies.
    Sweep(SweepArgs),
    /// Nearest-centroid accuracy of every probe layer of a checkpoint.
    Probe(ProbeArgs),
    /// Bound-gap ratio of a checkpoint across a shared-radius grid.
    Boundgap(BoundgapArgs),
    /// Monte-Carlo centroid coverage against the chi-square closed form.
    Coverage(CoverageArgs),
    /// Split accuracies and per-class reports for a trained checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config-key overrides as `--key value` pairs (must come after all
    /// named flags), e.g. `--train.lambda 0.7 --data.beta 50`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    n_max: usize,
    /// Head/tail imbalance factor (1 = balanced).
    #[arg(long, default_value_t = 100.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Load the dataset from a file instead of synthesizing it from the
    /// `data.*` keys (the file must match them).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run of the same
    /// config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Which stages to run: full, warmup-only, or through-joint.
    #[arg(long, default_value = "full")]
    stage: String,
    /// Validate the configuration and exit without touching any files.
    #[arg(long)]
    dry_run: bool,
    /// Run-directory root (default: the run.root config key, or the
    /// DROTAIL_RUN_ROOT environment variable when set).
    #[arg(long)]
    run_root: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Config key to sweep, e.g. train.lambda.
    #[arg(long)]
    key: String,
    /// Comma-separated values for the swept key.
    #[arg(long)]
    values: String,
    #[arg(long)]
    run_root: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file; synthesized from the config when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Write CSV output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: CheckpointArgs,
}

#[derive(Args)]
struct BoundgapArgs {
    /// Shared radii to evaluate, comma separated.
    #[arg(long, default_value = "0,0.25,0.5,1,2")]
    eps_grid: String,
    #[command(flatten)]
    common: CheckpointArgs,
}

#[derive(Args)]
struct CoverageArgs {
    /// Samples per empirical centroid.
    #[arg(long, default_value_t = 25)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Ball radii to test, comma separated.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.5,0.8")]
    radii: String,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CheckpointArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Boundgap(args) => cmd_boundgap(args),
        Command::Coverage(args) => cmd_coverage(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for configuration/validation problems, 4 for runtime failures
/// (usage errors exit 2 via the argument parser).
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidLambda { .. } => 3,
        _ => 4,
    }
}

/// Loads the config file (or defaults), applies `--key value` overrides,
/// and validates the result.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut it = args.overrides.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| {
            Error::InvalidArgument(format!(
                "expected a config override of the form `--key value`, found {flag:?}"
            ))
        })?;
        let value = it.next().ok_or_else(|| {
            Error::InvalidArgument(format!("override --{key} is missing its value"))
        })?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates a fresh directory `<prefix>-<hash8>-<unixsecs>[-k]` under `root`.
/// Existing directories are never reused or overwritten.
fn create_artifact_dir(root: &Path, prefix: &str, hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root)?;
    let stamp = unix_seconds();
    for k in 0u32.. {
        let name = if k == 0 {
            format!("{prefix}-{}-{stamp}", &hash[..8])
        } else {
            format!("{prefix}-{}-{stamp}-{k}", &hash[..8])
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("directory creation loop is unbounded")
}

fn effective_run_root(cfg: &RunConfig, flag: &Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p.clone();
    }
    if let Ok(env) = std::env::var(RUN_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(&cfg.run_root)
}

/// Dataset from a file (verified against the config) or synthesized fresh.
fn obtain_dataset(cfg: &RunConfig, path: &Option<PathBuf>) -> Result<LongTailDataset<f64>> {
    match path {
        Some(p) => LongTailDataset::load(p),
        None => LongTailDataset::synthesize(&cfg.data_params(), cfg.data_seed),
    }
}

fn write_or_print(out: &Option<PathBuf>, name: &str, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            println!("{name} written to {}", path.display());
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let params = drotail::data::DataParams {
        classes: args.classes,
        dim: args.dim,
        n_max: args.n_max,
        beta: args.beta,
        spread: args.spread,
        separation: args.separation,
        test_per_class: args.test_per_class,
    };
    let dataset: LongTailDataset<f64> = LongTailDataset::synthesize(&params, args.seed)?;
    dataset.save(&args.out)?;
    let counts = dataset.class_counts();
    println!("dataset written to {}", args.out.display());
    println!("class counts: {counts:?}");
    let realized = counts[0] as f64 / counts[counts.len() - 1] as f64;
    println!(
        "imbalance: requested beta {}, realized head/tail ratio {:.2}",
        args.beta, realized
    );
    println!(
        "splits: {:?}",
        dataset
            .splits()
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    if args.dry_run {
        println!(
            "dry run: configuration valid (hash {}); no files written",
            cfg.hash_hex()
        );
        return Ok(());
    }
    let dataset = obtain_dataset(&cfg, &args.dataset)?;
    let mut trainer = match &args.resume {
        Some(path) => Trainer::load_checkpoint(cfg.clone(), dataset, path)?,
        None => Trainer::new(cfg.clone(), dataset)?,
    };
    match args.stage.as_str() {
        "full" => {
            trainer.run()?;
        }
        "warmup-only" => trainer.stage1_warmup()?,
        "through-joint" => {
            trainer.stage1_warmup()?;
            trainer.stage2_joint()?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "--stage must be full, warmup-only, or through-joint, got {other:?}"
            )))
        }
    }
    let report = trainer.report()?;

    let root = effective_run_root(&cfg, &args.run_root);
    let dir = create_artifact_dir(&root, "run", &cfg.hash_hex())?;
    std::fs::write(dir.join("resolved-config.txt"), cfg.to_text())?;
    std::fs::write(dir.join("metrics.csv"), trainer.metrics_csv())?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    trainer.save_checkpoint(&dir.join("checkpoint.txt"))?;

    println!("run dir: {}", dir.display());
    print_accuracy("final", &report.final_accuracy);
    println!("bound gap ratio: {:.6}", report.final_gap_ratio);
    if let Some(rho) = report.epsilon.spearman {
        println!("spearman(count, epsilon) = {rho:.4}");
    }
    Ok(())
}

fn print_accuracy(tag: &str, acc: &eval::SplitAccuracy) {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{tag} accuracy: balanced {:.4} (many {}, med {}, few {})",
        acc.balanced,
        cell(acc.many),
        cell(acc.med),
        cell(acc.few)
    );
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = resolve_config(&args.config)?;
    // Reject unknown keys before any compute.
    base.get(&args.key)?;
    let values: Vec<String> = args
        .values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one value".into(),
        ));
    }

    struct Row {
        value: String,
        report: std::result::Result<RunReport, String>,
    }
    let mut rows = Vec::new();
    for value in &values {
        let outcome = (|| -> Result<RunReport> {
            let mut cfg = base.clone();
            cfg.set(&args.key, value)?;
            cfg.validate()?;
            let dataset = obtain_dataset(&cfg, &None)?;
            let mut trainer = Trainer::new(cfg, dataset)?;
            trainer.run()
        })();
        match &outcome {
            Ok(report) => {
                println!("{} = {value}: ", args.key);
                print_accuracy("  ", &report.final_accuracy);
            }
            Err(e) => println!("{} = {value}: failed: {e}", args.key),
        }
        rows.push(Row {
            value: value.clone(),
            report: outcome.map_err(|e| e.to_string()),
        });
    }

    // Order-stable aggregation: numeric when every value parses, else
    // lexicographic.
    if rows.iter().all(|r| r.value.parse::<f64>().is_ok()) {
        rows.sort_by(|a, b| {
            a.value
                .parse::<f64>()
                .unwrap()
                .partial_cmp(&b.value.parse::<f64>().unwrap())
                .unwrap()
        });
    } else {
        rows.sort_by(|a, b| a.value.cmp(&b.value));
    }

    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut csv = format!(
        "# config_hash={} sweep_key={}\nvalue,acc_balanced,acc_many,acc_med,acc_few,status\n",
        base.hash_hex(),
        args.key
    );
    let mut failures = 0usize;
    for row in &rows {
        match &row.report {
            Ok(report) => {
                let acc = &report.final_accuracy;
                csv.push_str(&format!(
                    "{},{:.6},{},{},{},ok\n",
                    row.value,
                    acc.balanced,
                    cell(acc.many),
                    cell(acc.med),
                    cell(acc.few)
                ));
            }
            Err(msg) => {
                failures += 1;
                csv.push_str(&format!(
                    "{},,,,,error: {}\n",
                    row.value,
                    msg.replace(['\n', ','], " ")
                ));
            }
        }
    }

    let root = effective_run_root(&base, &args.run_root);
    let dir = create_artifact_dir(&root, "sweep", &base.hash_hex())?;
    std::fs::write(dir.join("resolved-config.txt"), base.to_text())?;
    std::fs::write(dir.join("sweep.csv"), &csv)?;
    println!("sweep dir: {}", dir.display());
    if failures > 0 {
        println!("{failures} of {} runs failed (see sweep.csv)", rows.len());
    }
    Ok(())
}

/// Restores a trained pipeline (config + dataset + checkpoint).
fn load_trained(common: &CheckpointArgs) -> Result<(RunConfig, Trainer<f64>)> {
    let cfg = resolve_config(&common.config)?;
    let dataset = obtain_dataset(&cfg, &common.dataset)?;
    let trainer = Trainer::load_checkpoint(cfg.clone(), dataset, &common.checkpoint)?;
    Ok((cfg, trainer))
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let (cfg, trainer) = load_trained(&args.common)?;
    let accuracies = eval::probe_all_layers(trainer.network(), trainer.dataset())?;
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut csv = format!(
        "# config_hash={}\nlayer,acc_many,acc_med,acc_few,acc_balanced\n",
        cfg.hash_hex()
    );
    for (layer, acc) in accuracies.iter().enumerate() {
        csv.push_str(&format!(
            "{layer},{},{},{},{:.6}\n",
            cell(acc.many),
            cell(acc.med),
            cell(acc.few),
            acc.balanced
        ));
    }
    write_or_print(&args.common.out, "probe CSV", &csv)
}

fn cmd_boundgap(args: BoundgapArgs) -> Result<()> {
    let (cfg, trainer) = load_trained(&args.common)?;
    let grid: Vec<f64> = args
        .eps_grid
        .split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("--eps-grid: cannot parse {tok:?}"))
            })
        })
        .collect::<Result<_>>()?;

    let dataset = trainer.dataset();
    let fwd = trainer.network().forward(&dataset.train_inputs)?;
    let fb = FeatureBatch::new(
        fwd.embeddings,
        dataset.train_labels.clone(),
        dataset.num_classes(),
    )?
    .with_weight_mode(cfg.weight_mode()?, dataset.class_counts())?;
    let bank = CentroidBank::recompute(&fb, trainer.global_epoch())?;

    let mut csv = format!("# config_hash={}\nepsilon,gap_ratio\n", cfg.hash_hex());
    for &eps in &grid {
        let policy: EpsilonPolicy<f64> = EpsilonPolicy::shared(eps, dataset.num_classes())?;
        let ratio = losses::bound_gap_ratio(&fb, &bank, &policy)?;
        csv.push_str(&format!("{eps},{ratio:.6}\n"));
    }
    let own = losses::bound_gap_ratio(&fb, &bank, trainer.policy())?;
    write_or_print(&args.common.out, "bound-gap CSV", &csv)?;
    println!(
        "checkpoint policy ({}): mean |upper - lower| / robust total = {own:.4}",
        trainer.policy().variant_name()
    );
    Ok(())
}

fn cmd_coverage(args: CoverageArgs) -> Result<()> {
    let radii: Vec<f64> = args
        .radii
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("--radii: cannot parse {tok:?}")))
        })
        .collect::<Result<_>>()?;
    let mut csv = format!(
        "# trials={} seed={}\nn,sigma,dim,radius,p_hat,stderr,analytic\n",
        args.trials, args.seed
    );
    for &radius in &radii {
        let est = eval::estimate_coverage(args.n, args.sigma, args.dim, radius, args.trials, args.seed)?;
        let analytic = eval::chi_square_coverage(args.n, args.sigma, args.dim, radius)?;
        csv.push_str(&format!(
            "{},{},{},{radius},{:.6},{:.6},{:.6}\n",
            args.n, args.sigma, args.dim, est.p_hat, est.stderr, analytic
        ));
    }
    write_or_print(&args.out, "coverage CSV", &csv)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (_cfg, trainer) = load_trained(&args.common)?;
    let dataset = trainer.dataset();
    let preds = eval::classify(trainer.network(), &dataset.test_inputs)?;
    let accuracy = eval::split_accuracy(&preds, &dataset.test_labels, &dataset.splits())?;
    print_accuracy("checkpoint", &accuracy);

    let gaps = eval::error_gap_report(trainer.network(), dataset)?;
    let eps = eval::epsilon_report(trainer.policy(), dataset.class_counts())?;
    match &eps.spearman {
        Some(rho) => println!("spearman(count, epsilon) = {rho:.4}"),
        None => println!("spearman(count, epsilon) undefined (constant radii)"),
    }
    match &args.common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("error-gap.csv"), gaps.to_csv())?;
            std::fs::write(dir.join("epsilon.csv"), eps.to_csv())?;
            println!("reports written to {}", dir.display());
        }
        None => {
            println!("--- per-class train/test error ---");
            print!("{}", gaps.to_csv());
            println!("--- per-class radii ---");
            print!("{}", eps.to_csv());
        }
    }
    Ok(())
}
