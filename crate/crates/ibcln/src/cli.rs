//! The `ibcln` command line: synth / train / infer / eval / sweep.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O and
//! runtime failures. Every run writes `resolved.toml` next to its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, write_snapshot, AppConfig};
use crate::error::{Error, Result};
use crate::evaluation::{benchmark, timestep_sweep, IdentityRestorer, ModelRestorer, Restorer};
use crate::imaging::{gamma_decode, gamma_encode, load_image, save_image};
use crate::model::load_model;
use crate::synthesis::generate_dataset;
use crate::training::{train, Ablation, DataSource};

#[derive(Parser)]
#[command(
    name = "ibcln",
    version,
    about = "Cascaded ConvLSTM reflection removal: data synthesis, training, inference, evaluation"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Dotted-key overrides, e.g. --set training.epochs=3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Increase log verbosity (-v: debug, -vv: trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic training triples from transmission and reflection
    /// source images.
    Synth(SynthArgs),
    /// Train the cascade on synthetic and/or real data.
    Train(TrainArgs),
    /// Remove reflections from a single image with a trained checkpoint.
    Infer(InferArgs),
    /// Benchmark a checkpoint over paired datasets (PSNR/SSIM tables).
    Eval(EvalArgs),
    /// Metric-vs-time-steps curve.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory of transmission source PNGs.
    #[arg(long, value_name = "DIR")]
    pub trans_dir: PathBuf,
    /// Directory of reflection source PNGs.
    #[arg(long, value_name = "DIR")]
    pub refl_dir: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of triples to generate.
    #[arg(long)]
    pub n: usize,
    /// Override the synthesis seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Synthetic dataset manifest.csv (repeatable).
    #[arg(long, value_name = "MANIFEST")]
    pub synthetic: Vec<PathBuf>,
    /// Real pair directory with input/ and transmission/ (repeatable).
    #[arg(long, value_name = "DIR")]
    pub real: Vec<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Total cascade time steps N.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square crop size fed to the network.
    #[arg(long)]
    pub patch: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Ablation switch: no_GR, no_iteration, drop_adv, drop_residual,
    /// drop_mp or pixel_only. Passing more than one is an error.
    #[arg(long = "ablate", value_name = "NAME")]
    pub ablate: Vec<String>,
}

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint stem or .safetensors path.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Input image (8-bit RGB PNG).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Override the checkpoint's cascade depth.
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write every intermediate transmission/residual estimate.
    #[arg(long)]
    pub dump_trace: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint stem or .safetensors path.
    #[arg(long, value_name = "PATH", required_unless_present = "identity_stub")]
    pub checkpoint: Option<PathBuf>,
    /// Paired dataset directory with input/ and transmission/ (repeatable).
    #[arg(long, value_name = "DIR", required = true)]
    pub data: Vec<PathBuf>,
    /// Output directory for results.csv, summary.csv and contact sheets.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Override the cascade depth.
    #[arg(long)]
    pub n: Option<usize>,
    /// Use the identity restorer instead of a checkpoint (plumbing checks).
    #[arg(long)]
    pub identity_stub: bool,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Checkpoint stem or .safetensors path.
    #[arg(long, value_name = "PATH", required_unless_present = "identity_stub")]
    pub checkpoint: Option<PathBuf>,
    /// Paired dataset directory (repeatable).
    #[arg(long, value_name = "DIR", required = true)]
    pub data: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Comma-separated list of time steps, e.g. 1,2,3.
    #[arg(long, value_name = "LIST")]
    pub n_list: String,
    /// Retrain a model per time-step count instead of reading one trace.
    #[arg(long)]
    pub retrain: bool,
    /// Synthetic manifests for --retrain (repeatable).
    #[arg(long, value_name = "MANIFEST")]
    pub synthetic: Vec<PathBuf>,
    /// Real pair directories for --retrain (repeatable).
    #[arg(long, value_name = "DIR")]
    pub real: Vec<PathBuf>,
    /// Use the identity restorer instead of a checkpoint.
    #[arg(long)]
    pub identity_stub: bool,
}

/// Parses argv, dispatches, and maps errors to exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Synth(args) => cmd_synth(cfg, args),
        Command::Train(args) => cmd_train(cfg, args),
        Command::Infer(args) => cmd_infer(cfg, args),
        Command::Eval(args) => cmd_eval(cfg, args),
        Command::Sweep(args) => cmd_sweep(cfg, args),
    }
}

fn toml_str(v: impl Into<String>) -> toml::Value {
    toml::Value::String(v.into())
}

fn toml_paths(paths: &[PathBuf]) -> toml::Value {
    toml::Value::Array(
        paths
            .iter()
            .map(|p| toml_str(p.display().to_string()))
            .collect(),
    )
}

fn cmd_synth(mut cfg: AppConfig, args: SynthArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.synthesis.seed = seed;
    }
    cfg.synthesis.validate()?;
    if !args.trans_dir.is_dir() {
        return Err(Error::io(
            &args.trans_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "source directory not found"),
        ));
    }
    if !args.refl_dir.is_dir() {
        return Err(Error::io(
            &args.refl_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "source directory not found"),
        ));
    }

    let mut snapshot_args = toml::Table::new();
    snapshot_args.insert("trans_dir".into(), toml_str(args.trans_dir.display().to_string()));
    snapshot_args.insert("refl_dir".into(), toml_str(args.refl_dir.display().to_string()));
    snapshot_args.insert("out".into(), toml_str(args.out.display().to_string()));
    snapshot_args.insert("n".into(), toml::Value::Integer(args.n as i64));
    write_snapshot(&args.out, "synth", snapshot_args, &cfg)?;

    let manifest = generate_dataset(&args.trans_dir, &args.refl_dir, &cfg.synthesis, &args.out, args.n)?;
    println!("wrote {} triples; manifest: {}", args.n, manifest.display());
    Ok(())
}

fn cmd_train(mut cfg: AppConfig, args: TrainArgs) -> Result<()> {
    let mut distinct: Vec<&String> = Vec::new();
    for a in &args.ablate {
        if !distinct.contains(&a) {
            distinct.push(a);
        }
    }
    if distinct.len() > 1 {
        return Err(Error::Usage(format!(
            "conflicting ablation flags: {}",
            distinct
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if let Some(name) = distinct.first() {
        cfg.training.ablation = Some(name.parse::<Ablation>()?);
    }
    if cfg.training.ablation == Some(Ablation::NoIteration) {
        // surface the structural effect in the resolved snapshot
        cfg.training.n_steps = 1;
    }
    if let Some(v) = args.epochs {
        cfg.training.epochs = v;
    }
    if let Some(v) = args.batch {
        cfg.training.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.training.learning_rate = v;
    }
    if let Some(v) = args.n {
        cfg.training.n_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.training.seed = v;
    }
    if let Some(v) = args.patch {
        cfg.training.patch_size = v;
    }
    if args.max_steps.is_some() {
        cfg.training.max_steps = args.max_steps;
    }
    cfg.training.validate()?;
    if args.synthetic.is_empty() && args.real.is_empty() {
        return Err(Error::Usage(
            "no training data: pass --synthetic MANIFEST and/or --real DIR".into(),
        ));
    }

    let mut snapshot_args = toml::Table::new();
    snapshot_args.insert("synthetic".into(), toml_paths(&args.synthetic));
    snapshot_args.insert("real".into(), toml_paths(&args.real));
    snapshot_args.insert("out".into(), toml_str(args.out.display().to_string()));
    write_snapshot(&args.out, "train", snapshot_args, &cfg)?;

    let mut sources: Vec<DataSource> = Vec::new();
    sources.extend(args.synthetic.iter().cloned().map(DataSource::Synthetic));
    sources.extend(args.real.iter().cloned().map(DataSource::RealPairs));

    let outcome = train(&cfg.training, &sources, &args.out)?;
    println!(
        "trained {} steps; checkpoint: {}",
        outcome.steps,
        outcome.checkpoint.display()
    );
    Ok(())
}

fn cmd_infer(cfg: AppConfig, args: InferArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, &candle_core::Device::Cpu)?;
    let n = args.n.unwrap_or(model.manifest.n_steps);
    if n < 1 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }

    let mut snapshot_args = toml::Table::new();
    snapshot_args.insert("checkpoint".into(), toml_str(args.checkpoint.display().to_string()));
    snapshot_args.insert("input".into(), toml_str(args.input.display().to_string()));
    snapshot_args.insert("n".into(), toml::Value::Integer(n as i64));
    snapshot_args.insert("dump_trace".into(), toml::Value::Boolean(args.dump_trace));
    write_snapshot(&args.out, "infer", snapshot_args, &cfg)?;

    let input_enc = load_image(&args.input)?;
    let input_lin = gamma_decode(&input_enc)?;
    let device = candle_core::Device::Cpu;
    let tensor = crate::tensor::image_to_tensor(&input_lin, &device, candle_core::DType::F32)?
        .unsqueeze(0)?;
    let trace = crate::model::cascade_forward(&model.g_t, model.g_r.as_ref(), &tensor, n)?;

    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    let final_lin = crate::tensor::tensor_to_image(trace.final_transmission())?;
    let out_path = args.out.join(format!("{stem}_transmission.png"));
    save_image(&out_path, &gamma_encode(&final_lin)?)?;

    if args.dump_trace {
        for (t, (t_hat, r_hat)) in trace
            .transmissions
            .iter()
            .zip(&trace.residuals)
            .enumerate()
        {
            let t_img = gamma_encode(&crate::tensor::tensor_to_image(t_hat)?)?;
            save_image(args.out.join(format!("{stem}_t_step{}.png", t + 1)), &t_img)?;
            let r_img = gamma_encode(&crate::tensor::tensor_to_image(r_hat)?)?;
            save_image(args.out.join(format!("{stem}_r_step{}.png", t + 1)), &r_img)?;
        }
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

fn build_restorer(
    checkpoint: Option<&Path>,
    identity_stub: bool,
) -> Result<(Box<dyn Restorer>, Option<usize>)> {
    if identity_stub {
        return Ok((Box::new(IdentityRestorer), None));
    }
    let path = checkpoint.ok_or_else(|| Error::Usage("pass --checkpoint or --identity-stub".into()))?;
    let model = load_model(path, &candle_core::Device::Cpu)?;
    let restorer = ModelRestorer::new(model);
    let default_n = restorer.default_steps();
    Ok((Box::new(restorer), Some(default_n)))
}

fn require_pairs(datasets: &[PathBuf]) -> Result<()> {
    let mut total = 0usize;
    for dir in datasets {
        total += crate::evaluation::list_pairs(dir)?.pairs.len();
    }
    if total == 0 {
        return Err(Error::Usage("no pairs found in the given data directories".into()));
    }
    Ok(())
}

fn cmd_eval(cfg: AppConfig, args: EvalArgs) -> Result<()> {
    let (restorer, default_n) = build_restorer(args.checkpoint.as_deref(), args.identity_stub)?;
    let n = args.n.or(default_n).unwrap_or(1);
    require_pairs(&args.data)?;

    let mut snapshot_args = toml::Table::new();
    if let Some(ckpt) = &args.checkpoint {
        snapshot_args.insert("checkpoint".into(), toml_str(ckpt.display().to_string()));
    }
    snapshot_args.insert("identity_stub".into(), toml::Value::Boolean(args.identity_stub));
    snapshot_args.insert("data".into(), toml_paths(&args.data));
    snapshot_args.insert("n".into(), toml::Value::Integer(n as i64));
    write_snapshot(&args.out, "eval", snapshot_args, &cfg)?;

    let report = benchmark(restorer.as_ref(), &args.data, n, Some(&args.out))?;
    for skipped in &report.skipped {
        log::warn!("skipped: {skipped}");
    }
    for (dataset, psnr, ssim, count) in &report.per_dataset {
        println!("{dataset}: {count} images, PSNR {psnr:.2} dB, SSIM {ssim:.4}");
    }
    println!(
        "overall: {} images, PSNR {:.2} dB, SSIM {:.4}",
        report.overall.2, report.overall.0, report.overall.1
    );
    Ok(())
}

fn parse_n_list(raw: &str) -> Result<Vec<usize>> {
    let list: Vec<usize> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("--n-list: `{s}` is not a positive integer")))
        })
        .collect::<Result<_>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(Error::Usage("--n-list needs positive integers".into()));
    }
    Ok(list)
}

fn cmd_sweep(cfg: AppConfig, args: SweepArgs) -> Result<()> {
    let n_list = parse_n_list(&args.n_list)?;
    require_pairs(&args.data)?;

    let mut snapshot_args = toml::Table::new();
    if let Some(ckpt) = &args.checkpoint {
        snapshot_args.insert("checkpoint".into(), toml_str(ckpt.display().to_string()));
    }
    snapshot_args.insert("data".into(), toml_paths(&args.data));
    snapshot_args.insert("n_list".into(), toml_str(args.n_list.clone()));
    snapshot_args.insert("retrain".into(), toml::Value::Boolean(args.retrain));
    write_snapshot(&args.out, "sweep", snapshot_args, &cfg)?;

    let csv_path = args.out.join("sweep.csv");
    if args.retrain {
        if args.synthetic.is_empty() && args.real.is_empty() {
            return Err(Error::Usage(
                "--retrain needs training data: --synthetic and/or --real".into(),
            ));
        }
        let mut sources: Vec<DataSource> = Vec::new();
        sources.extend(args.synthetic.iter().cloned().map(DataSource::Synthetic));
        sources.extend(args.real.iter().cloned().map(DataSource::RealPairs));

        let mut rows = Vec::new();
        for &n in &n_list {
            let mut train_cfg = cfg.training.clone();
            train_cfg.n_steps = n;
            let run_dir = args.out.join(format!("retrain_n{n}"));
            let outcome = train(&train_cfg, &sources, &run_dir)?;
            let model = load_model(&outcome.checkpoint, &candle_core::Device::Cpu)?;
            let restorer = ModelRestorer::new(model);
            let report = benchmark(&restorer, &args.data, n, None)?;
            rows.push((n, report.overall.0, report.overall.1));
        }
        let mut writer = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", csv_path.display())))?;
        writer.write_record(["n", "psnr", "ssim"])?;
        for (n, p, s) in &rows {
            writer.write_record([n.to_string(), p.to_string(), s.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(&csv_path, e))?;
        for (n, p, s) in rows {
            println!("N={n}: PSNR {p:.2} dB, SSIM {s:.4}");
        }
    } else {
        let (restorer, _) = build_restorer(args.checkpoint.as_deref(), args.identity_stub)?;
        let curve = timestep_sweep(restorer.as_ref(), &args.data, &n_list, Some(&csv_path))?;
        for (n, p, s) in curve {
            println!("N={n}: PSNR {p:.2} dB, SSIM {s:.4}");
        }
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}
