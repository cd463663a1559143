//! `gatk` — train desk-scale classifiers, craft transferable adversarial
//! examples, and evaluate transfer success.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gatk_core::{
    attack_batch, eligibility_mask, emit_report, emit_sweep, load_adv_batch, load_idx, run_sweep,
    save_adv_batch, success_rate, synthetic_blobs, train, AdvBatch, Arch, AttackConfig,
    Classifier, DimConfig, Error, GradientSource, LabeledDataset, Method, ModelSpec, ReportFormat,
    Result, SamplerConfig, SamplerKind, SimConfig, SweepParam, TimConfig, TrainConfig, Tensor,
    TransferReport, TransformPipeline, UpdateRule,
};

#[derive(Parser)]
#[command(name = "gatk", version, about = "Gradient attack toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and save its weights.
    Train(TrainArgs),
    /// Craft adversarial examples against a model or ensemble.
    Attack(AttackArgs),
    /// Score saved adversarial examples against target models.
    Eval(EvalArgs),
    /// Re-run one attack across a hyperparameter grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: mlp-a, cnn-a or cnn-b.
    #[arg(long)]
    arch: String,
    /// Dataset: an IDX file prefix, `synthetic`, or `synthetic:K,PER_CLASS,SIDE`.
    #[arg(long)]
    data: String,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    /// Fraction of each batch replaced with single-step adversarial examples.
    #[arg(long = "adv-fraction", default_value_t = 0.0)]
    adv_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Train on at most this many examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackFlags {
    /// Surrogate weights file.
    #[arg(long)]
    model: PathBuf,
    /// Additional ensemble member weight files.
    #[arg(long, num_args = 1..)]
    ensemble: Vec<PathBuf>,
    /// fgsm, ifgsm, mifgsm or nifgsm.
    #[arg(long, default_value = "mifgsm")]
    method: String,
    /// sign or rescale.
    #[arg(long, default_value = "rescale")]
    rule: String,
    /// Rescale factor.
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    /// none, dfs or gaussian.
    #[arg(long, default_value = "dfs")]
    sampler: String,
    /// Sample count.
    #[arg(long, default_value_t = 12)]
    n: usize,
    /// Sampling range factor.
    #[arg(long, default_value_t = 1.5)]
    beta: f64,
    /// Gaussian sampler scale (defaults to beta*eps/sqrt(3)).
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated subset of dim,sim,tim.
    #[arg(long)]
    transforms: Option<String>,
    #[arg(long, default_value_t = 16.0 / 255.0)]
    eps: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 1.6 / 255.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset to draw source images from (same syntax as `train --data`).
    #[arg(long)]
    data: String,
    /// Attack at most this many images.
    #[arg(long)]
    limit: Option<usize>,
    /// Skip this many images first.
    #[arg(long, default_value_t = 0)]
    offset: usize,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    flags: AttackFlags,
    /// Output adversarial batch file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Adversarial batch produced by `attack`.
    #[arg(long)]
    adv: PathBuf,
    /// The dataset the batch indices refer to.
    #[arg(long)]
    data: String,
    /// Surrogate weights (defines the eligibility mask).
    #[arg(long)]
    surrogate: PathBuf,
    /// Target weight files.
    #[arg(long, num_args = 1..)]
    targets: Vec<PathBuf>,
    /// csv or markdown.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct SweepArgs {
    /// n, beta or c.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values, strictly increasing.
    #[arg(long)]
    grid: String,
    /// Target weight files.
    #[arg(long, num_args = 1..)]
    targets: Vec<PathBuf>,
    #[command(flatten)]
    flags: AttackFlags,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// `GATK_THREADS` caps worker parallelism; the default is the logical core
/// count.
fn configure_threads() {
    if let Ok(value) = std::env::var("GATK_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

/// `synthetic`, `synthetic:K,PER_CLASS,SIDE[,SEED]`, or an IDX path prefix
/// to which `-images-idx3-ubyte` / `-labels-idx1-ubyte` are appended. The
/// dataset is part of the experiment's identity, so its seed lives in the
/// spec string (default 0) rather than following `--seed`.
fn load_dataset(spec: &str) -> Result<LabeledDataset> {
    if spec == "synthetic" {
        return Ok(synthetic_blobs(120, 10, 28, 0));
    }
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 3 && parts.len() != 4 {
            return Err(Error::Config(format!(
                "synthetic spec must be synthetic:K,PER_CLASS,SIDE[,SEED], got '{spec}'"
            )));
        }
        let parse = |s: &str, what: &str| -> Result<u64> {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad {what} '{s}' in '{spec}'")))
        };
        let classes = parse(parts[0], "class count")? as usize;
        let per_class = parse(parts[1], "per-class count")? as usize;
        let side = parse(parts[2], "side length")? as usize;
        let seed = if parts.len() == 4 { parse(parts[3], "seed")? } else { 0 };
        if classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        return Ok(synthetic_blobs(per_class, classes, side, seed));
    }
    let images = PathBuf::from(format!("{spec}-images-idx3-ubyte"));
    let labels = PathBuf::from(format!("{spec}-labels-idx1-ubyte"));
    load_idx(&images, &labels)
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let arch = Arch::parse(&args.arch)?;
    let mut dataset = load_dataset(&args.data)?;
    if let Some(limit) = args.limit {
        dataset.images.truncate(limit);
        dataset.labels.truncate(limit);
    }
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let shape = dataset.images[0].shape();
    let spec = ModelSpec::new(arch, [shape[0], shape[1], shape[2]], dataset.num_classes)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        momentum: args.momentum,
        seed: args.seed,
        adversarial_fraction: args.adv_fraction,
    };
    let out = train(&spec, &dataset, &cfg)?;
    let acc = gatk_core::accuracy(&out.classifier, &dataset.images, &dataset.labels)?;
    out.classifier.save(&args.out)?;
    println!(
        "trained {} on {} examples: final loss {:.4}, train accuracy {:.1}%, saved to {}",
        arch.id(),
        dataset.len(),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN),
        100.0 * acc,
        args.out.display()
    );
    Ok(())
}

struct LoadedAttack {
    models: Vec<Classifier>,
    config: AttackConfig,
    dataset: LabeledDataset,
    offset: usize,
    count: usize,
}

fn prepare_attack(flags: &AttackFlags) -> Result<LoadedAttack> {
    let mut models = vec![Classifier::load(&flags.model)?];
    for path in &flags.ensemble {
        models.push(Classifier::load(path)?);
    }

    let method = Method::parse(&flags.method)?;
    let rule = match flags.rule.as_str() {
        "sign" => UpdateRule::Sign,
        "rescale" => UpdateRule::rescale(flags.c),
        other => {
            return Err(Error::Config(format!(
                "unknown rule '{other}' (expected sign or rescale)"
            )))
        }
    };
    let sampler = match flags.sampler.as_str() {
        "none" => SamplerConfig::none(),
        "dfs" => SamplerConfig::depth_first(flags.n, flags.beta),
        "gaussian" => SamplerConfig {
            kind: SamplerKind::Gaussian,
            n: flags.n,
            beta: flags.beta,
            sigma: flags.sigma,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown sampler '{other}' (expected none, dfs or gaussian)"
            )))
        }
    };
    let mut pipeline = TransformPipeline::empty();
    if let Some(list) = &flags.transforms {
        for item in list.split(',').filter(|s| !s.is_empty()) {
            match item.trim() {
                "dim" => pipeline.dim = Some(DimConfig::default()),
                "sim" => pipeline.sim = Some(SimConfig::default()),
                "tim" => pipeline.tim = Some(TimConfig::default()),
                other => {
                    return Err(Error::Config(format!(
                        "unknown transform '{other}' (expected dim, sim or tim)"
                    )))
                }
            }
        }
    }

    // fgsm is single-step by definition
    let (iterations, alpha) = if method == Method::Fgsm {
        (1, flags.eps)
    } else {
        (flags.iters, flags.alpha)
    };

    let config = AttackConfig {
        method,
        rule,
        sampler,
        pipeline,
        epsilon: flags.eps,
        iterations,
        alpha,
        mu: flags.mu,
        seed: flags.seed,
    };
    config.validate()?;

    let dataset = load_dataset(&flags.data)?;
    let offset = flags.offset.min(dataset.len());
    let count = flags
        .limit
        .unwrap_or(dataset.len() - offset)
        .min(dataset.len() - offset);
    Ok(LoadedAttack {
        models,
        config,
        dataset,
        offset,
        count,
    })
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let loaded = prepare_attack(&args.flags)?;
    let source = if loaded.models.len() == 1 {
        GradientSource::Single(&loaded.models[0])
    } else {
        GradientSource::Ensemble(&loaded.models)
    };
    let images = &loaded.dataset.images[loaded.offset..loaded.offset + loaded.count];
    let labels = &loaded.dataset.labels[loaded.offset..loaded.offset + loaded.count];
    let outcomes = attack_batch(&source, images, labels, &loaded.config, loaded.offset as u64);

    let mut indices = Vec::new();
    let mut tensors: Vec<Tensor> = Vec::new();
    let mut failures = 0usize;
    let mut linf_sum = 0.0;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(out) => {
                indices.push((loaded.offset + i) as u64);
                linf_sum += out.final_linf;
                tensors.push(out.adversarial);
            }
            Err(err) => {
                failures += 1;
                eprintln!("image {}: {err}", loaded.offset + i);
            }
        }
    }
    if tensors.is_empty() {
        return Err(Error::Numerical("every attack in the batch failed".into()));
    }
    let batch = AdvBatch {
        fingerprint: loaded.config.fingerprint(),
        seed: loaded.config.seed,
        indices,
        tensors,
    };
    save_adv_batch(&batch, &args.out)?;
    println!(
        "attacked {} images ({} failed), mean final Linf {:.4}, saved to {}",
        batch.tensors.len(),
        failures,
        linf_sum / batch.tensors.len() as f64,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let format = ReportFormat::parse(&args.format)?;
    if args.targets.is_empty() {
        return Err(Error::Config("eval needs at least one --targets entry".into()));
    }
    let batch = load_adv_batch(&args.adv, None)?;
    let surrogate = Classifier::load(&args.surrogate)?;
    let dataset = load_dataset(&args.data)?;

    let mut originals = Vec::with_capacity(batch.tensors.len());
    let mut labels = Vec::with_capacity(batch.tensors.len());
    for &index in &batch.indices {
        let index = index as usize;
        if index >= dataset.len() {
            return Err(Error::Data(format!(
                "adversarial batch refers to image {index}, but the dataset has {}",
                dataset.len()
            )));
        }
        originals.push(dataset.images[index].clone());
        labels.push(dataset.labels[index]);
    }
    let mask = eligibility_mask(&surrogate, &originals, &labels)?;

    let surrogate_name = model_name(&args.surrogate);
    let mut rates = Vec::new();
    let mut counts = Vec::new();
    let mut white = Vec::new();
    let mut target_names = Vec::new();
    let eligible = mask.iter().filter(|&&e| e).count();
    for path in &args.targets {
        let target = Classifier::load(path)?;
        let rate = success_rate(&target, &originals, &batch.tensors, &labels, &mask)?;
        target_names.push(model_name(path));
        rates.push(rate);
        counts.push(eligible);
        white.push(model_name(path) == surrogate_name);
    }
    let report = TransferReport {
        surrogates: vec![surrogate_name],
        targets: target_names,
        rates: vec![rates],
        counts: vec![counts],
        white_box: vec![white],
        fingerprint: batch.fingerprint,
    };
    print!("{}", emit_report(&report, format));
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let param = SweepParam::parse(&args.param)?;
    let grid: Vec<f64> = args
        .grid
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value '{s}'")))
        })
        .collect::<Result<_>>()?;
    if args.targets.is_empty() {
        return Err(Error::Config("sweep needs at least one --targets entry".into()));
    }
    let loaded = prepare_attack(&args.flags)?;
    if loaded.models.len() != 1 {
        return Err(Error::Config("sweep runs on a single surrogate model".into()));
    }
    let surrogate = (model_name(&args.flags.model), loaded.models.into_iter().next().unwrap());
    let targets: Vec<(String, Classifier)> = args
        .targets
        .iter()
        .map(|p| Ok((model_name(p), Classifier::load(p)?)))
        .collect::<Result<_>>()?;

    let mut dataset = loaded.dataset;
    let end = loaded.offset + loaded.count;
    dataset.images = dataset.images[loaded.offset..end].to_vec();
    dataset.labels = dataset.labels[loaded.offset..end].to_vec();

    let sweep = run_sweep(param, &grid, &loaded.config, &surrogate, &targets, &dataset)?;
    let csv = emit_sweep(&sweep);
    std::fs::write(&args.out, &csv)?;
    print!("{csv}");
    Ok(())
}
