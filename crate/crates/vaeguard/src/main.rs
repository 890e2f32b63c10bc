//! vaeguard: train, attack, evaluate, and analyze robust-latent VAEs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error (clap
//! usage errors also exit 2).


use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vaeguard::attacks::{
    encoder_targeted_attack, mist_textural_attack, pgd_reconstruction_attack,
    poison_crafting_probe, AttackBudget,
};
use vaeguard::checkpoint::{self, hex64};
use vaeguard::config::{Overrides, RunConfig};
use vaeguard::data::{self, Split, SplitSource};
use vaeguard::error::{Error, Result};
use vaeguard::manifest::{artifact_root, create_run_dir, write_manifest, RunManifest};
use vaeguard::metrics::{append_report_row, reconstruction_report, AttackGenerator};
use vaeguard::perceptual::PerceptualExtractor;
use vaeguard::tensor::Tensor;
use vaeguard::trainer;
use vaeguard::vae::VaeModel;
use vaeguard::analysis;

#[derive(Parser)]
#[command(
    name = "vaeguard",
    version,
    about = "Robust-latent VAE lab: adversarial fine-tuning, attacks, metrics, latent analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a baseline VAE on clean images
    Pretrain(PretrainArgs),
    /// Adversarially fine-tune a pretrained encoder (decoder frozen)
    Finetune(FinetuneArgs),
    /// Run a perturbation attack and emit per-image CSV results
    Attack(AttackArgs),
    /// Evaluate reconstruction metrics, optionally under attack
    Eval(EvalArgs),
    /// Latent-space analyses: loss surface, PCA, cluster tightness
    Analyze(AnalyzeArgs),
    /// Generate a synthetic PNG corpus
    GenCorpus(GenCorpusArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file (flag > file > default)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: $VAEGUARD_ARTIFACTS/<stamp>-<cmd>-<hash>)
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Comma-separated encoder stage widths, e.g. 32,64,128
    #[arg(long, value_delimiter = ',')]
    stage_channels: Option<Vec<usize>>,
    #[arg(long)]
    latent_channels: Option<usize>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    orig_weight: Option<f64>,
    #[arg(long)]
    lpips_weight: Option<f64>,
    #[arg(long)]
    kl_weight: Option<f64>,
    /// "l2" or "l1"
    #[arg(long)]
    pixel_loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// l-inf radius; accepts decimals or fractions like 8/255
    #[arg(long, value_parser = parse_fraction)]
    epsilon: Option<f64>,
    #[arg(long)]
    attack_step_size: Option<f64>,
    #[arg(long)]
    attack_iterations: Option<usize>,
    /// "zero" or "uniform-random"
    #[arg(long)]
    attack_init: Option<String>,
    /// "mean" or "sample"
    #[arg(long)]
    attack_latent: Option<String>,
    #[arg(long)]
    perceptual_seed: Option<u64>,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|e| format!("{e}"))?;
        let d: f64 = den.trim().parse().map_err(|e| format!("{e}"))?;
        if d == 0.0 {
            return Err("zero denominator".into());
        }
        Ok(n / d)
    } else {
        s.trim().parse().map_err(|e| format!("{e}"))
    }
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data_root: self.data_root.clone(),
            resolution: self.resolution,
            channels: self.channels,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            split_seed: self.split_seed,
            stage_channels: self.stage_channels.clone(),
            latent_channels: self.latent_channels,
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            orig_weight: self.orig_weight,
            lpips_weight: self.lpips_weight,
            kl_weight: self.kl_weight,
            pixel_loss: self.pixel_loss.clone(),
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            epsilon: self.epsilon,
            attack_step_size: self.attack_step_size,
            attack_iterations: self.attack_iterations,
            attack_init: self.attack_init.clone(),
            attack_latent: self.attack_latent.clone(),
            perceptual_seed: self.perceptual_seed,
        }
    }

    fn resolve(&self, subcommand: &str) -> Result<(RunConfig, PathBuf, PathBuf)> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&self.overrides());
        let root = artifact_root();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let run_dir = match &self.run_dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                d.clone()
            }
            None => create_run_dir(&root, subcommand, &cfg.short_hash())?,
        };
        Ok((cfg, run_dir, root))
    }
}

fn build_extractor(cfg: &RunConfig) -> Result<PerceptualExtractor> {
    match &cfg.perceptual_weights {
        Some(path) => PerceptualExtractor::from_archive(path),
        None => Ok(PerceptualExtractor::seeded(
            cfg.channels,
            cfg.perceptual_seed,
        )),
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Pretrained baseline checkpoint directory
    #[arg(long)]
    baseline: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint directory of the model under attack
    #[arg(long)]
    checkpoint: PathBuf,
    /// pgd-recon | encoder-target | mist-textural | poison-probe
    #[arg(long)]
    method: String,
    /// Number of probe images from the validation split
    #[arg(long, default_value_t = 64)]
    limit: usize,
    /// Write perturbed images as PNGs under the run directory
    #[arg(long, default_value_t = false)]
    dump_images: bool,
    /// Attack target: "gray", "mean", or "self" where applicable
    #[arg(long, default_value = "gray")]
    target: String,
    /// Optional comma-separated epsilon sweep (fractions allowed, e.g. 2/255,8/255)
    #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
    epsilon_sweep: Option<Vec<f64>>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// none | pgd-recon | encoder-target | mist-textural | poison-probe
    #[arg(long, default_value = "none")]
    attack: String,
    #[arg(long, default_value_t = 256)]
    limit: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss-surface grids over random orthogonal directions
    #[arg(long, default_value_t = false)]
    surface: bool,
    /// PCA of latent means
    #[arg(long, default_value_t = false)]
    pca: bool,
    /// Cluster-tightness statistic under Gaussian input noise
    #[arg(long, default_value_t = false)]
    tightness: bool,
    /// Grid half-resolution R (grid is (2R+1)^2)
    #[arg(long, default_value_t = 10)]
    half_res: usize,
    /// Grid radius in pixel units (fractions allowed); defaults to 8/255
    #[arg(long, value_parser = parse_fraction)]
    radius: Option<f64>,
    /// Number of anchor images for the surface analysis
    #[arg(long, default_value_t = 8)]
    surface_anchors: usize,
    #[arg(long, default_value_t = 2)]
    pca_k: usize,
    /// Gaussian input-noise sigma for tightness (fractions allowed)
    #[arg(long, value_parser = parse_fraction)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 128)]
    limit: usize,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output directory for the PNG corpus
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory for the manifest (defaults under the artifact root)
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::GenCorpus(args) => cmd_gen_corpus(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let (cfg, run_dir, root) = args.common.resolve("pretrain")?;
    let spec = cfg.dataset_spec()?;
    let dataset = data::load_dataset(&spec)?;
    check_divisibility(&cfg)?;
    let mut model = VaeModel::init(cfg.vae_config(), cfg.seed)?;
    let extractor = build_extractor(&cfg)?;
    let train_cfg = cfg.train_config()?;
    let source = SplitSource {
        dataset: &dataset,
        split: Split::Train,
    };
    let (records, artifacts) =
        trainer::pretrain_baseline(&mut model, &source, &extractor, &train_cfg, Some(&run_dir))?;
    let final_ck = artifacts.final_checkpoint.as_ref().unwrap();

    let mut manifest = RunManifest::new("pretrain", cfg.snapshot());
    manifest.seed_set.insert("run".into(), cfg.seed);
    manifest.seed_set.insert("split".into(), cfg.split_seed);
    manifest
        .seed_set
        .insert("perceptual".into(), cfg.perceptual_seed);
    manifest.outputs = relative_outputs(&run_dir, &artifacts);
    manifest.details.insert(
        "corpus".into(),
        serde_json::to_value(data::corpus_fingerprint(&dataset)).unwrap(),
    );
    manifest.details.insert(
        "final_loss".into(),
        serde_json::json!(records.last().map(|r| r.total)),
    );
    manifest.details.insert(
        "checkpoint_hash".into(),
        serde_json::json!(hex64(checkpoint::archive_hash(final_ck)?)),
    );
    write_manifest(&run_dir, &root, &manifest)?;
    println!("pretrained {} steps", records.len());
    println!("checkpoint: {}", final_ck.display());
    println!("manifest: {}", run_dir.join("manifest.json").display());
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let (cfg, run_dir, root) = args.common.resolve("finetune")?;
    if !checkpoint::checkpoint_exists(&args.baseline) {
        return Err(Error::Config(format!(
            "baseline checkpoint {} not found",
            args.baseline.display()
        )));
    }
    let loaded = checkpoint::open(&args.baseline)?;
    // explicit architecture flags must agree with the checkpoint
    if let Some(sc) = &args.common.stage_channels {
        if *sc != loaded.meta.arch.stage_channels {
            return Err(Error::Config(format!(
                "stage_channels {:?} do not match checkpoint architecture {:?}",
                sc, loaded.meta.arch.stage_channels
            )));
        }
    }
    if let Some(lc) = args.common.latent_channels {
        if lc != loaded.meta.arch.latent_channels {
            return Err(Error::Config(format!(
                "latent_channels {lc} does not match checkpoint architecture {}",
                loaded.meta.arch.latent_channels
            )));
        }
    }
    if cfg.channels != loaded.meta.arch.in_channels {
        return Err(Error::Config(format!(
            "channels {} does not match checkpoint architecture {}",
            cfg.channels, loaded.meta.arch.in_channels
        )));
    }
    let factor = loaded.meta.arch.downsample_factor();
    if cfg.resolution % factor != 0 {
        return Err(Error::Config(format!(
            "resolution {} not divisible by checkpoint downsampling factor {factor}",
            cfg.resolution
        )));
    }
    let mut model = loaded.model;
    let decoder_before = checkpoint::param_hash(&model, "decoder");

    let spec = cfg.dataset_spec()?;
    let dataset = data::load_dataset(&spec)?;
    let extractor = build_extractor(&cfg)?;
    let train_cfg = cfg.train_config()?;
    let source = SplitSource {
        dataset: &dataset,
        split: Split::Train,
    };
    let (records, artifacts) =
        trainer::finetune(&mut model, &source, &extractor, &train_cfg, Some(&run_dir))?;
    let decoder_after = checkpoint::param_hash(&model, "decoder");
    let final_ck = artifacts.final_checkpoint.as_ref().unwrap();

    let mut manifest = RunManifest::new("finetune", cfg.snapshot());
    manifest
        .input_checkpoints
        .insert("baseline".into(), hex64(loaded.hash));
    manifest.seed_set.insert("run".into(), cfg.seed);
    manifest.seed_set.insert("split".into(), cfg.split_seed);
    manifest.outputs = relative_outputs(&run_dir, &artifacts);
    manifest.details.insert(
        "variant".into(),
        serde_json::json!(if train_cfg.orig_weight == 0.0 {
            "wo-originality"
        } else {
            "robust"
        }),
    );
    manifest
        .details
        .insert("decoder_hash_before".into(), serde_json::json!(hex64(decoder_before)));
    manifest
        .details
        .insert("decoder_hash_after".into(), serde_json::json!(hex64(decoder_after)));
    manifest.details.insert(
        "final_loss".into(),
        serde_json::json!(records.last().map(|r| r.total)),
    );
    manifest.details.insert(
        "checkpoint_hash".into(),
        serde_json::json!(hex64(checkpoint::archive_hash(final_ck)?)),
    );
    write_manifest(&run_dir, &root, &manifest)?;
    println!("fine-tuned {} steps", records.len());
    println!("checkpoint: {}", final_ck.display());
    println!("manifest: {}", run_dir.join("manifest.json").display());
    Ok(())
}

fn relative_outputs(run_dir: &Path, artifacts: &trainer::RunArtifacts) -> Vec<String> {
    let mut out = Vec::new();
    let rel = |p: &Path| {
        p.strip_prefix(run_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    if let Some(p) = &artifacts.records_path {
        out.push(rel(p));
    }
    for c in &artifacts.checkpoints {
        out.push(rel(c));
    }
    if let Some(p) = &artifacts.final_checkpoint {
        out.push(rel(p));
    }
    out
}

fn known_methods() -> &'static str {
    "pgd-recon, encoder-target, mist-textural, poison-probe"
}

/// Per-image target construction for the targeted attacks.
fn target_image(kind: &str, like: &Tensor, dataset_mean: &Tensor) -> Result<Tensor> {
    match kind {
        "gray" => Ok(Tensor::full_like(like, 0.5)),
        "mean" => Ok(dataset_mean.clone()),
        "self" => Ok(like.clone()),
        other => Err(Error::Config(format!(
            "unknown target \"{other}\" (expected gray, mean, or self)"
        ))),
    }
}

fn cmd_attack(args: AttackArgs) -> Result<()> {
    let (cfg, run_dir, root) = args.common.resolve("attack")?;
    let method = args.method.as_str();
    if !matches!(
        method,
        "pgd-recon" | "encoder-target" | "mist-textural" | "poison-probe"
    ) {
        return Err(Error::Config(format!(
            "unknown method \"{method}\"; known methods: {}",
            known_methods()
        )));
    }
    let loaded = checkpoint::open(&args.checkpoint)?;
    let model = loaded.model;
    let mut cfg = cfg;
    cfg.channels = model.cfg.in_channels;
    let spec = cfg.dataset_spec()?;
    let dataset = data::load_dataset(&spec)?;
    let probe = dataset.head_batch(Split::Val, args.limit)?;
    let extractor = build_extractor(&cfg)?;
    let base_budget = cfg.attack_budget()?;
    let latent_tap = cfg.latent_tap()?;
    let dataset_mean = dataset.mean_image(Split::Train)?;

    let epsilons: Vec<f64> = match &args.epsilon_sweep {
        Some(list) if !list.is_empty() => list.clone(),
        _ => vec![base_budget.epsilon],
    };
    let sweeping = args.epsilon_sweep.is_some();

    let mut csv = String::new();
    if sweeping {
        csv.push_str("epsilon,");
    }
    csv.push_str("id,initial_loss,final_loss,linf_norm");
    if method == "poison-probe" {
        csv.push_str(",reduction_ratio");
    }
    csv.push('\n');

    let img_dir = run_dir.join("adv");
    if args.dump_images {
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    }

    for &eps in &epsilons {
        let budget = AttackBudget {
            epsilon: eps,
            ..base_budget.clone()
        };
        budget.validate()?;
        for i in 0..probe.len() {
            let x = probe.pixels.slice_sample(i);
            let id = &probe.ids[i];
            let (outcome, ratio) = match method {
                "pgd-recon" => (
                    pgd_reconstruction_attack(
                        &model,
                        &extractor,
                        &x,
                        &budget,
                        cfg.lpips_weight,
                        latent_tap,
                    )?,
                    None,
                ),
                "encoder-target" => {
                    let target = target_image(&args.target, &x, &dataset_mean)?;
                    let z = model.encode(&target)?.mu;
                    (encoder_targeted_attack(&model, &x, &z, &budget)?, None)
                }
                "mist-textural" => {
                    let kind = if args.target == "gray" { "self" } else { &args.target };
                    let y = target_image(kind, &x, &dataset_mean)?;
                    (mist_textural_attack(&model, &x, &y, &budget)?, None)
                }
                "poison-probe" => {
                    let j = (i + 1) % probe.len();
                    let dest = probe.pixels.slice_sample(j);
                    let report = poison_crafting_probe(&model, &x, &dest, &budget)?;
                    (report.outcome, Some(report.reduction_ratio))
                }
                _ => unreachable!("validated above"),
            };
            if sweeping {
                csv.push_str(&format!("{eps},"));
            }
            csv.push_str(&format!(
                "{id},{},{},{}",
                outcome.initial_loss(),
                outcome.final_loss(),
                outcome.linf_norm()
            ));
            if let Some(r) = ratio {
                csv.push_str(&format!(",{r}"));
            }
            csv.push('\n');
            if args.dump_images {
                let safe = id.replace('/', "_");
                write_png(&img_dir.join(format!("{safe}")), &outcome.x_adv)?;
            }
        }
    }
    let csv_path = run_dir.join("attack.csv");
    checkpoint::atomic_write(&csv_path, csv.as_bytes())?;

    let mut manifest = RunManifest::new("attack", cfg.snapshot());
    manifest
        .input_checkpoints
        .insert("checkpoint".into(), hex64(loaded.hash));
    manifest.seed_set.insert("attack".into(), base_budget.rng_seed);
    manifest.outputs.push("attack.csv".into());
    if args.dump_images {
        manifest.outputs.push("adv/".into());
    }
    manifest
        .details
        .insert("method".into(), serde_json::json!(method));
    manifest
        .details
        .insert("epsilons".into(), serde_json::json!(epsilons));
    manifest
        .details
        .insert("probe_size".into(), serde_json::json!(probe.len()));
    write_manifest(&run_dir, &root, &manifest)?;
    println!("attack results: {}", csv_path.display());
    println!("manifest: {}", run_dir.join("manifest.json").display());
    Ok(())
}

fn write_png(path_no_ext: &Path, image: &Tensor) -> Result<()> {
    let path = path_no_ext.with_extension("png");
    let (h, w, c) = (image.h, image.w, image.c);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if c == 1 {
                let v = (image.at(0, 0, y, x) * 255.0).round() as u8;
                [v, v, v]
            } else {
                [
                    (image.at(0, 0, y, x) * 255.0).round() as u8,
                    (image.at(0, 1, y, x) * 255.0).round() as u8,
                    (image.at(0, 2, y, x) * 255.0).round() as u8,
                ]
            };
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(&path)
        .map_err(|e| Error::Data(format!("png write failed for {}: {e}", path.display())))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (cfg, run_dir, root) = args.common.resolve("eval")?;
    let attack_kind = args.attack.as_str();
    if !matches!(
        attack_kind,
        "none" | "pgd-recon" | "encoder-target" | "mist-textural" | "poison-probe"
    ) {
        return Err(Error::Config(format!(
            "unknown attack \"{attack_kind}\"; known: none, {}",
            known_methods()
        )));
    }
    let loaded = checkpoint::open(&args.checkpoint)?;
    let model = loaded.model;
    let mut cfg = cfg;
    cfg.channels = model.cfg.in_channels;
    let spec = cfg.dataset_spec()?;
    let dataset = data::load_dataset(&spec)?;
    let probe = dataset.head_batch(Split::Val, args.limit)?;
    let extractor = build_extractor(&cfg)?;
    let budget = cfg.attack_budget()?;
    let latent_tap = cfg.latent_tap()?;
    let dataset_mean = dataset.mean_image(Split::Train)?;
    let lpips_weight = cfg.lpips_weight;

    let _ = dataset_mean;
    let mut poison_ratio: Option<f64> = None;
    let generator_budget = budget.clone();
    let gen_extractor = extractor.clone();
    let generator: Box<AttackGenerator> = match attack_kind {
        "pgd-recon" => Box::new(move |m: &VaeModel, x: &Tensor| {
            pgd_reconstruction_attack(m, &gen_extractor, x, &generator_budget, lpips_weight, latent_tap)
        }),
        "encoder-target" => Box::new(move |m: &VaeModel, x: &Tensor| {
            let target = Tensor::full_like(x, 0.5);
            let z = m.encode(&target)?.mu;
            encoder_targeted_attack(m, x, &z, &generator_budget)
        }),
        "mist-textural" => Box::new(move |m: &VaeModel, x: &Tensor| {
            mist_textural_attack(m, x, x, &generator_budget)
        }),
        "poison-probe" => Box::new(move |m: &VaeModel, x: &Tensor| {
            // rotate the batch by one to pair each source with a destination
            let n = x.n;
            let mut parts = Vec::with_capacity(n);
            for i in 0..n {
                parts.push(x.slice_sample((i + 1) % n));
            }
            let dest = Tensor::cat_batch(&parts);
            Ok(poison_crafting_probe(m, x, &dest, &generator_budget)?.outcome)
        }),
        _ => Box::new(move |_m: &VaeModel, _x: &Tensor| {
            unreachable!("none handled separately")
        }),
    };

    if attack_kind == "poison-probe" {
        // per-image ratios for the aggregate poison statistic
        let mut acc = 0.0;
        for i in 0..probe.len() {
            let src = probe.pixels.slice_sample(i);
            let dest = probe.pixels.slice_sample((i + 1) % probe.len());
            let report = poison_crafting_probe(&model, &src, &dest, &budget)?;
            acc += report.reduction_ratio;
        }
        poison_ratio = Some(acc / probe.len() as f64);
    }

    let attack_for_report: Option<(&str, &AttackGenerator)> = if attack_kind == "none" {
        None
    } else {
        Some((attack_kind, generator.as_ref()))
    };
    let corpus_id = spec.root.display().to_string();
    let model_id = hex64(loaded.hash);
    let mut report = reconstruction_report(
        &model,
        &extractor,
        &probe,
        attack_for_report,
        &corpus_id,
        &model_id,
    )?;
    if let Some(r) = poison_ratio {
        report.metrics.insert("poison_ratio".into(), r);
    }
    let report_path = run_dir.join("report.json");
    checkpoint::atomic_write(&report_path, report.to_json().as_bytes())?;
    append_report_row(&root.join("results.csv"), &report)?;

    let mut manifest = RunManifest::new("eval", cfg.snapshot());
    manifest
        .input_checkpoints
        .insert("checkpoint".into(), hex64(loaded.hash));
    manifest.outputs.push("report.json".into());
    manifest
        .details
        .insert("attack".into(), serde_json::json!(attack_kind));
    manifest.details.insert(
        "metrics".into(),
        serde_json::to_value(&report.metrics).unwrap(),
    );
    write_manifest(&run_dir, &root, &manifest)?;
    println!("report: {}", report_path.display());
    println!("ledger: {}", root.join("results.csv").display());
    println!("manifest: {}", run_dir.join("manifest.json").display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    if !(args.surface || args.pca || args.tightness) {
        return Err(Error::Config(
            "select at least one analysis: --surface, --pca, --tightness".into(),
        ));
    }
    let (cfg, run_dir, root) = args.common.resolve("analyze")?;
    let loaded = checkpoint::open(&args.checkpoint)?;
    let model = loaded.model;
    let mut cfg = cfg;
    cfg.channels = model.cfg.in_channels;
    let spec = cfg.dataset_spec()?;
    let dataset = data::load_dataset(&spec)?;
    let probe = dataset.head_batch(Split::Val, args.limit)?;

    let mut manifest = RunManifest::new("analyze", cfg.snapshot());
    manifest
        .input_checkpoints
        .insert("checkpoint".into(), hex64(loaded.hash));
    manifest.seed_set.insert("run".into(), cfg.seed);

    if args.surface {
        let radius = args.radius.unwrap_or(8.0 / 255.0);
        let anchors = args.surface_anchors.min(probe.len());
        let mut scores = Vec::with_capacity(anchors);
        for i in 0..anchors {
            let x = probe.pixels.slice_sample(i);
            let grid = analysis::loss_surface(
                &model,
                &x,
                radius,
                args.half_res,
                cfg.seed.wrapping_add(i as u64),
                &probe.ids[i],
            )?;
            let csv_path = run_dir.join(format!("surface_{i:02}.csv"));
            checkpoint::atomic_write(&csv_path, grid.to_csv().as_bytes())?;
            let sidecar = run_dir.join(format!("surface_{i:02}.json"));
            checkpoint::atomic_write(&sidecar, grid.sidecar_json().as_bytes())?;
            manifest.outputs.push(format!("surface_{i:02}.csv"));
            manifest.outputs.push(format!("surface_{i:02}.json"));
            scores.push(analysis::smoothness_score(&grid));
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        manifest.details.insert(
            "surface_smoothness".into(),
            serde_json::json!({ "mean": mean, "per_anchor": scores }),
        );
        println!("surface smoothness mean: {mean}");
    }

    if args.pca {
        let rows = analysis::latent_mu_rows(&model, &probe.pixels)?;
        let pca = analysis::latent_pca(&rows, args.pca_k)?;
        let csv = analysis::projections_csv(&probe.ids, &pca);
        let csv_path = run_dir.join("pca_projections.csv");
        checkpoint::atomic_write(&csv_path, csv.as_bytes())?;
        let summary = serde_json::json!({
            "k": args.pca_k,
            "explained_variance_ratios": pca.explained_variance_ratios,
        });
        checkpoint::atomic_write(
            &run_dir.join("pca.json"),
            serde_json::to_string_pretty(&summary).unwrap().as_bytes(),
        )?;
        manifest.outputs.push("pca_projections.csv".into());
        manifest.outputs.push("pca.json".into());
        manifest.details.insert("pca".into(), summary);
        println!("pca projections: {}", csv_path.display());
    }

    if args.tightness {
        let sigma = args.noise_sigma.unwrap_or(8.0 / 255.0);
        let report = analysis::cluster_tightness(&model, &probe.pixels, sigma, cfg.seed)?;
        checkpoint::atomic_write(
            &run_dir.join("tightness.json"),
            serde_json::to_string_pretty(&report).unwrap().as_bytes(),
        )?;
        manifest.outputs.push("tightness.json".into());
        manifest
            .details
            .insert("tightness".into(), serde_json::to_value(&report).unwrap());
        println!("tightness ratio: {}", report.tightness_ratio);
    }

    write_manifest(&run_dir, &root, &manifest)?;
    println!("manifest: {}", run_dir.join("manifest.json").display());
    Ok(())
}

fn cmd_gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let root = artifact_root();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let run_dir = match &args.run_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            d.clone()
        }
        None => create_run_dir(&root, "gen-corpus", "synthetic")?,
    };
    let count = data::write_synth_corpus(&args.out, args.count, args.size, args.seed)?;
    let mut manifest = RunManifest::new(
        "gen-corpus",
        serde_json::json!({
            "out": args.out.display().to_string(),
            "count": args.count,
            "size": args.size,
            "seed": args.seed,
        }),
    );
    manifest.seed_set.insert("corpus".into(), args.seed);
    manifest
        .details
        .insert("written".into(), serde_json::json!(count));
    write_manifest(&run_dir, &root, &manifest)?;
    println!("wrote {count} images to {}", args.out.display());
    Ok(())
}

fn check_divisibility(cfg: &RunConfig) -> Result<()> {
    let factor = cfg.vae_config().downsample_factor();
    if cfg.resolution % factor != 0 {
        return Err(Error::Config(format!(
            "resolution {} not divisible by downsampling factor {factor}",
            cfg.resolution
        )));
    }
    Ok(())
}
