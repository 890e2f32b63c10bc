//! Training: baseline VAE pretraining and the robust min-max fine-tune.
//!
//! Fine-tuning alternates an inner maximization (a projected signed-gradient
//! attack on the reconstruction loss) with an outer minimization over encoder
//! parameters only. The outer objective anchors the clean-input latent
//! distribution to the frozen pre-trained encoder through the originality
//! term:
//!
//! ```text
//! total = orig_weight * orig(x; theta, theta0)
//!       + mse(D(E(x_adv)), x)
//!       + lpips_weight * perceptual(D(E(x_adv)), x)
//! ```
//!
//! The perturbation is treated as a constant during the outer step: gradients
//! flow through the encoder evaluated at `x_adv`, never through the attack
//! that produced it. The decoder and the reference encoder stay bitwise
//! frozen.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::attacks::{pgd_reconstruction_attack, AttackBudget, AttackOutcome, LatentTap};
use crate::checkpoint;
use crate::data::BatchSource;
use crate::error::{Error, Result};
use crate::perceptual::{perceptual_loss, perceptual_loss_with_grad, PerceptualExtractor};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vae::{
    kl_loss, kl_loss_grad, mse_loss_grad, Encoder, EncoderGrads, LatentDist, VaeModel,
};

/// Pixel-reconstruction term used by baseline pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelLoss {
    L1,
    L2,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Originality regularizer weight (alpha).
    pub orig_weight: f64,
    /// Perceptual term weight (lambda).
    pub lpips_weight: f64,
    /// KL weight (beta); pretraining only.
    pub kl_weight: f64,
    pub attack: AttackBudget,
    pub attack_latent: LatentTap,
    pub pixel_loss: PixelLoss,
    pub freeze_decoder: bool,
    pub seed: u64,
    /// Emit a checkpoint every N steps (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Reference defaults: eps 8/255, 10 PGD iterations, step 0.02,
    /// alpha 0.01, lr 1e-4, AdamW, batch 20.
    fn default() -> Self {
        TrainConfig {
            total_steps: 5000,
            batch_size: 20,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            orig_weight: 0.01,
            lpips_weight: 1.0,
            kl_weight: 1e-6,
            attack: AttackBudget::default(),
            attack_latent: LatentTap::Mean,
            pixel_loss: PixelLoss::L2,
            freeze_decoder: true,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.orig_weight < 0.0 {
            return Err(Error::Config("orig_weight must be >= 0".into()));
        }
        if self.lpips_weight < 0.0 {
            return Err(Error::Config("lpips_weight must be >= 0".into()));
        }
        if self.kl_weight < 0.0 {
            return Err(Error::Config("kl_weight must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        self.attack.validate()
    }
}

/// One fine-tune step's bookkeeping. The total always reconstitutes from the
/// components: total = orig_weight * orig + mse_adv + lpips_weight * lpips_adv.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub orig: f64,
    pub mse_adv: f64,
    pub lpips_adv: f64,
    pub grad_norm: f64,
    /// Attack objective gain over the inner maximization (final - initial).
    pub attack_gain: f64,
}

pub const STEP_CSV_HEADER: &str = "step,total,orig,mse_adv,lpips_adv,grad_norm,attack_gain";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.total,
            self.orig,
            self.mse_adv,
            self.lpips_adv,
            self.grad_norm,
            self.attack_gain
        )
    }
}

#[derive(Debug, Clone)]
pub struct PretrainRecord {
    pub step: usize,
    pub total: f64,
    pub pixel: f64,
    pub lpips: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

pub const PRETRAIN_CSV_HEADER: &str = "step,total,pixel,lpips,kl,grad_norm";

impl PretrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.total, self.pixel, self.lpips, self.kl, self.grad_norm
        )
    }
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay. Moments are keyed by parameter path so
/// update order never matters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(param.len(), grad.len());
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * param[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Squared distance between two latent distributions' parameters:
/// per sample sum of (mu - mu_ref)^2 + (log_var - log_var_ref)^2, mean over
/// the batch. Zero iff both coincide; symmetric.
pub fn originality_loss(current: &LatentDist, reference: &LatentDist) -> Result<f64> {
    current
        .mu
        .require_same_shape(&reference.mu, "originality_loss mu")?;
    current
        .log_var
        .require_same_shape(&reference.log_var, "originality_loss log_var")?;
    let n = current.batch_size() as f64;
    let mut acc = 0.0;
    for i in 0..current.mu.data.len() {
        let dm = current.mu.data[i] - reference.mu.data[i];
        let dv = current.log_var.data[i] - reference.log_var.data[i];
        acc += dm * dm + dv * dv;
    }
    Ok(acc / n)
}

/// Component values of the fine-tune objective.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub orig: f64,
    pub mse_adv: f64,
    pub lpips_adv: f64,
}

/// The outer objective evaluated at a fixed adversarial batch, with encoder
/// gradients. `x_adv` is a constant here: this is the stop-gradient side of
/// the min-max split. With `orig_weight = 0` the originality branch
/// contributes nothing to the gradient (the ablation objective).
pub fn robust_loss_with_grads(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    x_clean: &Tensor,
    x_adv: &Tensor,
    sample_seed: u64,
    orig_weight: f64,
    lpips_weight: f64,
    want_grads: bool,
) -> Result<(LossParts, Option<EncoderGrads>)> {
    if model.freeze_decoder && model.reference_encoder.is_none() {
        return Err(Error::Config(
            "fine-tune objective requires a frozen reference encoder".into(),
        ));
    }
    // adversarial branch
    let (dist_adv, cache_adv) = model.encoder.forward(x_adv);
    let (z, eta) = dist_adv.sample_with_noise(sample_seed);
    let dec_cache = model.decoder.forward(&z);
    let y = &dec_cache.y;
    let mse_adv = y.mse(x_clean);
    // originality branch on clean inputs
    let (dist_cur, cache_cur) = model.encoder.forward(x_clean);
    let dist_ref = model.encode_reference(x_clean)?;
    let orig = originality_loss(&dist_cur, &dist_ref)?;

    if !want_grads {
        let lpips_adv = perceptual_loss(extractor, y, x_clean)?;
        let total = orig_weight * orig + mse_adv + lpips_weight * lpips_adv;
        return Ok((
            LossParts {
                total,
                orig,
                mse_adv,
                lpips_adv,
            },
            None,
        ));
    }

    let (lpips_adv, lpips_grad) = perceptual_loss_with_grad(extractor, y, x_clean)?;
    let total = orig_weight * orig + mse_adv + lpips_weight * lpips_adv;

    let mut d_y = mse_loss_grad(y, x_clean)?;
    let mut lg = lpips_grad;
    lg.scale(lpips_weight);
    d_y.add_assign(&lg);
    let (d_z, _) = model.decoder.backward(&dec_cache, &d_y, true, false);
    let d_z = d_z.unwrap();
    let mut d_lv_adv = Tensor::zeros_like(&dist_adv.log_var);
    for i in 0..d_lv_adv.data.len() {
        d_lv_adv.data[i] = d_z.data[i] * eta.data[i] * 0.5 * (0.5 * dist_adv.log_var.data[i]).exp();
    }
    let (_, adv_grads) = model
        .encoder
        .backward(&cache_adv, &d_z, &d_lv_adv, false, true);
    let mut grads = adv_grads.unwrap();

    if orig_weight > 0.0 {
        let n = dist_cur.batch_size() as f64;
        let scale = 2.0 * orig_weight / n;
        let mut d_mu = Tensor::zeros_like(&dist_cur.mu);
        let mut d_lv = Tensor::zeros_like(&dist_cur.log_var);
        for i in 0..d_mu.data.len() {
            d_mu.data[i] = scale * (dist_cur.mu.data[i] - dist_ref.mu.data[i]);
            d_lv.data[i] = scale * (dist_cur.log_var.data[i] - dist_ref.log_var.data[i]);
        }
        let (_, orig_grads) = model.encoder.backward(&cache_cur, &d_mu, &d_lv, false, true);
        let orig_grads = orig_grads.unwrap();
        add_encoder_grads(&mut grads, &orig_grads);
    }

    Ok((
        LossParts {
            total,
            orig,
            mse_adv,
            lpips_adv,
        },
        Some(grads),
    ))
}

fn add_encoder_grads(into: &mut EncoderGrads, from: &EncoderGrads) {
    for (a, b) in into.stages.iter_mut().zip(from.stages.iter()) {
        for (x, y) in a.weight.iter_mut().zip(b.weight.iter()) {
            *x += y;
        }
        for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
            *x += y;
        }
    }
    for (x, y) in into.head.weight.iter_mut().zip(from.head.weight.iter()) {
        *x += y;
    }
    for (x, y) in into.head.bias.iter_mut().zip(from.head.bias.iter()) {
        *x += y;
    }
}

fn encoder_grad_norm(grads: &EncoderGrads) -> f64 {
    let mut acc = 0.0;
    Encoder::visit_grads(grads, "encoder", &mut |_, g| {
        for v in g {
            acc += v * v;
        }
    });
    acc.sqrt()
}

/// Inner maximization + outer objective for one batch: the full fine-tune
/// step objective with the attack run first and then treated as constant.
pub fn robust_total_loss(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    x: &Tensor,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(LossParts, EncoderGrads, AttackOutcome)> {
    let mut budget = cfg.attack.clone();
    budget.rng_seed = step_seed;
    let outcome = pgd_reconstruction_attack(
        model,
        extractor,
        x,
        &budget,
        cfg.lpips_weight,
        cfg.attack_latent,
    )?;
    let (parts, grads) = robust_loss_with_grads(
        model,
        extractor,
        x,
        &outcome.x_adv,
        step_seed ^ 0x5eed,
        cfg.orig_weight,
        cfg.lpips_weight,
        true,
    )?;
    Ok((parts, grads.unwrap(), outcome))
}

/// The no-originality ablation: identical to `robust_total_loss` with the
/// regularizer weight forced to zero.
pub fn ablation_total_loss(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    x: &Tensor,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(LossParts, EncoderGrads, AttackOutcome)> {
    let mut ablated = cfg.clone();
    ablated.orig_weight = 0.0;
    robust_total_loss(model, extractor, x, &ablated, step_seed)
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct RunArtifacts {
    pub records_path: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

/// Robust fine-tune over encoder parameters. Snapshots the reference encoder
/// if the model has none yet, enforces decoder freezing, and verifies both
/// freezes bitwise at exit.
pub fn finetune(
    model: &mut VaeModel,
    source: &dyn BatchSource,
    extractor: &PerceptualExtractor,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Vec<StepRecord>, RunArtifacts)> {
    cfg.validate()?;
    if !cfg.freeze_decoder {
        return Err(Error::Config(
            "fine-tuning requires freeze_decoder = true".into(),
        ));
    }
    if model.reference_encoder.is_none() {
        model.snapshot_reference();
    }
    model.freeze_decoder = true;
    let phi_before = checkpoint::param_hash(model, "decoder");
    let ref_before = checkpoint::param_hash(model, "encoder_ref");

    let mut optimizer = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut seed_stream = Rng::derive(cfg.seed, "finetune-steps");
    let mut records: Vec<StepRecord> = Vec::with_capacity(cfg.total_steps);
    let mut artifacts = RunArtifacts {
        records_path: None,
        checkpoints: Vec::new(),
        final_checkpoint: None,
    };

    let mut step = 0;
    let mut epoch = 0u64;
    'outer: loop {
        let batches = source.epoch(cfg.batch_size, cfg.seed.wrapping_add(epoch))?;
        for batch in batches {
            step += 1;
            let step_seed = seed_stream.next_u64();
            let (parts, grads, outcome) =
                robust_total_loss(model, extractor, &batch.pixels, cfg, step_seed)?;
            if !parts.total.is_finite() {
                if let Some(last) = records.last() {
                    eprintln!("last healthy step: {}", last.csv_row());
                }
                return Err(Error::Numerical(format!(
                    "non-finite fine-tune loss at step {step}"
                )));
            }
            let record = StepRecord {
                step,
                total: parts.total,
                orig: parts.orig,
                mse_adv: parts.mse_adv,
                lpips_adv: parts.lpips_adv,
                grad_norm: encoder_grad_norm(&grads),
                attack_gain: outcome.final_loss() - outcome.initial_loss(),
            };
            records.push(record);

            optimizer.begin_step();
            apply_encoder_grads(&mut model.encoder, &grads, &mut optimizer);

            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    let ck = dir.join(format!("step{step:06}"));
                    save_with_provenance(&ck, model, cfg, step)?;
                    artifacts.checkpoints.push(ck);
                }
            }
            if step >= cfg.total_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    assert_eq!(
        checkpoint::param_hash(model, "decoder"),
        phi_before,
        "decoder parameters changed during fine-tune"
    );
    assert_eq!(
        checkpoint::param_hash(model, "encoder_ref"),
        ref_before,
        "reference encoder changed during fine-tune"
    );

    if let Some(dir) = out_dir {
        let final_dir = dir.join("final");
        save_with_provenance(&final_dir, model, cfg, step)?;
        let records_path = dir.join("steps.csv");
        write_step_csv(&records_path, &records)?;
        artifacts.records_path = Some(records_path);
        artifacts.final_checkpoint = Some(final_dir);
    }
    Ok((records, artifacts))
}

fn apply_encoder_grads(encoder: &mut Encoder, grads: &EncoderGrads, optimizer: &mut AdamW) {
    let mut flat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    Encoder::visit_grads(grads, "encoder", &mut |name, g| {
        flat.insert(name.to_string(), g.to_vec());
    });
    encoder.visit_mut("encoder", &mut |name, param| {
        let g = flat.get(name).expect("gradient for every parameter");
        optimizer.update(name, param, g);
    });
}

/// Baseline pretraining: encoder and decoder jointly on
/// pixel + lpips_weight * perceptual + kl_weight * KL over clean batches.
pub fn pretrain_baseline(
    model: &mut VaeModel,
    source: &dyn BatchSource,
    extractor: &PerceptualExtractor,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Vec<PretrainRecord>, RunArtifacts)> {
    cfg.validate()?;
    let mut optimizer = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut seed_stream = Rng::derive(cfg.seed, "pretrain-steps");
    let mut records: Vec<PretrainRecord> = Vec::with_capacity(cfg.total_steps);
    let mut artifacts = RunArtifacts {
        records_path: None,
        checkpoints: Vec::new(),
        final_checkpoint: None,
    };
    let mut initial_loss: Option<f64> = None;

    let mut step = 0;
    let mut epoch = 0u64;
    'outer: loop {
        let batches = source.epoch(cfg.batch_size, cfg.seed.wrapping_add(epoch))?;
        for batch in batches {
            step += 1;
            let sample_seed = seed_stream.next_u64();
            let x = &batch.pixels;
            let (dist, enc_cache) = model.encoder.forward(x);
            let kl = kl_loss(&dist);
            assert!(kl >= 0.0, "KL must be nonnegative, got {kl}");
            let (z, eta) = dist.sample_with_noise(sample_seed);
            let dec_cache = model.decoder.forward(&z);
            let y = &dec_cache.y;
            let (pixel, mut d_y) = match cfg.pixel_loss {
                PixelLoss::L2 => (y.mse(x), mse_loss_grad(y, x)?),
                PixelLoss::L1 => {
                    let n = y.len() as f64;
                    let mut g = Tensor::zeros_like(y);
                    let mut acc = 0.0;
                    for i in 0..y.data.len() {
                        let d = y.data[i] - x.data[i];
                        acc += d.abs();
                        g.data[i] = d.signum() / n;
                    }
                    (acc / n, g)
                }
            };
            let (lpips, lpips_grad) = perceptual_loss_with_grad(extractor, y, x)?;
            let total = pixel + cfg.lpips_weight * lpips + cfg.kl_weight * kl;
            if !total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite pretrain loss at step {step}"
                )));
            }
            let init = *initial_loss.get_or_insert(total);
            if total > 10.0 * init.max(1e-12) {
                return Err(Error::Numerical(format!(
                    "pretraining diverged at step {step}: loss {total} exceeds 10x initial {init}"
                )));
            }

            let mut lg = lpips_grad;
            lg.scale(cfg.lpips_weight);
            d_y.add_assign(&lg);
            let (d_z, dec_grads) = model.decoder.backward(&dec_cache, &d_y, true, true);
            let d_z = d_z.unwrap();
            let dec_grads = dec_grads.unwrap();
            let (mut d_mu, mut d_lv) = kl_loss_grad(&dist);
            d_mu.scale(cfg.kl_weight);
            d_lv.scale(cfg.kl_weight);
            for i in 0..d_mu.data.len() {
                d_mu.data[i] += d_z.data[i];
                d_lv.data[i] +=
                    d_z.data[i] * eta.data[i] * 0.5 * (0.5 * dist.log_var.data[i]).exp();
            }
            let (_, enc_grads) = model.encoder.backward(&enc_cache, &d_mu, &d_lv, false, true);
            let enc_grads = enc_grads.unwrap();

            let mut norm_sq = 0.0;
            Encoder::visit_grads(&enc_grads, "encoder", &mut |_, g| {
                for v in g {
                    norm_sq += v * v;
                }
            });
            crate::vae::Decoder::visit_grads(&dec_grads, "decoder", &mut |_, g| {
                for v in g {
                    norm_sq += v * v;
                }
            });
            records.push(PretrainRecord {
                step,
                total,
                pixel,
                lpips,
                kl,
                grad_norm: norm_sq.sqrt(),
            });

            optimizer.begin_step();
            apply_encoder_grads(&mut model.encoder, &enc_grads, &mut optimizer);
            let mut flat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            crate::vae::Decoder::visit_grads(&dec_grads, "decoder", &mut |name, g| {
                flat.insert(name.to_string(), g.to_vec());
            });
            model.decoder.visit_mut("decoder", &mut |name, param| {
                let g = flat.get(name).expect("gradient for every parameter");
                optimizer.update(name, param, g);
            });

            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    let ck = dir.join(format!("step{step:06}"));
                    save_with_provenance(&ck, model, cfg, step)?;
                    artifacts.checkpoints.push(ck);
                }
            }
            if step >= cfg.total_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    if let Some(dir) = out_dir {
        let final_dir = dir.join("final");
        save_with_provenance(&final_dir, model, cfg, step)?;
        let records_path = dir.join("pretrain_steps.csv");
        write_pretrain_csv(&records_path, &records)?;
        artifacts.records_path = Some(records_path);
        artifacts.final_checkpoint = Some(final_dir);
    }
    Ok((records, artifacts))
}

fn save_with_provenance(dir: &Path, model: &VaeModel, cfg: &TrainConfig, step: usize) -> Result<()> {
    let mut prov = BTreeMap::new();
    prov.insert("step".to_string(), step.to_string());
    prov.insert("total_steps".to_string(), cfg.total_steps.to_string());
    prov.insert("batch_size".to_string(), cfg.batch_size.to_string());
    prov.insert("learning_rate".to_string(), cfg.learning_rate.to_string());
    prov.insert("orig_weight".to_string(), cfg.orig_weight.to_string());
    prov.insert("lpips_weight".to_string(), cfg.lpips_weight.to_string());
    prov.insert("epsilon".to_string(), cfg.attack.epsilon.to_string());
    prov.insert(
        "attack_iterations".to_string(),
        cfg.attack.iterations.to_string(),
    );
    prov.insert(
        "attack_step_size".to_string(),
        cfg.attack.step_size.to_string(),
    );
    prov.insert("seed".to_string(), cfg.seed.to_string());
    checkpoint::save_model(dir, model, &prov)
}

pub fn write_step_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut text = String::from(STEP_CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    checkpoint::atomic_write(path, text.as_bytes())
}

pub fn write_pretrain_csv(path: &Path, records: &[PretrainRecord]) -> Result<()> {
    let mut text = String::from(PRETRAIN_CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    checkpoint::atomic_write(path, text.as_bytes())
}
