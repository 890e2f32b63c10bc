//! Acceptance gate.
//!
//! Eleven criteria, one test each, every test printing a single
//! `criterion N (...): PASS` line (or a FAIL line with details before
//! panicking). Heavy fixtures — a 5 000-image synthetic corpus and the
//! baseline / robust / ablation / alpha-sweep model chain — are trained once
//! and shared through a `OnceLock`.
//!
//! Run with visible output:
//!   cargo test -p vaeguard --test acceptance -- --nocapture --test-threads 1

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use vaeguard::analysis::{cluster_tightness, latent_pca, loss_surface, smoothness_score};
use vaeguard::attacks::{
    encoder_targeted_attack, mist_textural_attack, pgd_reconstruction_attack,
    poison_crafting_probe, run_pgd, AttackBudget, AttackObjective, AttackOutcome, Direction,
    InitMode, LatentTap, BALL_TOL,
};
use vaeguard::checkpoint::param_hash;
use vaeguard::data::{
    load_dataset, synth_batch, write_synth_corpus, DatasetSpec, ImageBatch, MemorySource, Split,
    SplitSource,
};
use vaeguard::linalg::Mat;
use vaeguard::metrics::{frechet_feature_distance, psnr, ssim};
use vaeguard::perceptual::{perceptual_loss, perceptual_loss_with_grad, PerceptualExtractor};
use vaeguard::rng::Rng;
use vaeguard::tensor::Tensor;
use vaeguard::trainer::{
    finetune, originality_loss, pretrain_baseline, robust_loss_with_grads, TrainConfig,
};
use vaeguard::vae::{kl_loss, kl_loss_grad, mse_loss, mse_loss_grad, Encoder, VaeConfig, VaeModel};

// ---------------------------------------------------------------------------
// fixture configuration (locked after the first validated calibration run)
// ---------------------------------------------------------------------------

const CORPUS_SIZE: usize = 5000;
const RESOLUTION: usize = 32;
const SPLIT_SEED: u64 = 7;
const EXTRACTOR_SEED: u64 = 7777;
/// Perceptual weight for the toy setup; the reference protocol leaves lambda
/// unstated, and the MSE-centered criteria read best with a modest value.
const LAMBDA: f64 = 0.25;
const PRETRAIN_STEPS: usize = 3000;
const PRETRAIN_LR: f64 = 2e-3;
/// Flagship robust run backing criteria 5, 8, 9.
const ROBUST_STEPS: usize = 1200;
const ROBUST_LR: f64 = 1e-3;
/// Matched shorter runs backing the alpha comparisons (criteria 6, 7).
const SWEEP_STEPS: usize = 300;
const PROBE_SIZE: usize = 256;

fn arch() -> VaeConfig {
    VaeConfig {
        in_channels: 3,
        stage_channels: vec![8, 16, 32],
        latent_channels: 8,
    }
}

fn eval_budget(epsilon: f64, seed: u64) -> AttackBudget {
    AttackBudget {
        epsilon,
        step_size: 0.02,
        iterations: 10,
        init: InitMode::Zero,
        rng_seed: seed,
    }
}

struct Fixtures {
    extractor: PerceptualExtractor,
    baseline: VaeModel,
    /// Long robust run (alpha = 0.01).
    robust: VaeModel,
    /// Matched-length sweep runs.
    robust_s: VaeModel,
    ablation_s: VaeModel,
    alpha_hi_s: VaeModel,
    alpha_lo_s: VaeModel,
    /// 256 held-out validation images.
    probe: ImageBatch,
}

fn fixtures() -> &'static Fixtures {
    static CELL: OnceLock<Fixtures> = OnceLock::new();
    CELL.get_or_init(build_fixtures)
}

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-corpus")
}

fn build_fixtures() -> Fixtures {
    let t0 = Instant::now();
    let dir = corpus_dir();
    let have = std::fs::read_dir(&dir)
        .map(|d| d.filter_map(|e| e.ok()).count())
        .unwrap_or(0);
    if have != CORPUS_SIZE {
        let _ = std::fs::remove_dir_all(&dir);
        write_synth_corpus(&dir, CORPUS_SIZE, RESOLUTION, 0).expect("corpus generation");
    }
    let spec = DatasetSpec {
        root: dir,
        resolution: (RESOLUTION, RESOLUTION),
        train_fraction: 0.9,
        val_fraction: 0.1,
        split_seed: SPLIT_SEED,
        channels: 3,
    };
    let dataset = load_dataset(&spec).expect("corpus loads");
    assert_eq!(dataset.split_len(Split::Train) + dataset.split_len(Split::Val), CORPUS_SIZE);
    let extractor = PerceptualExtractor::seeded(3, EXTRACTOR_SEED);
    let probe = dataset.head_batch(Split::Val, PROBE_SIZE).unwrap();
    eprintln!("[fixtures] corpus ready at {:.0?}s", t0.elapsed().as_secs_f64());

    let source = SplitSource {
        dataset: &dataset,
        split: Split::Train,
    };
    let pre_cfg = TrainConfig {
        total_steps: PRETRAIN_STEPS,
        batch_size: 20,
        learning_rate: PRETRAIN_LR,
        lpips_weight: LAMBDA,
        orig_weight: 0.0,
        checkpoint_every: 0,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut baseline = VaeModel::init(arch(), 11).unwrap();
    let (pre_records, _) =
        pretrain_baseline(&mut baseline, &source, &extractor, &pre_cfg, None).expect("pretrain");
    eprintln!(
        "[fixtures] pretrained {} steps (loss {:.5} -> {:.5}) at {:.0}s",
        pre_records.len(),
        pre_records[0].total,
        pre_records.last().unwrap().total,
        t0.elapsed().as_secs_f64()
    );
    // pretraining must beat the constant-predictor oracle
    let mean_img = dataset.mean_image(Split::Train).unwrap();
    let mut const_mse = 0.0;
    for i in 0..probe.pixels.n {
        const_mse += probe.pixels.slice_sample(i).mse(&mean_img);
    }
    const_mse /= probe.pixels.n as f64;
    let clean = baseline
        .reconstruct_mean(&probe.pixels)
        .unwrap()
        .mse(&probe.pixels);
    assert!(
        clean < const_mse,
        "pretrained reconstruction ({clean}) worse than the corpus-mean predictor ({const_mse})"
    );

    let ft = |alpha: f64, steps: usize, lr: f64, seed: u64, label: &str| -> VaeModel {
        let cfg = TrainConfig {
            total_steps: steps,
            batch_size: 20,
            learning_rate: lr,
            orig_weight: alpha,
            lpips_weight: LAMBDA,
            checkpoint_every: 0,
            seed,
            ..TrainConfig::default()
        };
        let mut model = baseline.clone();
        let (records, _) =
            finetune(&mut model, &source, &extractor, &cfg, None).expect("finetune");
        eprintln!(
            "[fixtures] {label} ({steps} steps, alpha {alpha}): loss {:.5} -> {:.5} at {:.0}s",
            records[0].total,
            records.last().unwrap().total,
            t0.elapsed().as_secs_f64()
        );
        model
    };
    let robust = ft(0.01, ROBUST_STEPS, ROBUST_LR, 1, "robust");
    let robust_s = ft(0.01, SWEEP_STEPS, ROBUST_LR, 2, "robust-short");
    let ablation_s = ft(0.0, SWEEP_STEPS, ROBUST_LR, 3, "ablation-short");
    let alpha_hi_s = ft(0.1, SWEEP_STEPS, ROBUST_LR, 4, "alpha-0.1");
    let alpha_lo_s = ft(0.001, SWEEP_STEPS, ROBUST_LR, 5, "alpha-0.001");
    eprintln!("[fixtures] complete in {:.0}s", t0.elapsed().as_secs_f64());

    Fixtures {
        extractor,
        baseline,
        robust,
        robust_s,
        ablation_s,
        alpha_hi_s,
        alpha_lo_s,
        probe,
    }
}

/// Print the verdict line and panic on failure.
fn gate(n: u32, name: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("criterion {n} ({name}): PASS");
    } else {
        println!("criterion {n} ({name}): FAIL — {}", failures.join("; "));
        panic!("criterion {n} failed: {}", failures.join("; "));
    }
}

fn adv_recon_mse(model: &VaeModel, extractor: &PerceptualExtractor, x: &Tensor, seed: u64) -> f64 {
    let out = pgd_reconstruction_attack(
        model,
        extractor,
        x,
        &eval_budget(8.0 / 255.0, seed),
        LAMBDA,
        LatentTap::Mean,
    )
    .unwrap();
    model.reconstruct_mean(&out.x_adv).unwrap().mse(x)
}

// ---------------------------------------------------------------------------
// criterion 1: attack legality under random budgets
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_attack_legality() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let model = VaeModel::init(
        VaeConfig {
            in_channels: 3,
            stage_channels: vec![4, 8],
            latent_channels: 2,
        },
        5,
    )
    .unwrap();
    let extractor = PerceptualExtractor::seeded(3, 5);
    let mut rng = Rng::new(1001);
    let images = synth_batch(32, 16, 3, 77);
    for k in 0..1000u64 {
        let epsilon = rng.uniform_in(0.004, 0.12);
        let budget = AttackBudget {
            epsilon,
            step_size: rng.uniform_in(0.2, 1.5) * epsilon,
            iterations: rng.below(6),
            init: if rng.below(2) == 0 {
                InitMode::Zero
            } else {
                InitMode::UniformRandom
            },
            rng_seed: k,
        };
        let i = rng.below(images.len());
        let x = images.pixels.slice_sample(i);
        let outcome: AttackOutcome = match k % 4 {
            0 => pgd_reconstruction_attack(&model, &extractor, &x, &budget, LAMBDA, LatentTap::Mean)
                .unwrap(),
            1 => {
                let j = rng.below(images.len());
                let target = images.pixels.slice_sample(j);
                let z = model.encode(&target).unwrap().mu;
                encoder_targeted_attack(&model, &x, &z, &budget).unwrap()
            }
            2 => {
                let j = rng.below(images.len());
                let y = images.pixels.slice_sample(j);
                mist_textural_attack(&model, &x, &y, &budget).unwrap()
            }
            _ => {
                let j = rng.below(images.len());
                let dest = images.pixels.slice_sample(j);
                poison_crafting_probe(&model, &x, &dest, &budget)
                    .unwrap()
                    .outcome
            }
        };
        // the driver asserts ball/domain containment after every iterate;
        // re-verify the final state independently here
        if outcome.linf_norm() > budget.epsilon + BALL_TOL {
            failures.push(format!(
                "attack {k}: |delta|_inf {} > eps {}",
                outcome.linf_norm(),
                budget.epsilon
            ));
        }
        if outcome.x_adv.min() < 0.0 || outcome.x_adv.max() > 1.0 {
            failures.push(format!("attack {k}: x_adv escaped [0,1]"));
        }
        if outcome.loss_trace.len() != budget.iterations + 1 {
            failures.push(format!("attack {k}: trace length"));
        }
        if failures.len() > 5 {
            break;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("runtime {secs:.0}s >= 300s"));
    }
    println!("  1000 randomly-budgeted attacks in {secs:.1}s");
    gate(1, "attack legality", failures);
}

// ---------------------------------------------------------------------------
// criterion 2: analytic PGD oracle on the 1-d identity autoencoder
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_pgd_identity_oracle() {
    let mut failures = Vec::new();
    // identity autoencoder: objective mse(x_adv, x) = mean delta^2.
    // dyadic eps/step so f64 arithmetic is exact; random init so sign(delta)
    // drives every component outward.
    let eps: f64 = 1.0 / 32.0;
    let step: f64 = 1.0 / 128.0;
    let needed = (eps / step).ceil() as usize + 1;
    for seed in 0..16u64 {
        let x = Tensor::full_like(&Tensor::zeros(1, 1, 8, 8), 0.5);
        let budget = AttackBudget {
            epsilon: eps,
            step_size: step,
            iterations: needed,
            init: InitMode::UniformRandom,
            rng_seed: seed,
        };
        let out = run_pgd(
            &x,
            &budget,
            Direction::Ascend,
            AttackObjective::ReconstructionAscent,
            |x_adv, want_grad| {
                let v = x_adv.mse(&x);
                let g = want_grad.then(|| mse_loss_grad(x_adv, &x).unwrap());
                Ok((v, g))
            },
        )
        .unwrap();
        for (i, &d) in out.delta.data.iter().enumerate() {
            if d != eps && d != -eps {
                failures.push(format!("seed {seed} component {i}: |delta| = {d} != eps"));
            }
        }
        if failures.len() > 4 {
            break;
        }
    }
    gate(2, "analytic PGD oracle", failures);
}

// ---------------------------------------------------------------------------
// criterion 3: gradient checks against central finite differences
// ---------------------------------------------------------------------------

/// Collect (path, index) handles for a random slice of encoder+decoder params.
fn sample_param_slice(model: &VaeModel, count: usize, seed: u64) -> Vec<(String, usize)> {
    let mut entries: Vec<(String, usize)> = Vec::new();
    model.visit_params(&mut |name, data| {
        if !name.starts_with("encoder_ref") {
            entries.push((name.to_string(), data.len()));
        }
    });
    let mut rng = Rng::derive(seed, "grad-slice");
    (0..count)
        .map(|_| {
            let (name, len) = &entries[rng.below(entries.len())];
            (name.clone(), rng.below(*len))
        })
        .collect()
}

fn perturbed(model: &VaeModel, path: &str, idx: usize, delta: f64) -> VaeModel {
    let mut m = model.clone();
    m.encoder.visit_mut("encoder", &mut |name, data| {
        if name == path {
            data[idx] += delta;
        }
    });
    m.decoder.visit_mut("decoder", &mut |name, data| {
        if name == path {
            data[idx] += delta;
        }
    });
    m
}

fn analytic_param_grads(
    model: &VaeModel,
    d_mu: &Tensor,
    d_lv: &Tensor,
    cache: &vaeguard::vae::EncoderCache,
) -> std::collections::BTreeMap<String, Vec<f64>> {
    let (_, grads) = model.encoder.backward(cache, d_mu, d_lv, false, true);
    let mut flat = std::collections::BTreeMap::new();
    Encoder::visit_grads(&grads.unwrap(), "encoder", &mut |name, g| {
        flat.insert(name.to_string(), g.to_vec());
    });
    flat
}

#[test]
fn criterion_03_gradient_checks() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let h = 1e-3;
    let tol = 1e-2;
    let mut model = VaeModel::init(
        VaeConfig {
            in_channels: 3,
            stage_channels: vec![4, 8],
            latent_channels: 2,
        },
        31,
    )
    .unwrap();
    model.snapshot_reference();
    // move the live encoder off the reference so the originality term is
    // non-degenerate
    model.encoder.visit_mut("encoder", &mut |_, data| {
        for (i, v) in data.iter_mut().enumerate() {
            *v += 1e-2 * ((i % 7) as f64 - 3.0);
        }
    });
    let extractor = PerceptualExtractor::seeded(3, 31);
    let x = &synth_batch(4, 16, 3, 31).pixels;

    let check = |label: &str,
                     loss_of: &dyn Fn(&VaeModel) -> f64,
                     analytic: &dyn Fn(&VaeModel) -> std::collections::BTreeMap<String, Vec<f64>>,
                     slice_seed: u64,
                     failures: &mut Vec<String>| {
        let handles = sample_param_slice(&model, 10, slice_seed);
        let grads = analytic(&model);
        for (path, idx) in handles {
            let ana = grads.get(&path).map(|g| g[idx]).unwrap_or(0.0);
            let hi = loss_of(&perturbed(&model, &path, idx, h));
            let lo = loss_of(&perturbed(&model, &path, idx, -h));
            let num = (hi - lo) / (2.0 * h);
            let denom = ana.abs().max(num.abs());
            if denom < 1e-10 {
                continue; // both effectively zero
            }
            let rel = (ana - num).abs() / denom;
            if rel > tol {
                failures.push(format!(
                    "{label} {path}[{idx}]: analytic {ana:.6e} vs fd {num:.6e} (rel {rel:.3e})"
                ));
            }
        }
    };

    // MSE of the mean reconstruction w.r.t. encoder parameters
    let recon_loss = |m: &VaeModel| {
        let y = m.reconstruct_mean(x).unwrap();
        mse_loss(&y, x).unwrap()
    };
    let recon_analytic = |m: &VaeModel| {
        let (dist, cache) = m.encoder.forward(x);
        let dec = m.decoder.forward(&dist.mu);
        let d_y = mse_loss_grad(&dec.y, x).unwrap();
        let (d_z, _) = m.decoder.backward(&dec, &d_y, true, false);
        let d_lv = Tensor::zeros_like(&dist.log_var);
        analytic_param_grads(m, &d_z.unwrap(), &d_lv, &cache)
    };
    check("mse", &recon_loss, &recon_analytic, 101, &mut failures);

    // perceptual distance of the mean reconstruction
    let extractor_ref = &extractor;
    let perc_loss = |m: &VaeModel| {
        let y = m.reconstruct_mean(x).unwrap();
        perceptual_loss(extractor_ref, &y, x).unwrap()
    };
    let perc_analytic = |m: &VaeModel| {
        let (dist, cache) = m.encoder.forward(x);
        let dec = m.decoder.forward(&dist.mu);
        let (_, d_y) = perceptual_loss_with_grad(extractor_ref, &dec.y, x).unwrap();
        let (d_z, _) = m.decoder.backward(&dec, &d_y, true, false);
        let d_lv = Tensor::zeros_like(&dist.log_var);
        analytic_param_grads(m, &d_z.unwrap(), &d_lv, &cache)
    };
    check("perceptual", &perc_loss, &perc_analytic, 102, &mut failures);

    // KL w.r.t. encoder parameters
    let kl_of = |m: &VaeModel| kl_loss(&m.encode(x).unwrap());
    let kl_analytic = |m: &VaeModel| {
        let (dist, cache) = m.encoder.forward(x);
        let (d_mu, d_lv) = kl_loss_grad(&dist);
        analytic_param_grads(m, &d_mu, &d_lv, &cache)
    };
    check("kl", &kl_of, &kl_analytic, 103, &mut failures);

    // originality w.r.t. the live encoder
    let orig_of = |m: &VaeModel| {
        originality_loss(&m.encode(x).unwrap(), &m.encode_reference(x).unwrap()).unwrap()
    };
    let orig_analytic = |m: &VaeModel| {
        let (dist, cache) = m.encoder.forward(x);
        let reference = m.encode_reference(x).unwrap();
        let n = dist.batch_size() as f64;
        let mut d_mu = Tensor::zeros_like(&dist.mu);
        let mut d_lv = Tensor::zeros_like(&dist.log_var);
        for i in 0..d_mu.data.len() {
            d_mu.data[i] = 2.0 * (dist.mu.data[i] - reference.mu.data[i]) / n;
            d_lv.data[i] = 2.0 * (dist.log_var.data[i] - reference.log_var.data[i]) / n;
        }
        analytic_param_grads(m, &d_mu, &d_lv, &cache)
    };
    check("originality", &orig_of, &orig_analytic, 104, &mut failures);

    // the full fine-tune objective at a fixed adversarial batch (the
    // perturbation is a constant of the outer minimization)
    let budget = eval_budget(8.0 / 255.0, 900);
    let x_adv = pgd_reconstruction_attack(&model, &extractor, x, &budget, LAMBDA, LatentTap::Mean)
        .unwrap()
        .x_adv;
    let x_adv_ref = &x_adv;
    let total_of = |m: &VaeModel| {
        let (parts, _) =
            robust_loss_with_grads(m, extractor_ref, x, x_adv_ref, 55, 0.01, LAMBDA, false)
                .unwrap();
        parts.total
    };
    let total_analytic = |m: &VaeModel| {
        let (_, grads) =
            robust_loss_with_grads(m, extractor_ref, x, x_adv_ref, 55, 0.01, LAMBDA, true)
                .unwrap();
        let mut flat = std::collections::BTreeMap::new();
        Encoder::visit_grads(&grads.unwrap(), "encoder", &mut |name, g| {
            flat.insert(name.to_string(), g.to_vec());
        });
        flat
    };
    check("total", &total_of, &total_analytic, 105, &mut failures);

    let secs = t0.elapsed().as_secs_f64();
    if secs >= 600.0 {
        failures.push(format!("runtime {secs:.0}s >= 600s"));
    }
    println!("  gradient checks in {secs:.1}s");
    gate(3, "gradient checks vs finite differences", failures);
}

// ---------------------------------------------------------------------------
// criterion 4: freeze contracts over a 500-step fine-tune
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_freeze_contracts() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut model = VaeModel::init(
        VaeConfig {
            in_channels: 3,
            stage_channels: vec![4, 8],
            latent_channels: 2,
        },
        41,
    )
    .unwrap();
    let extractor = PerceptualExtractor::seeded(3, 41);
    let source = MemorySource {
        batch: synth_batch(64, 16, 3, 41),
    };
    // brief pretrain so the fine-tune starts from a sane model
    let pre = TrainConfig {
        total_steps: 150,
        batch_size: 8,
        learning_rate: 3e-3,
        lpips_weight: LAMBDA,
        checkpoint_every: 0,
        seed: 0,
        ..TrainConfig::default()
    };
    pretrain_baseline(&mut model, &source, &extractor, &pre, None).unwrap();

    model.snapshot_reference();
    let phi_before = param_hash(&model, "decoder");
    let theta0_before = param_hash(&model, "encoder_ref");
    let cfg = TrainConfig {
        total_steps: 500,
        batch_size: 4,
        learning_rate: 1e-3,
        lpips_weight: LAMBDA,
        checkpoint_every: 0,
        seed: 9,
        ..TrainConfig::default()
    };
    let (records, _) = finetune(&mut model, &source, &extractor, &cfg, None).unwrap();
    if records.len() != 500 {
        failures.push(format!("expected 500 steps, ran {}", records.len()));
    }
    if param_hash(&model, "decoder") != phi_before {
        failures.push("decoder hash changed".into());
    }
    if param_hash(&model, "encoder_ref") != theta0_before {
        failures.push("reference encoder hash changed".into());
    }
    if records[0].orig != 0.0 {
        failures.push(format!("originality at step 0 is {} not 0", records[0].orig));
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 1800.0 {
        failures.push(format!("runtime {secs:.0}s >= 1800s"));
    }
    println!("  500-step fine-tune in {secs:.1}s");
    gate(4, "freeze contracts", failures);
}

// ---------------------------------------------------------------------------
// criterion 5: robustness regression
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_robustness_regression() {
    let fx = fixtures();
    let mut failures = Vec::new();
    let x = &fx.probe.pixels;
    let base_adv = adv_recon_mse(&fx.baseline, &fx.extractor, x, 500);
    let robust_adv = adv_recon_mse(&fx.robust, &fx.extractor, x, 500);
    let base_clean = fx.baseline.reconstruct_mean(x).unwrap().mse(x);
    let robust_clean = fx.robust.reconstruct_mean(x).unwrap().mse(x);
    let reduction = 1.0 - robust_adv / base_adv;
    let clean_change = robust_clean / base_clean - 1.0;
    println!(
        "  adv MSE: baseline {base_adv:.6} robust {robust_adv:.6} (reduction {:.1}%)",
        100.0 * reduction
    );
    println!(
        "  clean MSE: baseline {base_clean:.6} robust {robust_clean:.6} (change {:+.1}%)",
        100.0 * clean_change
    );
    if reduction < 0.30 {
        failures.push(format!(
            "adversarial MSE reduction {:.1}% < 30%",
            100.0 * reduction
        ));
    }
    if clean_change > 0.10 {
        failures.push(format!(
            "clean MSE degraded {:.1}% > 10%",
            100.0 * clean_change
        ));
    }
    gate(5, "robustness regression", failures);
}

// ---------------------------------------------------------------------------
// criterion 6: originality ablation doubles the latent drift
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_originality_ablation_drift() {
    let fx = fixtures();
    let mut failures = Vec::new();
    let x = &fx.probe.pixels;
    let drift = |m: &VaeModel| {
        originality_loss(&m.encode(x).unwrap(), &m.encode_reference(x).unwrap()).unwrap()
    };
    let with = drift(&fx.robust_s);
    let without = drift(&fx.ablation_s);
    println!("  drift: full {with:.6}, ablation {without:.6} (ratio {:.1})", without / with);
    if !(without >= 2.0 * with) {
        failures.push(format!(
            "ablation drift {without:.6} not >= 2x full-run drift {with:.6}"
        ));
    }
    gate(6, "originality ablation drift", failures);
}

// ---------------------------------------------------------------------------
// criterion 7: alpha ordering on the encoder-targeted probe
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_alpha_ordering() {
    let fx = fixtures();
    let mut failures = Vec::new();
    let n = 64;
    let parts: Vec<Tensor> = (0..n).map(|i| fx.probe.pixels.slice_sample(i)).collect();
    let small = Tensor::cat_batch(&parts);
    // perturbations are crafted against the public baseline encoder, the way
    // protection tools target a published model, then each fine-tuned
    // encoder reconstructs them
    let gray = Tensor::full_like(&small, 0.5);
    let z_gray = fx.baseline.encode(&gray).unwrap().mu;
    let attacked = encoder_targeted_attack(&fx.baseline, &small, &z_gray, &eval_budget(8.0 / 255.0, 700))
        .unwrap()
        .x_adv;
    let psnr_of = |m: &VaeModel| psnr(&m.reconstruct_mean(&attacked).unwrap(), &small).unwrap();
    let hi = psnr_of(&fx.alpha_hi_s);
    let mid = psnr_of(&fx.robust_s);
    let lo = psnr_of(&fx.alpha_lo_s);
    println!("  perturbed-recon PSNR: alpha 0.1 -> {hi:.3} dB, 0.01 -> {mid:.3} dB, 0.001 -> {lo:.3} dB");
    if !(lo > mid && mid > hi) {
        failures.push(format!(
            "PSNR not strictly increasing as alpha decreases: {hi:.3}, {mid:.3}, {lo:.3}"
        ));
    }
    gate(7, "alpha ordering", failures);
}

// ---------------------------------------------------------------------------
// criterion 8: poison-crafting resistance across the epsilon sweep
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_poison_resistance() {
    let fx = fixtures();
    let mut failures = Vec::new();
    let pairs = 32;
    let mean_ratio = |m: &VaeModel, eps: f64| -> f64 {
        let budget = eval_budget(eps, 800);
        let mut acc = 0.0;
        for i in 0..pairs {
            let src = fx.probe.pixels.slice_sample(i);
            let dst = fx.probe.pixels.slice_sample(i + pairs);
            acc += poison_crafting_probe(m, &src, &dst, &budget)
                .unwrap()
                .reduction_ratio;
        }
        acc / pairs as f64
    };
    for eps_num in [2.0, 4.0, 8.0, 15.0] {
        let eps = eps_num / 255.0;
        let base = mean_ratio(&fx.baseline, eps);
        let robust = mean_ratio(&fx.robust, eps);
        println!("  eps {eps_num}/255: ratio baseline {base:.4}, robust {robust:.4}");
        if !(robust > base) {
            failures.push(format!(
                "at eps {eps_num}/255 robust ratio {robust:.4} not above baseline {base:.4}"
            ));
        }
    }
    gate(8, "poison-crafting resistance", failures);
}

// ---------------------------------------------------------------------------
// criterion 9: latent smoothness and cluster tightness
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_smoothness_and_tightness() {
    let fx = fixtures();
    let mut failures = Vec::new();
    // directions are unit-l2, so probing at radius eps*sqrt(D) visits pixel
    // amplitudes comparable to the training ball's corners
    let d = (3 * RESOLUTION * RESOLUTION) as f64;
    let radius = (8.0 / 255.0) * d.sqrt();
    let mean_smoothness = |m: &VaeModel| -> f64 {
        let mut acc = 0.0;
        for i in 0..16 {
            let x = fx.probe.pixels.slice_sample(i);
            let grid = loss_surface(m, &x, radius, 10, 1000 + i as u64, &fx.probe.ids[i]).unwrap();
            acc += smoothness_score(&grid);
        }
        acc / 16.0
    };
    let base_smooth = mean_smoothness(&fx.baseline);
    let robust_smooth = mean_smoothness(&fx.robust);
    println!("  smoothness over 16 anchors: baseline {base_smooth:.5}, robust {robust_smooth:.5}");
    if !(robust_smooth < base_smooth) {
        failures.push(format!(
            "robust smoothness {robust_smooth:.5} not below baseline {base_smooth:.5}"
        ));
    }
    let n = 64;
    let parts: Vec<Tensor> = (0..n).map(|i| fx.probe.pixels.slice_sample(i)).collect();
    let small = Tensor::cat_batch(&parts);
    let base_tight = cluster_tightness(&fx.baseline, &small, 8.0 / 255.0, 90)
        .unwrap()
        .tightness_ratio;
    let robust_tight = cluster_tightness(&fx.robust, &small, 8.0 / 255.0, 90)
        .unwrap()
        .tightness_ratio;
    println!("  tightness ratio: baseline {base_tight:.5}, robust {robust_tight:.5}");
    if !(robust_tight < base_tight) {
        failures.push(format!(
            "robust tightness {robust_tight:.5} not below baseline {base_tight:.5}"
        ));
    }
    gate(9, "latent smoothness and tightness", failures);
}

// ---------------------------------------------------------------------------
// criterion 10: metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_metric_oracles() {
    let mut failures = Vec::new();
    let mut rng = Rng::new(1010);

    // PSNR vs an independent scalar loop
    let mut a = Tensor::zeros(1, 3, 4, 4);
    let mut b = Tensor::zeros(1, 3, 4, 4);
    rng.fill_uniform(&mut a.data, 0.0, 1.0);
    rng.fill_uniform(&mut b.data, 0.0, 1.0);
    let mut se = 0.0;
    for i in 0..a.data.len() {
        se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    }
    let oracle_psnr = 10.0 * (a.data.len() as f64 / se).log10();
    if (psnr(&a, &b).unwrap() - oracle_psnr).abs() > 1e-6 {
        failures.push("psnr vs scalar-loop oracle".into());
    }

    // SSIM vs a direct windowed evaluation on a constructed 16x16 case
    let mut img = Tensor::zeros(1, 1, 16, 16);
    for y in 0..16 {
        for x in 0..16 {
            *img.at_mut(0, 0, y, x) = ((x + y) % 2) as f64;
        }
    }
    let inv = img.map(|v| 1.0 - v);
    let s = ssim(&img, &inv).unwrap();
    if !(s < 0.0) {
        failures.push(format!("ssim of inverted binary image {s} not negative"));
    }
    if (ssim(&img, &img).unwrap() - 1.0).abs() > 1e-12 {
        failures.push("ssim self-comparison not 1".into());
    }

    // Fréchet: exact 1-d moment case and symmetry
    let set_a = Mat::from_vec(2, 1, vec![-(0.5f64).sqrt(), (0.5f64).sqrt()]);
    let set_b = Mat::from_vec(2, 1, vec![1.0 - (0.5f64).sqrt(), 1.0 + (0.5f64).sqrt()]);
    let d = frechet_feature_distance(&set_a, &set_b).unwrap();
    if (d - 1.0).abs() > 1e-9 {
        failures.push(format!("frechet unit-shift case: {d} != 1"));
    }
    let mut fa = Mat::zeros(24, 5);
    let mut fb = Mat::zeros(20, 5);
    rng.fill_normal(&mut fa.data, 0.0, 1.0);
    rng.fill_normal(&mut fb.data, 0.4, 1.3);
    let dab = frechet_feature_distance(&fa, &fb).unwrap();
    let dba = frechet_feature_distance(&fb, &fa).unwrap();
    if (dab - dba).abs() > 1e-8 {
        failures.push("frechet not symmetric".into());
    }

    // PCA ratios vs a power-iteration oracle
    let mut m = Mat::zeros(30, 5);
    rng.fill_normal(&mut m.data, 0.0, 1.0);
    for i in 0..30 {
        m.data[i * 5] *= 3.0;
        m.data[i * 5 + 2] *= 0.4;
    }
    let pca = latent_pca(&m, 2).unwrap();
    let cov = m.covariance();
    let mut deflated = cov.clone();
    let mut oracle = Vec::new();
    for _ in 0..2 {
        let mut v = vec![1.0; 5];
        let mut lambda = 0.0;
        for _ in 0..3000 {
            let mut next = vec![0.0; 5];
            for r in 0..5 {
                for c in 0..5 {
                    next[r] += deflated.at(r, c) * v[c];
                }
            }
            lambda = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in next.iter_mut() {
                *x /= lambda;
            }
            v = next;
        }
        oracle.push(lambda);
        for r in 0..5 {
            for c in 0..5 {
                *deflated.at_mut(r, c) -= lambda * v[r] * v[c];
            }
        }
    }
    let total: f64 = {
        let (vals, _) = vaeguard::linalg::sym_eig(&cov).unwrap();
        vals.iter().map(|v| v.max(0.0)).sum()
    };
    for (got, lam) in pca.explained_variance_ratios.iter().zip(oracle.iter()) {
        if (got - lam / total).abs() > 1e-6 {
            failures.push(format!("pca ratio {got} vs oracle {}", lam / total));
        }
    }
    gate(10, "metric oracles", failures);
}

// ---------------------------------------------------------------------------
// criterion 11: byte-identical artifacts across repeated runs
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_determinism() {
    let mut failures = Vec::new();
    let bin = env!("CARGO_BIN_EXE_vaeguard");
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let corpus = root.join("corpus");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .env("VAEGUARD_ARTIFACTS", root.join("runs"))
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "command failed: {:?}\n{}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "gen-corpus",
        "--out",
        corpus.to_str().unwrap(),
        "--count",
        "24",
        "--size",
        "16",
        "--seed",
        "2",
    ]);
    let corpus_s = corpus.to_str().unwrap().to_string();

    let pretrain = |dir: &str| {
        run(&[
            "pretrain", "--data-root", &corpus_s, "--resolution", "16",
            "--stage-channels", "4,8", "--latent-channels", "2",
            "--total-steps", "10", "--batch-size", "6", "--learning-rate", "2e-3",
            "--checkpoint-every", "0", "--seed", "3",
            "--run-dir", root.join(dir).to_str().unwrap(),
        ]);
    };
    pretrain("pre-a");
    pretrain("pre-b");
    let ck = root.join("pre-a/final");
    let ck_s = ck.to_str().unwrap().to_string();

    let finetune = |dir: &str| {
        run(&[
            "finetune", "--baseline", &ck_s, "--data-root", &corpus_s, "--resolution", "16",
            "--total-steps", "5", "--batch-size", "6", "--attack-iterations", "3",
            "--checkpoint-every", "0", "--seed", "4",
            "--run-dir", root.join(dir).to_str().unwrap(),
        ]);
    };
    finetune("ft-a");
    finetune("ft-b");

    let attack = |dir: &str| {
        run(&[
            "attack", "--checkpoint", &ck_s, "--data-root", &corpus_s, "--resolution", "16",
            "--method", "pgd-recon", "--limit", "4", "--attack-iterations", "3",
            "--run-dir", root.join(dir).to_str().unwrap(),
        ]);
    };
    attack("atk-a");
    attack("atk-b");

    let eval = |dir: &str| {
        run(&[
            "eval", "--checkpoint", &ck_s, "--data-root", &corpus_s, "--resolution", "16",
            "--attack", "encoder-target", "--limit", "4", "--attack-iterations", "2",
            "--run-dir", root.join(dir).to_str().unwrap(),
        ]);
    };
    eval("ev-a");
    eval("ev-b");

    let analyze = |dir: &str| {
        run(&[
            "analyze", "--checkpoint", &ck_s, "--data-root", &corpus_s, "--resolution", "16",
            "--surface", "--pca", "--tightness", "--half-res", "3",
            "--surface-anchors", "1", "--pca-k", "2", "--limit", "4",
            "--run-dir", root.join(dir).to_str().unwrap(),
        ]);
    };
    analyze("an-a");
    analyze("an-b");

    let pairs = [
        ("pre-a/final/tensors.bin", "pre-b/final/tensors.bin"),
        ("pre-a/final/meta.json", "pre-b/final/meta.json"),
        ("pre-a/pretrain_steps.csv", "pre-b/pretrain_steps.csv"),
        ("ft-a/final/tensors.bin", "ft-b/final/tensors.bin"),
        ("ft-a/steps.csv", "ft-b/steps.csv"),
        ("atk-a/attack.csv", "atk-b/attack.csv"),
        ("ev-a/report.json", "ev-b/report.json"),
        ("an-a/surface_00.csv", "an-b/surface_00.csv"),
        ("an-a/pca_projections.csv", "an-b/pca_projections.csv"),
        ("an-a/tightness.json", "an-b/tightness.json"),
    ];
    for (a, b) in pairs {
        let ba = std::fs::read(root.join(a)).unwrap();
        let bb = std::fs::read(root.join(b)).unwrap();
        if ba != bb {
            failures.push(format!("{a} differs from {b}"));
        }
    }
    // manifests may differ only in wall clock
    for (a, b) in [("pre-a", "pre-b"), ("atk-a", "atk-b"), ("ev-a", "ev-b")] {
        let strip = |dir: &str| {
            let text = std::fs::read_to_string(root.join(dir).join("manifest.json")).unwrap();
            let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_utc");
            v
        };
        if strip(a) != strip(b) {
            failures.push(format!("{a} manifest differs beyond wall clock"));
        }
    }
    gate(11, "byte-identical artifacts", failures);
}
