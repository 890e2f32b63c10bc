//! Fixture calibration: trains the full baseline/robust/ablation/alpha-sweep
//! chain at acceptance scale and prints every statistic the acceptance
//! criteria assert on, so thresholds can be locked against a validated run.

use std::time::Instant;

use vaeguard::analysis::{cluster_tightness, latent_mu_rows, loss_surface, smoothness_score};
use vaeguard::attacks::{
    encoder_targeted_attack, pgd_reconstruction_attack, poison_crafting_probe, AttackBudget,
    InitMode, LatentTap,
};
use vaeguard::data::{synth_batch, MemorySource};
use vaeguard::metrics::psnr;
use vaeguard::perceptual::PerceptualExtractor;
use vaeguard::tensor::Tensor;
use vaeguard::trainer::{finetune, pretrain_baseline, TrainConfig};
use vaeguard::vae::{VaeConfig, VaeModel};

fn main() {
    let t0 = Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let pre_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let ft_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(350);
    let ft_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let latent_ch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let pre_lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let lambda: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let full_sweep: bool = args.get(7).map(|s| s == "sweep").unwrap_or(true);

    let corpus = synth_batch(2000, 32, 3, 42);
    let probe = {
        let hold = synth_batch(256, 32, 3, 43);
        hold
    };
    let source = MemorySource {
        batch: corpus.clone(),
    };
    let arch = VaeConfig {
        in_channels: 3,
        stage_channels: vec![8, 16, 32],
        latent_channels: latent_ch,
    };
    let extractor = PerceptualExtractor::seeded(3, 7777);

    let pre_cfg = TrainConfig {
        total_steps: pre_steps,
        batch_size: 20,
        learning_rate: pre_lr,
        orig_weight: 0.0,
        lpips_weight: lambda,
        checkpoint_every: 0,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut baseline = VaeModel::init(arch.clone(), 11).unwrap();
    let (pre_records, _) = pretrain_baseline(&mut baseline, &source, &extractor, &pre_cfg, None).unwrap();
    println!(
        "[{:.0}s] pretrain {} steps: loss {:.5} -> {:.5}",
        t0.elapsed().as_secs_f64(),
        pre_records.len(),
        pre_records[0].total,
        pre_records.last().unwrap().total
    );
    let clean_base = baseline
        .reconstruct_mean(&probe.pixels)
        .unwrap()
        .mse(&probe.pixels);
    let mean_img = {
        // constant predictor oracle
        let mut m = Tensor::zeros(1, 3, 32, 32);
        for i in 0..corpus.pixels.n {
            let s = corpus.pixels.slice_sample(i);
            m.add_assign(&s);
        }
        m.scale(1.0 / corpus.pixels.n as f64);
        m
    };
    let mut const_mse = 0.0;
    for i in 0..probe.pixels.n {
        const_mse += probe.pixels.slice_sample(i).mse(&mean_img);
    }
    const_mse /= probe.pixels.n as f64;
    println!("clean MSE baseline {clean_base:.6} vs constant-predictor {const_mse:.6}");

    let mk_ft = |alpha: f64, seed: u64| TrainConfig {
        total_steps: ft_steps,
        batch_size: 20,
        learning_rate: ft_lr,
        orig_weight: alpha,
        lpips_weight: lambda,
        checkpoint_every: 0,
        seed,
        ..TrainConfig::default()
    };
    let train = |alpha: f64, seed: u64| -> VaeModel {
        let mut m = baseline.clone();
        let cfg = mk_ft(alpha, seed);
        let (recs, _) = finetune(&mut m, &source, &extractor, &cfg, None).unwrap();
        println!(
            "[{:.0}s] finetune alpha={alpha}: total {:.5} -> {:.5} (orig {:.6}, attack_gain {:.5})",
            t0.elapsed().as_secs_f64(),
            recs[0].total,
            recs.last().unwrap().total,
            recs.last().unwrap().orig,
            recs.last().unwrap().attack_gain,
        );
        m
    };
    let robust = train(0.01, 1);
    let (ablation, alpha_hi, alpha_lo) = if full_sweep {
        (Some(train(0.0, 2)), Some(train(0.1, 3)), Some(train(0.001, 4)))
    } else {
        (None, None, None)
    };

    let budget = AttackBudget {
        epsilon: 8.0 / 255.0,
        step_size: 0.02,
        iterations: 10,
        init: InitMode::Zero,
        rng_seed: 99,
    };

    // criterion 5: adversarial + clean reconstruction
    let adv_mse = |m: &VaeModel| -> f64 {
        let out = pgd_reconstruction_attack(
            m,
            &extractor,
            &probe.pixels,
            &budget,
            lambda,
            LatentTap::Mean,
        )
        .unwrap();
        m.reconstruct_mean(&out.x_adv).unwrap().mse(&probe.pixels)
    };
    let base_adv = adv_mse(&baseline);
    let rob_adv = adv_mse(&robust);
    let rob_clean = robust
        .reconstruct_mean(&probe.pixels)
        .unwrap()
        .mse(&probe.pixels);
    println!(
        "[c5] adv_mse baseline {base_adv:.6} robust {rob_adv:.6} (reduction {:.1}%)",
        100.0 * (1.0 - rob_adv / base_adv)
    );
    println!(
        "[c5] clean baseline {clean_base:.6} robust {rob_clean:.6} (change {:+.1}%)",
        100.0 * (rob_clean / clean_base - 1.0)
    );

    // criterion 6: drift
    let drift = |m: &VaeModel| {
        let cur = m.encode(&probe.pixels).unwrap();
        let reference = m.encode_reference(&probe.pixels).unwrap();
        vaeguard::trainer::originality_loss(&cur, &reference).unwrap()
    };
    if let Some(ablation) = &ablation {
        println!(
            "[c6] drift ablation {:.6} robust {:.6} (ratio {:.2})",
            drift(ablation),
            drift(&robust),
            drift(ablation) / drift(&robust)
        );
    }

    // criterion 7: PSNR ordering on a baseline-crafted encoder-target probe
    let small = {
        let n = 64.min(probe.pixels.n);
        let parts: Vec<Tensor> = (0..n).map(|i| probe.pixels.slice_sample(i)).collect();
        Tensor::cat_batch(&parts)
    };
    if let (Some(alpha_hi), Some(alpha_lo)) = (&alpha_hi, &alpha_lo) {
        let gray = Tensor::full_like(&small, 0.5);
        let z_gray = baseline.encode(&gray).unwrap().mu;
        let attacked = encoder_targeted_attack(&baseline, &small, &z_gray, &budget)
            .unwrap()
            .x_adv;
        let psnr_of =
            |m: &VaeModel| psnr(&m.reconstruct_mean(&attacked).unwrap(), &small).unwrap();
        println!(
            "[c7] perturbed psnr alpha 0.1 {:.3} | 0.01 {:.3} | 0.001 {:.3}",
            psnr_of(alpha_hi),
            psnr_of(&robust),
            psnr_of(alpha_lo)
        );
    }

    // criterion 8: poison ratios per epsilon
    for eps_num in [2.0, 4.0, 8.0, 15.0] {
        let b = AttackBudget {
            epsilon: eps_num / 255.0,
            ..budget.clone()
        };
        let ratio = |m: &VaeModel| -> f64 {
            let mut acc = 0.0;
            let n = 32;
            for i in 0..n {
                let src = probe.pixels.slice_sample(i);
                let dst = probe.pixels.slice_sample(i + n);
                acc += poison_crafting_probe(m, &src, &dst, &b).unwrap().reduction_ratio;
            }
            acc / n as f64
        };
        println!(
            "[c8] eps {eps_num}/255 ratio baseline {:.4} robust {:.4}",
            ratio(&baseline),
            ratio(&robust)
        );
    }

    // criterion 9: smoothness at several probe radii (unit-l2 directions, so
    // radius eps*sqrt(D) matches the l-inf ball's corner distance)
    let smooth = |m: &VaeModel, radius: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..16 {
            let x = probe.pixels.slice_sample(i);
            let g = loss_surface(m, &x, radius, 10, 1000 + i as u64, "a").unwrap();
            acc += smoothness_score(&g);
        }
        acc / 16.0
    };
    let d_sqrt = (3.0 * 32.0 * 32.0_f64).sqrt();
    for radius in [8.0 / 255.0, 0.5, (8.0 / 255.0) * d_sqrt, 3.0] {
        println!(
            "[c9] radius {radius:.3}: smoothness baseline {:.4} robust {:.4}",
            smooth(&baseline, radius),
            smooth(&robust, radius)
        );
    }
    let tight = |m: &VaeModel| {
        cluster_tightness(m, &small, 8.0 / 255.0, 5)
            .unwrap()
            .tightness_ratio
    };
    println!(
        "[c9] tightness baseline {:.4} robust {:.4}",
        tight(&baseline),
        tight(&robust)
    );
    let _ = latent_mu_rows(&baseline, &small).unwrap();

    println!("total: {:.0}s", t0.elapsed().as_secs_f64());
}
