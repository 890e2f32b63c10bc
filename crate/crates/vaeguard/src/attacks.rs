//! Constrained perturbation generation.
//!
//! All four attacks share one projected signed-gradient driver: iterate
//! `delta <- clip_pixel(project_linf(delta +/- step * sign(grad)))` against an
//! objective evaluated at `x + delta`. Objectives differ per attack:
//!
//! - reconstruction ascent: maximize MSE + lambda * perceptual distance of the
//!   autoencoded image against the clean original
//! - encoder-targeted descent: minimize squared latent distance to a target
//! - textural ascent: maximize latent distance from a reference image's latent
//! - poison probe: encoder-targeted descent toward another image's latent,
//!   reported as a gap-reduction ratio
//!
//! Attacks never mutate model parameters and are bit-deterministic for a
//! fixed budget and inputs.

use crate::error::{Error, Result};
use crate::perceptual::{
    perceptual_loss_vs, perceptual_loss_with_grad_vs, PerceptualExtractor, RefFeatures,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vae::{mse_loss_grad, VaeModel};

pub const BALL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Zero,
    UniformRandom,
}

/// l-inf attack budget: ball radius, step size, iteration count, init mode.
#[derive(Debug, Clone)]
pub struct AttackBudget {
    /// l-inf radius in pixel units, in (0, 1).
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub init: InitMode,
    pub rng_seed: u64,
}

impl Default for AttackBudget {
    /// The reference configuration: eps 8/255, 10 iterations, step 0.02.
    fn default() -> Self {
        AttackBudget {
            epsilon: 8.0 / 255.0,
            step_size: 0.02,
            iterations: 10,
            init: InitMode::Zero,
            rng_seed: 0,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if self.step_size <= 0.0 {
            return Err(Error::Config(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Whether the attack encodes through the latent mean or a seeded sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentTap {
    Mean,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackObjective {
    ReconstructionAscent,
    EncoderTargeted,
    TexturalDistance,
}

impl AttackObjective {
    pub fn tag(&self) -> &'static str {
        match self {
            AttackObjective::ReconstructionAscent => "pgd-recon",
            AttackObjective::EncoderTargeted => "encoder-target",
            AttackObjective::TexturalDistance => "mist-textural",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub delta: Tensor,
    pub x_adv: Tensor,
    /// Objective before each step and after the last; length iterations + 1.
    pub loss_trace: Vec<f64>,
    pub objective: AttackObjective,
}

impl AttackOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap()
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.max_abs()
    }
}

/// Componentwise clamp onto the l-inf ball of radius `epsilon`. Idempotent.
pub fn project_linf(delta: &Tensor, epsilon: f64) -> Tensor {
    delta.map(|v| v.clamp(-epsilon, epsilon))
}

fn project_linf_in_place(delta: &mut Tensor, epsilon: f64) {
    delta.clamp_in_place(-epsilon, epsilon);
}

/// sign with sign(0) = 0: stationary components stay put.
#[inline]
fn step_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Whether the signed-gradient step climbs or descends the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

fn check_iterate(x: &Tensor, x_adv: &Tensor, delta: &Tensor, epsilon: f64) {
    assert!(
        delta.max_abs() <= epsilon + BALL_TOL,
        "ball containment violated: |delta|_inf = {} > eps = {epsilon}",
        delta.max_abs()
    );
    assert!(
        x_adv.min() >= 0.0 && x_adv.max() <= 1.0,
        "pixel domain violated: [{}, {}]",
        x_adv.min(),
        x_adv.max()
    );
    debug_assert!(x.same_shape(x_adv));
}

/// The PGD driver every attack shares: iterate a signed-gradient step,
/// project onto the l-inf ball, clip to the pixel domain. Public so custom
/// objectives (oracles, new attacks) can reuse the exact trajectory logic.
/// `objective(x_adv, want_grad)` returns the scalar objective and, when
/// asked, its gradient w.r.t. `x_adv`.
pub fn run_pgd(
    x: &Tensor,
    budget: &AttackBudget,
    direction: Direction,
    objective_tag: AttackObjective,
    mut objective: impl FnMut(&Tensor, bool) -> Result<(f64, Option<Tensor>)>,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let mut delta = match budget.init {
        InitMode::Zero => Tensor::zeros_like(x),
        InitMode::UniformRandom => {
            let mut rng = Rng::derive(budget.rng_seed, "attack-init");
            let mut d = Tensor::zeros_like(x);
            rng.fill_uniform(&mut d.data, -budget.epsilon, budget.epsilon);
            d
        }
    };
    project_linf_in_place(&mut delta, budget.epsilon);
    let mut x_adv = x.add(&delta);
    x_adv.clamp_in_place(0.0, 1.0);
    delta = x_adv.sub(x);
    check_iterate(x, &x_adv, &delta, budget.epsilon);

    let sign_scale = match direction {
        Direction::Ascend => budget.step_size,
        Direction::Descend => -budget.step_size,
    };
    let mut trace = Vec::with_capacity(budget.iterations + 1);
    for iter in 0..budget.iterations {
        let (value, grad) = objective(&x_adv, true)?;
        let grad = grad.expect("gradient requested");
        if !value.is_finite() || !grad.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite attack objective or gradient at iteration {iter}"
            )));
        }
        trace.push(value);
        for i in 0..delta.data.len() {
            delta.data[i] += sign_scale * step_sign(grad.data[i]);
        }
        project_linf_in_place(&mut delta, budget.epsilon);
        x_adv = x.add(&delta);
        x_adv.clamp_in_place(0.0, 1.0);
        delta = x_adv.sub(x);
        check_iterate(x, &x_adv, &delta, budget.epsilon);
    }
    let (final_value, _) = objective(&x_adv, false)?;
    if !final_value.is_finite() {
        return Err(Error::Numerical(
            "non-finite attack objective at final evaluation".into(),
        ));
    }
    trace.push(final_value);
    debug_assert_eq!(trace.len(), budget.iterations + 1);
    Ok(AttackOutcome {
        delta,
        x_adv,
        loss_trace: trace,
        objective: objective_tag,
    })
}

/// Maximizes `MSE(D(E(x+delta)), x) + lambda * perceptual(D(E(x+delta)), x)`
/// by signed gradient ascent with l-inf projection and pixel clipping.
pub fn pgd_reconstruction_attack(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    x: &Tensor,
    budget: &AttackBudget,
    lambda_lpips: f64,
    latent_tap: LatentTap,
) -> Result<AttackOutcome> {
    model.check_spatial(x)?;
    let clean_ref = extractor.reference(x);
    let mut eval_counter: u64 = 0;
    run_pgd(
        x,
        budget,
        Direction::Ascend,
        AttackObjective::ReconstructionAscent,
        |x_adv, want_grad| {
            recon_objective(
                model,
                extractor,
                x_adv,
                x,
                &clean_ref,
                lambda_lpips,
                latent_tap,
                {
                    eval_counter += 1;
                    budget.rng_seed.wrapping_add(eval_counter)
                },
                want_grad,
            )
        },
    )
}

/// The reconstruction-loss objective shared by the attack above and the
/// trainer's inner maximization.
#[allow(clippy::too_many_arguments)]
fn recon_objective(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    x_adv: &Tensor,
    x_clean: &Tensor,
    clean_ref: &RefFeatures,
    lambda: f64,
    latent_tap: LatentTap,
    sample_seed: u64,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let (dist, enc_cache) = model.encoder.forward(x_adv);
    let (z, eta) = match latent_tap {
        LatentTap::Mean => (dist.mu.clone(), None),
        LatentTap::Sample => {
            let (z, eta) = dist.sample_with_noise(sample_seed);
            (z, Some(eta))
        }
    };
    let dec_cache = model.decoder.forward(&z);
    let y = &dec_cache.y;
    let mse = y.mse(x_clean);
    let (lpips, lpips_grad) = if want_grad {
        let (v, g) = perceptual_loss_with_grad_vs(extractor, y, clean_ref)?;
        (v, Some(g))
    } else {
        (perceptual_loss_vs(extractor, y, clean_ref)?, None)
    };
    let value = mse + lambda * lpips;
    if !want_grad {
        return Ok((value, None));
    }
    let mut d_y = mse_loss_grad(y, x_clean)?;
    let mut lg = lpips_grad.unwrap();
    lg.scale(lambda);
    d_y.add_assign(&lg);
    let (d_z, _) = model.decoder.backward(&dec_cache, &d_y, true, false);
    let d_z = d_z.unwrap();
    let (d_mu, d_lv) = match (&eta, latent_tap) {
        (None, _) => (d_z, Tensor::zeros_like(&dist.log_var)),
        (Some(eta), _) => {
            let mut d_lv = Tensor::zeros_like(&dist.log_var);
            for i in 0..d_lv.data.len() {
                d_lv.data[i] =
                    d_z.data[i] * eta.data[i] * 0.5 * (0.5 * dist.log_var.data[i]).exp();
            }
            (d_z, d_lv)
        }
    };
    let (gx, _) = model.encoder.backward(&enc_cache, &d_mu, &d_lv, true, false);
    Ok((value, Some(gx.unwrap())))
}

/// Minimizes the mean squared distance between `E(x+delta)` (latent mean) and
/// a target latent, within the budget ball.
pub fn encoder_targeted_attack(
    model: &VaeModel,
    x: &Tensor,
    z_target: &Tensor,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    model.check_spatial(x)?;
    let probe = model.encode(x)?;
    probe
        .mu
        .require_same_shape(z_target, "encoder_targeted_attack target")?;
    run_pgd(
        x,
        budget,
        Direction::Descend,
        AttackObjective::EncoderTargeted,
        |x_adv, want_grad| {
            let (dist, cache) = model.encoder.forward(x_adv);
            let value = dist.mu.mse(z_target);
            if !want_grad {
                return Ok((value, None));
            }
            let d_mu = mse_loss_grad(&dist.mu, z_target)?;
            let d_lv = Tensor::zeros_like(&dist.log_var);
            let (gx, _) = model.encoder.backward(&cache, &d_mu, &d_lv, true, false);
            Ok((value, Some(gx.unwrap())))
        },
    )
}

/// Maximizes the Euclidean distance between `E(y_target)` and `E(x+delta)`
/// latent means: the textural objective.
pub fn mist_textural_attack(
    model: &VaeModel,
    x: &Tensor,
    y_target: &Tensor,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    x.require_same_shape(y_target, "mist_textural_attack target")?;
    model.check_spatial(x)?;
    let anchor = model.encode(y_target)?.mu;
    run_pgd(
        x,
        budget,
        Direction::Ascend,
        AttackObjective::TexturalDistance,
        |x_adv, want_grad| {
            let (dist, cache) = model.encoder.forward(x_adv);
            let diff = anchor.sub(&dist.mu);
            let value = diff.l2_norm();
            if !want_grad {
                return Ok((value, None));
            }
            // d ||e||/d mu_adv = -e / ||e||; zero when the latents coincide
            let mut d_mu = Tensor::zeros_like(&dist.mu);
            if value > 0.0 {
                for i in 0..d_mu.data.len() {
                    d_mu.data[i] = -diff.data[i] / value;
                }
            }
            let d_lv = Tensor::zeros_like(&dist.log_var);
            let (gx, _) = model.encoder.backward(&cache, &d_mu, &d_lv, true, false);
            Ok((value, Some(gx.unwrap())))
        },
    )
}

/// Result of the poison-crafting probe: how far an eps-bounded attacker can
/// pull a source latent toward a destination latent. Lower ratio means the
/// encoder is easier to poison.
#[derive(Debug, Clone)]
pub struct PoisonProbeReport {
    pub initial_gap: f64,
    pub final_gap: f64,
    /// final_gap / initial_gap; defined as 1.0 when the gap starts at zero.
    pub reduction_ratio: f64,
    pub outcome: AttackOutcome,
}

pub fn poison_crafting_probe(
    model: &VaeModel,
    x_src: &Tensor,
    x_dest: &Tensor,
    budget: &AttackBudget,
) -> Result<PoisonProbeReport> {
    x_src.require_same_shape(x_dest, "poison_crafting_probe")?;
    let z_target = model.encode(x_dest)?.mu;
    let outcome = encoder_targeted_attack(model, x_src, &z_target, budget)?;
    let initial_gap = model.encode(x_src)?.mu.sub(&z_target).l2_norm();
    let final_gap = model.encode(&outcome.x_adv)?.mu.sub(&z_target).l2_norm();
    let reduction_ratio = if initial_gap <= 1e-12 {
        1.0
    } else {
        final_gap / initial_gap
    };
    Ok(PoisonProbeReport {
        initial_gap,
        final_gap,
        reduction_ratio,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::VaeConfig;
    use proptest::prelude::*;

    fn toy_model(seed: u64) -> VaeModel {
        VaeModel::init(
            VaeConfig {
                in_channels: 3,
                stage_channels: vec![4, 8],
                latent_channels: 2,
            },
            seed,
        )
        .unwrap()
    }

    fn toy_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::Rng::new(seed);
        let mut t = Tensor::zeros(n, 3, 16, 16);
        rng.fill_uniform(&mut t.data, 0.05, 0.95);
        t
    }

    #[test]
    fn project_clamps_to_ball() {
        let eps = 8.0 / 255.0;
        let d = Tensor::from_vec(1, 1, 1, 4, vec![0.1, -0.1, 0.01, 0.0]);
        let p = project_linf(&d, eps);
        assert_eq!(p.data, vec![eps, -eps, 0.01, 0.0]);
    }

    #[test]
    fn project_is_idempotent() {
        let mut rng = crate::rng::Rng::new(1);
        let mut d = Tensor::zeros(1, 1, 4, 4);
        rng.fill_normal(&mut d.data, 0.0, 0.2);
        let once = project_linf(&d, 0.05);
        let twice = project_linf(&once, 0.05);
        assert_eq!(once.data, twice.data);
    }

    #[test]
    fn zero_iterations_zero_init_is_exact_noop() {
        let model = toy_model(1);
        let ex = PerceptualExtractor::seeded(3, 1);
        let x = toy_batch(2, 2);
        let budget = AttackBudget {
            iterations: 0,
            ..AttackBudget::default()
        };
        let out =
            pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Mean).unwrap();
        assert!(out.delta.data.iter().all(|&v| v == 0.0));
        assert_eq!(out.x_adv.data, x.data);
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn one_d_identity_oracle_drives_delta_to_ball_surface() {
        // identity autoencoder on scalar inputs: objective mean delta^2.
        // Dyadic eps/step so every arithmetic step is exact in f64.
        let eps: f64 = 1.0 / 32.0;
        let step: f64 = 1.0 / 128.0;
        let n = 64;
        let x = Tensor::full_like(&Tensor::zeros(1, 1, 8, 8), 0.5);
        let needed = (eps / step).ceil() as usize + 1;
        let budget = AttackBudget {
            epsilon: eps,
            step_size: step,
            iterations: needed,
            init: InitMode::UniformRandom,
            rng_seed: 17,
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
        assert_eq!(out.delta.data.len(), n);
        for (i, &d) in out.delta.data.iter().enumerate() {
            assert!(
                d == eps || d == -eps,
                "component {i} did not reach the ball surface: {d}"
            );
        }
        // and the trace is the quadratic ramp: nondecreasing
        for w in out.loss_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn one_d_identity_zero_init_stays_put() {
        // sign(0) = 0: the stationary point at delta = 0 never moves
        let x = Tensor::full_like(&Tensor::zeros(1, 1, 2, 2), 0.5);
        let budget = AttackBudget {
            epsilon: 1.0 / 32.0,
            step_size: 1.0 / 128.0,
            iterations: 5,
            init: InitMode::Zero,
            rng_seed: 0,
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
        assert!(out.delta.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attack_is_deterministic() {
        let model = toy_model(3);
        let ex = PerceptualExtractor::seeded(3, 3);
        let x = toy_batch(1, 4);
        let budget = AttackBudget {
            iterations: 4,
            init: InitMode::UniformRandom,
            rng_seed: 11,
            ..AttackBudget::default()
        };
        let a = pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Mean).unwrap();
        let b = pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Mean).unwrap();
        assert_eq!(a.delta.data, b.delta.data);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn attack_raises_reconstruction_loss() {
        let model = toy_model(5);
        let ex = PerceptualExtractor::seeded(3, 5);
        let x = toy_batch(4, 6);
        let budget = AttackBudget {
            iterations: 6,
            ..AttackBudget::default()
        };
        let out =
            pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Mean).unwrap();
        assert!(out.final_loss() > out.initial_loss());
        assert!(out.linf_norm() <= budget.epsilon + BALL_TOL);
        assert!(out.x_adv.min() >= 0.0 && out.x_adv.max() <= 1.0);
        assert_eq!(out.loss_trace.len(), 7);
    }

    #[test]
    fn encoder_target_at_own_latent_is_stationary() {
        let model = toy_model(7);
        let x = toy_batch(1, 8);
        let z = model.encode(&x).unwrap().mu;
        let budget = AttackBudget {
            iterations: 3,
            ..AttackBudget::default()
        };
        let out = encoder_targeted_attack(&model, &x, &z, &budget).unwrap();
        assert_eq!(out.loss_trace[0], 0.0);
        assert_eq!(out.final_loss(), 0.0);
        assert!(out.delta.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_target_zero_iterations_reports_initial_distance() {
        let model = toy_model(9);
        let x = toy_batch(1, 10);
        let other = toy_batch(1, 11);
        let z = model.encode(&other).unwrap().mu;
        let budget = AttackBudget {
            iterations: 0,
            ..AttackBudget::default()
        };
        let out = encoder_targeted_attack(&model, &x, &z, &budget).unwrap();
        let expect = model.encode(&x).unwrap().mu.mse(&z);
        assert_eq!(out.loss_trace, vec![expect]);
    }

    #[test]
    fn encoder_target_descends_on_most_of_probe() {
        let model = toy_model(13);
        let budget = AttackBudget {
            iterations: 8,
            ..AttackBudget::default()
        };
        let mut improved = 0;
        let total = 24;
        for i in 0..total {
            let x = toy_batch(1, 100 + i);
            let target_img = toy_batch(1, 200 + i);
            let z = model.encode(&target_img).unwrap().mu;
            let out = encoder_targeted_attack(&model, &x, &z, &budget).unwrap();
            if out.final_loss() <= out.initial_loss() {
                improved += 1;
            }
        }
        assert!(
            improved * 10 >= total * 9,
            "descent on only {improved}/{total}"
        );
    }

    #[test]
    fn mist_zero_iterations_on_self_is_zero() {
        let model = toy_model(15);
        let x = toy_batch(1, 16);
        let budget = AttackBudget {
            iterations: 0,
            ..AttackBudget::default()
        };
        let out = mist_textural_attack(&model, &x, &x, &budget).unwrap();
        assert_eq!(out.loss_trace, vec![0.0]);
    }

    #[test]
    fn mist_ascends_on_most_of_probe() {
        let model = toy_model(17);
        let budget = AttackBudget {
            iterations: 8,
            ..AttackBudget::default()
        };
        let mut ascended = 0;
        let total = 24;
        for i in 0..total {
            let x = toy_batch(1, 300 + i);
            let y = toy_batch(1, 400 + i);
            let out = mist_textural_attack(&model, &x, &y, &budget).unwrap();
            if out.final_loss() >= out.initial_loss() {
                ascended += 1;
            }
        }
        assert!(ascended * 10 >= total * 9, "ascent on only {ascended}/{total}");
    }

    #[test]
    fn mist_shape_mismatch_rejected() {
        let model = toy_model(19);
        let x = toy_batch(1, 20);
        let y = Tensor::zeros(1, 3, 8, 8);
        let budget = AttackBudget::default();
        assert!(mist_textural_attack(&model, &x, &y, &budget).is_err());
    }

    #[test]
    fn poison_probe_degenerate_and_noop_cases() {
        let model = toy_model(21);
        let x = toy_batch(1, 22);
        // x_dest == x_src: gap starts at 0, ratio defined as 1.0
        let budget = AttackBudget {
            iterations: 3,
            ..AttackBudget::default()
        };
        let report = poison_crafting_probe(&model, &x, &x, &budget).unwrap();
        assert_eq!(report.initial_gap, 0.0);
        assert_eq!(report.reduction_ratio, 1.0);
        // zero iterations: final == initial -> ratio 1.0
        let other = toy_batch(1, 23);
        let budget0 = AttackBudget {
            iterations: 0,
            ..AttackBudget::default()
        };
        let report = poison_crafting_probe(&model, &x, &other, &budget0).unwrap();
        assert!(report.initial_gap > 0.0);
        assert_eq!(report.reduction_ratio, 1.0);
    }

    #[test]
    fn poison_probe_pulls_latent_closer() {
        let model = toy_model(25);
        let budget = AttackBudget {
            iterations: 10,
            ..AttackBudget::default()
        };
        let mut reduced = 0;
        let total = 12;
        for i in 0..total {
            let src = toy_batch(1, 500 + i);
            let dst = toy_batch(1, 600 + i);
            let report = poison_crafting_probe(&model, &src, &dst, &budget).unwrap();
            assert!(report.reduction_ratio >= 0.0);
            if report.reduction_ratio < 1.0 {
                reduced += 1;
            }
        }
        assert!(reduced * 10 >= total * 9, "reduced on only {reduced}/{total}");
    }

    #[test]
    fn larger_ball_wins_statistically() {
        let model = toy_model(27);
        let ex = PerceptualExtractor::seeded(3, 27);
        let mk = |eps: f64| AttackBudget {
            epsilon: eps,
            iterations: 10,
            step_size: 0.02,
            init: InitMode::Zero,
            rng_seed: 1,
        };
        let total = 32;
        let mut wins = 0;
        for i in 0..total {
            let x = toy_batch(1, 700 + i);
            let big =
                pgd_reconstruction_attack(&model, &ex, &x, &mk(8.0 / 255.0), 1.0, LatentTap::Mean)
                    .unwrap();
            let small =
                pgd_reconstruction_attack(&model, &ex, &x, &mk(2.0 / 255.0), 1.0, LatentTap::Mean)
                    .unwrap();
            if big.final_loss() >= small.final_loss() {
                wins += 1;
            }
        }
        assert!(wins * 100 >= total * 95, "larger ball won only {wins}/{total}");
    }

    #[test]
    fn bad_budgets_rejected() {
        let bad_eps = AttackBudget {
            epsilon: 0.0,
            ..AttackBudget::default()
        };
        assert!(bad_eps.validate().is_err());
        let bad_step = AttackBudget {
            step_size: 0.0,
            ..AttackBudget::default()
        };
        assert!(bad_step.validate().is_err());
    }

    #[test]
    fn sampled_latent_tap_is_reproducible() {
        let model = toy_model(29);
        let ex = PerceptualExtractor::seeded(3, 29);
        let x = toy_batch(1, 30);
        let budget = AttackBudget {
            iterations: 3,
            ..AttackBudget::default()
        };
        let a =
            pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Sample).unwrap();
        let b =
            pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Sample).unwrap();
        assert_eq!(a.delta.data, b.delta.data);
        assert_ne!(
            a.loss_trace,
            pgd_reconstruction_attack(&model, &ex, &x, &budget, 1.0, LatentTap::Mean)
                .unwrap()
                .loss_trace
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_idempotent_and_contained(
            vals in proptest::collection::vec(-1.0f64..1.0, 16),
            eps in 0.001f64..0.5,
        ) {
            let d = Tensor::from_vec(1, 1, 4, 4, vals);
            let p = project_linf(&d, eps);
            prop_assert!(p.max_abs() <= eps);
            let pp = project_linf(&p, eps);
            prop_assert_eq!(p.data, pp.data);
        }

        #[test]
        fn ball_and_domain_hold_for_random_budgets(
            eps in 0.004f64..0.12,
            step_frac in 0.2f64..1.5,
            iters in 0usize..5,
            seed in 0u64..1000,
            random_init in proptest::bool::ANY,
        ) {
            let model = toy_model(31);
            let x = toy_batch(1, seed ^ 0xabc);
            let budget = AttackBudget {
                epsilon: eps,
                step_size: step_frac * eps,
                iterations: iters,
                init: if random_init { InitMode::UniformRandom } else { InitMode::Zero },
                rng_seed: seed,
            };
            let z = model.encode(&toy_batch(1, seed ^ 0xdef)).unwrap().mu;
            let out = encoder_targeted_attack(&model, &x, &z, &budget).unwrap();
            prop_assert!(out.linf_norm() <= eps + BALL_TOL);
            prop_assert!(out.x_adv.min() >= 0.0 && out.x_adv.max() <= 1.0);
            prop_assert_eq!(out.loss_trace.len(), iters + 1);
        }
    }
}
