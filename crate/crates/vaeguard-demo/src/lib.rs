//! Browser playground: a miniature VAE trained live in the page, a baseline
//! and a robust fine-tuned encoder side by side, and three interactive
//! explorers (attack playground, loss-surface heatmap, latent scatter).
//!
//! Everything returns JSON strings; the page's vanilla JS paints canvases.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use vaeguard::analysis::{cluster_tightness, latent_mu_rows, latent_pca, loss_surface, smoothness_score};
use vaeguard::attacks::{pgd_reconstruction_attack, AttackBudget, InitMode, LatentTap};
use vaeguard::data::{synth_batch, ImageBatch, MemorySource};
use vaeguard::perceptual::PerceptualExtractor;
use vaeguard::tensor::Tensor;
use vaeguard::trainer::{finetune, pretrain_baseline, TrainConfig};
use vaeguard::vae::{VaeConfig, VaeModel};

const IMG_SIZE: usize = 16;
const CORPUS: usize = 48;

fn err_to_js(e: vaeguard::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One lab instance: corpus, extractor, baseline model, robust model.
#[wasm_bindgen]
pub struct DemoLab {
    corpus: ImageBatch,
    extractor: PerceptualExtractor,
    baseline: VaeModel,
    robust: Option<VaeModel>,
    seed: u64,
}

#[derive(Serialize)]
struct TrainSummary {
    pretrain_steps: usize,
    finetune_steps: usize,
    pretrain_loss_first: f64,
    pretrain_loss_last: f64,
    finetune_loss_first: f64,
    finetune_loss_last: f64,
}

#[derive(Serialize)]
struct AttackView {
    clean: Vec<u8>,
    adv: Vec<u8>,
    recon_clean: Vec<u8>,
    recon_adv: Vec<u8>,
    size: usize,
    trace: Vec<f64>,
    mse_clean: f64,
    mse_adv: f64,
    linf: f64,
}

#[derive(Serialize)]
struct SurfaceView {
    values: Vec<f64>,
    size: usize,
    smoothness: f64,
    raw_max: f64,
}

#[derive(Serialize)]
struct ScatterView {
    clean: Vec<[f64; 2]>,
    noisy: Vec<[f64; 2]>,
    tightness_ratio: f64,
    mean_pair_dist: f64,
    baseline_spread: f64,
    explained: Vec<f64>,
}

fn to_rgb_bytes(img: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.h * img.w * 3);
    for y in 0..img.h {
        for x in 0..img.w {
            for c in 0..3 {
                let ch = c.min(img.c - 1);
                out.push((img.at(0, ch, y, x) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

#[wasm_bindgen]
impl DemoLab {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> DemoLab {
        let seed = seed as u64;
        let corpus = synth_batch(CORPUS, IMG_SIZE, 3, seed);
        let arch = VaeConfig {
            in_channels: 3,
            stage_channels: vec![6, 12],
            latent_channels: 2,
        };
        let baseline = VaeModel::init(arch, seed ^ 0xbead).expect("valid demo architecture");
        DemoLab {
            corpus,
            extractor: PerceptualExtractor::seeded(3, seed ^ 0xfeed),
            baseline,
            robust: None,
            seed,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus.len()
    }

    /// Pretrain the baseline and fine-tune the robust encoder. Blocking;
    /// a few seconds at demo scale.
    pub fn train(&mut self, pretrain_steps: u32, finetune_steps: u32) -> Result<String, JsValue> {
        let source = MemorySource {
            batch: self.corpus.clone(),
        };
        let pre_cfg = TrainConfig {
            total_steps: pretrain_steps.max(1) as usize,
            batch_size: 8,
            learning_rate: 3e-3,
            orig_weight: 0.0,
            checkpoint_every: 0,
            seed: self.seed,
            ..TrainConfig::default()
        };
        let (pre, _) = pretrain_baseline(&mut self.baseline, &source, &self.extractor, &pre_cfg, None)
            .map_err(err_to_js)?;
        let ft_cfg = TrainConfig {
            total_steps: finetune_steps.max(1) as usize,
            batch_size: 8,
            learning_rate: 1e-3,
            checkpoint_every: 0,
            seed: self.seed ^ 1,
            attack: AttackBudget {
                iterations: 5,
                ..AttackBudget::default()
            },
            ..TrainConfig::default()
        };
        let mut robust = self.baseline.clone();
        let (ft, _) =
            finetune(&mut robust, &source, &self.extractor, &ft_cfg, None).map_err(err_to_js)?;
        self.robust = Some(robust);
        let summary = TrainSummary {
            pretrain_steps: pre.len(),
            finetune_steps: ft.len(),
            pretrain_loss_first: pre.first().map(|r| r.total).unwrap_or(0.0),
            pretrain_loss_last: pre.last().map(|r| r.total).unwrap_or(0.0),
            finetune_loss_first: ft.first().map(|r| r.total).unwrap_or(0.0),
            finetune_loss_last: ft.last().map(|r| r.total).unwrap_or(0.0),
        };
        Ok(serde_json::to_string(&summary).unwrap())
    }

    fn model(&self, robust: bool) -> Result<&VaeModel, JsValue> {
        if robust {
            self.robust
                .as_ref()
                .ok_or_else(|| JsValue::from_str("train first: robust model not ready"))
        } else {
            Ok(&self.baseline)
        }
    }

    /// Reconstruction attack on one corpus image; returns all four views and
    /// the per-iteration objective trace.
    pub fn attack(
        &self,
        image_idx: usize,
        epsilon: f64,
        step_size: f64,
        iterations: u32,
        robust: bool,
    ) -> Result<String, JsValue> {
        let model = self.model(robust)?;
        let idx = image_idx % self.corpus.len();
        let x = self.corpus.pixels.slice_sample(idx);
        let budget = AttackBudget {
            epsilon: epsilon.clamp(1e-4, 0.5),
            step_size: step_size.max(1e-4),
            iterations: iterations as usize,
            init: InitMode::Zero,
            rng_seed: self.seed,
        };
        let out = pgd_reconstruction_attack(model, &self.extractor, &x, &budget, 1.0, LatentTap::Mean)
            .map_err(err_to_js)?;
        let recon_clean = model.reconstruct_mean(&x).map_err(err_to_js)?;
        let recon_adv = model.reconstruct_mean(&out.x_adv).map_err(err_to_js)?;
        let view = AttackView {
            clean: to_rgb_bytes(&x),
            adv: to_rgb_bytes(&out.x_adv),
            recon_clean: to_rgb_bytes(&recon_clean),
            recon_adv: to_rgb_bytes(&recon_adv),
            size: IMG_SIZE,
            trace: out.loss_trace.clone(),
            mse_clean: recon_clean.mse(&x),
            mse_adv: recon_adv.mse(&x),
            linf: out.linf_norm(),
        };
        Ok(serde_json::to_string(&view).unwrap())
    }

    /// Normalized latent-MSE surface around one image.
    pub fn surface(
        &self,
        image_idx: usize,
        half_res: u32,
        radius: f64,
        robust: bool,
    ) -> Result<String, JsValue> {
        let model = self.model(robust)?;
        let idx = image_idx % self.corpus.len();
        let x = self.corpus.pixels.slice_sample(idx);
        let grid = loss_surface(
            model,
            &x,
            radius.clamp(1e-4, 0.5),
            (half_res as usize).max(2),
            self.seed ^ 0x5a5a,
            &self.corpus.ids[idx],
        )
        .map_err(err_to_js)?;
        let view = SurfaceView {
            values: grid.values.clone(),
            size: grid.size(),
            smoothness: smoothness_score(&grid),
            raw_max: grid.raw_max,
        };
        Ok(serde_json::to_string(&view).unwrap())
    }

    /// 2-D PCA scatter of clean vs noise-perturbed latents plus the
    /// tightness statistic.
    pub fn scatter(&self, noise_sigma: f64, robust: bool) -> Result<String, JsValue> {
        let model = self.model(robust)?;
        let sigma = noise_sigma.clamp(1e-4, 0.5);
        let x = &self.corpus.pixels;
        let tight = cluster_tightness(model, x, sigma, self.seed ^ 0x77).map_err(err_to_js)?;
        let mut rng = vaeguard::rng::Rng::derive(self.seed ^ 0x77, "tightness-noise");
        let mut noisy = x.clone();
        for v in noisy.data.iter_mut() {
            *v = (*v + sigma * rng.normal()).clamp(0.0, 1.0);
        }
        let clean_rows = latent_mu_rows(model, x).map_err(err_to_js)?;
        let noisy_rows = latent_mu_rows(model, &noisy).map_err(err_to_js)?;
        let pca = latent_pca(&clean_rows, 2).map_err(err_to_js)?;
        // project both sets with the clean basis
        let project = |rows: &vaeguard::linalg::Mat| -> Vec<[f64; 2]> {
            let means = clean_rows.col_means();
            let mut pts = Vec::with_capacity(rows.rows);
            for r in 0..rows.rows {
                let mut p = [0.0; 2];
                for (c, pc) in p.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for d in 0..rows.cols {
                        acc += (rows.at(r, d) - means[d]) * pca.components.at(d, c);
                    }
                    *pc = acc;
                }
                pts.push(p);
            }
            pts
        };
        let view = ScatterView {
            clean: project(&clean_rows),
            noisy: project(&noisy_rows),
            tightness_ratio: tight.tightness_ratio,
            mean_pair_dist: tight.mean_pair_dist,
            baseline_spread: tight.baseline_spread,
            explained: pca.explained_variance_ratios.clone(),
        };
        Ok(serde_json::to_string(&view).unwrap())
    }
}
