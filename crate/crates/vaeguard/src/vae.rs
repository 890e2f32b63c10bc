//! The VAE: stride-2 conv encoder to a diagonal Gaussian latent, mirrored
//! upsampling decoder bounded to [0,1], and the loss primitives built on them.
//!
//! Encoding and decoding are pure functions of (parameters, input); all
//! sampling is routed through explicit seeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    sigmoid_backward, sigmoid_forward, silu_backward, silu_forward, upsample2x_backward,
    upsample2x_forward, Conv2d, Conv2dGrad,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOG_VAR_MIN: f64 = -30.0;
pub const LOG_VAR_MAX: f64 = 20.0;

/// Architecture description; serialized into checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub in_channels: usize,
    /// Output channels of each stride-2 encoder stage; the decoder mirrors
    /// them. The downsampling factor is 2^len.
    pub stage_channels: Vec<usize>,
    pub latent_channels: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            in_channels: 3,
            stage_channels: vec![32, 64, 128],
            latent_channels: 4,
        }
    }
}

impl VaeConfig {
    pub fn downsample_factor(&self) -> usize {
        1 << self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.in_channels == 1 || self.in_channels == 3) {
            return Err(Error::Config(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::Config("stage_channels must be non-empty".into()));
        }
        if self.latent_channels == 0 {
            return Err(Error::Config("latent_channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-image diagonal Gaussian over the latent grid.
#[derive(Debug, Clone)]
pub struct LatentDist {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl LatentDist {
    /// Clamps log-variance into [LOG_VAR_MIN, LOG_VAR_MAX] at construction.
    pub fn new(mu: Tensor, mut log_var: Tensor) -> Self {
        assert!(mu.same_shape(&log_var), "mu / log_var shapes differ");
        log_var.clamp_in_place(LOG_VAR_MIN, LOG_VAR_MAX);
        LatentDist { mu, log_var }
    }

    pub fn batch_size(&self) -> usize {
        self.mu.n
    }

    /// Latent dimensionality per sample.
    pub fn dims_per_sample(&self) -> usize {
        self.mu.c * self.mu.h * self.mu.w
    }

    /// Reparameterized sample: z = mu + exp(0.5 log_var) * eta, eta ~ N(0, I)
    /// drawn from `seed`.
    pub fn sample(&self, seed: u64) -> Tensor {
        let mut rng = Rng::derive(seed, "reparameterize");
        let mut z = Tensor::zeros_like(&self.mu);
        for i in 0..z.data.len() {
            let eta = rng.normal();
            z.data[i] = self.mu.data[i] + (0.5 * self.log_var.data[i]).exp() * eta;
        }
        z
    }

    /// The noise vector used by `sample` for the same seed; training needs it
    /// to push gradients through the reparameterization.
    pub fn sample_with_noise(&self, seed: u64) -> (Tensor, Tensor) {
        let mut rng = Rng::derive(seed, "reparameterize");
        let mut z = Tensor::zeros_like(&self.mu);
        let mut eta = Tensor::zeros_like(&self.mu);
        for i in 0..z.data.len() {
            let e = rng.normal();
            eta.data[i] = e;
            z.data[i] = self.mu.data[i] + (0.5 * self.log_var.data[i]).exp() * e;
        }
        (z, eta)
    }
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<Conv2d>,
    /// 3x3 stride-1 head producing 2 * latent_channels (mu ++ log_var).
    pub head: Conv2d,
    latent_channels: usize,
}

pub struct EncoderCache {
    /// Input to each stage conv; last entry is the head input.
    conv_inputs: Vec<Tensor>,
    /// Pre-activation output of each stage conv.
    pre_acts: Vec<Tensor>,
    /// Raw head output before the log-var clamp.
    raw_head: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub stages: Vec<Conv2dGrad>,
    pub head: Conv2dGrad,
}

impl Encoder {
    pub fn init(cfg: &VaeConfig, rng: &mut Rng) -> Self {
        let mut stages = Vec::new();
        let mut prev = cfg.in_channels;
        for &ch in &cfg.stage_channels {
            stages.push(Conv2d::new(prev, ch, 3, 2, 1, 1.0, rng));
            prev = ch;
        }
        // small head init so initial log_var sits near 0 (unit prior variance)
        let head = Conv2d::new(prev, 2 * cfg.latent_channels, 3, 1, 1, 0.1, rng);
        Encoder {
            stages,
            head,
            latent_channels: cfg.latent_channels,
        }
    }

    pub fn forward(&self, x: &Tensor) -> (LatentDist, EncoderCache) {
        let mut conv_inputs = Vec::with_capacity(self.stages.len() + 1);
        let mut pre_acts = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            conv_inputs.push(cur.clone());
            let pre = stage.forward(&cur);
            cur = silu_forward(&pre);
            pre_acts.push(pre);
        }
        conv_inputs.push(cur.clone());
        let raw_head = self.head.forward(&cur);
        let zc = self.latent_channels;
        let (n, _, zh, zw) = raw_head.shape();
        let mut mu = Tensor::zeros(n, zc, zh, zw);
        let mut log_var = Tensor::zeros(n, zc, zh, zw);
        for b in 0..n {
            for c in 0..zc {
                mu.plane_mut(b, c).copy_from_slice(raw_head.plane(b, c));
                log_var
                    .plane_mut(b, c)
                    .copy_from_slice(raw_head.plane(b, c + zc));
            }
        }
        (
            LatentDist::new(mu, log_var),
            EncoderCache {
                conv_inputs,
                pre_acts,
                raw_head,
            },
        )
    }

    /// Backprop from (d_mu, d_log_var) to parameter grads and/or the input
    /// gradient. Gradients through the log-var clamp are zeroed where the raw
    /// value fell outside the clamp window.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_mu: &Tensor,
        d_log_var: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> (Option<Tensor>, Option<EncoderGrads>) {
        let zc = self.latent_channels;
        let mut d_head = Tensor::zeros_like(&cache.raw_head);
        for b in 0..d_mu.n {
            for c in 0..zc {
                d_head.plane_mut(b, c).copy_from_slice(d_mu.plane(b, c));
                let raw = cache.raw_head.plane(b, c + zc);
                let dst = d_head.plane_mut(b, c + zc);
                for (i, g) in d_log_var.plane(b, c).iter().enumerate() {
                    let r = raw[i];
                    dst[i] = if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                        *g
                    } else {
                        0.0
                    };
                }
            }
        }

        let head_in = cache.conv_inputs.last().unwrap();
        let (mut d_cur, head_grad) = self.head.backward(head_in, &d_head, true, want_params);
        let mut stage_grads: Vec<Conv2dGrad> = Vec::new();
        for i in (0..self.stages.len()).rev() {
            let d_post = d_cur.take().unwrap();
            let d_pre = silu_backward(&cache.pre_acts[i], &d_post);
            let want_in = want_input || i > 0;
            let (gx, gp) =
                self.stages[i].backward(&cache.conv_inputs[i], &d_pre, want_in, want_params);
            d_cur = gx;
            if let Some(gp) = gp {
                stage_grads.push(gp);
            }
        }
        stage_grads.reverse();
        let grads = want_params.then(|| EncoderGrads {
            stages: stage_grads,
            head: head_grad.unwrap(),
        });
        (if want_input { d_cur } else { None }, grads)
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &[f64])) {
        for (i, s) in self.stages.iter().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &s.bias);
        }
        f(&format!("{prefix}.head.weight"), &self.head.weight);
        f(&format!("{prefix}.head.bias"), &self.head.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut [f64])) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &mut s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &mut s.bias);
        }
        f(&format!("{prefix}.head.weight"), &mut self.head.weight);
        f(&format!("{prefix}.head.bias"), &mut self.head.bias);
    }

    /// Grad visitor in the same order as `visit`.
    pub fn visit_grads(grads: &EncoderGrads, prefix: &str, f: &mut impl FnMut(&str, &[f64])) {
        for (i, g) in grads.stages.iter().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &g.weight);
            f(&format!("{prefix}.stage{i}.bias"), &g.bias);
        }
        f(&format!("{prefix}.head.weight"), &grads.head.weight);
        f(&format!("{prefix}.head.bias"), &grads.head.bias);
    }
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Decoder {
    /// latent_channels -> deepest stage width.
    pub head: Conv2d,
    /// One conv per upsampling step, deepest first.
    pub stages: Vec<Conv2d>,
    /// Final conv to image channels, before the sigmoid bound.
    pub out: Conv2d,
}

pub struct DecoderCache {
    z: Tensor,
    head_pre: Tensor,
    /// Per stage: (input to upsample, upsampled conv input, pre-activation).
    stage_io: Vec<(Tensor, Tensor, Tensor)>,
    out_in: Tensor,
    /// Sigmoid output (the reconstruction itself).
    pub y: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderGrads {
    pub head: Conv2dGrad,
    pub stages: Vec<Conv2dGrad>,
    pub out: Conv2dGrad,
}

impl Decoder {
    pub fn init(cfg: &VaeConfig, rng: &mut Rng) -> Self {
        let deepest = *cfg.stage_channels.last().unwrap();
        let head = Conv2d::new(cfg.latent_channels, deepest, 3, 1, 1, 1.0, rng);
        let mut stages = Vec::new();
        let mut prev = deepest;
        for i in (0..cfg.stage_channels.len()).rev() {
            let next = if i == 0 {
                cfg.stage_channels[0]
            } else {
                cfg.stage_channels[i - 1]
            };
            stages.push(Conv2d::new(prev, next, 3, 1, 1, 1.0, rng));
            prev = next;
        }
        let out = Conv2d::new(prev, cfg.in_channels, 3, 1, 1, 0.1, rng);
        Decoder { head, stages, out }
    }

    pub fn forward(&self, z: &Tensor) -> DecoderCache {
        let head_pre = self.head.forward(z);
        let mut cur = silu_forward(&head_pre);
        let mut stage_io = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let up_in = cur;
            let conv_in = upsample2x_forward(&up_in);
            let pre = stage.forward(&conv_in);
            cur = silu_forward(&pre);
            stage_io.push((up_in, conv_in, pre));
        }
        let out_in = cur;
        let logits = self.out.forward(&out_in);
        let y = sigmoid_forward(&logits);
        DecoderCache {
            z: z.clone(),
            head_pre,
            stage_io,
            out_in,
            y,
        }
    }

    pub fn backward(
        &self,
        cache: &DecoderCache,
        d_y: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> (Option<Tensor>, Option<DecoderGrads>) {
        let d_logits = sigmoid_backward(&cache.y, d_y);
        let (mut d_cur, out_grad) = self.out.backward(&cache.out_in, &d_logits, true, want_params);
        let mut stage_grads = Vec::new();
        for i in (0..self.stages.len()).rev() {
            let (_, conv_in, pre) = &cache.stage_io[i];
            let d_post = d_cur.take().unwrap();
            let d_pre = silu_backward(pre, &d_post);
            let (d_conv_in, gp) = self.stages[i].backward(conv_in, &d_pre, true, want_params);
            d_cur = Some(upsample2x_backward(&d_conv_in.unwrap()));
            if let Some(gp) = gp {
                stage_grads.push(gp);
            }
        }
        stage_grads.reverse();
        let d_head_post = d_cur.take().unwrap();
        let d_head_pre = silu_backward(&cache.head_pre, &d_head_post);
        let (d_z, head_grad) = self
            .head
            .backward(&cache.z, &d_head_pre, want_input, want_params);
        let grads = want_params.then(|| DecoderGrads {
            head: head_grad.unwrap(),
            stages: stage_grads,
            out: out_grad.unwrap(),
        });
        (d_z, grads)
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &[f64])) {
        f(&format!("{prefix}.head.weight"), &self.head.weight);
        f(&format!("{prefix}.head.bias"), &self.head.bias);
        for (i, s) in self.stages.iter().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &s.bias);
        }
        f(&format!("{prefix}.out.weight"), &self.out.weight);
        f(&format!("{prefix}.out.bias"), &self.out.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.head.weight"), &mut self.head.weight);
        f(&format!("{prefix}.head.bias"), &mut self.head.bias);
        for (i, s) in self.stages.iter_mut().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &mut s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &mut s.bias);
        }
        f(&format!("{prefix}.out.weight"), &mut self.out.weight);
        f(&format!("{prefix}.out.bias"), &mut self.out.bias);
    }

    pub fn visit_grads(grads: &DecoderGrads, prefix: &str, f: &mut impl FnMut(&str, &[f64])) {
        f(&format!("{prefix}.head.weight"), &grads.head.weight);
        f(&format!("{prefix}.head.bias"), &grads.head.bias);
        for (i, g) in grads.stages.iter().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &g.weight);
            f(&format!("{prefix}.stage{i}.bias"), &g.bias);
        }
        f(&format!("{prefix}.out.weight"), &grads.out.weight);
        f(&format!("{prefix}.out.bias"), &grads.out.bias);
    }
}

// ---------------------------------------------------------------------------
// model handle
// ---------------------------------------------------------------------------

/// Encoder/decoder parameter sets with freeze flags and an optional frozen
/// reference encoder snapshot used by the originality regularizer.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub cfg: VaeConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// Snapshot of the pre-fine-tune encoder; never updated once taken.
    pub reference_encoder: Option<Encoder>,
    pub freeze_decoder: bool,
}

impl VaeModel {
    pub fn init(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::derive(seed, "model-init");
        let encoder = Encoder::init(&cfg, &mut rng);
        let decoder = Decoder::init(&cfg, &mut rng);
        Ok(VaeModel {
            cfg,
            encoder,
            decoder,
            reference_encoder: None,
            freeze_decoder: false,
        })
    }

    /// Freeze the current encoder as the reference and the decoder for
    /// fine-tuning. Idempotent only before training; calling twice replaces
    /// the snapshot, so the trainer calls it exactly once.
    pub fn snapshot_reference(&mut self) {
        self.reference_encoder = Some(self.encoder.clone());
        self.freeze_decoder = true;
    }

    pub fn check_spatial(&self, x: &Tensor) -> Result<()> {
        let f = self.cfg.downsample_factor();
        if x.h % f != 0 {
            return Err(Error::Shape(format!(
                "height {} not divisible by downsampling factor {f}",
                x.h
            )));
        }
        if x.w % f != 0 {
            return Err(Error::Shape(format!(
                "width {} not divisible by downsampling factor {f}",
                x.w
            )));
        }
        if x.c != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "channels {} do not match model channels {}",
                x.c, self.cfg.in_channels
            )));
        }
        Ok(())
    }

    /// mu, log sigma^2 with spatial dims (H/f, W/f). Pure in (params, x).
    pub fn encode(&self, x: &Tensor) -> Result<LatentDist> {
        self.check_spatial(x)?;
        Ok(self.encoder.forward(x).0)
    }

    /// Encode with the frozen reference encoder.
    pub fn encode_reference(&self, x: &Tensor) -> Result<LatentDist> {
        let reference = self.reference_encoder.as_ref().ok_or_else(|| {
            Error::Config("model has no frozen reference encoder snapshot".into())
        })?;
        self.check_spatial(x)?;
        Ok(reference.forward(x).0)
    }

    pub fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.c != self.cfg.latent_channels {
            return Err(Error::Shape(format!(
                "latent channels {} do not match model latent channels {}",
                z.c, self.cfg.latent_channels
            )));
        }
        Ok(())
    }

    /// Reconstruction in [0,1] with shape (N, C, h*f, w*f).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        Ok(self.decoder.forward(z).y)
    }

    /// decode(encode(x).mu): the deterministic reconstruction used by metrics
    /// and attacks.
    pub fn reconstruct_mean(&self, x: &Tensor) -> Result<Tensor> {
        let dist = self.encode(x)?;
        self.decode(&dist.mu)
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&str, &[f64])) {
        self.encoder.visit("encoder", f);
        self.decoder.visit("decoder", f);
        if let Some(r) = &self.reference_encoder {
            r.visit("encoder_ref", f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

// ---------------------------------------------------------------------------
// loss primitives
// ---------------------------------------------------------------------------

/// Mean of squared elementwise differences.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.require_same_shape(b, "mse_loss")?;
    Ok(a.mse(b))
}

/// d mse(a,b) / da = 2 (a - b) / len.
pub fn mse_loss_grad(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.require_same_shape(b, "mse_loss")?;
    let scale = 2.0 / a.len() as f64;
    let mut g = a.sub(b);
    g.scale(scale);
    Ok(g)
}

/// KL(q || N(0, I)), mean over the batch of per-sample sums:
/// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
pub fn kl_loss(dist: &LatentDist) -> f64 {
    let n = dist.batch_size() as f64;
    let mut acc = 0.0;
    for i in 0..dist.mu.data.len() {
        let mu = dist.mu.data[i];
        let lv = dist.log_var.data[i];
        acc += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
    }
    acc / n
}

/// Gradients of `kl_loss` w.r.t. mu and log_var.
pub fn kl_loss_grad(dist: &LatentDist) -> (Tensor, Tensor) {
    let n = dist.batch_size() as f64;
    let mut d_mu = Tensor::zeros_like(&dist.mu);
    let mut d_lv = Tensor::zeros_like(&dist.log_var);
    for i in 0..d_mu.data.len() {
        d_mu.data[i] = dist.mu.data[i] / n;
        d_lv.data[i] = 0.5 * (dist.log_var.data[i].exp() - 1.0) / n;
    }
    (d_mu, d_lv)
}
