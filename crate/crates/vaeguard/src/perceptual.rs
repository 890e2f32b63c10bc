//! Fixed multi-scale convolutional features and the perceptual distance
//! built on them.
//!
//! Plays the LPIPS role: distances are computed between channel-unit-normalized
//! feature maps at several spatial scales. The default extractor is a seeded
//! random conv pyramid so a hermetic build stays deterministic; a pretrained
//! feature net can be plugged in from a tensor archive instead.

use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{silu_backward, silu_forward, Conv2d};
use crate::rng::Rng;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSource {
    SeededRandom { seed: u64 },
    Pretrained { path: String },
}

impl WeightSource {
    pub fn tag(&self) -> String {
        match self {
            WeightSource::SeededRandom { seed } => format!("seeded-random:{seed}"),
            WeightSource::Pretrained { path } => format!("pretrained:{path}"),
        }
    }
}

/// Immutable conv pyramid: one stride-1 stem then stride-2 stages, features
/// tapped after each activation. Weights never change after construction.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    convs: Vec<Conv2d>,
    pub source: WeightSource,
}

pub struct FeatureCache {
    conv_inputs: Vec<Tensor>,
    pre_acts: Vec<Tensor>,
    /// Post-activation feature maps, one per scale.
    pub features: Vec<Tensor>,
}

impl PerceptualExtractor {
    /// Three-scale pyramid (full, half, quarter resolution) with seeded
    /// random fixed weights.
    pub fn seeded(in_channels: usize, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "perceptual");
        let base = 8;
        let convs = vec![
            Conv2d::new(in_channels, base, 3, 1, 1, 1.0, &mut rng),
            Conv2d::new(base, base * 2, 3, 2, 1, 1.0, &mut rng),
            Conv2d::new(base * 2, base * 4, 3, 2, 1, 1.0, &mut rng),
        ];
        PerceptualExtractor {
            convs,
            source: WeightSource::SeededRandom { seed },
        }
    }

    /// Plug-in slot for real pretrained features: a tensor archive with keys
    /// `conv{i}.weight` (co, ci, k, k) and `conv{i}.bias` (co). The first conv
    /// is stride 1, later ones stride 2.
    pub fn from_archive(path: &Path) -> Result<Self> {
        let entries = checkpoint::read_archive(path)?;
        let mut convs = Vec::new();
        for i in 0.. {
            let wkey = format!("conv{i}.weight");
            let bkey = format!("conv{i}.bias");
            let w = entries.iter().find(|e| e.0 == wkey);
            let b = entries.iter().find(|e| e.0 == bkey);
            match (w, b) {
                (Some((_, wdims, wdata)), Some((_, _, bdata))) => {
                    if wdims.len() != 4 || wdims[2] != wdims[3] {
                        return Err(Error::Checkpoint {
                            path: path.to_path_buf(),
                            msg: format!("{wkey} must have square 4-d kernel dims, got {wdims:?}"),
                        });
                    }
                    let (out_ch, in_ch, k) = (wdims[0], wdims[1], wdims[2]);
                    convs.push(Conv2d {
                        in_ch,
                        out_ch,
                        ksize: k,
                        stride: if i == 0 { 1 } else { 2 },
                        pad: k / 2,
                        weight: wdata.clone(),
                        bias: bdata.clone(),
                    });
                }
                (None, None) => break,
                _ => {
                    return Err(Error::Checkpoint {
                        path: path.to_path_buf(),
                        msg: format!("conv{i} has weight or bias but not both"),
                    })
                }
            }
        }
        if convs.len() < 2 {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("need >= 2 feature scales, found {}", convs.len()),
            });
        }
        Ok(PerceptualExtractor {
            convs,
            source: WeightSource::Pretrained {
                path: path.display().to_string(),
            },
        })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_ch
    }

    pub fn num_scales(&self) -> usize {
        self.convs.len()
    }

    /// Multi-scale features; deterministic in the input.
    pub fn features(&self, x: &Tensor) -> Vec<Tensor> {
        self.features_with_cache(x).features
    }

    pub fn features_with_cache(&self, x: &Tensor) -> FeatureCache {
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut pre_acts = Vec::with_capacity(self.convs.len());
        let mut features = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            conv_inputs.push(cur.clone());
            let pre = conv.forward(&cur);
            cur = silu_forward(&pre);
            pre_acts.push(pre);
            features.push(cur.clone());
        }
        FeatureCache {
            conv_inputs,
            pre_acts,
            features,
        }
    }

    /// Mean-pooled deepest features, one row per image. Used by the Fréchet
    /// surrogate and the editing-similarity proxy.
    pub fn pooled_features(&self, x: &Tensor) -> Vec<Vec<f64>> {
        let feats = self.features(x);
        let deep = feats.last().unwrap();
        let mut rows = Vec::with_capacity(deep.n);
        for n in 0..deep.n {
            let mut row = Vec::with_capacity(deep.c);
            for c in 0..deep.c {
                let p = deep.plane(n, c);
                row.push(p.iter().sum::<f64>() / p.len() as f64);
            }
            rows.push(row);
        }
        rows
    }

    /// Backward of a feature-space loss to the input image, given upstream
    /// gradients w.r.t. each scale's (post-activation) feature map.
    fn backprop_feature_grads(&self, cache: &FeatureCache, d_feats: &[Tensor]) -> Tensor {
        let mut d_cur: Option<Tensor> = None;
        for i in (0..self.convs.len()).rev() {
            let mut d_post = d_feats[i].clone();
            if let Some(up) = d_cur.take() {
                d_post.add_assign(&up);
            }
            let d_pre = silu_backward(&cache.pre_acts[i], &d_post);
            let (gx, _) = self.convs[i].backward(&cache.conv_inputs[i], &d_pre, true, false);
            d_cur = gx;
        }
        d_cur.unwrap()
    }
}

/// Channel-unit-normalize each spatial position of a feature map.
fn normalize_channels(f: &Tensor) -> Tensor {
    let mut out = Tensor::zeros_like(f);
    let hw = f.h * f.w;
    let chw = f.c * hw;
    for n in 0..f.n {
        for pos in 0..hw {
            let base = n * chw + pos;
            let mut sq = 0.0;
            for c in 0..f.c {
                let v = f.data[base + c * hw];
                sq += v * v;
            }
            let r = (sq + NORM_EPS).sqrt();
            for c in 0..f.c {
                out.data[base + c * hw] = f.data[base + c * hw] / r;
            }
        }
    }
    out
}

/// Pre-normalized reference features; lets repeated comparisons against one
/// image (attack iterations, fixed probes) skip recomputing its pyramid.
#[derive(Debug, Clone)]
pub struct RefFeatures {
    normalized: Vec<Tensor>,
    shape: (usize, usize, usize, usize),
}

impl PerceptualExtractor {
    pub fn reference(&self, b: &Tensor) -> RefFeatures {
        RefFeatures {
            normalized: self.features(b).iter().map(normalize_channels).collect(),
            shape: b.shape(),
        }
    }
}

/// Sum over scales of the mean squared distance between unit-normalized
/// feature maps of `a` and `b`. Zero iff the features coincide; symmetric.
pub fn perceptual_loss(extractor: &PerceptualExtractor, a: &Tensor, b: &Tensor) -> Result<f64> {
    a.require_same_shape(b, "perceptual_loss")?;
    perceptual_loss_vs(extractor, a, &extractor.reference(b))
}

pub fn perceptual_loss_vs(
    extractor: &PerceptualExtractor,
    a: &Tensor,
    reference: &RefFeatures,
) -> Result<f64> {
    if a.shape() != reference.shape {
        return Err(crate::error::Error::Shape(format!(
            "perceptual_loss: {:?} vs {:?}",
            a.shape(),
            reference.shape
        )));
    }
    let fa = extractor.features(a);
    let mut total = 0.0;
    for (sa, nb) in fa.iter().zip(reference.normalized.iter()) {
        let na = normalize_channels(sa);
        total += na.mse(nb);
    }
    Ok(total)
}

/// `perceptual_loss` plus its gradient w.r.t. the first argument.
pub fn perceptual_loss_with_grad(
    extractor: &PerceptualExtractor,
    a: &Tensor,
    b: &Tensor,
) -> Result<(f64, Tensor)> {
    a.require_same_shape(b, "perceptual_loss")?;
    perceptual_loss_with_grad_vs(extractor, a, &extractor.reference(b))
}

pub fn perceptual_loss_with_grad_vs(
    extractor: &PerceptualExtractor,
    a: &Tensor,
    reference: &RefFeatures,
) -> Result<(f64, Tensor)> {
    if a.shape() != reference.shape {
        return Err(crate::error::Error::Shape(format!(
            "perceptual_loss: {:?} vs {:?}",
            a.shape(),
            reference.shape
        )));
    }
    let cache_a = extractor.features_with_cache(a);
    let mut total = 0.0;
    let mut d_feats = Vec::with_capacity(cache_a.features.len());
    for (sa, nb) in cache_a.features.iter().zip(reference.normalized.iter()) {
        let na = normalize_channels(sa);
        total += na.mse(nb);
        // dL/d na = 2 (na - nb) / count, then through v -> v / sqrt(|v|^2+eps)
        let count = na.len() as f64;
        let scale = 2.0 / count;
        let mut d_raw = Tensor::zeros_like(sa);
        let hw = sa.h * sa.w;
        let chw = sa.c * hw;
        for n in 0..sa.n {
            for pos in 0..hw {
                let base = n * chw + pos;
                let mut sq = 0.0;
                let mut vdot = 0.0;
                for c in 0..sa.c {
                    let i = base + c * hw;
                    let v = sa.data[i];
                    sq += v * v;
                    vdot += v * scale * (na.data[i] - nb.data[i]);
                }
                let r = (sq + NORM_EPS).sqrt();
                let inv_r = 1.0 / r;
                let inv_r3 = inv_r * inv_r * inv_r;
                for c in 0..sa.c {
                    let i = base + c * hw;
                    let dn = scale * (na.data[i] - nb.data[i]);
                    d_raw.data[i] = dn * inv_r - sa.data[i] * vdot * inv_r3;
                }
            }
        }
        d_feats.push(d_raw);
    }
    let grad = extractor.backprop_feature_grads(&cache_a, &d_feats);
    Ok((total, grad))
}
