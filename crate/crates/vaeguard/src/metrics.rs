//! Reconstruction- and distribution-quality metrics, and the aggregated
//! report emitted by the evaluation commands.
//!
//! True Inception-FID and CLIP are out of reach for a hermetic build; the
//! Fréchet distance and the cosine similarity here are computed over the
//! pluggable perceptual extractor's pooled features and are labeled as
//! proxies ("rFID-proxy", "clip-proxy") in every report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::attacks::AttackOutcome;
use crate::checkpoint::atomic_write;
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Mat};
use crate::perceptual::{perceptual_loss, PerceptualExtractor};
use crate::tensor::Tensor;
use crate::vae::VaeModel;

pub const PSNR_CAP_DB: f64 = 99.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;
const COV_RIDGE: f64 = 1e-6;

/// 10 * log10(1 / MSE) over the whole batch, capped at 99 dB for
/// near-identical inputs. Pixel domain is [0,1].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.require_same_shape(b, "psnr")?;
    let mse = a.mse(b);
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in g.iter_mut() {
        *v /= sum;
    }
    g
}

/// Separable valid-mode Gaussian filter of an (h, w) plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, gv) in g.iter().enumerate() {
                acc += gv * plane[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, gv) in g.iter().enumerate() {
                acc += gv * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local structural similarity over 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1), all channels and batch entries.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.require_same_shape(b, "ssim")?;
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.h, a.w
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for n in 0..a.n {
        for c in 0..a.c {
            let pa = a.plane(n, c);
            let pb = b.plane(n, c);
            let mu_a = filter_valid(pa, a.h, a.w, &g);
            let mu_b = filter_valid(pb, a.h, a.w, &g);
            let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
            let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
            let ab: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
            let m_sq_a = filter_valid(&sq_a, a.h, a.w, &g);
            let m_sq_b = filter_valid(&sq_b, a.h, a.w, &g);
            let m_ab = filter_valid(&ab, a.h, a.w, &g);
            for i in 0..mu_a.len() {
                let var_a = m_sq_a[i] - mu_a[i] * mu_a[i];
                let var_b = m_sq_b[i] - mu_b[i] * mu_b[i];
                let cov = m_ab[i] - mu_a[i] * mu_b[i];
                let num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
                let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
                acc += num / den;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are
/// samples): |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
/// Covariances get a 1e-6 ridge; a matrix that is still not PSD errors.
pub fn frechet_feature_distance(set_a: &Mat, set_b: &Mat) -> Result<f64> {
    if set_a.cols != set_b.cols {
        return Err(Error::Metric(format!(
            "feature dims differ: {} vs {}",
            set_a.cols, set_b.cols
        )));
    }
    if set_a.rows < 2 || set_b.rows < 2 {
        return Err(Error::Metric(
            "each feature set needs at least 2 samples".into(),
        ));
    }
    let mu_a = set_a.col_means();
    let mu_b = set_b.col_means();
    let mut cov_a = set_a.covariance();
    let mut cov_b = set_b.covariance();
    cov_a.add_diag(COV_RIDGE);
    cov_b.add_diag(COV_RIDGE);

    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let root_a = crate::linalg::psd_sqrt(&cov_a, 1e-8)?;
    let inner = root_a.matmul(&cov_b).matmul(&root_a);
    let (vals, _) = sym_eig(&inner)?;
    let mut cross = 0.0;
    for &l in &vals {
        if l < -1e-8 {
            return Err(Error::Metric(format!(
                "covariance product not PSD: eigenvalue {l:.3e}"
            )));
        }
        cross += l.max(0.0).sqrt();
    }
    let d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    // exact-zero distance can round slightly negative
    Ok(d.max(0.0))
}

/// Cosine similarity between the mean-pooled feature vectors of two sets.
pub fn editing_similarity_proxy(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    if features_a.is_empty() || features_b.is_empty() {
        return Err(Error::Metric("empty feature set".into()));
    }
    if features_a[0].len() != features_b[0].len() {
        return Err(Error::Metric(format!(
            "feature dims differ: {} vs {}",
            features_a[0].len(),
            features_b[0].len()
        )));
    }
    let pool = |rows: &[Vec<f64>]| -> Vec<f64> {
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows.len() as f64;
        }
        mean
    };
    let a = pool(features_a);
    let b = pool(features_b);
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Metric("zero-norm pooled feature vector".into()));
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

pub fn features_to_mat(rows: &[Vec<f64>]) -> Mat {
    let dim = rows[0].len();
    let mut m = Mat::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.data[i * dim..(i + 1) * dim].copy_from_slice(r);
    }
    m
}

/// Named scalar metrics with provenance; serializes with stable key order.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub corpus_id: String,
    pub model_id: String,
    /// Attack descriptor, or "none" for clean-only reports.
    pub attack: String,
    pub sample_count: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Proxy labeling so surrogate metrics are never mistaken for the
    /// reference-scale quantities they stand in for.
    pub labels: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.metrics.get("ssim") {
            if !(-1.0..=1.0).contains(s) {
                return Err(Error::Metric(format!("ssim {s} outside [-1,1]")));
            }
        }
        if let Some(p) = self.metrics.get("psnr_db") {
            if !(*p > 0.0 || *p == PSNR_CAP_DB) {
                return Err(Error::Metric(format!("psnr {p} not positive or capped")));
            }
        }
        if let Some(f) = self.metrics.get("rfid_proxy") {
            if *f < 0.0 {
                return Err(Error::Metric(format!("frechet {f} negative")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fixed ledger schema; absent metrics serialize as empty cells.
pub const REPORT_CSV_COLUMNS: [&str; 14] = [
    "corpus_id",
    "model_id",
    "attack",
    "sample_count",
    "psnr_db",
    "ssim",
    "perceptual",
    "rfid_proxy",
    "adv_mse",
    "adv_psnr_db",
    "adv_ssim",
    "adv_perceptual",
    "poison_ratio",
    "clip_proxy_cosine",
];

pub fn append_report_row(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = if path.exists() {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else {
        let mut h = REPORT_CSV_COLUMNS.join(",");
        h.push('\n');
        h
    };
    let mut row: Vec<String> = vec![
        report.corpus_id.clone(),
        report.model_id.clone(),
        report.attack.clone(),
        report.sample_count.to_string(),
    ];
    for col in REPORT_CSV_COLUMNS.iter().skip(4) {
        row.push(
            report
                .metrics
                .get(*col)
                .map(|v| v.to_string())
                .unwrap_or_default(),
        );
    }
    text.push_str(&row.join(","));
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Generator of adversarial batches for reports: given the model under test
/// and a clean batch, produce the perturbed batch.
pub type AttackGenerator<'a> = dyn Fn(&VaeModel, &Tensor) -> Result<AttackOutcome> + 'a;

/// Encode/decode the corpus (clean, and attacked when a generator is given)
/// and aggregate every metric. Deterministic for fixed seeds.
pub fn reconstruction_report(
    model: &VaeModel,
    extractor: &PerceptualExtractor,
    batch: &ImageBatch,
    attack: Option<(&str, &AttackGenerator)>,
    corpus_id: &str,
    model_id: &str,
) -> Result<MetricReport> {
    if batch.is_empty() {
        return Err(Error::Data("empty corpus for report".into()));
    }
    let x = &batch.pixels;
    let recon = model.reconstruct_mean(x)?;
    let mut metrics = BTreeMap::new();
    let mut labels = BTreeMap::new();
    metrics.insert("psnr_db".into(), psnr(&recon, x)?);
    if x.h >= SSIM_WINDOW && x.w >= SSIM_WINDOW {
        metrics.insert("ssim".into(), ssim(&recon, x)?);
    }
    metrics.insert("perceptual".into(), perceptual_loss(extractor, &recon, x)?);
    metrics.insert("mse".into(), recon.mse(x));
    if batch.len() >= 2 {
        let fa = features_to_mat(&extractor.pooled_features(x));
        let fb = features_to_mat(&extractor.pooled_features(&recon));
        metrics.insert("rfid_proxy".into(), frechet_feature_distance(&fa, &fb)?);
        labels.insert(
            "rfid_proxy".into(),
            "rFID-proxy: Frechet distance over pluggable extractor features, comparative only"
                .into(),
        );
    }
    labels.insert(
        "perceptual".into(),
        format!("extractor={}", extractor.source.tag()),
    );

    let mut attack_name = "none".to_string();
    if let Some((name, generator)) = attack {
        attack_name = name.to_string();
        let outcome = generator(model, x)?;
        let adv_recon = model.reconstruct_mean(&outcome.x_adv)?;
        metrics.insert("adv_mse".into(), adv_recon.mse(x));
        metrics.insert("adv_psnr_db".into(), psnr(&adv_recon, x)?);
        if x.h >= SSIM_WINDOW && x.w >= SSIM_WINDOW {
            metrics.insert("adv_ssim".into(), ssim(&adv_recon, x)?);
        }
        metrics.insert(
            "adv_perceptual".into(),
            perceptual_loss(extractor, &adv_recon, x)?,
        );
        metrics.insert(
            "clip_proxy_cosine".into(),
            editing_similarity_proxy(
                &extractor.pooled_features(&recon),
                &extractor.pooled_features(&adv_recon),
            )?,
        );
        labels.insert(
            "clip_proxy_cosine".into(),
            "clip-proxy: cosine of pooled extractor features, comparative only".into(),
        );
    }

    let report = MetricReport {
        corpus_id: corpus_id.to_string(),
        model_id: model_id.to_string(),
        attack: attack_name,
        sample_count: batch.len(),
        metrics,
        labels,
    };
    report.validate()?;
    Ok(report)
}
