//! Latent-space geometry analyses: two-direction loss-surface grids with a
//! smoothness score, latent PCA, and a cluster-tightness statistic that
//! quantifies how far Gaussian input noise moves each latent.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Mat};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vae::VaeModel;

/// Normalized latent-MSE grid over two orthogonal pixel-space directions.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    /// (2R+1) x (2R+1), row-major; values in [0,1] after max-normalization.
    pub values: Vec<f64>,
    pub half_res: usize,
    /// Per-axis extent in pixel units.
    pub radius: f64,
    /// Grid maximum before normalization; kept for the sidecar.
    pub raw_max: f64,
    pub direction_seed: u64,
    pub anchor_id: String,
}

impl SurfaceGrid {
    pub fn size(&self) -> usize {
        2 * self.half_res + 1
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn to_csv(&self) -> String {
        let n = self.size();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| self.at(i, j).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            anchor_id: &'a str,
            direction_seed: u64,
            half_res: usize,
            radius: f64,
            raw_max: f64,
        }
        serde_json::to_string_pretty(&Sidecar {
            anchor_id: &self.anchor_id,
            direction_seed: self.direction_seed,
            half_res: self.half_res,
            radius: self.radius,
            raw_max: self.raw_max,
        })
        .expect("sidecar serializes")
    }
}

/// Two orthonormal pixel-space directions drawn from `seed`.
pub fn random_directions(shape: &Tensor, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Rng::derive(seed, "surface-directions");
    let mut d1 = Tensor::zeros_like(shape);
    let mut d2 = Tensor::zeros_like(shape);
    rng.fill_normal(&mut d1.data, 0.0, 1.0);
    rng.fill_normal(&mut d2.data, 0.0, 1.0);
    let n1 = d1.l2_norm();
    d1.scale(1.0 / n1);
    // Gram-Schmidt then renormalize
    let dot: f64 = d1.data.iter().zip(d2.data.iter()).map(|(a, b)| a * b).sum();
    for i in 0..d2.data.len() {
        d2.data[i] -= dot * d1.data[i];
    }
    let n2 = d2.l2_norm();
    d2.scale(1.0 / n2);
    (d1, d2)
}

/// Latent-MSE surface with explicit directions; `loss_surface` is the seeded
/// entry point. grid[i][j] compares E(x + a_i d1 + b_j d2).mu against E(x).mu
/// with a_i, b_j stepping radius/R, then divides by the grid max (all-zero
/// grids stay all-zero).
pub fn loss_surface_with_directions(
    model: &VaeModel,
    x: &Tensor,
    radius: f64,
    half_res: usize,
    d1: &Tensor,
    d2: &Tensor,
    direction_seed: u64,
    anchor_id: &str,
) -> Result<SurfaceGrid> {
    if x.n != 1 {
        return Err(Error::Shape(format!(
            "loss surface takes a single image, got batch of {}",
            x.n
        )));
    }
    if half_res < 2 {
        return Err(Error::Config(format!(
            "half_res must be >= 2, got {half_res}"
        )));
    }
    if radius <= 0.0 {
        return Err(Error::Config(format!("radius must be > 0, got {radius}")));
    }
    let dot: f64 = d1.data.iter().zip(d2.data.iter()).map(|(a, b)| a * b).sum();
    if dot.abs() > 1e-6 {
        return Err(Error::Config(format!(
            "directions not orthogonal: |<d1,d2>| = {:.2e}",
            dot.abs()
        )));
    }
    let base = model.encode(x)?.mu;
    let n = 2 * half_res + 1;
    let step = radius / half_res as f64;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let a = (i as isize - half_res as isize) as f64 * step;
        for j in 0..n {
            let b = (j as isize - half_res as isize) as f64 * step;
            let mut xp = x.clone();
            for k in 0..xp.data.len() {
                xp.data[k] = (xp.data[k] + a * d1.data[k] + b * d2.data[k]).clamp(0.0, 1.0);
            }
            let mu = model.encode(&xp)?.mu;
            values[i * n + j] = mu.mse(&base);
        }
    }
    let raw_max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if raw_max > 0.0 {
        for v in values.iter_mut() {
            *v /= raw_max;
        }
    }
    Ok(SurfaceGrid {
        values,
        half_res,
        radius,
        raw_max,
        direction_seed,
        anchor_id: anchor_id.to_string(),
    })
}

pub fn loss_surface(
    model: &VaeModel,
    x: &Tensor,
    radius: f64,
    half_res: usize,
    seed: u64,
    anchor_id: &str,
) -> Result<SurfaceGrid> {
    let (d1, d2) = random_directions(x, seed);
    loss_surface_with_directions(model, x, radius, half_res, &d1, &d2, seed, anchor_id)
}

/// Mean |first difference| along rows plus mean |first difference| along
/// columns of the normalized grid. Zero for constant grids; a 0..1 ramp over
/// 21 cells scores 1/20. Lower is smoother.
pub fn smoothness_score(grid: &SurfaceGrid) -> f64 {
    let n = grid.size();
    let mut row_acc = 0.0;
    let mut col_acc = 0.0;
    let mut per_axis = 0usize;
    for i in 0..n {
        for j in 0..n - 1 {
            row_acc += (grid.at(i, j + 1) - grid.at(i, j)).abs();
            col_acc += (grid.at(j + 1, i) - grid.at(j, i)).abs();
            per_axis += 1;
        }
    }
    if per_axis == 0 {
        return 0.0;
    }
    row_acc / per_axis as f64 + col_acc / per_axis as f64
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PcaResult {
    /// (D, k): orthonormal components as columns, descending variance.
    pub components: Mat,
    /// Fraction of total variance per kept component; non-increasing,
    /// sums to <= 1.
    pub explained_variance_ratios: Vec<f64>,
    /// (N, k) projections of the centered rows.
    pub projections: Mat,
}

/// PCA of latent vectors (rows = samples). Errors when `k` exceeds the
/// numerical rank of the covariance.
pub fn latent_pca(latents: &Mat, k: usize) -> Result<PcaResult> {
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if latents.rows < k {
        return Err(Error::Config(format!(
            "need at least k={k} samples, got {}",
            latents.rows
        )));
    }
    if latents.rows < 2 {
        return Err(Error::Config("PCA needs at least 2 samples".into()));
    }
    let cov = latents.covariance();
    let (vals, vecs) = sym_eig(&cov)?;
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let lead = vals[0].max(0.0);
    let rank = vals
        .iter()
        .filter(|&&v| v > lead * 1e-12 && v > 1e-300)
        .count();
    if k > rank {
        return Err(Error::Config(format!(
            "k={k} exceeds covariance rank {rank}"
        )));
    }
    let d = cov.rows;
    let mut components = Mat::zeros(d, k);
    for c in 0..k {
        for r in 0..d {
            *components.at_mut(r, c) = vecs.at(r, c);
        }
    }
    let ratios: Vec<f64> = vals[..k]
        .iter()
        .map(|&v| if total > 0.0 { v.max(0.0) / total } else { 0.0 })
        .collect();
    let projections = latents.centered().matmul(&components);
    Ok(PcaResult {
        components,
        explained_variance_ratios: ratios,
        projections,
    })
}

/// Flattened latent means, one row per image.
pub fn latent_mu_rows(model: &VaeModel, x: &Tensor) -> Result<Mat> {
    let dist = model.encode(x)?;
    let d = dist.dims_per_sample();
    let mut m = Mat::zeros(x.n, d);
    for i in 0..x.n {
        m.data[i * d..(i + 1) * d].copy_from_slice(dist.mu.sample(i));
    }
    Ok(m)
}

pub fn projections_csv(ids: &[String], pca: &PcaResult) -> String {
    let k = pca.projections.cols;
    let mut out = String::from("id");
    for c in 1..=k {
        out.push_str(&format!(",pc{c}"));
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for c in 0..k {
            out.push_str(&format!(",{}", pca.projections.at(i, c)));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// cluster tightness
// ---------------------------------------------------------------------------

/// Deterministic replacement for a scatter-plot eyeball: how far Gaussian
/// pixel noise displaces each latent, against the spread between distinct
/// images' latents.
#[derive(Debug, Clone, Serialize)]
pub struct TightnessReport {
    /// mean over the batch of |E(x).mu - E(clip(x+eta)).mu|.
    pub mean_pair_dist: f64,
    /// mean pairwise latent distance between distinct clean images.
    pub baseline_spread: f64,
    /// mean_pair_dist / baseline_spread; smaller = tighter clusters.
    pub tightness_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn cluster_tightness(
    model: &VaeModel,
    x: &Tensor,
    noise_sigma: f64,
    seed: u64,
) -> Result<TightnessReport> {
    if noise_sigma <= 0.0 {
        return Err(Error::Config(format!(
            "noise_sigma must be > 0, got {noise_sigma}"
        )));
    }
    if x.n < 2 {
        return Err(Error::Data(
            "cluster tightness needs a batch of at least 2 images".into(),
        ));
    }
    let mut rng = Rng::derive(seed, "tightness-noise");
    let mut noisy = x.clone();
    for v in noisy.data.iter_mut() {
        *v = (*v + noise_sigma * rng.normal()).clamp(0.0, 1.0);
    }
    let clean = latent_mu_rows(model, x)?;
    let pert = latent_mu_rows(model, &noisy)?;
    let row_dist = |m: &Mat, a: usize, b_mat: &Mat, b: usize| -> f64 {
        m.row(a)
            .iter()
            .zip(b_mat.row(b))
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let mut pair_acc = 0.0;
    for i in 0..x.n {
        pair_acc += row_dist(&clean, i, &pert, i);
    }
    let mean_pair_dist = pair_acc / x.n as f64;
    let mut spread_acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..x.n {
        for j in (i + 1)..x.n {
            spread_acc += row_dist(&clean, i, &clean, j);
            pairs += 1;
        }
    }
    let baseline_spread = spread_acc / pairs as f64;
    let tightness_ratio = if baseline_spread > 0.0 {
        mean_pair_dist / baseline_spread
    } else {
        f64::INFINITY
    };
    Ok(TightnessReport {
        mean_pair_dist,
        baseline_spread,
        tightness_ratio,
        noise_sigma,
        seed,
    })
}
