//! Dataset ingestion, deterministic splitting, and batching.
//!
//! A dataset is a directory tree of PNG/JPEG files; ids are root-relative
//! paths. Images are center-cropped square, resized with an antialiased
//! bilinear filter, and cached as 8-bit; batches materialize to f64 in [0,1]
//! on demand. All ordering flows from explicit seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, Rng};
use crate::tensor::Tensor;

/// A batch of images in [0,1] with stable per-sample identifiers.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    /// (N, C, H, W), every value in [0,1].
    pub pixels: Tensor,
    pub ids: Vec<String>,
}

impl ImageBatch {
    pub fn new(pixels: Tensor, ids: Vec<String>) -> Result<Self> {
        let batch = ImageBatch { pixels, ids };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, h, w) = self.pixels.shape();
        if n < 1 {
            return Err(Error::Data("batch must contain at least one image".into()));
        }
        if self.ids.len() != n {
            return Err(Error::Data(format!("{} ids for {n} images", self.ids.len())));
        }
        if !(c == 1 || c == 3) {
            return Err(Error::Data(format!("channel count {c} not in {{1,3}}")));
        }
        if h < 8 || w < 8 {
            return Err(Error::Data(format!("resolution {h}x{w} below minimum 8x8")));
        }
        if self.pixels.min() < 0.0 || self.pixels.max() > 1.0 {
            return Err(Error::Data("pixel values escape [0,1]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pixels.n
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.n == 0
    }
}

/// Where a corpus lives and how it is split.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// Target (height, width) after center-crop and resize.
    pub resolution: (usize, usize),
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub channels: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.val_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1.0, got {sum}"
            )));
        }
        if self.train_fraction < 0.0 || self.val_fraction < 0.0 {
            return Err(Error::Config("split fractions must be nonnegative".into()));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.resolution.0 < 8 || self.resolution.1 < 8 {
            return Err(Error::Config(format!(
                "resolution {}x{} below minimum 8x8",
                self.resolution.0, self.resolution.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Decoded, resized corpus cached as 8-bit pixels.
#[derive(Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    ids: Vec<String>,
    images: Vec<Vec<u8>>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

impl Dataset {
    pub fn split_ids(&self, split: Split) -> Vec<&str> {
        self.indices(split)
            .iter()
            .map(|&i| self.ids[i].as_str())
            .collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.indices(split).len()
    }

    fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_idx,
            Split::Val => &self.val_idx,
        }
    }

    /// FNV-1a over the sorted id list of a split; process-invariant for a
    /// fixed spec.
    pub fn split_hash(&self, split: Split) -> u64 {
        let mut ids = self.split_ids(split);
        ids.sort_unstable();
        let mut bytes = Vec::new();
        for id in ids {
            bytes.extend_from_slice(id.as_bytes());
            bytes.push(0);
        }
        fnv1a64(&bytes)
    }

    fn materialize(&self, indices: &[usize]) -> ImageBatch {
        let (h, w) = self.spec.resolution;
        let c = self.spec.channels;
        let mut pixels = Tensor::zeros(indices.len(), c, h, w);
        let plane = h * w;
        for (bi, &i) in indices.iter().enumerate() {
            let img = &self.images[i];
            for ch in 0..c {
                let dst = pixels.plane_mut(bi, ch);
                for p in 0..plane {
                    dst[p] = img[p * c + ch] as f64 / 255.0;
                }
            }
        }
        let batch = ImageBatch {
            pixels,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        };
        batch.validate().expect("cached corpus yields legal batches");
        batch
    }

    /// One whole split as a single batch (probe sets, analysis anchors).
    pub fn full_batch(&self, split: Split) -> Result<ImageBatch> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Data("requested split is empty".into()));
        }
        Ok(self.materialize(idx))
    }

    /// First `n` images of a split in id order.
    pub fn head_batch(&self, split: Split, n: usize) -> Result<ImageBatch> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Data("requested split is empty".into()));
        }
        let take = n.min(idx.len());
        Ok(self.materialize(&idx[..take]))
    }

    /// Mean image of a split; the constant-predictor baseline.
    pub fn mean_image(&self, split: Split) -> Result<Tensor> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Data("requested split is empty".into()));
        }
        let (h, w) = self.spec.resolution;
        let c = self.spec.channels;
        let mut mean = Tensor::zeros(1, c, h, w);
        for &i in idx {
            let img = &self.images[i];
            for ch in 0..c {
                let dst = mean.plane_mut(0, ch);
                for p in 0..h * w {
                    dst[p] += img[p * c + ch] as f64 / 255.0;
                }
            }
        }
        mean.scale(1.0 / idx.len() as f64);
        Ok(mean)
    }

    /// Deterministic shuffled batches covering the split exactly once.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        shuffle_seed: u64,
    ) -> Result<BatchIter<'_>> {
        if batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let mut order = self.indices(split).to_vec();
        let mut rng = Rng::derive(shuffle_seed, "batch-shuffle");
        rng.shuffle(&mut order);
        Ok(BatchIter {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        })
    }
}

#[derive(Debug)]
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.materialize(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Load every decodable image under `spec.root`, then split by seeded hash
/// rank with exact largest-remainder counts. Undecodable files warn and skip;
/// an empty split is a hard error.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    if !spec.root.is_dir() {
        return Err(Error::Config(format!(
            "dataset root {} does not exist or is not a directory",
            spec.root.display()
        )));
    }
    let mut files = Vec::new();
    collect_image_files(&spec.root, &spec.root, &mut files)?;
    files.sort();
    let mut ids = Vec::new();
    let mut images = Vec::new();
    for rel in files {
        let path = spec.root.join(&rel);
        match decode_and_prepare(&path, spec) {
            Ok(px) => {
                ids.push(rel.replace(std::path::MAIN_SEPARATOR, "/"));
                images.push(px);
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
            }
        }
    }
    if images.len() < 2 {
        return Err(Error::Data(format!(
            "dataset root {} contains {} decodable images, need at least 2",
            spec.root.display(),
            images.len()
        )));
    }

    // rank ids by seeded hash (ties by id), allocate exact counts
    let n = ids.len();
    let mut ranked: Vec<usize> = (0..n).collect();
    let keys: Vec<u64> = ids.iter().map(|id| split_key(spec.split_seed, id)).collect();
    ranked.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(ids[a].cmp(&ids[b])));
    let n_train = train_count(n, spec.train_fraction, spec.val_fraction);
    let mut train_idx: Vec<usize> = ranked[..n_train].to_vec();
    let mut val_idx: Vec<usize> = ranked[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Data(format!(
            "split produced an empty side (train {}, val {})",
            train_idx.len(),
            val_idx.len()
        )));
    }
    Ok(Dataset {
        spec: spec.clone(),
        ids,
        images,
        train_idx,
        val_idx,
    })
}

fn split_key(seed: u64, id: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(id.as_bytes());
    fnv1a64(&bytes)
}

/// Largest-remainder allocation between the two splits; ties favor train.
/// A strictly positive fraction always gets at least one sample when the
/// corpus allows it.
fn train_count(n: usize, f_train: f64, f_val: f64) -> usize {
    let exact_train = f_train * n as f64;
    let n_train = exact_train.floor() as usize;
    let n_val = (f_val * n as f64).floor() as usize;
    let leftover = n - n_train - n_val;
    let r_train = exact_train - n_train as f64;
    let r_val = f_val * n as f64 - n_val as f64;
    let mut n_train = if leftover > 0 && r_train >= r_val {
        n_train + leftover
    } else {
        n_train
    };
    if f_val > 0.0 && n_train == n && n >= 2 {
        n_train -= 1;
    }
    if f_train > 0.0 && n_train == 0 && n >= 2 {
        n_train = 1;
    }
    n_train
}

fn collect_image_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_image_files(root, &path, out)?;
        } else if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
            let ext = ext.to_ascii_lowercase();
            if ext == "png" || ext == "jpg" || ext == "jpeg" {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path under root")
                    .to_string_lossy()
                    .into_owned();
                out.push(rel);
            }
        }
    }
    Ok(())
}

/// Decode, center-crop square, resize (bilinear, antialiased), and convert to
/// the requested channel count. Interleaved u8 output.
fn decode_and_prepare(path: &Path, spec: &DatasetSpec) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("decode failed: {e}")))?;
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side);
    let (th, tw) = spec.resolution;
    let resized = image::imageops::resize(
        &cropped.to_image(),
        tw as u32,
        th as u32,
        FilterType::Triangle,
    );
    let dynamic = image::DynamicImage::ImageRgba8(resized);
    Ok(match spec.channels {
        1 => dynamic.to_luma8().into_raw(),
        3 => dynamic.to_rgb8().into_raw(),
        _ => unreachable!("validated channels"),
    })
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

/// Procedural image: smooth gradient background plus a few soft-edged shapes.
/// Enough structure for the VAE to have something real to compress.
pub fn synth_image(size: usize, channels: usize, rng: &mut Rng) -> Tensor {
    let mut img = Tensor::zeros(1, channels, size, size);
    let cmax = channels.min(3);
    // gradient background between two colors along a random direction
    let ang = rng.uniform_in(0.0, std::f64::consts::TAU);
    let (dx, dy) = (ang.cos(), ang.sin());
    let mut c0 = [0.0; 3];
    let mut c1 = [0.0; 3];
    for c in 0..cmax {
        c0[c] = rng.uniform_in(0.1, 0.9);
        c1[c] = rng.uniform_in(0.1, 0.9);
    }
    for y in 0..size {
        for x in 0..size {
            let t = 0.5
                + 0.5 * ((x as f64 / size as f64 - 0.5) * dx + (y as f64 / size as f64 - 0.5) * dy);
            for c in 0..channels {
                let cc = c.min(cmax - 1);
                *img.at_mut(0, c, y, x) = c0[cc] * (1.0 - t) + c1[cc] * t;
            }
        }
    }
    // soft shapes
    let n_shapes = 1 + rng.below(3);
    for _ in 0..n_shapes {
        let kind = rng.below(3);
        let cx = rng.uniform_in(0.2, 0.8) * size as f64;
        let cy = rng.uniform_in(0.2, 0.8) * size as f64;
        let r = rng.uniform_in(0.1, 0.35) * size as f64;
        let mut color = [0.0; 3];
        for c in 0..cmax {
            color[c] = rng.uniform_in(0.0, 1.0);
        }
        let stripe_ang = rng.uniform_in(0.0, std::f64::consts::TAU);
        let (sx, sy) = (stripe_ang.cos(), stripe_ang.sin());
        for y in 0..size {
            for x in 0..size {
                let fx = x as f64;
                let fy = y as f64;
                let d = match kind {
                    0 => ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() - r,
                    1 => (fx - cx).abs().max((fy - cy).abs()) - r,
                    _ => ((fx - cx) * sx + (fy - cy) * sy).abs() - 0.4 * r,
                };
                // smoothstep edge over ~1.5px
                let a = (0.5 - d / 1.5).clamp(0.0, 1.0);
                let a = a * a * (3.0 - 2.0 * a);
                if a > 0.0 {
                    for c in 0..channels {
                        let cc = c.min(cmax - 1);
                        let v = img.at(0, c, y, x);
                        *img.at_mut(0, c, y, x) = v * (1.0 - a) + color[cc] * a;
                    }
                }
            }
        }
    }
    img.clamp_in_place(0.0, 1.0);
    img
}

/// In-memory synthetic batch; used by tests and the browser demo.
pub fn synth_batch(count: usize, size: usize, channels: usize, seed: u64) -> ImageBatch {
    let mut rng = Rng::derive(seed, "synth-corpus");
    let mut parts = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        parts.push(synth_image(size, channels, &mut rng));
        ids.push(format!("synth/{i:05}.png"));
    }
    ImageBatch::new(Tensor::cat_batch(&parts), ids).expect("synthetic batch is legal")
}

/// Write `count` synthetic PNGs under `dir`.
pub fn write_synth_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = Rng::derive(seed, "synth-corpus");
    for i in 0..count {
        let img = synth_image(size, 3, &mut rng);
        let mut buf = image::RgbImage::new(size as u32, size as u32);
        for y in 0..size {
            for x in 0..size {
                let px = [
                    (img.at(0, 0, y, x) * 255.0).round() as u8,
                    (img.at(0, 1, y, x) * 255.0).round() as u8,
                    (img.at(0, 2, y, x) * 255.0).round() as u8,
                ];
                buf.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        let path = dir.join(format!("{i:05}.png"));
        buf.save(&path)
            .map_err(|e| Error::Data(format!("png write failed for {}: {e}", path.display())))?;
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// batch sources
// ---------------------------------------------------------------------------

/// Something a trainer can draw shuffled epochs from.
pub trait BatchSource {
    fn sample_count(&self) -> usize;
    fn epoch(
        &self,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<Box<dyn Iterator<Item = ImageBatch> + '_>>;
}

/// A split of an on-disk dataset.
pub struct SplitSource<'a> {
    pub dataset: &'a Dataset,
    pub split: Split,
}

impl BatchSource for SplitSource<'_> {
    fn sample_count(&self) -> usize {
        self.dataset.split_len(self.split)
    }

    fn epoch(
        &self,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<Box<dyn Iterator<Item = ImageBatch> + '_>> {
        Ok(Box::new(self.dataset.batches(
            self.split,
            batch_size,
            epoch_seed,
        )?))
    }
}

/// An in-memory corpus (tests, the browser demo).
pub struct MemorySource {
    pub batch: ImageBatch,
}

impl BatchSource for MemorySource {
    fn sample_count(&self) -> usize {
        self.batch.len()
    }

    fn epoch(
        &self,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<Box<dyn Iterator<Item = ImageBatch> + '_>> {
        if batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..self.batch.len()).collect();
        let mut rng = Rng::derive(epoch_seed, "batch-shuffle");
        rng.shuffle(&mut order);
        let chunks: Vec<Vec<usize>> = order
            .chunks(batch_size)
            .map(|chunk| chunk.to_vec())
            .collect();
        let src = &self.batch;
        Ok(Box::new(chunks.into_iter().map(move |chunk| {
            let parts: Vec<Tensor> = chunk.iter().map(|&i| src.pixels.slice_sample(i)).collect();
            ImageBatch {
                pixels: Tensor::cat_batch(&parts),
                ids: chunk.iter().map(|&i| src.ids[i].clone()).collect(),
            }
        })))
    }
}

/// Summary of a loaded corpus for manifests.
pub fn corpus_fingerprint(ds: &Dataset) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("images".into(), ds.ids.len().to_string());
    m.insert("train".into(), ds.split_len(Split::Train).to_string());
    m.insert("val".into(), ds.split_len(Split::Val).to_string());
    m.insert(
        "train_split_hash".into(),
        format!("{:016x}", ds.split_hash(Split::Train)),
    );
    m.insert(
        "val_split_hash".into(),
        format!("{:016x}", ds.split_hash(Split::Val)),
    );
    m
}
