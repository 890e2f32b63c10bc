//! Checkpoint directories: a JSON metadata document plus a flat tensor
//! archive keyed by parameter path.
//!
//! Archive layout (little-endian, entries sorted by name so identical
//! parameters serialize to identical bytes):
//!
//! ```text
//! magic "VGT1" | u32 entry count | entries...
//! entry: u16 name len | name utf-8 | u8 ndim | u32 dims... | u64 len | f64 data...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::vae::{VaeConfig, VaeModel};

const MAGIC: &[u8; 4] = b"VGT1";
pub const META_FILE: &str = "meta.json";
pub const TENSOR_FILE: &str = "tensors.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub arch: VaeConfig,
    pub downsample_factor: usize,
    pub freeze_decoder: bool,
    pub has_reference_encoder: bool,
    pub seed: u64,
    /// Free-form training provenance (command, step counts, parent hashes).
    /// Deliberately excludes wall-clock so checkpoints are byte-reproducible.
    pub provenance: BTreeMap<String, String>,
}

pub fn write_archive(path: &Path, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let mut sorted: Vec<&(String, Vec<usize>, Vec<f64>)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, dims, data) in sorted {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if buf.len() < 8 || &buf[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut off = 4;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > buf.len() {
            return Err(bad("truncated archive"));
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| bad("non-utf8 tensor name"))?;
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let raw = take(&mut off, len * 8)?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        entries.push((name, dims, data));
    }
    Ok(entries)
}

/// Write via temp file + rename so concurrent readers never see a torn file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_model(dir: &Path, model: &VaeModel, provenance: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, data| {
        entries.push((name.to_string(), vec![data.len()], data.to_vec()));
    });
    write_archive(&dir.join(TENSOR_FILE), &entries)?;
    let meta = CheckpointMeta {
        format_version: 1,
        arch: model.cfg.clone(),
        downsample_factor: model.cfg.downsample_factor(),
        freeze_decoder: model.freeze_decoder,
        has_reference_encoder: model.reference_encoder.is_some(),
        seed: 0,
        provenance: provenance.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    atomic_write(&dir.join(META_FILE), json.as_bytes())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path,
        msg: e.to_string(),
    })
}

pub fn load_model(dir: &Path) -> Result<(VaeModel, CheckpointMeta)> {
    let meta = load_meta(dir)?;
    let mut model = VaeModel::init(meta.arch.clone(), 0)?;
    model.freeze_decoder = meta.freeze_decoder;
    if meta.has_reference_encoder {
        model.reference_encoder = Some(model.encoder.clone());
    }
    let archive_path = dir.join(TENSOR_FILE);
    let entries = read_archive(&archive_path)?;
    let by_name: BTreeMap<&str, &(String, Vec<usize>, Vec<f64>)> =
        entries.iter().map(|e| (e.0.as_str(), e)).collect();
    let mut missing: Vec<String> = Vec::new();
    let mut mismatched: Vec<String> = Vec::new();
    visit_model_mut(&mut model, &mut |name, slot| match by_name.get(name) {
        Some((_, _, data)) if data.len() == slot.len() => slot.copy_from_slice(data),
        Some(_) => mismatched.push(name.to_string()),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !mismatched.is_empty() {
        return Err(Error::Checkpoint {
            path: archive_path,
            msg: format!("missing params {missing:?}, size-mismatched {mismatched:?}"),
        });
    }
    Ok((model, meta))
}

fn visit_model_mut(model: &mut VaeModel, f: &mut impl FnMut(&str, &mut [f64])) {
    model.encoder.visit_mut("encoder", f);
    model.decoder.visit_mut("decoder", f);
    if let Some(r) = model.reference_encoder.as_mut() {
        r.visit_mut("encoder_ref", f);
    }
}

/// FNV-1a fingerprint of a parameter set selected by path prefix.
pub fn param_hash(model: &VaeModel, prefix: &str) -> u64 {
    let mut bytes: Vec<u8> = Vec::new();
    model.visit_params(&mut |name, data| {
        if name.starts_with(prefix) {
            bytes.extend_from_slice(name.as_bytes());
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    });
    fnv1a64(&bytes)
}

/// Fingerprint of a whole checkpoint's tensor archive file.
pub fn archive_hash(dir: &Path) -> Result<u64> {
    let path = dir.join(TENSOR_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(fnv1a64(&bytes))
}

pub fn checkpoint_exists(dir: &Path) -> bool {
    dir.join(META_FILE).is_file() && dir.join(TENSOR_FILE).is_file()
}

/// Canonical hex form used in manifests and provenance maps.
pub fn hex64(h: u64) -> String {
    format!("{h:016x}")
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub model: VaeModel,
    pub meta: CheckpointMeta,
    pub dir: PathBuf,
    pub hash: u64,
}

pub fn open(dir: &Path) -> Result<LoadedCheckpoint> {
    let (model, meta) = load_model(dir)?;
    let hash = archive_hash(dir)?;
    Ok(LoadedCheckpoint {
        model,
        meta,
        dir: dir.to_path_buf(),
        hash,
    })
}
