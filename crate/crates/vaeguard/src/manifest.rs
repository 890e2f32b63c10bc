//! Run manifests and artifact directories.
//!
//! Every CLI run gets one directory (timestamp + short config hash, or an
//! explicit `--run-dir`) and writes exactly one `manifest.json` there, plus
//! one line appended to the artifact root's `manifests.jsonl` ledger. The
//! wall-clock field is the only part of a manifest allowed to differ between
//! identically-seeded runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::checkpoint::atomic_write;
use crate::error::{Error, Result};

pub const ARTIFACT_ROOT_ENV: &str = "VAEGUARD_ARTIFACTS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEDGER_FILE: &str = "manifests.jsonl";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved configuration snapshot (flag > file > default already applied).
    pub config: serde_json::Value,
    /// Input checkpoint fingerprints, keyed by role.
    pub input_checkpoints: BTreeMap<String, String>,
    /// Output artifact paths relative to the run directory.
    pub outputs: Vec<String>,
    /// Every seed the run consumed, keyed by purpose.
    pub seed_set: BTreeMap<String, u64>,
    /// Analysis scalars and other per-run extras.
    pub details: BTreeMap<String, serde_json::Value>,
    /// ISO-8601 UTC; excluded from byte-identity comparisons.
    pub wall_clock_utc: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            input_checkpoints: BTreeMap::new(),
            outputs: Vec::new(),
            seed_set: BTreeMap::new(),
            details: BTreeMap::new(),
            wall_clock_utc: iso8601_utc_now(),
        }
    }
}

/// Artifact root: $VAEGUARD_ARTIFACTS or ./runs.
pub fn artifact_root() -> PathBuf {
    std::env::var_os(ARTIFACT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Fresh run directory `<root>/<timestamp>-<subcommand>-<confighash>`;
/// a numeric suffix resolves collisions within one second.
pub fn create_run_dir(root: &Path, subcommand: &str, config_hash: &str) -> Result<PathBuf> {
    let stamp = compact_timestamp();
    let base = format!("{stamp}-{subcommand}-{config_hash}");
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = root.join(format!("{base}-{k}"));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Write the manifest into the run dir and append it to the root ledger.
pub fn write_manifest(run_dir: &Path, root: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    atomic_write(&run_dir.join(MANIFEST_FILE), json.as_bytes())?;
    let line = serde_json::to_string(manifest).expect("manifest serializes");
    let ledger = root.join(LEDGER_FILE);
    let mut text = if ledger.exists() {
        std::fs::read_to_string(&ledger).map_err(|e| Error::io(&ledger, e))?
    } else {
        String::new()
    };
    text.push_str(&line);
    text.push('\n');
    atomic_write(&ledger, text.as_bytes())
}

fn compact_timestamp() -> String {
    let (date, time) = civil_from_unix(unix_seconds());
    format!(
        "{:04}{:02}{:02}T{:02}{:02}{:02}Z",
        date.0, date.1, date.2, time.0, time.1, time.2
    )
}

pub fn iso8601_utc_now() -> String {
    let (date, time) = civil_from_unix(unix_seconds());
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
        date.0, date.1, date.2, time.0, time.1, time.2
    )
}

fn unix_seconds() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

/// Proleptic Gregorian date from a unix timestamp (civil-from-days).
fn civil_from_unix(secs: i64) -> ((i64, u32, u32), (u32, u32, u32)) {
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400) as u32;
    let (h, m, s) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = if month <= 2 { y + 1 } else { y };
    ((year, month, d), (h, m, s))
}
