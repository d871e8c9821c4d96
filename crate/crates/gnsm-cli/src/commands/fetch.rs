//! `gnsm fetch`: download a dataset named in a checksum manifest and
//! verify its SHA-256 before anything lands on disk. A digest mismatch is
//! a binding failure (exit code 5) and leaves no file behind.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;

use clap::Args;
use gnsm::checkpoint::sha256_hex;
use gnsm::error::{Error, Result};
use serde::Deserialize;

use crate::config::CONFIG_DIR_ENV;

/// Refuse downloads beyond this size; the benchmark archives are far
/// smaller, and an unbounded read is a memory hazard.
const MAX_BYTES: u64 = 1 << 30;

#[derive(Args, Debug)]
pub struct FetchArgs {
    /// Manifest entry to download.
    #[arg(long)]
    pub name: String,

    /// Directory the verified file is written into (as <name>).
    #[arg(long)]
    pub out: PathBuf,

    /// Manifest JSON: {"<name>": {"url", "sha256"}}. Defaults to
    /// $GNSM_CONFIG_DIR/datasets.json, then ./config/datasets.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    #[serde(default)]
    url: String,
    #[serde(default)]
    sha256: String,
    #[serde(default)]
    note: Option<String>,
}

fn manifest_path(args: &FetchArgs) -> PathBuf {
    if let Some(path) = &args.manifest {
        return path.clone();
    }
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let candidate = PathBuf::from(dir).join("datasets.json");
        if candidate.exists() {
            return candidate;
        }
    }
    PathBuf::from("config/datasets.json")
}

pub fn run(args: &FetchArgs) -> Result<()> {
    let path = manifest_path(args);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Io(format!("manifest {}: {e}", path.display())))?;
    let manifest: BTreeMap<String, ManifestEntry> = serde_json::from_str(&text)?;
    let entry = manifest.get(&args.name).ok_or_else(|| {
        Error::Validation(format!(
            "no manifest entry {:?}; available: {}",
            args.name,
            manifest.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let digest_ok =
        entry.sha256.len() == 64 && entry.sha256.chars().all(|c| c.is_ascii_hexdigit());
    if entry.url.is_empty() || !digest_ok {
        let note = entry
            .note
            .as_deref()
            .map(|n| format!(" ({n})"))
            .unwrap_or_default();
        return Err(Error::Validation(format!(
            "manifest entry {:?} has no pinned url/sha256{note}; \
             download it manually, compute `sha256sum`, and fill the manifest",
            args.name
        )));
    }

    let response = ureq::get(&entry.url)
        .call()
        .map_err(|e| Error::Io(format!("fetch {}: {e}", entry.url)))?;
    let mut bytes = Vec::new();
    response
        .into_reader()
        .take(MAX_BYTES + 1)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Io(format!("fetch {}: {e}", entry.url)))?;
    if bytes.len() as u64 > MAX_BYTES {
        return Err(Error::Io(format!(
            "fetch {}: response exceeds the {MAX_BYTES}-byte limit",
            entry.url
        )));
    }
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256.to_ascii_lowercase() {
        return Err(Error::Binding(format!(
            "{}: digest {digest} does not match the pinned sha256 {}; nothing written",
            args.name, entry.sha256
        )));
    }
    std::fs::create_dir_all(&args.out)?;
    let dest = args.out.join(&args.name);
    std::fs::write(&dest, &bytes)?;
    println!(
        "fetched {} ({} bytes, sha256 verified) -> {}",
        args.name,
        bytes.len(),
        dest.display()
    );
    Ok(())
}
