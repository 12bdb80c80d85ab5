use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliResult;
use prsfm::Error;

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const PIPELINE_MANIFEST_FILE: &str = "pipeline_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Input path → sha256 (directories expand to their files).
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to `out_dir` → sha256.
    pub outputs: BTreeMap<String, String>,
    pub summary: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Every file under `dir`, sorted, relative to it.
pub fn list_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).expect("listed under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn hash_inputs(paths: &[&Path]) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for &p in paths {
        if p.is_dir() {
            for rel in list_files(p)? {
                let full = p.join(&rel);
                out.insert(full.display().to_string(), sha256_file(&full)?);
            }
        } else {
            out.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    Ok(out)
}

/// Hashes of everything under `dir` except run and pipeline manifests.
pub fn hash_outputs(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for rel in list_files(dir)? {
        if rel.file_name().is_some_and(|n| n == MANIFEST_FILE || n == PIPELINE_MANIFEST_FILE) {
            continue;
        }
        out.insert(rel.display().to_string(), sha256_file(&dir.join(&rel))?);
    }
    Ok(out)
}

pub fn write(dir: &Path, m: &RunManifest) -> CliResult<()> {
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(m)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}
