use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Hashes of every input, keyed by path.
pub fn input_hashes(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
}

/// JSON envelope around a command's payload.
#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub run: &'a RunConfig,
    pub input_sha256: &'a BTreeMap<String, String>,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Provenance for outputs that cannot carry it themselves (audio, CSV, plain presets).
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub run: &'a RunConfig,
    pub input_sha256: &'a BTreeMap<String, String>,
    pub output_sha256: BTreeMap<String, String>,
}

pub fn write_manifest(path: &Path, run: &RunConfig, inputs: &BTreeMap<String, String>, outputs: &[PathBuf]) -> Result<()> {
    let m = Manifest {
        run,
        input_sha256: inputs,
        output_sha256: input_hashes(outputs)?,
    };
    write_json(path, &m)
}

pub fn write_enveloped<T: Serialize>(path: &Path, run: &RunConfig, inputs: &BTreeMap<String, String>, body: T) -> Result<()> {
    write_json(
        path,
        &Envelope {
            run,
            input_sha256: inputs,
            body,
        },
    )
}
