//! Resolved-config snapshots with content hashes of the inputs.

use std::fs::File;
use std::io;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SNAPSHOT_FILE: &str = "run_config.json";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSnapshot {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub input_hash: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(h.finalize()))
}

impl RunSnapshot {
    /// `inputs` pairs a stable display name with the file to hash.
    pub fn new<P: AsRef<Path>>(
        command: &str,
        config: serde_json::Value,
        inputs: &[(String, P)],
    ) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|(name, p)| {
                Ok(InputDigest {
                    name: name.clone(),
                    sha256: hash_file(p.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        for d in &inputs {
            h.update(d.name.as_bytes());
            h.update([0]);
            h.update(d.sha256.as_bytes());
            h.update([b'\n']);
        }
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            inputs,
            input_hash: hex::encode(h.finalize()),
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        rimscan_core::export::write_json(&out_dir.join(SNAPSHOT_FILE), self)?;
        Ok(())
    }
}
