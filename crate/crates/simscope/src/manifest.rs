//! The JSON index written next to a run's activation dumps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simscope_core::vae::ObjectiveConfig;
use simscope_core::{ActivationMatrix, Matrix};

use crate::format::read_dump;
use crate::fsutil;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRef {
    pub name: String,
    /// Path relative to the run directory.
    pub file: String,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: u64,
    pub layers: Vec<DumpRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub factor_sizes: Vec<usize>,
    pub image_size: usize,
    pub train_fraction: f64,
    /// Seed of the train/test split and the evaluation sample.
    pub data_seed: u64,
    pub eval_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub objective: ObjectiveConfig,
    pub regularisation: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dataset: DatasetInfo,
    /// SHA-256 of the evaluation batch, hex encoded.
    pub eval_fingerprint: String,
    pub layers: Vec<String>,
    pub snapshots: Vec<SnapshotEntry>,
}

/// SHA-256 over the batch shape and its values as little-endian f64.
pub fn fingerprint(batch: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((batch.rows() as u64).to_le_bytes());
    h.update((batch.cols() as u64).to_le_bytes());
    for v in batch.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = manifest_path(dir);
        let bytes = fsutil::read(&path)?;
        let m: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Manifest { path: path.clone(), message: e.to_string() })?;
        m.validate().map_err(|message| Error::Manifest { path, message })?;
        Ok(m)
    }

    /// Loads the manifest in `dir` if one exists.
    pub fn load_existing(dir: &Path) -> Result<Option<Self>> {
        if manifest_path(dir).exists() {
            Self::load(dir).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self).expect("manifest serialises");
        json.push(b'\n');
        fsutil::write_atomic(&manifest_path(dir), &json)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.format_version != MANIFEST_VERSION {
            return Err(format!("unsupported manifest version {}", self.format_version));
        }
        let mut last = None;
        for s in &self.snapshots {
            if last.is_some_and(|l| s.step <= l) {
                return Err(format!("snapshot steps are not increasing at step {}", s.step));
            }
            last = Some(s.step);
            let names: Vec<&str> = s.layers.iter().map(|l| l.name.as_str()).collect();
            if names != self.layers.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(format!("snapshot {} lists layers {names:?}, expected {:?}", s.step, self.layers));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self, step: u64) -> Option<&SnapshotEntry> {
        self.snapshots.iter().find(|s| s.step == step)
    }

    pub fn final_snapshot(&self) -> Option<&SnapshotEntry> {
        self.snapshots.last()
    }

    /// Short human-readable identity, e.g. `beta_vae(reg=16, seed=0)`.
    pub fn label(&self) -> String {
        format!("{}(reg={}, seed={})", self.objective.kind, self.regularisation, self.seed)
    }

    /// Reads every dump of snapshot `step`, checking names and shapes
    /// against the manifest.
    pub fn load_snapshot(&self, dir: &Path, step: u64) -> Result<Vec<ActivationMatrix>> {
        let snap = self.snapshot(step).ok_or_else(|| Error::Manifest {
            path: manifest_path(dir),
            message: format!("no snapshot at step {step}"),
        })?;
        snap.layers
            .iter()
            .map(|r| {
                let path = dir.join(&r.file);
                let m = read_dump(&path)?;
                if m.layer_name() != r.name || m.n() != r.n || m.p() != r.p {
                    return Err(Error::Format {
                        path,
                        message: format!(
                            "holds `{}` {}x{}, manifest expects `{}` {}x{}",
                            m.layer_name(),
                            m.n(),
                            m.p(),
                            r.name,
                            r.n,
                            r.p
                        ),
                    });
                }
                Ok(m)
            })
            .collect()
    }
}

/// Fails unless every manifest carries the same evaluation fingerprint.
pub fn check_fingerprints<'a>(runs: impl IntoIterator<Item = (&'a Path, &'a RunManifest)>) -> Result<()> {
    let mut first: Option<(&Path, &str)> = None;
    for (dir, m) in runs {
        match first {
            None => first = Some((dir, &m.eval_fingerprint)),
            Some((d0, f0)) if f0 != m.eval_fingerprint => {
                return Err(Error::Consistency(format!(
                    "evaluation batch of {} ({}) differs from that of {} ({})",
                    dir.display(),
                    &m.eval_fingerprint[..12.min(m.eval_fingerprint.len())],
                    d0.display(),
                    &f0[..12.min(f0.len())]
                )))
            }
            _ => {}
        }
    }
    Ok(())
}
