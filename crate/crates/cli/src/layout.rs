//! Where each command reads and writes inside the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sculpt::io::atomic_write;

use crate::error::{CliError, CliResult};

pub struct Layout {
    root: PathBuf,
}

/// Written next to the classifier checkpoints so later commands can tell
/// which expression they were trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierManifest {
    pub expr: String,
    pub stages: usize,
    pub seed: u64,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn base_policy(&self, name: &str) -> PathBuf {
        self.root.join("bases").join(format!("{name}.policy"))
    }

    pub fn base_meta(&self, name: &str) -> PathBuf {
        self.root.join("bases").join(format!("{name}.json"))
    }

    pub fn base_file(&self, name: &str, suffix: &str) -> PathBuf {
        self.root.join("bases").join(format!("{name}{suffix}"))
    }

    pub fn classifier(&self, stage: usize) -> PathBuf {
        self.root.join("classifiers").join(format!("stage{stage}.ckpt"))
    }

    pub fn classifier_losses(&self, stage: usize) -> PathBuf {
        self.root.join("classifiers").join(format!("stage{stage}_loss.csv"))
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("classifiers").join("manifest.json")
    }

    pub fn compose(&self, file: &str) -> PathBuf {
        self.root.join("compose").join(file)
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("report").join(file)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(sculpt::Error::from)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)?;
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &ClassifierManifest) -> CliResult<()> {
        self.write_json(&self.manifest(), manifest)
    }

    /// The classifier manifest if classifiers were trained for `expr`.
    /// A manifest for a different expression is an error.
    pub fn manifest_for(&self, expr: &str) -> CliResult<Option<ClassifierManifest>> {
        let path = self.manifest();
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        let m: ClassifierManifest = serde_json::from_slice(&bytes).map_err(sculpt::Error::from)?;
        if m.expr != expr {
            return Err(CliError::MissingCheckpoint(format!(
                "classifiers in {} were trained for `{}`, not `{expr}`",
                path.display(),
                m.expr
            )));
        }
        Ok(Some(m))
    }
}

pub fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingCheckpoint(format!("{what} not found at {}", path.display())))
    }
}

/// CSV with a header row; every value formatted with `{:e}` except integers.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| sculpt::Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| sculpt::Error::Io(e.to_string()))?;
    atomic_write(path, &bytes)?;
    Ok(())
}
