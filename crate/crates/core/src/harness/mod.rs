//! Experiment orchestration: configuration, stages, evaluation and reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, RunConfig};
pub use eval::{evaluate, snr_at_pd, CurvePoint, EvalCurve};
pub use pipeline::{Pipeline, RunManifest, Stage};

/// Writes `bytes` to `path` via a `.partial` sibling and a rename, so a
/// crash never leaves a truncated artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}
