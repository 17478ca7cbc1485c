//! On-disk snapshot store: a manifest plus one JSON file per window.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureStats, Snapshot};
use crate::error::{Error, Result};
use crate::ingest::WindowIndex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub bin_hours: u64,
    pub windows: Vec<WindowIndex>,
    /// Transactions kept per window after subsampling.
    pub record_counts: Vec<usize>,
    pub n_features: usize,
    pub vocabulary: Vec<String>,
    pub feature_names: Vec<String>,
    /// Training windows the statistics were fitted on.
    pub stats_windows: Vec<usize>,
    pub stats: Option<FeatureStats>,
}

fn window_file(window_id: usize) -> String {
    format!("window_{window_id:05}.json")
}

/// Writes the manifest and every snapshot into `dir`, creating it if needed.
pub fn write_store(dir: &Path, manifest: &Manifest, snapshots: &[Snapshot]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in snapshots {
        fs::write(dir.join(window_file(s.window_id)), serde_json::to_vec(s)?)?;
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads the manifest and whichever window files are present, in window
/// order. Windows whose file was removed are simply absent from the result.
pub fn read_store(dir: &Path) -> Result<(Manifest, Vec<Snapshot>)> {
    let manifest = read_manifest(dir)?;
    let mut snapshots = Vec::new();
    for w in &manifest.windows {
        let path = dir.join(window_file(w.window_id));
        if !path.exists() {
            continue;
        }
        let s: Snapshot = serde_json::from_slice(&fs::read(&path)?)?;
        s.adjacency.validate()?;
        if s.window_id != w.window_id
            || s.features.rows() != s.n_nodes()
            || s.features.cols() != manifest.n_features
            || s.labels.len() != s.n_nodes()
            || s.prev_index.len() != s.n_nodes()
            || s.adjacency.n() != s.n_nodes()
        {
            return Err(Error::Consistency(format!("{} does not match the manifest", path.display())));
        }
        snapshots.push(s);
    }
    Ok((manifest, snapshots))
}
