//! Records to standardized, linked snapshots with a chronological split.

use crate::error::Result;
use crate::graph::{build_snapshots, feature_names, standardize_features, Manifest, Snapshot, BASE_FEATURES};
use crate::ingest::{assign_windows, stratified_indices, type_vocabulary, TransactionRecord};
use crate::trainer::{chronological_split, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub bin_hours: u64,
    pub cap: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub snapshots: Vec<Snapshot>,
    /// `None` when there are too few non-empty windows to split.
    pub split: Option<Split>,
}

/// Windows, subsamples, builds and links snapshots, splits them and
/// standardizes features with training-window statistics.
pub fn build_dataset(records: &[TransactionRecord], opts: &BuildOptions) -> Result<Dataset> {
    let (window_ids, windows) = assign_windows(records, opts.bin_hours)?;
    let keep = stratified_indices(&window_ids, opts.cap, opts.seed)?;
    let kept: Vec<TransactionRecord> = keep.iter().map(|&i| records[i].clone()).collect();
    let kept_ids: Vec<usize> = keep.iter().map(|&i| window_ids[i]).collect();
    let mut record_counts = vec![0usize; windows.len()];
    kept_ids.iter().for_each(|&w| record_counts[w] += 1);
    let vocabulary = type_vocabulary(records);
    let mut snapshots = build_snapshots(&kept, &kept_ids, windows.len(), &vocabulary)?;
    let split = chronological_split(&snapshots, opts.train_frac, opts.val_frac).ok();
    let stats = match &split {
        Some(s) => Some(standardize_features(&mut snapshots, &s.train)?),
        None => None,
    };
    let manifest = Manifest {
        bin_hours: opts.bin_hours,
        windows,
        record_counts,
        n_features: BASE_FEATURES.len() + vocabulary.len(),
        feature_names: feature_names(&vocabulary),
        vocabulary,
        stats_windows: split.as_ref().map(|s| s.train.clone()).unwrap_or_default(),
        stats,
    };
    Ok(Dataset { manifest, snapshots, split })
}
