//! Per-window entity graphs.
//!
//! A [`Snapshot`] holds the accounts active in one window in lexicographic
//! order, the directed binary transfer pattern between them, raw per-account
//! features and the derived fraud labels. Propagation always goes through the
//! symmetrized, self-looped and degree-normalized operator from
//! [`normalize_adjacency`].

mod sparse;
mod store;

pub use sparse::SparseMatrix;
pub use store::{read_manifest, read_store, write_store, Manifest, MANIFEST_FILE};

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TransactionRecord;
use crate::numcore::Tensor2;

/// Floor applied to feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Structural and monetary columns preceding the per-type fractions.
pub const BASE_FEATURES: [&str; 12] = [
    "in_degree",
    "out_degree",
    "tx_count_src",
    "tx_count_dst",
    "sent_sum",
    "sent_mean",
    "sent_max",
    "recv_sum",
    "recv_mean",
    "recv_max",
    "net_balance_change_src",
    "net_balance_change_dst",
];

/// Column names for a given type vocabulary.
pub fn feature_names(vocabulary: &[String]) -> Vec<String> {
    BASE_FEATURES.iter().map(|s| s.to_string()).chain(vocabulary.iter().map(|t| format!("type_frac_{t}"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub window_id: usize,
    pub node_ids: Vec<String>,
    /// Directed binary pattern: (i, j) present iff i sent to j in the window.
    pub adjacency: SparseMatrix,
    pub features: Tensor2,
    pub labels: Vec<u8>,
    /// Row of the same entity in the previous window, if it was active there.
    pub prev_index: Vec<Option<usize>>,
}

impl Snapshot {
    pub fn empty(window_id: usize, n_features: usize) -> Self {
        Self {
            window_id,
            node_ids: Vec::new(),
            adjacency: SparseMatrix::empty(0),
            features: Tensor2::zeros(0, n_features),
            labels: Vec::new(),
            prev_index: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }

    pub fn normalized_adjacency(&self) -> SparseMatrix {
        normalize_adjacency(&self.adjacency)
    }
}

fn sorted_entities<R: Borrow<TransactionRecord>>(records: &[R]) -> Vec<String> {
    let mut ids: Vec<String> = records
        .iter()
        .flat_map(|r| {
            let r = r.borrow();
            [r.src_id.clone(), r.dst_id.clone()]
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn index_of(node_ids: &[String], id: &str) -> Result<usize> {
    node_ids
        .binary_search_by(|n| n.as_str().cmp(id))
        .map_err(|_| Error::Consistency(format!("entity {id:?} missing from node index")))
}

/// Builds the snapshot of one window. Every record is assumed to belong to
/// `window_id`; `vocabulary` fixes the type-fraction columns.
pub fn build_snapshot<R: Borrow<TransactionRecord>>(
    window_id: usize,
    records: &[R],
    vocabulary: &[String],
) -> Result<Snapshot> {
    let n_features = BASE_FEATURES.len() + vocabulary.len();
    if records.is_empty() {
        return Ok(Snapshot::empty(window_id, n_features));
    }
    let node_ids = sorted_entities(records);
    let n = node_ids.len();
    let type_col: BTreeMap<&str, usize> =
        vocabulary.iter().enumerate().map(|(k, t)| (t.as_str(), BASE_FEATURES.len() + k)).collect();

    let mut edges = Vec::with_capacity(records.len());
    let mut x = Tensor2::zeros(n, n_features);
    let mut type_counts = vec![vec![0usize; vocabulary.len()]; n];
    for r in records {
        let r = r.borrow();
        let s = index_of(&node_ids, &r.src_id)?;
        let d = index_of(&node_ids, &r.dst_id)?;
        edges.push((s, d));
        let col = *type_col
            .get(r.tx_type.as_str())
            .ok_or_else(|| Error::Consistency(format!("type {:?} not in vocabulary", r.tx_type)))?;
        let k = col - BASE_FEATURES.len();
        type_counts[s][k] += 1;
        type_counts[d][k] += 1;

        let srow = x.row_mut(s);
        srow[2] += 1.0;
        srow[4] += r.amount;
        srow[6] = srow[6].max(r.amount);
        srow[10] += r.src_balance_after - r.src_balance_before;
        let drow = x.row_mut(d);
        drow[3] += 1.0;
        drow[7] += r.amount;
        drow[9] = drow[9].max(r.amount);
        drow[11] += r.dst_balance_after - r.dst_balance_before;
    }
    let adjacency = SparseMatrix::from_pattern(n, &edges)?;
    let in_degree = adjacency.transpose();
    for i in 0..n {
        let out_deg = adjacency.row(i).0.len() as f64;
        let in_deg = in_degree.row(i).0.len() as f64;
        let row = x.row_mut(i);
        row[0] = in_deg;
        row[1] = out_deg;
        if row[2] > 0.0 {
            row[5] = row[4] / row[2];
        }
        if row[3] > 0.0 {
            row[8] = row[7] / row[3];
        }
        let total = row[2] + row[3];
        for (k, &c) in type_counts[i].iter().enumerate() {
            row[BASE_FEATURES.len() + k] = c as f64 / total;
        }
    }
    let labels = derive_labels(records, &node_ids)?;
    Ok(Snapshot { window_id, node_ids, adjacency, features: x, labels, prev_index: vec![None; n] })
}

/// `y_i = 1` iff entity `i` took part, on either side, in a fraudulent record.
/// `node_ids` must be sorted.
pub fn derive_labels<R: Borrow<TransactionRecord>>(records: &[R], node_ids: &[String]) -> Result<Vec<u8>> {
    let mut y = vec![0u8; node_ids.len()];
    for r in records {
        let r = r.borrow();
        let s = index_of(node_ids, &r.src_id)?;
        let d = index_of(node_ids, &r.dst_id)?;
        if r.is_fraud {
            y[s] = 1;
            y[d] = 1;
        }
    }
    Ok(y)
}

/// `D^-1/2 (A ∨ Aᵀ ∨ I) D^-1/2` on the binary pattern of `a`.
pub fn normalize_adjacency(a: &SparseMatrix) -> SparseMatrix {
    let n = a.n();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(2 * a.nnz() + n);
    for (r, c, _) in a.iter() {
        edges.push((r, c));
        edges.push((c, r));
    }
    edges.extend((0..n).map(|i| (i, i)));
    let pattern = SparseMatrix::from_pattern(n, &edges).expect("edges within bounds");
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / (pattern.row(i).0.len() as f64).sqrt()).collect();
    let values: Vec<f64> = pattern.iter().map(|(r, c, _)| inv_sqrt[r] * inv_sqrt[c]).collect();
    SparseMatrix::from_csr(n, pattern.offsets().to_vec(), pattern.indices().to_vec(), values)
        .expect("pattern already valid")
}

/// `Â^k X` by repeated sparse products.
pub fn khop_apply(a_hat: &SparseMatrix, x: &Tensor2, k: usize) -> Result<Tensor2> {
    if x.rows() != a_hat.n() {
        return Err(Error::Shape(format!("operator is {}x{}, features have {} rows", a_hat.n(), a_hat.n(), x.rows())));
    }
    let mut out = x.clone();
    for _ in 0..k {
        out = a_hat.mul_dense(&out)?;
    }
    Ok(out)
}

/// Every hop `Â^0 X, …, Â^K X`.
pub fn khop_stack(a_hat: &SparseMatrix, x: &Tensor2, k_max: usize) -> Result<Vec<Tensor2>> {
    let mut hops = vec![khop_apply(a_hat, x, 0)?];
    for _ in 0..k_max {
        let next = a_hat.mul_dense(hops.last().expect("non-empty"))?;
        hops.push(next);
    }
    Ok(hops)
}

/// Fills `curr.prev_index` from entity identity with `prev`.
pub fn link_temporal(prev: Option<&Snapshot>, curr: &mut Snapshot) -> Result<()> {
    match prev {
        None => curr.prev_index = vec![None; curr.n_nodes()],
        Some(p) => {
            if p.window_id + 1 != curr.window_id {
                return Err(Error::Protocol(format!(
                    "cannot link window {} to window {}",
                    p.window_id, curr.window_id
                )));
            }
            curr.prev_index = curr.node_ids.iter().map(|id| p.position(id)).collect();
        }
    }
    Ok(())
}

/// Links each snapshot to its predecessor when that predecessor is present.
pub fn link_sequence(snapshots: &mut [Snapshot]) -> Result<()> {
    snapshots.sort_by_key(|s| s.window_id);
    for t in 0..snapshots.len() {
        let (head, tail) = snapshots.split_at_mut(t);
        let prev = head.last().filter(|p| p.window_id + 1 == tail[0].window_id);
        link_temporal(prev, &mut tail[0])?;
    }
    Ok(())
}

/// Groups records by window and builds one linked snapshot per window in
/// `0..n_windows`, empty windows included.
pub fn build_snapshots(
    records: &[TransactionRecord],
    window_ids: &[usize],
    n_windows: usize,
    vocabulary: &[String],
) -> Result<Vec<Snapshot>> {
    if records.len() != window_ids.len() {
        return Err(Error::Shape(format!("{} records but {} window ids", records.len(), window_ids.len())));
    }
    let mut groups: Vec<Vec<&TransactionRecord>> = vec![Vec::new(); n_windows];
    for (r, &w) in records.iter().zip(window_ids) {
        groups.get_mut(w).ok_or_else(|| Error::Consistency(format!("window {w} beyond {n_windows} windows")))?.push(r);
    }
    let mut snapshots =
        groups.iter().enumerate().map(|(w, g)| build_snapshot(w, g, vocabulary)).collect::<Result<Vec<_>>>()?;
    link_sequence(&mut snapshots)?;
    Ok(snapshots)
}

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn apply(&self, x: &mut Tensor2) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!("{} feature columns, stats cover {}", x.cols(), self.mean.len())));
        }
        for r in 0..x.rows() {
            for ((v, m), s) in x.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Mean and floored population std over all nodes of the training windows.
pub fn feature_stats(snapshots: &[Snapshot], train_window_ids: &[usize]) -> Result<FeatureStats> {
    if train_window_ids.is_empty() {
        return Err(Error::Argument("standardization needs at least one training window".into()));
    }
    let f = snapshots.first().map_or(0, |s| s.features.cols());
    let train: Vec<&Snapshot> = snapshots.iter().filter(|s| train_window_ids.contains(&s.window_id)).collect();
    let n: usize = train.iter().map(|s| s.n_nodes()).sum();
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    if n > 0 {
        for s in &train {
            for r in 0..s.n_nodes() {
                for (m, v) in mean.iter_mut().zip(s.features.row(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for s in &train {
            for r in 0..s.n_nodes() {
                for ((acc, v), m) in var.iter_mut().zip(s.features.row(r)).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
    }
    let std = var.iter().map(|v| if n > 0 { (v / n as f64).sqrt().max(STD_FLOOR) } else { 1.0 }).collect();
    Ok(FeatureStats { mean, std })
}

/// Z-scores every snapshot with statistics from the training windows only.
pub fn standardize_features(snapshots: &mut [Snapshot], train_window_ids: &[usize]) -> Result<FeatureStats> {
    let stats = feature_stats(snapshots, train_window_ids)?;
    for s in snapshots.iter_mut() {
        stats.apply(&mut s.features)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(src: &str, dst: &str, amount: f64, fraud: bool) -> TransactionRecord {
        TransactionRecord {
            step: 0,
            tx_type: "PAYMENT".into(),
            amount,
            src_id: src.into(),
            dst_id: dst.into(),
            src_balance_before: amount,
            src_balance_after: 0.0,
            dst_balance_before: 0.0,
            dst_balance_after: amount,
            is_fraud: fraud,
        }
    }

    fn vocab() -> Vec<String> {
        crate::ingest::CANONICAL_TX_TYPES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_record_features() {
        let s = build_snapshot(0, &[rec("A", "B", 10.0, false)], &vocab()).unwrap();
        assert_eq!(s.node_ids, vec!["A", "B"]);
        assert_eq!(s.features.cols(), 12 + 5);
        let a = s.features.row(0);
        assert_eq!((a[0], a[1], a[2], a[4], a[5], a[6], a[10]), (0.0, 1.0, 1.0, 10.0, 10.0, 10.0, -10.0));
        let b = s.features.row(1);
        assert_eq!((b[0], b[1], b[3], b[7], b[8], b[9], b[11]), (1.0, 0.0, 1.0, 10.0, 10.0, 10.0, 10.0));
        // PAYMENT is the fourth vocabulary entry.
        assert_eq!(a[12 + 3], 1.0);
        assert_eq!(s.labels, vec![0, 0]);
        assert_eq!(s.adjacency.get(0, 1), 1.0);
        assert_eq!(s.adjacency.get(1, 0), 0.0);
    }

    #[test]
    fn fraud_labels_both_endpoints() {
        let s = build_snapshot(0, &[rec("A", "B", 10.0, true)], &vocab()).unwrap();
        assert_eq!(s.labels, vec![1, 1]);
    }

    #[test]
    fn empty_window() {
        let s = build_snapshot::<TransactionRecord>(3, &[], &vocab()).unwrap();
        assert_eq!((s.n_nodes(), s.features.rows(), s.features.cols(), s.window_id), (0, 0, 17, 3));
    }

    #[test]
    fn multi_edges_collapse() {
        let s = build_snapshot(0, &[rec("A", "B", 1.0, false), rec("A", "B", 3.0, false)], &vocab()).unwrap();
        assert_eq!(s.adjacency.nnz(), 1);
        assert_eq!(s.features.get(0, 1), 1.0);
        assert_eq!(s.features.get(0, 2), 2.0);
        assert_eq!(s.features.get(0, 5), 2.0);
    }

    #[test]
    fn labels_from_scan() {
        let recs = [rec("A", "B", 1.0, true), rec("B", "C", 1.0, false), rec("A", "B", 1.0, true)];
        let ids: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(derive_labels(&recs, &ids).unwrap(), vec![1, 1, 0]);
        assert!(matches!(derive_labels(&recs, &ids[..2]), Err(Error::Consistency(_))));
        assert_eq!(derive_labels(&recs[1..2], &ids).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_adjacency(&SparseMatrix::empty(1)).to_dense().data(), &[1.0]);
        let two = normalize_adjacency(&SparseMatrix::from_pattern(2, &[(0, 1)]).unwrap());
        assert!(two.to_dense().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let path = normalize_adjacency(&SparseMatrix::from_pattern(3, &[(0, 1), (1, 2)]).unwrap());
        assert!((path.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(path.is_symmetric());
        let k2 = khop_apply(&two, &Tensor2::identity(2), 2).unwrap();
        assert!(k2.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn khop_zero_and_shape_error() {
        let a = SparseMatrix::identity(3);
        let x = Tensor2::filled(3, 2, 1.5);
        assert_eq!(khop_apply(&a, &x, 0).unwrap(), x);
        assert!(matches!(khop_apply(&a, &Tensor2::zeros(2, 2), 1), Err(Error::Shape(_))));
    }

    #[test]
    fn temporal_linking() {
        let v = vocab();
        let prev = build_snapshot(0, &[rec("A", "B", 1.0, false)], &v).unwrap();
        let mut curr = build_snapshot(1, &[rec("B", "C", 1.0, false)], &v).unwrap();
        link_temporal(Some(&prev), &mut curr).unwrap();
        assert_eq!(curr.prev_index, vec![Some(1), None]);
        link_temporal(None, &mut curr).unwrap();
        assert_eq!(curr.prev_index, vec![None, None]);
        let mut later = build_snapshot(3, &[rec("B", "C", 1.0, false)], &v).unwrap();
        assert!(matches!(link_temporal(Some(&prev), &mut later), Err(Error::Protocol(_))));
    }

    #[test]
    fn standardization_uses_training_windows() {
        let mut snaps = vec![Snapshot::empty(0, 2), Snapshot::empty(1, 2)];
        snaps[0].features = Tensor2::from_rows(&[vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap();
        snaps[0].node_ids = vec!["a".into(), "b".into()];
        snaps[1].features = Tensor2::from_rows(&[vec![10.0, 5.0]]).unwrap();
        snaps[1].node_ids = vec!["a".into()];
        let stats = standardize_features(&mut snaps, &[0]).unwrap();
        assert_eq!(stats.mean, vec![1.0, 5.0]);
        assert_eq!(stats.std, vec![1.0, STD_FLOOR]);
        assert_eq!(snaps[0].features.data(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(snaps[1].features.data(), &[9.0, 0.0]);
        assert!(standardize_features(&mut snaps, &[]).is_err());
    }
}
