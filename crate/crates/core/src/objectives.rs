//! Contrastive pretraining objective and the class-weighted supervised loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{khop_stack, normalize_adjacency, Snapshot, SparseMatrix};
use crate::numcore::{normalize_rows, Tape, Tensor2, Var};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub feature_mask_prob: f64,
    pub edge_drop_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { feature_mask_prob: 0.2, edge_drop_prob: 0.2, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("feature_mask_prob", self.feature_mask_prob), ("edge_drop_prob", self.edge_drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for a sub-stream identified by `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Masks feature entries and drops undirected edges, both independently.
/// Node order, labels and temporal links are unchanged.
pub fn augment_view(snapshot: &Snapshot, config: &AugmentConfig) -> Result<Snapshot> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut view = snapshot.clone();
    if config.feature_mask_prob > 0.0 {
        for v in view.features.data_mut() {
            if rng.random_bool(config.feature_mask_prob) {
                *v = 0.0;
            }
        }
    }
    if config.edge_drop_prob > 0.0 {
        let mut pairs: Vec<(usize, usize)> =
            snapshot.adjacency.iter().filter(|(r, c, _)| r != c).map(|(r, c, _)| (r.min(c), r.max(c))).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let dropped: std::collections::BTreeSet<(usize, usize)> =
            pairs.into_iter().filter(|_| rng.random_bool(config.edge_drop_prob)).collect();
        let kept: Vec<(usize, usize)> = snapshot
            .adjacency
            .iter()
            .map(|(r, c, _)| (r, c))
            .filter(|&(r, c)| r == c || !dropped.contains(&(r.min(c), r.max(c))))
            .collect();
        view.adjacency = SparseMatrix::from_pattern(snapshot.n_nodes(), &kept)?;
    }
    Ok(view)
}

/// Propagation stack of an augmented view.
pub fn augmented_hops(snapshot: &Snapshot, config: &AugmentConfig, k: usize) -> Result<Vec<Tensor2>> {
    let view = augment_view(snapshot, config)?;
    khop_stack(&normalize_adjacency(&view.adjacency), &view.features, k)
}

/// Stacked anchor/positive rows. `groups[i]` identifies the entity behind pair
/// `i`; pairs of the same entity never act as each other's negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub anchors: Tensor2,
    pub positives: Tensor2,
    pub tau: f64,
    pub groups: Option<Vec<usize>>,
}

impl ContrastBatch {
    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.rows() == 0
    }
}

pub fn ntxent_loss(batch: &ContrastBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(batch.anchors.clone());
    let p = tape.constant(batch.positives.clone());
    let l = tape.ntxent(a, p, batch.tau, batch.groups.as_deref())?;
    Ok(tape.value(l).item())
}

/// `-log(e^{s+/τ} / (e^{s+/τ} + Σ_neg e^{s-/τ}))` for one anchor against an
/// explicit negative set, with cosine similarities.
pub fn ntxent_anchor_term(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let rows = Tensor2::from_rows(&[a.to_vec(), b.to_vec()]).expect("equal widths");
        let (hat, _) = normalize_rows(&rows);
        hat.row(0).iter().zip(hat.row(1)).map(|(x, y)| x * y).sum::<f64>()
    };
    let pos = cos(anchor, positive) / tau;
    let logits: Vec<f64> = std::iter::once(pos).chain(negatives.iter().map(|n| cos(anchor, n) / tau)).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - pos
}

/// Row selections describing a pair set over a subset of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    /// Row of the first view used as anchor, per pair.
    pub anchor_rows: Vec<usize>,
    /// Row of the second view used as positive (intra-snapshot pairs).
    pub view_rows: Vec<Option<usize>>,
    /// Row of the previous-window embedding used as positive (temporal pairs).
    pub prev_rows: Vec<Option<usize>>,
    pub groups: Vec<usize>,
}

impl PairIndex {
    pub fn len(&self) -> usize {
        self.anchor_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_rows.is_empty()
    }
}

/// One intra-view pair per node in `nodes`, then one temporal pair for each
/// of those nodes that has a row in the previous window.
pub fn pair_index(nodes: &[usize], prev_index: Option<&[Option<usize>]>) -> PairIndex {
    let mut idx =
        PairIndex { anchor_rows: Vec::new(), view_rows: Vec::new(), prev_rows: Vec::new(), groups: Vec::new() };
    for &i in nodes {
        idx.anchor_rows.push(i);
        idx.view_rows.push(Some(i));
        idx.prev_rows.push(None);
        idx.groups.push(i);
    }
    if let Some(links) = prev_index {
        for &i in nodes {
            if let Some(p) = links[i] {
                idx.anchor_rows.push(i);
                idx.view_rows.push(None);
                idx.prev_rows.push(Some(p));
                idx.groups.push(i);
            }
        }
    }
    idx
}

/// Records the stacked anchors and positives for `idx` on the tape.
pub fn stack_pairs(tape: &mut Tape, view1: Var, view2: Var, prev: Option<Var>, idx: &PairIndex) -> Result<(Var, Var)> {
    let n = tape.value(view1).rows();
    if tape.value(view2).shape() != tape.value(view1).shape() {
        return Err(Error::Consistency(format!(
            "views disagree: {:?} vs {:?}",
            tape.value(view1).shape(),
            tape.value(view2).shape()
        )));
    }
    if idx.anchor_rows.iter().any(|&i| i >= n) {
        return Err(Error::Consistency("pair index refers to a row outside the view".into()));
    }
    let anchor_sel: Vec<Option<usize>> = idx.anchor_rows.iter().map(|&i| Some(i)).collect();
    let anchors = tape.gather_rows(view1, &anchor_sel)?;
    let mut positives = tape.gather_rows(view2, &idx.view_rows)?;
    if idx.prev_rows.iter().any(Option::is_some) {
        let prev = prev.ok_or_else(|| Error::Consistency("temporal pairs without previous embeddings".into()))?;
        let from_prev = tape.gather_rows(prev, &idx.prev_rows)?;
        positives = tape.add(positives, from_prev)?;
    }
    Ok((anchors, positives))
}

/// Builds the full contrastive batch from two encoded views and, optionally,
/// the previous window's embeddings with the current window's links.
pub fn build_positive_pairs(
    view1: &Tensor2,
    view2: &Tensor2,
    prev: Option<(&Tensor2, &[Option<usize>])>,
    tau: f64,
) -> Result<ContrastBatch> {
    if view1.shape() != view2.shape() {
        return Err(Error::Consistency(format!("views disagree: {:?} vs {:?}", view1.shape(), view2.shape())));
    }
    if let Some((_, links)) = prev {
        if links.len() != view1.rows() {
            return Err(Error::Consistency(format!("{} links for {} rows", links.len(), view1.rows())));
        }
    }
    let nodes: Vec<usize> = (0..view1.rows()).collect();
    let idx = pair_index(&nodes, prev.map(|(_, l)| l));
    let mut tape = Tape::new();
    let v1 = tape.constant(view1.clone());
    let v2 = tape.constant(view2.clone());
    let pv = prev.map(|(p, _)| tape.constant(p.clone()));
    let (a, p) = stack_pairs(&mut tape, v1, v2, pv, &idx)?;
    Ok(ContrastBatch {
        anchors: tape.value(a).clone(),
        positives: tape.value(p).clone(),
        tau,
        groups: Some(idx.groups),
    })
}

/// Up to `cap` node rows drawn uniformly without replacement, ascending.
pub fn sample_nodes(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, cap).into_vec();
    v.sort_unstable();
    v
}

/// Class-weighted BCE normalized by the total applied weight.
pub fn weighted_bce(probs: &[f64], labels: &[u8], w_pos: f64, w_neg: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor2::column(probs));
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    let l = tape.weighted_bce(p, &targets, w_pos, w_neg)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> Snapshot {
        let mut s = Snapshot::empty(0, 3);
        s.node_ids = (0..4).map(|i| format!("n{i}")).collect();
        s.adjacency = SparseMatrix::from_pattern(4, &[(0, 1), (1, 0), (1, 2), (2, 3), (3, 0)]).unwrap();
        s.features = Tensor2::from_vec(4, 3, (0..12).map(|v| v as f64 + 1.0).collect()).unwrap();
        s.labels = vec![0, 1, 0, 0];
        s.prev_index = vec![None; 4];
        s
    }

    #[test]
    fn identity_and_full_mask() {
        let s = snapshot();
        let same = augment_view(&s, &AugmentConfig { feature_mask_prob: 0.0, edge_drop_prob: 0.0, seed: 3 }).unwrap();
        assert_eq!(same, s);
        let masked = augment_view(&s, &AugmentConfig { feature_mask_prob: 1.0, edge_drop_prob: 0.0, seed: 3 }).unwrap();
        assert!(masked.features.data().iter().all(|&v| v == 0.0));
        let dropped =
            augment_view(&s, &AugmentConfig { feature_mask_prob: 0.0, edge_drop_prob: 1.0, seed: 3 }).unwrap();
        assert_eq!(dropped.adjacency.nnz(), 0);
        assert!(augment_view(&s, &AugmentConfig { feature_mask_prob: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn views_are_deterministic_and_drop_both_directions() {
        let s = snapshot();
        let cfg = AugmentConfig { feature_mask_prob: 0.3, edge_drop_prob: 0.5, seed: 11 };
        let a = augment_view(&s, &cfg).unwrap();
        assert_eq!(a, augment_view(&s, &cfg).unwrap());
        // (0,1) and (1,0) are both present originally, so they survive or vanish together.
        assert_eq!(a.adjacency.get(0, 1), a.adjacency.get(1, 0));
        assert_eq!(a.labels, s.labels);
        normalize_adjacency(&a.adjacency).validate().unwrap();
    }

    #[test]
    fn single_negative_examples() {
        let a = [1.0, 0.0];
        let neg = [0.0, 1.0];
        let t1 = ntxent_anchor_term(&a, &a, &[&neg], 1.0);
        assert!((t1 - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((t1 - 0.3133).abs() < 1e-4);
        let t2 = ntxent_anchor_term(&a, &a, &[&neg], 0.5);
        assert!((t2 - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn batch_loss_counts_every_in_batch_negative() {
        // Two orthogonal pairs: each anchor sees the other positive and the other anchor.
        let x = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let batch = ContrastBatch { anchors: x.clone(), positives: x.clone(), tau: 1.0, groups: None };
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((ntxent_loss(&batch).unwrap() - expected).abs() < 1e-12);
        let n1 =
            ContrastBatch { anchors: Tensor2::zeros(1, 2), positives: Tensor2::zeros(1, 2), tau: 1.0, groups: None };
        assert!(matches!(ntxent_loss(&n1), Err(Error::Argument(_))));
    }

    #[test]
    fn pair_counts() {
        let v = Tensor2::filled(3, 2, 1.0);
        assert_eq!(build_positive_pairs(&v, &v, None, 0.5).unwrap().len(), 3);
        let links = [Some(0), Some(1), Some(2)];
        assert_eq!(build_positive_pairs(&v, &v, Some((&v, &links)), 0.5).unwrap().len(), 6);
        let links = [Some(0), None, None];
        let b = build_positive_pairs(&v, &v, Some((&v, &links)), 0.5).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.groups.unwrap(), vec![0, 1, 2, 0]);
        assert!(build_positive_pairs(&v, &Tensor2::zeros(2, 2), None, 0.5).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!((weighted_bce(&[0.5], &[1], 2.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let eps = crate::model::PROB_EPS;
        assert!(weighted_bce(&[1.0 - eps, eps], &[1, 0], 3.0, 1.0).unwrap() <= 1.1e-7 * 3.0);
        let p = [0.2, 0.7, 0.9, 0.4];
        let y = [0u8, 1, 1, 0];
        let plain: f64 =
            p.iter().zip(&y).map(|(&p, &y)| if y == 1 { -f64::ln(p) } else { -f64::ln(1.0 - p) }).sum::<f64>() / 4.0;
        assert!((weighted_bce(&p, &y, 1.0, 1.0).unwrap() - plain).abs() < 1e-15);
        assert!(matches!(weighted_bce(&p, &y[..3], 1.0, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn sampling_and_seeds() {
        assert_eq!(sample_nodes(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let s = sample_nodes(100, 10, 7);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_nodes(100, 10, 7));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
    }
}
