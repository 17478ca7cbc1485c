//! Chronological splitting and the two-stage training protocol.
//!
//! Stage I trains the multi-hop encoder with the contrastive objective on
//! training windows only. Stage II fine-tunes everything with class-weighted
//! BCE, one Adam step per training window, and keeps the parameters from the
//! epoch with the best validation PR-AUC.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{assemble_report, pr_auc, select_threshold, EvalReport, ReportMeta, ScoredSet, SplitSizes, BETA};
use crate::graph::Snapshot;
use crate::model::{
    forward_sequence, forward_window, mixhop_encode, predecessor, prepare_all, ModelParams, ModelShape,
    PreparedSnapshot, Variant,
};
use crate::numcore::{Adam, AdamConfig, Tape};
use crate::objectives::{augmented_hops, derive_seed, pair_index, sample_nodes, stack_pairs, AugmentConfig};

/// Stream tags for [`derive_seed`].
const STREAM_VIEW: u64 = 1;
const STREAM_SAMPLE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub lr_pretrain: f64,
    pub lr_classifier: f64,
    pub lr_encoder_finetune: f64,
    pub pretrain_epochs: usize,
    pub finetune_max_epochs: usize,
    pub early_stop_patience: usize,
    pub tau: f64,
    pub augment: AugmentConfig,
    /// Nodes sampled per window for each contrastive batch.
    pub contrast_batch: usize,
    pub k: usize,
    pub d: usize,
    pub d_k: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.15,
            lr_pretrain: 1e-3,
            lr_classifier: 1e-3,
            lr_encoder_finetune: 1e-4,
            pretrain_epochs: 30,
            finetune_max_epochs: 200,
            early_stop_patience: 10,
            tau: 0.5,
            augment: AugmentConfig::default(),
            contrast_batch: 256,
            k: 2,
            d: 64,
            d_k: 128,
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(Error::Config(format!(
                "split fractions must be positive with sum below 1, got {} and {}",
                self.train_frac, self.val_frac
            )));
        }
        if self.lr_pretrain < 0.0 || self.lr_classifier <= 0.0 || self.lr_encoder_finetune < 0.0 {
            return Err(Error::Config("learning rates must be positive (encoder rates may be 0 to freeze)".into()));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.contrast_batch < 2 {
            return Err(Error::Config("contrast_batch must be at least 2".into()));
        }
        self.augment.validate()?;
        ModelShape::new(self.k, 1, self.d, self.d_k)?;
        Ok(())
    }
}

/// Window ids of each split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// SHA-256 of the window-id lists.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            h.update(tag.as_bytes());
            for &w in ids {
                h.update((w as u64).to_le_bytes());
            }
            h.update(b";");
        }
        hex::encode(h.finalize())
    }

    pub fn sizes(&self, snapshots: &[Snapshot]) -> SplitSizes {
        let nodes =
            |ids: &[usize]| snapshots.iter().filter(|s| ids.contains(&s.window_id)).map(Snapshot::n_nodes).sum();
        SplitSizes {
            train_windows: self.train.len(),
            val_windows: self.val.len(),
            test_windows: self.test.len(),
            train_nodes: nodes(&self.train),
            val_nodes: nodes(&self.val),
            test_nodes: nodes(&self.test),
        }
    }
}

fn floor_frac(frac: f64, t: usize) -> usize {
    (frac * t as f64 + 1e-9).floor() as usize
}

/// Contiguous train/validation/test prefixes over the non-empty windows.
pub fn chronological_split_ids(non_empty: &[usize], train_frac: f64, val_frac: f64) -> Result<Split> {
    let mut ids = non_empty.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let t = ids.len();
    if t < 3 {
        return Err(Error::Protocol(format!("chronological split needs at least 3 non-empty windows, got {t}")));
    }
    let n_val = floor_frac(val_frac, t).max(1);
    let n_train = floor_frac(train_frac, t).min(t - n_val - 1);
    if n_train == 0 {
        return Err(Error::Protocol(format!("{t} non-empty windows leave no training window")));
    }
    Ok(Split {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
    })
}

pub fn chronological_split(snapshots: &[Snapshot], train_frac: f64, val_frac: f64) -> Result<Split> {
    let ids: Vec<usize> = snapshots.iter().filter(|s| !s.is_empty()).map(|s| s.window_id).collect();
    chronological_split_ids(&ids, train_frac, val_frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// `w_c = N / (2 N_c)`; a missing class gets weight 1.
pub fn class_weights<'a>(labels: impl IntoIterator<Item = &'a u8>) -> ClassWeights {
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for &y in labels {
        if y == 1 {
            n_pos += 1;
        } else {
            n_neg += 1;
        }
    }
    let n = (n_pos + n_neg) as f64;
    let w = |c: usize| if c == 0 { 1.0 } else { n / (2.0 * c as f64) };
    ClassWeights { w_pos: w(n_pos), w_neg: w(n_neg), n_pos, n_neg }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: Variant,
    pub pretrain_losses: Vec<f64>,
    pub finetune_losses: Vec<f64>,
    /// Validation selection metric per fine-tuning epoch.
    pub val_trace: Vec<f64>,
    /// `pr_auc`, `neg_val_loss`, or `none` when there is no validation split.
    pub val_metric: String,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: ClassWeights,
    pub warnings: Vec<String>,
    pub pretrain_digests: Vec<String>,
    pub finetune_digests: Vec<String>,
    pub final_digest: String,
    pub best_checkpoint: Option<String>,
    pub wall_time_secs: f64,
}

fn check_finite(loss: f64, stage: &str, epoch: usize, window: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{stage} loss is {loss} at epoch {epoch}, window {window}")))
    }
}

fn by_window<'a>(snapshots: &'a [Snapshot], ids: &[usize]) -> Vec<&'a Snapshot> {
    snapshots.iter().filter(|s| ids.contains(&s.window_id) && !s.is_empty()).collect()
}

/// Contrastive pretraining of the multi-hop encoder on the training windows.
/// Returns the mean loss and the parameter digest after each epoch.
pub fn pretrain(
    params: &mut ModelParams,
    snapshots: &[Snapshot],
    train_ids: &[usize],
    config: &TrainConfig,
) -> Result<(Vec<f64>, Vec<String>)> {
    let k = params.shape.k;
    let train = by_window(snapshots, train_ids);
    let prev_hops: Vec<Option<Vec<_>>> = train
        .iter()
        .map(|s| {
            snapshots
                .iter()
                .find(|p| p.window_id + 1 == s.window_id && train_ids.contains(&p.window_id) && !p.is_empty())
                .map(|p| PreparedSnapshot::new(p, k).map(|pp| pp.hops))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let names = params.names();
    let lrs: Vec<f64> =
        (0..names.len()).map(|i| if i <= params.hop_weights.len() { config.lr_pretrain } else { 0.0 }).collect();
    let mut opt = Adam::new(&params.params(), AdamConfig::default());
    let mut losses = Vec::with_capacity(config.pretrain_epochs);
    let mut digests = Vec::with_capacity(config.pretrain_epochs);
    for epoch in 0..config.pretrain_epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for (s, prev) in train.iter().zip(&prev_hops) {
            let view = |v: u64| AugmentConfig {
                seed: derive_seed(config.seed, &[STREAM_VIEW, epoch as u64, s.window_id as u64, v]),
                ..config.augment
            };
            let h1 = augmented_hops(s, &view(1), k)?;
            let h2 = augmented_hops(s, &view(2), k)?;
            let nodes = sample_nodes(
                s.n_nodes(),
                config.contrast_batch,
                derive_seed(config.seed, &[STREAM_SAMPLE, epoch as u64, s.window_id as u64]),
            );
            let idx = pair_index(&nodes, prev.as_ref().map(|_| s.prev_index.as_slice()));
            if idx.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let z1 = mixhop_encode(&mut tape, &vars, &h1)?;
            let z2 = mixhop_encode(&mut tape, &vars, &h2)?;
            let zp = prev.as_ref().map(|h| mixhop_encode(&mut tape, &vars, h)).transpose()?;
            let (a, p) = stack_pairs(&mut tape, z1, z2, zp, &idx)?;
            let loss = tape.ntxent(a, p, config.tau, Some(&idx.groups))?;
            let lv = tape.value(loss).item();
            check_finite(lv, "pretraining", epoch + 1, s.window_id)?;
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &vars);
            opt.step(&mut params.params_mut(), &lrs, &names)?;
            total += lv;
            count += 1;
        }
        losses.push(if count > 0 { total / count as f64 } else { 0.0 });
        digests.push(params.digest());
    }
    Ok((losses, digests))
}

/// Scores of the given windows, computed causally over `seq` up to the last of them.
pub fn score_windows(
    seq: &[PreparedSnapshot],
    params: &ModelParams,
    variant: Variant,
    ids: &[usize],
) -> Result<ScoredSet> {
    let Some(&last) = ids.iter().max() else {
        return ScoredSet::new(Vec::new(), Vec::new(), Vec::new());
    };
    let upto: Vec<PreparedSnapshot> = seq.iter().filter(|s| s.window_id <= last).cloned().collect();
    let probs = forward_sequence(&upto, params, variant)?;
    let mut out = ScoredSet::new(Vec::new(), Vec::new(), Vec::new())?;
    for (s, p) in upto.iter().zip(probs) {
        if ids.contains(&s.window_id) {
            let n = p.len();
            out.extend(&ScoredSet::new(p, s.labels.clone(), vec![s.window_id; n])?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub best: ModelParams,
    pub losses: Vec<f64>,
    pub val_trace: Vec<f64>,
    pub val_metric: String,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub digests: Vec<String>,
    pub class_weights: ClassWeights,
    pub warnings: Vec<String>,
}

/// Supervised fine-tuning with early stopping on the validation windows.
/// Without validation windows every epoch runs and the last one is kept.
pub fn finetune(
    params: &mut ModelParams,
    seq: &[PreparedSnapshot],
    split: &Split,
    config: &TrainConfig,
    variant: Variant,
) -> Result<FinetuneOutcome> {
    let train_pos: Vec<usize> =
        (0..seq.len()).filter(|&t| split.train.contains(&seq[t].window_id) && seq[t].n_nodes() > 0).collect();
    if train_pos.is_empty() {
        return Err(Error::Protocol("no non-empty training windows".into()));
    }
    let cw = class_weights(train_pos.iter().flat_map(|&t| seq[t].labels.iter()));
    let mut warnings = Vec::new();
    if cw.n_pos == 0 {
        let msg = "training windows contain no positive nodes; using w_pos = 1".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let names = params.names();
    let lrs: Vec<f64> = (0..names.len())
        .map(|i| if params.is_classifier(i) { config.lr_classifier } else { config.lr_encoder_finetune })
        .collect();
    let mut opt = Adam::new(&params.params(), AdamConfig::default());

    let val_has_pos = seq.iter().any(|s| split.val.contains(&s.window_id) && s.labels.contains(&1));
    let val_metric = match (split.val.is_empty(), val_has_pos) {
        (true, _) => "none",
        (false, true) => "pr_auc",
        (false, false) => "neg_val_loss",
    };
    if val_metric == "neg_val_loss" {
        let msg = "validation windows contain no positive nodes; selecting on validation loss".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut out = FinetuneOutcome {
        best: params.clone(),
        losses: Vec::new(),
        val_trace: Vec::new(),
        val_metric: val_metric.to_string(),
        best_epoch: 0,
        stopped_early: false,
        digests: Vec::new(),
        class_weights: cw,
        warnings,
    };
    let mut best_metric = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    for epoch in 1..=config.finetune_max_epochs {
        let mut total = 0.0;
        for &t in &train_pos {
            let curr = &seq[t];
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, true);
            let p = forward_window(&mut tape, &vars, curr, predecessor(seq, t), variant)?;
            let loss = tape.weighted_bce(p, &curr.targets(), cw.w_pos, cw.w_neg)?;
            let lv = tape.value(loss).item();
            check_finite(lv, "fine-tuning", epoch, curr.window_id)?;
            tape.backward(loss)?;
            params.accumulate_grads(&tape, &vars);
            opt.step(&mut params.params_mut(), &lrs, &names)?;
            params.project();
            total += lv;
        }
        out.losses.push(total / train_pos.len() as f64);
        out.digests.push(params.digest());

        if split.val.is_empty() {
            out.best = params.clone();
            out.best_epoch = epoch;
            continue;
        }
        let val = score_windows(seq, params, variant, &split.val)?;
        let metric = if val_has_pos {
            pr_auc(&val).unwrap_or(0.0)
        } else {
            -crate::objectives::weighted_bce(&val.scores, &val.labels, cw.w_pos, cw.w_neg)?
        };
        out.val_trace.push(metric);
        if metric > best_metric {
            best_metric = metric;
            out.best = params.clone();
            out.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                out.stopped_early = true;
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub pretrained: Option<ModelParams>,
    pub prepared: Vec<PreparedSnapshot>,
    pub record: RunRecord,
}

/// Initialization, optional pretraining and fine-tuning for one variant.
/// `snapshots` must be standardized, linked and in window order.
pub fn train(snapshots: &[Snapshot], split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let variant = config.variant;
    let n_features = snapshots
        .first()
        .map(|s| s.features.cols())
        .ok_or_else(|| Error::Protocol("no snapshots to train on".into()))?;
    let k = variant.effective_k(config.k);
    let mut params = ModelParams::init(ModelShape::new(k, n_features, config.d, config.d_k)?, config.seed);

    let (pretrain_losses, pretrain_digests, pretrained) = if variant.uses_pretraining() && config.pretrain_epochs > 0 {
        let (l, d) = pretrain(&mut params, snapshots, &split.train, config)?;
        (l, d, Some(params.clone()))
    } else {
        (Vec::new(), Vec::new(), None)
    };

    let prepared = prepare_all(snapshots, k)?;
    let ft = finetune(&mut params, &prepared, split, config, variant)?;
    let record = RunRecord {
        seed: config.seed,
        variant,
        pretrain_losses,
        finetune_losses: ft.losses,
        val_trace: ft.val_trace,
        val_metric: ft.val_metric,
        best_epoch: ft.best_epoch,
        stopped_early: ft.stopped_early,
        class_weights: ft.class_weights,
        warnings: ft.warnings,
        pretrain_digests,
        finetune_digests: ft.digests,
        final_digest: ft.best.digest(),
        best_checkpoint: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { params: ft.best, pretrained, prepared, record })
}

/// Picks the threshold on validation scores and reports test metrics.
pub fn evaluate(
    params: &ModelParams,
    prepared: &[PreparedSnapshot],
    snapshots: &[Snapshot],
    split: &Split,
    variant: Variant,
    seed: u64,
) -> Result<EvalReport> {
    let val = score_windows(prepared, params, variant, &split.val)?;
    let test = score_windows(prepared, params, variant, &split.test)?;
    let threshold = select_threshold(&val, BETA)?;
    Ok(assemble_report(
        &test,
        threshold,
        ReportMeta {
            model: "stc-mixhop".into(),
            variant: variant.tag().into(),
            seed,
            split_hash: split.hash(),
            split_sizes: split.sizes(snapshots),
        },
    ))
}

/// Trains and evaluates one ablation variant with everything else held fixed.
pub fn run_ablation(
    variant: Variant,
    snapshots: &[Snapshot],
    split: &Split,
    config: &TrainConfig,
) -> Result<(EvalReport, TrainOutcome)> {
    let cfg = TrainConfig { variant, ..config.clone() };
    let outcome = train(snapshots, split, &cfg)?;
    let report = evaluate(&outcome.params, &outcome.prepared, snapshots, split, variant, cfg.seed)?;
    Ok((report, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = chronological_split_ids(&(0..20).collect::<Vec<_>>(), 0.7, 0.15).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        let s = chronological_split_ids(&(0..10).collect::<Vec<_>>(), 0.7, 0.15).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let s = chronological_split_ids(&[5, 1, 9], 0.7, 0.15).unwrap();
        assert_eq!(s, Split { train: vec![1], val: vec![5], test: vec![9] });
        assert!(matches!(chronological_split_ids(&[1, 2], 0.7, 0.15), Err(Error::Protocol(_))));
    }

    #[test]
    fn split_ignores_input_order() {
        let a = chronological_split_ids(&[3, 1, 7, 4, 9, 12], 0.7, 0.15).unwrap();
        let b = chronological_split_ids(&[12, 9, 7, 4, 3, 1], 0.7, 0.15).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn balanced_classes_get_unit_weights() {
        let w = class_weights(&[1, 0, 1, 0]);
        assert_eq!((w.w_pos, w.w_neg), (1.0, 1.0));
        let w = class_weights(&[1, 0, 0, 0]);
        assert_eq!((w.w_pos, w.w_neg), (2.0, 4.0 / 6.0));
        let w = class_weights(&[0, 0]);
        assert_eq!(w.w_pos, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { train_frac: 0.9, val_frac: 0.2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { d_k: 0, ..Default::default() }.validate().is_err());
    }
}
