//! Tabular reference models on node features alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{assemble_report, pr_auc, select_threshold, EvalReport, ReportMeta, ScoredSet, BETA};
use crate::graph::Snapshot;
use crate::model::PROB_EPS;
use crate::numcore::{Adam, AdamConfig, Param, Tape, Tensor2, Var};
use crate::trainer::{class_weights, Split};

/// Feature rows of labeled nodes, tagged with their window.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Tensor2,
    pub labels: Vec<u8>,
    pub window_ids: Vec<usize>,
}

impl TabularDataset {
    /// Every node of the listed windows, in window then node order.
    pub fn from_snapshots(snapshots: &[Snapshot], window_ids: &[usize]) -> Result<Self> {
        let f = snapshots.first().map_or(0, |s| s.features.cols());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut wids = Vec::new();
        for s in snapshots.iter().filter(|s| window_ids.contains(&s.window_id)) {
            data.extend_from_slice(s.features.data());
            labels.extend_from_slice(&s.labels);
            wids.extend(std::iter::repeat_n(s.window_id, s.n_nodes()));
        }
        Ok(Self { features: Tensor2::from_vec(labels.len(), f, data)?, labels, window_ids: wids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices grouped by window, windows ascending.
    fn window_groups(&self) -> Vec<Vec<usize>> {
        let mut ids: Vec<usize> = self.window_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().map(|&w| (0..self.len()).filter(|&i| self.window_ids[i] == w).collect()).collect()
    }

    fn rows(&self, idx: &[usize]) -> Tensor2 {
        let f = self.features.cols();
        let mut out = Tensor2::zeros(idx.len(), f);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.features.row(i));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Logreg,
    Mlp,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Logreg => "logreg",
            BaselineKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(BaselineKind::Logreg),
            "mlp" => Ok(BaselineKind::Mlp),
            other => Err(Error::Argument(format!("unknown baseline model {other:?}; expected logreg or mlp"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    /// Hidden width; 0 gives a linear head.
    pub hidden: usize,
    pub l2: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self { hidden: 64, l2: 1e-4, lr: 1e-3, max_epochs: 200, patience: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    pub hidden: usize,
    /// `[W, b]` for a linear head or `[W1, b1, W2, b2]` with a hidden layer.
    pub params: Vec<Param>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Param {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
    Param::new(Tensor2::from_vec(fan_in, fan_out, data).expect("sized"))
}

impl TabularModel {
    pub fn init(n_features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = if hidden == 0 {
            vec![xavier(&mut rng, n_features, 1), Param::new(Tensor2::scalar(0.0))]
        } else {
            vec![
                xavier(&mut rng, n_features, hidden),
                Param::new(Tensor2::zeros(1, hidden)),
                xavier(&mut rng, hidden, 1),
                Param::new(Tensor2::scalar(0.0)),
            ]
        };
        Self { hidden, params }
    }

    fn names(&self) -> Vec<String> {
        (0..self.params.len()).map(|i| format!("tabular_{i}")).collect()
    }

    /// Returns the probability column and the weight-matrix leaves.
    fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| if trainable { tape.variable(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        let logit = if self.hidden == 0 {
            tape.affine(x, vars[0], vars[1])?
        } else {
            let h = tape.affine(x, vars[0], vars[1])?;
            let h = tape.relu(h)?;
            tape.affine(h, vars[2], vars[3])?
        };
        let p = tape.sigmoid(logit)?;
        Ok((tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?, vars))
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Vec<f64>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (p, _) = self.forward(&mut tape, xv, false)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.params.iter().step_by(2).flat_map(|p| p.value.data()).map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularRecord {
    pub losses: Vec<f64>,
    pub val_trace: Vec<f64>,
    pub best_epoch: usize,
}

/// Class-weighted BCE plus `l2 ‖W‖² / 2`, one Adam step per training window,
/// keeping the epoch with the best validation PR-AUC when `val` has positives.
pub fn tabular_fit(
    train: &TabularDataset,
    val: Option<&TabularDataset>,
    config: &TabularConfig,
) -> Result<(TabularModel, TabularRecord)> {
    if train.is_empty() {
        return Err(Error::Protocol("no training rows for the tabular baseline".into()));
    }
    let cw = class_weights(&train.labels);
    let mut model = TabularModel::init(train.features.cols(), config.hidden, config.seed);
    let names = model.names();
    let lrs = vec![config.lr; model.params.len()];
    let mut opt = Adam::new(&model.params.iter().collect::<Vec<_>>(), AdamConfig::default());
    let groups = train.window_groups();
    let batches: Vec<(Tensor2, Vec<f64>)> =
        groups.iter().map(|g| (train.rows(g), g.iter().map(|&i| f64::from(train.labels[i])).collect())).collect();
    let val = val.filter(|v| v.labels.contains(&1));

    let mut record = TabularRecord { losses: Vec::new(), val_trace: Vec::new(), best_epoch: 0 };
    let mut best = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for (x, y) in &batches {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let (p, vars) = model.forward(&mut tape, xv, true)?;
            let mut loss = tape.weighted_bce(p, y, cw.w_pos, cw.w_neg)?;
            if config.l2 > 0.0 {
                for &w in vars.iter().step_by(2) {
                    let sq = tape.sum_squares(w)?;
                    let pen = tape.scale(sq, config.l2 / 2.0)?;
                    loss = tape.add(loss, pen)?;
                }
            }
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("baseline loss {lv} at epoch {epoch}")));
            }
            tape.backward(loss)?;
            for (param, v) in model.params.iter_mut().zip(&vars) {
                if let Some(g) = tape.grad(*v) {
                    param.accumulate(g);
                }
            }
            opt.step(&mut model.params.iter_mut().collect::<Vec<_>>(), &lrs, &names)?;
            total += lv;
        }
        record.losses.push(total / batches.len() as f64);
        let Some(v) = val else {
            best = model.clone();
            record.best_epoch = epoch;
            continue;
        };
        let scores = ScoredSet::unattributed(model.predict(&v.features)?, v.labels.clone())?;
        let metric = pr_auc(&scores).unwrap_or(0.0);
        record.val_trace.push(metric);
        if metric > best_metric {
            best_metric = metric;
            best = model.clone();
            record.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, record))
}

pub fn logreg_fit(
    train: &TabularDataset,
    val: Option<&TabularDataset>,
    l2: f64,
    config: &TabularConfig,
) -> Result<(TabularModel, TabularRecord)> {
    tabular_fit(train, val, &TabularConfig { hidden: 0, l2, ..config.clone() })
}

pub fn mlp_fit(
    train: &TabularDataset,
    val: Option<&TabularDataset>,
    hidden: usize,
    config: &TabularConfig,
) -> Result<(TabularModel, TabularRecord)> {
    tabular_fit(train, val, &TabularConfig { hidden, ..config.clone() })
}

/// Same split, threshold protocol and report schema as the graph model.
pub fn baseline_evaluate(
    model: &TabularModel,
    kind: BaselineKind,
    snapshots: &[Snapshot],
    split: &Split,
    seed: u64,
) -> Result<EvalReport> {
    let score = |ids: &[usize]| -> Result<ScoredSet> {
        let d = TabularDataset::from_snapshots(snapshots, ids)?;
        ScoredSet::new(model.predict(&d.features)?, d.labels, d.window_ids)
    };
    let threshold = select_threshold(&score(&split.val)?, BETA)?;
    Ok(assemble_report(
        &score(&split.test)?,
        threshold,
        ReportMeta {
            model: kind.tag().into(),
            variant: kind.tag().into(),
            seed,
            split_hash: split.hash(),
            split_sizes: split.sizes(snapshots),
        },
    ))
}

/// Fits the chosen baseline on the training windows and reports on the test windows.
pub fn run_baseline(
    kind: BaselineKind,
    snapshots: &[Snapshot],
    split: &Split,
    config: &TabularConfig,
) -> Result<(EvalReport, TabularModel, TabularRecord)> {
    let train = TabularDataset::from_snapshots(snapshots, &split.train)?;
    let val = TabularDataset::from_snapshots(snapshots, &split.val)?;
    let cfg = match kind {
        BaselineKind::Logreg => TabularConfig { hidden: 0, ..config.clone() },
        BaselineKind::Mlp => TabularConfig { hidden: config.hidden.max(1), ..config.clone() },
    };
    let (model, record) = tabular_fit(&train, Some(&val), &cfg)?;
    let report = baseline_evaluate(&model, kind, snapshots, split, config.seed)?;
    Ok((report, model, record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[[f64; 2]], labels: &[u8]) -> TabularDataset {
        let data = rows.iter().flatten().copied().collect();
        TabularDataset {
            features: Tensor2::from_vec(rows.len(), 2, data).unwrap(),
            labels: labels.to_vec(),
            window_ids: vec![0; rows.len()],
        }
    }

    fn accuracy(model: &TabularModel, d: &TabularDataset) -> f64 {
        let p = model.predict(&d.features).unwrap();
        p.iter().zip(&d.labels).filter(|(&p, &y)| (p >= 0.5) == (y == 1)).count() as f64 / d.len() as f64
    }

    #[test]
    fn separable_fixture() {
        let d = dataset(
            &[[1.0, 0.5], [2.0, -0.3], [-1.0, 0.2], [-1.5, -0.4], [0.7, 0.9], [-0.6, -1.0]],
            &[1, 1, 0, 0, 1, 0],
        );
        let cfg = TabularConfig { lr: 1e-2, max_epochs: 500, ..Default::default() };
        let (m, _) = logreg_fit(&d, None, 0.0, &cfg).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
    }

    #[test]
    fn xor_needs_hidden_layer() {
        let pts = [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
        let d = dataset(&pts, &[1, 1, 0, 0]);
        let cfg = TabularConfig { lr: 1e-2, max_epochs: 2000, l2: 0.0, ..Default::default() };
        let (mlp, _) = mlp_fit(&d, None, 16, &cfg).unwrap();
        assert_eq!(accuracy(&mlp, &d), 1.0);
        let (lr, _) = logreg_fit(&d, None, 0.0, &cfg).unwrap();
        assert!(accuracy(&lr, &d) <= 0.75);
    }

    #[test]
    fn zero_hidden_equals_logreg() {
        let d = dataset(&[[0.3, 0.5], [1.0, -0.3], [-1.0, 0.2], [-0.5, -0.4]], &[1, 1, 0, 0]);
        let cfg = TabularConfig { max_epochs: 50, ..Default::default() };
        let (a, _) = mlp_fit(&d, None, 0, &cfg).unwrap();
        let (b, _) = logreg_fit(&d, None, cfg.l2, &cfg).unwrap();
        let (pa, pb) = (a.predict(&d.features).unwrap(), b.predict(&d.features).unwrap());
        assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn heavy_l2_shrinks_weights() {
        let d = dataset(&[[0.3, 0.5], [1.0, -0.3], [-1.0, 0.2], [-0.5, -0.4]], &[1, 0, 0, 0]);
        let cfg = TabularConfig { max_epochs: 3000, lr: 1e-2, ..Default::default() };
        let (m, _) = logreg_fit(&d, None, 1e6, &cfg).unwrap();
        assert!(m.weight_norm_sq().sqrt() < 5e-2, "{}", m.weight_norm_sq());
        let p = m.predict(&d.features).unwrap();
        let b = crate::numcore::sigmoid(m.params[1].value.item());
        assert!(p.iter().all(|v| (v - b).abs() < 0.05));
    }

    #[test]
    fn constant_column_weight_is_untouched() {
        let d = dataset(&[[0.0, 0.5], [0.0, -0.3], [0.0, 0.2], [0.0, -0.4]], &[1, 0, 1, 0]);
        let init = TabularModel::init(2, 0, 4);
        let (m, _) =
            logreg_fit(&d, None, 0.0, &TabularConfig { seed: 4, max_epochs: 30, ..Default::default() }).unwrap();
        assert_eq!(m.params[0].value.get(0, 0), init.params[0].value.get(0, 0));
        assert_ne!(m.params[0].value.get(1, 0), init.params[0].value.get(1, 0));
    }

    #[test]
    fn deterministic() {
        let d = dataset(&[[0.3, 0.5], [1.0, -0.3], [-1.0, 0.2], [-0.5, -0.4]], &[1, 1, 0, 0]);
        let cfg = TabularConfig { max_epochs: 20, ..Default::default() };
        assert_eq!(mlp_fit(&d, None, 8, &cfg).unwrap().0, mlp_fit(&d, None, 8, &cfg).unwrap().0);
    }
}
