//! Multi-hop diffusion encoder, single-step temporal attention and the
//! sigmoid hazard head.
//!
//! Propagated features `Â^k X` do not depend on parameters, so each
//! snapshot is turned into a [`PreparedSnapshot`] once and reused by every
//! epoch. Training code binds [`ModelParams`] to a [`Tape`] through
//! [`ModelParams::bind`]; inference uses [`forward_sequence`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{khop_stack, Snapshot};
use crate::numcore::{Param, Tape, Tensor2, Var};

/// Probability clamp used by the classifier.
pub const PROB_EPS: f64 = 1e-7;
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LAMBDA_INIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoStructure,
    NoDecay,
    NoTemporalAttn,
    NoContrastive,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoStructure, Variant::NoDecay, Variant::NoTemporalAttn, Variant::NoContrastive];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoStructure => "no_structure",
            Variant::NoDecay => "no_decay",
            Variant::NoTemporalAttn => "no_temporal_attn",
            Variant::NoContrastive => "no_contrastive",
        }
    }

    /// Row label used in ablation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Full => "Full STC-MixHop",
            Variant::NoStructure => "w/o same-step structure",
            Variant::NoDecay => "w/o time-decay weighting",
            Variant::NoTemporalAttn => "w/o temporal attention",
            Variant::NoContrastive => "w/o contrastive learning",
        }
    }

    pub fn uses_temporal(self) -> bool {
        self != Variant::NoTemporalAttn
    }

    pub fn uses_decay(self) -> bool {
        self != Variant::NoDecay
    }

    pub fn uses_pretraining(self) -> bool {
        self != Variant::NoContrastive
    }

    /// Diffusion depth actually used for a configured depth `k`.
    pub fn effective_k(self, k: usize) -> usize {
        if self == Variant::NoStructure {
            0
        } else {
            k
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == s).ok_or_else(|| {
            Error::Argument(format!(
                "unknown variant {s:?}; expected one of full, no_structure, no_decay, no_temporal_attn, no_contrastive"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub k: usize,
    pub n_features: usize,
    pub d_hop: usize,
    pub d: usize,
    pub d_k: usize,
}

impl ModelShape {
    pub fn new(k: usize, n_features: usize, d: usize, d_k: usize) -> Result<Self> {
        if d == 0 || n_features == 0 {
            return Err(Error::Config(format!("embedding width {d} and feature count {n_features} must be positive")));
        }
        if d_k == 0 {
            return Err(Error::Config("attention width d_k must be positive".into()));
        }
        Ok(Self { k, n_features, d_hop: d.div_ceil(k + 1), d, d_k })
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub hop_weights: Vec<Param>,
    pub w_mix: Param,
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    /// Decay penalty on the previous-window logit, 1x1.
    pub lambda: Param,
    pub w_c: Param,
    pub b_c: Param,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Param {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
    Param::new(Tensor2::from_vec(fan_in, fan_out, data).expect("sized"))
}

/// Tape handles for one binding of [`ModelParams`], in [`ModelParams::names`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub hop_weights: Vec<Var>,
    pub w_mix: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub lambda: Var,
    pub w_c: Var,
    pub b_c: Var,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.hop_weights.clone();
        v.extend([self.w_mix, self.w_q, self.w_k, self.w_v, self.lambda, self.w_c, self.b_c]);
        v
    }
}

impl ModelParams {
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hop_weights = (0..=shape.k).map(|_| xavier(&mut rng, shape.n_features, shape.d_hop)).collect();
        let w_mix = xavier(&mut rng, (shape.k + 1) * shape.d_hop, shape.d);
        let w_q = xavier(&mut rng, shape.d, shape.d_k);
        let w_k = xavier(&mut rng, shape.d, shape.d_k);
        let w_v = xavier(&mut rng, shape.d, shape.d);
        let w_c = xavier(&mut rng, shape.d, 1);
        Self {
            shape,
            hop_weights,
            w_mix,
            w_q,
            w_k,
            w_v,
            lambda: Param::new(Tensor2::scalar(LAMBDA_INIT)),
            w_c,
            b_c: Param::new(Tensor2::scalar(0.0)),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = (0..self.hop_weights.len()).map(|k| format!("w_hop{k}")).collect();
        n.extend(["w_mix", "w_q", "w_k", "w_v", "lambda", "w_c", "b_c"].map(String::from));
        n
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.hop_weights.iter().collect();
        v.extend([&self.w_mix, &self.w_q, &self.w_k, &self.w_v, &self.lambda, &self.w_c, &self.b_c]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.hop_weights.iter_mut().collect();
        v.extend([
            &mut self.w_mix,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.lambda,
            &mut self.w_c,
            &mut self.b_c,
        ]);
        v
    }

    /// True for the classifier head, false for encoder and attention tensors.
    pub fn is_classifier(&self, index: usize) -> bool {
        index >= self.hop_weights.len() + 5
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda.value.item()
    }

    /// Keeps the decay rate non-negative.
    pub fn project(&mut self) {
        let l = self.lambda.value.item().max(0.0);
        self.lambda.value = Tensor2::scalar(l);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Records every tensor as a differentiable leaf (or constant).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut leaf =
            |p: &Param| if trainable { tape.variable(p.value.clone()) } else { tape.constant(p.value.clone()) };
        ParamVars {
            hop_weights: self.hop_weights.iter().map(&mut leaf).collect(),
            w_mix: leaf(&self.w_mix),
            w_q: leaf(&self.w_q),
            w_k: leaf(&self.w_k),
            w_v: leaf(&self.w_v),
            lambda: leaf(&self.lambda),
            w_c: leaf(&self.w_c),
            b_c: leaf(&self.b_c),
        }
    }

    /// Adds the tape gradients of a binding into the parameter accumulators.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ParamVars) {
        for (p, v) in self.params_mut().into_iter().zip(vars.all()) {
            if let Some(g) = tape.grad(v) {
                p.accumulate(g);
            }
        }
    }

    /// SHA-256 over every tensor's shape and little-endian value bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub stage: Stage,
    pub seed: u64,
    pub variant: Variant,
    pub lambda: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, stage: Stage, seed: u64, variant: Variant) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            stage,
            seed,
            variant,
            lambda: params.lambda_value(),
            params: params.clone(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("checkpoint version {} is not supported", c.version)));
        }
        c.params.zero_grads();
        Ok(c)
    }
}

/// A snapshot with its propagation stack `Â^0 X .. Â^K X` precomputed.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    pub window_id: usize,
    pub hops: Vec<Tensor2>,
    pub labels: Vec<u8>,
    pub prev_index: Vec<Option<usize>>,
}

impl PreparedSnapshot {
    pub fn new(s: &Snapshot, k: usize) -> Result<Self> {
        let hops = khop_stack(&s.normalized_adjacency(), &s.features, k)?;
        Ok(Self { window_id: s.window_id, hops, labels: s.labels.clone(), prev_index: s.prev_index.clone() })
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }
}

pub fn prepare_all(snapshots: &[Snapshot], k: usize) -> Result<Vec<PreparedSnapshot>> {
    snapshots.iter().map(|s| PreparedSnapshot::new(s, k)).collect()
}

/// `concat_k relu(Â^k X W_k) · W_mix` from precomputed hops.
pub fn mixhop_encode(tape: &mut Tape, vars: &ParamVars, hops: &[Tensor2]) -> Result<Var> {
    if hops.len() != vars.hop_weights.len() {
        return Err(Error::Shape(format!("{} hop inputs for {} hop weights", hops.len(), vars.hop_weights.len())));
    }
    let mut parts = Vec::with_capacity(hops.len());
    for (h, &w) in hops.iter().zip(&vars.hop_weights) {
        if h.cols() != tape.value(w).rows() {
            return Err(Error::Shape(format!(
                "{} feature columns, encoder expects {}",
                h.cols(),
                tape.value(w).rows()
            )));
        }
        let x = tape.constant(h.clone());
        let xw = tape.matmul(x, w)?;
        parts.push(tape.relu(xw)?);
    }
    let cat = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
    tape.matmul(cat, vars.w_mix)
}

/// Attention over `[z_t ; z_{t-1}]`. Returns the fused embeddings and the
/// `n x 2` attention weights (column 1 is zero where there is no previous row).
pub fn temporal_fuse(
    tape: &mut Tape,
    vars: &ParamVars,
    z: Var,
    prev: Option<Var>,
    prev_index: &[Option<usize>],
    use_decay: bool,
) -> Result<(Var, Var)> {
    let n = tape.value(z).rows();
    if prev_index.len() != n {
        return Err(Error::Shape(format!("{} previous-row links for {n} nodes", prev_index.len())));
    }
    let v_curr = tape.matmul(z, vars.w_v)?;
    let linked = prev.filter(|_| prev_index.iter().any(Option::is_some));
    let Some(zp) = linked else {
        let mut w = Tensor2::zeros(n, 2);
        (0..n).for_each(|i| w.set(i, 0, 1.0));
        let w = tape.constant(w);
        return Ok((v_curr, w));
    };
    let d_k = tape.value(vars.w_q).cols();
    let g = tape.gather_rows(zp, prev_index)?;
    let q = tape.matmul(z, vars.w_q)?;
    let k_curr = tape.matmul(z, vars.w_k)?;
    let k_prev = tape.matmul(g, vars.w_k)?;
    let v_prev = tape.matmul(g, vars.w_v)?;
    let scale = 1.0 / (d_k as f64).sqrt();
    let l_curr = tape.row_dot(q, k_curr)?;
    let l_curr = tape.scale(l_curr, scale)?;
    let l_prev = tape.row_dot(q, k_prev)?;
    let mut l_prev = tape.scale(l_prev, scale)?;
    if use_decay {
        l_prev = tape.add_scalar(l_prev, vars.lambda, -1.0)?;
    }
    let logits = tape.concat_cols(&[l_curr, l_prev])?;
    let available: Vec<bool> = prev_index.iter().flat_map(|p| [true, p.is_some()]).collect();
    let w = tape.masked_softmax_rows(logits, &available)?;
    let w_curr = tape.slice_cols(w, 0, 1)?;
    let w_prev = tape.slice_cols(w, 1, 1)?;
    let a = tape.scale_rows(v_curr, w_curr)?;
    let b = tape.scale_rows(v_prev, w_prev)?;
    Ok((tape.add(a, b)?, w))
}

/// `clamp(sigmoid(z W_c + b_c))`, an `n x 1` column.
pub fn classify(tape: &mut Tape, vars: &ParamVars, z: Var) -> Result<Var> {
    let logit = tape.affine(z, vars.w_c, vars.b_c)?;
    let p = tape.sigmoid(logit)?;
    tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

/// Probabilities for window `curr`, with `prev` the encoding input of the
/// preceding window when it is available. Everything is recorded on `tape`.
pub fn forward_window(
    tape: &mut Tape,
    vars: &ParamVars,
    curr: &PreparedSnapshot,
    prev: Option<&PreparedSnapshot>,
    variant: Variant,
) -> Result<Var> {
    let z = mixhop_encode(tape, vars, &curr.hops)?;
    if !variant.uses_temporal() {
        return classify(tape, vars, z);
    }
    let prev_z = match prev {
        Some(p) if p.n_nodes() > 0 => Some(mixhop_encode(tape, vars, &p.hops)?),
        _ => None,
    };
    let (fused, _) = temporal_fuse(tape, vars, z, prev_z, &curr.prev_index, variant.uses_decay())?;
    classify(tape, vars, fused)
}

/// Checks that every linked row points into the supplied previous window.
pub fn check_link(curr: &PreparedSnapshot, prev: Option<&PreparedSnapshot>) -> Result<()> {
    let linked = curr.prev_index.iter().flatten().copied().max();
    match (linked, prev) {
        (None, _) => Ok(()),
        (Some(_), None) => Err(Error::Protocol(format!(
            "window {} links to window {} which is not in the sequence",
            curr.window_id,
            curr.window_id.wrapping_sub(1)
        ))),
        (Some(m), Some(p)) => {
            if p.window_id + 1 != curr.window_id || m >= p.n_nodes() {
                return Err(Error::Protocol(format!(
                    "window {} is not linked to window {}",
                    curr.window_id, p.window_id
                )));
            }
            Ok(())
        }
    }
}

/// The snapshot immediately preceding `seq[t]` in window order, if present.
pub fn predecessor(seq: &[PreparedSnapshot], t: usize) -> Option<&PreparedSnapshot> {
    t.checked_sub(1).map(|p| &seq[p]).filter(|p| p.window_id + 1 == seq[t].window_id)
}

/// Per-window probabilities for a chronologically ordered sequence.
/// Window `t` only ever reads windows `t` and `t-1`.
pub fn forward_sequence(seq: &[PreparedSnapshot], params: &ModelParams, variant: Variant) -> Result<Vec<Vec<f64>>> {
    if seq.windows(2).any(|w| w[0].window_id >= w[1].window_id) {
        return Err(Error::Protocol("snapshots must be in strictly increasing window order".into()));
    }
    let mut out = Vec::with_capacity(seq.len());
    let mut prev_embedding: Option<(usize, Tensor2)> = None;
    for (t, curr) in seq.iter().enumerate() {
        let prev = predecessor(seq, t);
        if variant.uses_temporal() {
            check_link(curr, prev)?;
        }
        if curr.n_nodes() == 0 {
            out.push(Vec::new());
            prev_embedding = None;
            continue;
        }
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let z = mixhop_encode(&mut tape, &vars, &curr.hops)?;
        let fused = if variant.uses_temporal() {
            let zp = prev_embedding
                .as_ref()
                .filter(|(w, _)| prev.is_some_and(|p| p.window_id == *w))
                .map(|(_, e)| tape.constant(e.clone()));
            temporal_fuse(&mut tape, &vars, z, zp, &curr.prev_index, variant.uses_decay())?.0
        } else {
            z
        };
        let p = classify(&mut tape, &vars, fused)?;
        out.push(tape.value(p).data().to_vec());
        prev_embedding = Some((curr.window_id, tape.value(z).clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, SparseMatrix};

    fn shape(k: usize) -> ModelShape {
        ModelShape::new(k, 3, 6, 4).unwrap()
    }

    #[test]
    fn hop_width_rounds_up() {
        assert_eq!(ModelShape::new(2, 17, 64, 128).unwrap().d_hop, 22);
        assert_eq!(ModelShape::new(0, 17, 64, 128).unwrap().d_hop, 64);
        assert!(matches!(ModelShape::new(2, 3, 6, 0), Err(Error::Config(_))));
    }

    #[test]
    fn encode_shapes() {
        let p = ModelParams::init(ModelShape::new(2, 3, 6, 4).unwrap(), 1);
        assert_eq!(p.shape.d_hop, 2);
        let p = ModelParams::init(ModelShape { d_hop: 4, ..shape(2) }, 1);
        assert_eq!(p.w_mix.value.shape(), (12, 6));
        let hops = vec![Tensor2::filled(5, 3, 0.5); 3];
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = mixhop_encode(&mut tape, &vars, &hops).unwrap();
        assert_eq!(tape.value(z).shape(), (5, 6));
        let bad = vec![Tensor2::filled(5, 4, 0.5); 3];
        assert!(matches!(mixhop_encode(&mut tape, &vars, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn two_hop_signal_needs_k2() {
        // Path 0-1-2-3 with a single non-zero feature at node 0; node 2 is two hops away.
        let a = normalize_adjacency(&SparseMatrix::from_pattern(4, &[(0, 1), (1, 2), (2, 3)]).unwrap());
        let mut x = Tensor2::zeros(4, 1);
        x.set(0, 0, 1.0);
        let positive = |k: usize| {
            let mut p = ModelParams::init(ModelShape::new(k, 1, 2, 2).unwrap(), 0);
            for w in &mut p.hop_weights {
                w.value = Tensor2::filled(1, p.shape.d_hop, 1.0);
            }
            p.w_mix.value = Tensor2::filled((k + 1) * p.shape.d_hop, 2, 1.0);
            p
        };
        for (k, expect_nonzero) in [(1, false), (2, true)] {
            let p = positive(k);
            let hops = khop_stack(&a, &x, k).unwrap();
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape, false);
            let z = mixhop_encode(&mut tape, &vars, &hops).unwrap();
            assert_eq!(tape.value(z).row(2).iter().any(|&v| v != 0.0), expect_nonzero, "K={k}");
        }
    }

    #[test]
    fn fuse_without_previous_is_value_projection() {
        let p = ModelParams::init(shape(1), 3);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(2, 6, 0.3));
        let zp = tape.constant(Tensor2::filled(1, 6, -0.2));
        let (fused, w) = temporal_fuse(&mut tape, &vars, z, Some(zp), &[None, Some(0)], true).unwrap();
        let zv = Tensor2::filled(2, 6, 0.3).matmul(&p.w_v.value).unwrap();
        assert_eq!(tape.value(fused).row(0), zv.row(0));
        assert_eq!(tape.value(w).row(0), &[1.0, 0.0]);
        let wrow = tape.value(w).row(1);
        assert!((wrow[0] + wrow[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_embeddings_split_attention_evenly() {
        let mut p = ModelParams::init(shape(1), 4);
        p.lambda.value = Tensor2::scalar(0.0);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(1, 6, 0.7));
        let (_, w) = temporal_fuse(&mut tape, &vars, z, Some(z), &[Some(0)], true).unwrap();
        assert_eq!(tape.value(w).data(), &[0.5, 0.5]);

        p.lambda.value = Tensor2::scalar(1e4);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(1, 6, 0.7));
        let (_, w) = temporal_fuse(&mut tape, &vars, z, Some(z), &[Some(0)], true).unwrap();
        assert!(tape.value(w).get(0, 1) < 1e-300);
    }

    #[test]
    fn classifier_values() {
        let mut p = ModelParams::init(shape(0), 5);
        p.w_c.value = Tensor2::zeros(6, 1);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(3, 6, 1.0));
        let y = classify(&mut tape, &vars, z).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5; 3]);

        p.b_c.value = Tensor2::scalar(3f64.ln());
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(1, 6, 1.0));
        let y = classify(&mut tape, &vars, z).unwrap();
        assert!((tape.value(y).item() - 0.75).abs() < 1e-15);

        p.b_c.value = Tensor2::scalar(1e6);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, false);
        let z = tape.constant(Tensor2::filled(1, 6, 1.0));
        let y = classify(&mut tape, &vars, z).unwrap();
        assert_eq!(tape.value(y).item(), 1.0 - PROB_EPS);
    }

    #[test]
    fn variant_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("bogus".parse::<Variant>(), Err(Error::Argument(_))));
        assert_eq!(Variant::NoStructure.effective_k(3), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(shape(2), 9);
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(&p, Stage::Pretrained, 9, Variant::Full).save(&path).unwrap();
        let c = Checkpoint::load(&path).unwrap();
        assert_eq!(c.params.digest(), p.digest());
        assert_eq!(c.stage, Stage::Pretrained);
    }
}
