//! Deterministic synthetic transaction logs with planted fraud.
//!
//! Every active ordinary account sends exactly two and receives exactly two
//! transactions per window, so degree and count features carry no class
//! signal by themselves. Each fraud case is one flagged transfer `A → B`.
//!
//! * **attribute**: the flagged transfer has a large amount and drains the
//!   sender, so the endpoints' own features give them away.
//! * **structure**: the flagged transfer looks ordinary, but both endpoints
//!   sit exactly `motif_hops` hops from a mule account that moves money
//!   through relay chains (`A → R … → M → R' … → B`). Mules only handle
//!   chain traffic and keep zero balances; relays and mules stay unlabeled.
//! * **mixed**: each case is attribute or structure with equal odds.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{TransactionRecord, DEFAULT_BIN_HOURS};

/// Mean number of chain cases routed through one mule per window.
const CASES_PER_MULE: usize = 4;
const TYPE_WEIGHTS: [(&str, f64); 5] =
    [("PAYMENT", 0.40), ("TRANSFER", 0.20), ("CASH_OUT", 0.20), ("CASH_IN", 0.15), ("DEBIT", 0.05)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Attribute,
    Structure,
    Mixed,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Attribute => "attribute",
            Regime::Structure => "structure",
            Regime::Mixed => "mixed",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(Regime::Attribute),
            "structure" => Ok(Regime::Structure),
            "mixed" => Ok(Regime::Mixed),
            other => Err(Error::Argument(format!("unknown regime {other:?}; expected attribute, structure or mixed"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_accounts: usize,
    pub n_windows: usize,
    pub tx_per_window: usize,
    pub fraud_rate: f64,
    pub regime: Regime,
    pub motif_hops: usize,
    pub bin_hours: u64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_accounts: 2000,
            n_windows: 20,
            tx_per_window: 1000,
            fraud_rate: 0.02,
            regime: Regime::Structure,
            motif_hops: 2,
            bin_hours: DEFAULT_BIN_HOURS,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.1).contains(&self.fraud_rate) {
            return Err(Error::Config(format!("fraud_rate must lie in [0, 0.1], got {}", self.fraud_rate)));
        }
        if self.n_windows < 4 {
            return Err(Error::Config(format!("n_windows must be at least 4, got {}", self.n_windows)));
        }
        if !(1..=3).contains(&self.motif_hops) {
            return Err(Error::Config(format!("motif_hops must be 1, 2 or 3, got {}", self.motif_hops)));
        }
        if self.bin_hours == 0 {
            return Err(Error::Config("bin_hours must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cases_per_window(&self) -> usize {
        (self.fraud_rate * self.tx_per_window as f64).round() as usize
    }

    fn mule_pool(&self) -> usize {
        if self.regime == Regime::Attribute {
            0
        } else {
            self.cases_per_window().div_ceil(CASES_PER_MULE)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Attribute,
    Structure,
}

/// One transfer before amounts and balances are drawn.
#[derive(Debug, Clone, Copy)]
struct Edge {
    src: usize,
    dst: usize,
    flagged: bool,
    large: bool,
}

fn account_id(i: usize) -> String {
    format!("C{i:07}")
}

fn cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

struct Sampler {
    benign: LogNormal<f64>,
    large: LogNormal<f64>,
    balance: LogNormal<f64>,
}

impl Sampler {
    fn new() -> Self {
        Self {
            benign: LogNormal::new(5.0, 1.0).expect("valid"),
            large: LogNormal::new(9.0, 0.5).expect("valid"),
            balance: LogNormal::new(6.0, 1.0).expect("valid"),
        }
    }

    fn tx_type(&self, rng: &mut ChaCha8Rng) -> &'static str {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (t, w) in TYPE_WEIGHTS {
            acc += w;
            if u < acc {
                return t;
            }
        }
        TYPE_WEIGHTS[TYPE_WEIGHTS.len() - 1].0
    }
}

/// Pairs leftover out- and in-stubs uniformly, then removes self-loops by swapping targets.
fn match_stubs(rng: &mut ChaCha8Rng, outs: Vec<usize>, mut ins: Vec<usize>) -> Result<Vec<(usize, usize)>> {
    ins.shuffle(rng);
    let n = outs.len();
    for i in 0..n {
        let mut attempts = 0;
        while outs[i] == ins[i] {
            let j = rng.random_range(0..n);
            if outs[j] != ins[i] && outs[i] != ins[j] {
                ins.swap(i, j);
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Generation("could not avoid self-transfers while matching".into()));
            }
        }
    }
    Ok(outs.into_iter().zip(ins).collect())
}

fn window_edges(config: &GenConfig, rng: &mut ChaCha8Rng, mules: &[usize], ordinary: &[usize]) -> Result<Vec<Edge>> {
    let h = config.motif_hops;
    let n_cases = config.cases_per_window();
    let kinds: Vec<Kind> = (0..n_cases)
        .map(|_| match config.regime {
            Regime::Attribute => Kind::Attribute,
            Regime::Structure => Kind::Structure,
            Regime::Mixed => {
                if rng.random_bool(0.5) {
                    Kind::Attribute
                } else {
                    Kind::Structure
                }
            }
        })
        .collect();
    let n_chain = kinds.iter().filter(|&&k| k == Kind::Structure).count();
    // Every transfer uses one sender stub except those sent by mules, one per chain.
    let n_active = config.tx_per_window.saturating_sub(n_chain) / 2;
    let needed: usize = kinds.iter().map(|k| if *k == Kind::Structure { 2 * h } else { 2 }).sum();
    if n_active < 2 || n_active > ordinary.len() {
        return Err(Error::Generation(format!(
            "{} transactions per window need {n_active} active accounts but {} are available",
            config.tx_per_window,
            ordinary.len()
        )));
    }
    if needed > n_active {
        return Err(Error::Generation(format!(
            "{n_cases} fraud cases need {needed} distinct accounts but only {n_active} are active per window"
        )));
    }
    let mut active: Vec<usize> =
        rand::seq::index::sample(rng, ordinary.len(), n_active).into_iter().map(|i| ordinary[i]).collect();
    active.shuffle(rng);
    let mut out_left = std::collections::HashMap::new();
    let mut in_left = std::collections::HashMap::new();
    for &a in &active {
        out_left.insert(a, 2usize);
        in_left.insert(a, 2usize);
    }
    let mut edges = Vec::with_capacity(config.tx_per_window);
    let mut push = |edges: &mut Vec<Edge>, src: usize, dst: usize, flagged: bool, large: bool| {
        if let Some(c) = out_left.get_mut(&src) {
            *c -= 1;
        }
        if let Some(c) = in_left.get_mut(&dst) {
            *c -= 1;
        }
        edges.push(Edge { src, dst, flagged, large });
    };

    let mut next = 0;
    let mut take = |count: usize| {
        let s = &active[next..next + count];
        next += count;
        s.to_vec()
    };
    let mut chain_no = 0;
    for kind in kinds {
        match kind {
            Kind::Attribute => {
                let ab = take(2);
                push(&mut edges, ab[0], ab[1], true, true);
            }
            Kind::Structure => {
                let ab = take(2);
                let relays = take(2 * (h - 1));
                let (a, b) = (ab[0], ab[1]);
                let mule = mules[chain_no % mules.len()];
                chain_no += 1;
                push(&mut edges, a, b, true, false);
                let mut path = vec![a];
                path.extend_from_slice(&relays[..h - 1]);
                path.push(mule);
                path.extend_from_slice(&relays[h - 1..]);
                path.push(b);
                for w in path.windows(2) {
                    push(&mut edges, w[0], w[1], false, false);
                }
            }
        }
    }
    let mut outs = Vec::new();
    let mut ins = Vec::new();
    for &a in &active {
        outs.extend(std::iter::repeat_n(a, out_left[&a]));
        ins.extend(std::iter::repeat_n(a, in_left[&a]));
    }
    for (s, d) in match_stubs(rng, outs, ins)? {
        edges.push(Edge { src: s, dst: d, flagged: false, large: false });
    }
    Ok(edges)
}

/// Generates the full log, sorted by step.
pub fn generate(config: &GenConfig) -> Result<Vec<TransactionRecord>> {
    config.validate()?;
    let pool = config.mule_pool();
    if config.n_accounts <= pool + 2 {
        return Err(Error::Generation(format!("{} accounts cannot host {pool} mules", config.n_accounts)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ids: Vec<usize> = (0..config.n_accounts).collect();
    ids.shuffle(&mut rng);
    let (mules, ordinary) = ids.split_at(pool);
    let mule_set: std::collections::HashSet<usize> = mules.iter().copied().collect();
    let sampler = Sampler::new();

    let mut records = Vec::with_capacity(config.n_windows * config.tx_per_window);
    for w in 0..config.n_windows {
        let edges = window_edges(config, &mut rng, mules, ordinary)?;
        let start = w as u64 * config.bin_hours;
        for e in edges {
            let amount = cents(if e.large { sampler.large.sample(&mut rng) } else { sampler.benign.sample(&mut rng) });
            let (src_before, src_after) = if mule_set.contains(&e.src) {
                (0.0, 0.0)
            } else if e.large {
                (amount, 0.0)
            } else {
                let b = cents(amount + sampler.balance.sample(&mut rng));
                (b, cents(b - amount))
            };
            let (dst_before, dst_after) = if mule_set.contains(&e.dst) {
                (0.0, 0.0)
            } else {
                let b = cents(sampler.balance.sample(&mut rng));
                (b, cents(b + amount))
            };
            records.push(TransactionRecord {
                step: start + rng.random_range(0..config.bin_hours),
                tx_type: sampler.tx_type(&mut rng).to_string(),
                amount,
                src_id: account_id(e.src),
                dst_id: account_id(e.dst),
                src_balance_before: src_before,
                src_balance_after: src_after,
                dst_balance_before: dst_before,
                dst_balance_after: dst_after,
                is_fraud: e.flagged,
            });
        }
    }
    records.sort_by_key(|r| r.step);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(regime: Regime) -> GenConfig {
        GenConfig { n_accounts: 400, n_windows: 4, tx_per_window: 200, regime, seed: 5, ..Default::default() }
    }

    #[test]
    fn deterministic_and_sorted() {
        let a = generate(&small(Regime::Mixed)).unwrap();
        assert_eq!(a, generate(&small(Regime::Mixed)).unwrap());
        assert!(a.windows(2).all(|w| w[0].step <= w[1].step));
        assert!(a.iter().all(|r| r.src_id != r.dst_id && r.amount >= 0.0));
    }

    #[test]
    fn transaction_budget_and_fraud_count() {
        for regime in [Regime::Attribute, Regime::Structure, Regime::Mixed] {
            let cfg = small(regime);
            let recs = generate(&cfg).unwrap();
            let n_fraud = recs.iter().filter(|r| r.is_fraud).count();
            assert_eq!(n_fraud, cfg.cases_per_window() * cfg.n_windows);
            let per_window = recs.len() as f64 / cfg.n_windows as f64;
            assert!((per_window - cfg.tx_per_window as f64).abs() <= 1.0, "{regime}: {per_window}");
        }
    }

    #[test]
    fn no_fraud_when_rate_zero() {
        let recs = generate(&GenConfig { fraud_rate: 0.0, ..small(Regime::Structure) }).unwrap();
        assert!(recs.iter().all(|r| !r.is_fraud));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(generate(&GenConfig { fraud_rate: 0.2, ..small(Regime::Mixed) }), Err(Error::Config(_))));
        assert!(matches!(generate(&GenConfig { n_windows: 3, ..small(Regime::Mixed) }), Err(Error::Config(_))));
        assert!(matches!(generate(&GenConfig { motif_hops: 4, ..small(Regime::Mixed) }), Err(Error::Config(_))));
        let crowded = GenConfig { n_accounts: 60, tx_per_window: 1000, ..small(Regime::Structure) };
        assert!(matches!(generate(&crowded), Err(Error::Generation(_))));
        let dense = GenConfig { tx_per_window: 60, fraud_rate: 0.1, motif_hops: 3, ..small(Regime::Structure) };
        assert!(matches!(generate(&dense), Err(Error::Generation(_))));
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("structure".parse::<Regime>().unwrap(), Regime::Structure);
        assert!("other".parse::<Regime>().is_err());
    }
}
