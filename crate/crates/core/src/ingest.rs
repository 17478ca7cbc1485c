//! Transaction log parsing, calendar-aligned windowing and temporally
//! stratified subsampling.
//!
//! The input layout is the 11-column PaySim CSV:
//! `step,type,amount,nameOrig,oldbalanceOrg,newbalanceOrig,nameDest,oldbalanceDest,newbalanceDest,isFraud,isFlaggedFraud`.
//! `step` is read directly as hours since the start of the simulation.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order written by [`write_transactions`].
pub const PAYSIM_COLUMNS: [&str; 11] = [
    "step",
    "type",
    "amount",
    "nameOrig",
    "oldbalanceOrg",
    "newbalanceOrig",
    "nameDest",
    "oldbalanceDest",
    "newbalanceDest",
    "isFraud",
    "isFlaggedFraud",
];

/// Transaction types that always get a feature column, even when absent from the data.
pub const CANONICAL_TX_TYPES: [&str; 5] = ["CASH_IN", "CASH_OUT", "DEBIT", "PAYMENT", "TRANSFER"];

/// Default window width: seven days of hourly steps.
pub const DEFAULT_BIN_HOURS: u64 = 168;
pub const DEFAULT_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub step: u64,
    pub tx_type: String,
    pub amount: f64,
    pub src_id: String,
    pub dst_id: String,
    pub src_balance_before: f64,
    pub src_balance_after: f64,
    pub dst_balance_before: f64,
    pub dst_balance_after: f64,
    pub is_fraud: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub window_id: usize,
    pub start_step: u64,
    /// Exclusive.
    pub end_step: u64,
}

struct ColumnMap {
    step: usize,
    tx_type: usize,
    amount: usize,
    src: usize,
    src_before: usize,
    src_after: usize,
    dst: usize,
    dst_before: usize,
    dst_after: usize,
    fraud: usize,
}

impl ColumnMap {
    fn from_headers(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
        };
        Ok(Self {
            step: find("step")?,
            tx_type: find("type")?,
            amount: find("amount")?,
            src: find("nameOrig")?,
            src_before: find("oldbalanceOrg")?,
            src_after: find("newbalanceOrig")?,
            dst: find("nameDest")?,
            dst_before: find("oldbalanceDest")?,
            dst_after: find("newbalanceDest")?,
            fraud: find("isFraud")?,
        })
    }
}

/// Parses a PaySim-layout CSV stream. Records come back in file order.
///
/// `isFlaggedFraud` is accepted but ignored.
pub fn parse_transactions<R: Read>(source: R) -> Result<Vec<TransactionRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let cols = ColumnMap::from_headers(&headers)?;
    let width = headers.len();

    let mut out = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut row).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse { line, message: e.to_string() }
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, found {}", row.len()) });
        }
        out.push(parse_row(&row, &cols, line)?);
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnMap, line: u64) -> Result<TransactionRecord> {
    let field = |idx: usize| row.get(idx).unwrap_or("").trim();
    let real = |idx: usize, name: &str| -> Result<f64> {
        let raw = field(idx);
        let v: f64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("column `{name}`: cannot parse `{raw}` as a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, message: format!("column `{name}` is not finite") });
        }
        Ok(v)
    };

    let raw_step = field(cols.step);
    let step: u64 = raw_step.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column `step`: `{raw_step}` is not a non-negative integer"),
    })?;
    let amount = real(cols.amount, "amount")?;
    if amount < 0.0 {
        return Err(Error::Validation(format!("line {line}: negative amount {amount}")));
    }
    let src_id = field(cols.src).to_string();
    let dst_id = field(cols.dst).to_string();
    if src_id.is_empty() || dst_id.is_empty() {
        return Err(Error::Validation(format!("line {line}: empty entity identifier")));
    }
    let tx_type = field(cols.tx_type).to_string();
    if tx_type.is_empty() {
        return Err(Error::Parse { line, message: "empty transaction type".into() });
    }
    let fraud_raw = field(cols.fraud);
    let is_fraud = match fraud_raw {
        "1" => true,
        "0" => false,
        other => return Err(Error::Parse { line, message: format!("column `isFraud`: unexpected `{other}`") }),
    };

    Ok(TransactionRecord {
        step,
        tx_type,
        amount,
        src_id,
        dst_id,
        src_balance_before: real(cols.src_before, "oldbalanceOrg")?,
        src_balance_after: real(cols.src_after, "newbalanceOrig")?,
        dst_balance_before: real(cols.dst_before, "oldbalanceDest")?,
        dst_balance_after: real(cols.dst_after, "newbalanceDest")?,
        is_fraud,
    })
}

/// Writes records in the 11-column layout. Amounts and balances keep two decimals.
pub fn write_transactions<W: Write>(sink: W, records: &[TransactionRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(PAYSIM_COLUMNS)?;
    for r in records {
        writer.write_record([
            r.step.to_string(),
            r.tx_type.clone(),
            format!("{:.2}", r.amount),
            r.src_id.clone(),
            format!("{:.2}", r.src_balance_before),
            format!("{:.2}", r.src_balance_after),
            r.dst_id.clone(),
            format!("{:.2}", r.dst_balance_before),
            format!("{:.2}", r.dst_balance_after),
            if r.is_fraud { "1".into() } else { "0".into() },
            "0".into(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Sorted union of [`CANONICAL_TX_TYPES`] and every type seen in `records`.
pub fn type_vocabulary(records: &[TransactionRecord]) -> Vec<String> {
    let mut set: BTreeSet<String> = CANONICAL_TX_TYPES.iter().map(|s| s.to_string()).collect();
    set.extend(records.iter().map(|r| r.tx_type.clone()));
    set.into_iter().collect()
}

/// Assigns `window_id = floor(step / bin_hours)` to each record and lists every
/// window in `[0, max_step]`, empty ones included.
pub fn assign_windows(records: &[TransactionRecord], bin_hours: u64) -> Result<(Vec<usize>, Vec<WindowIndex>)> {
    if bin_hours == 0 {
        return Err(Error::Argument("bin_hours must be at least 1".into()));
    }
    let ids: Vec<usize> = records.iter().map(|r| (r.step / bin_hours) as usize).collect();
    let windows = match records.iter().map(|r| r.step).max() {
        None => Vec::new(),
        Some(max_step) => (0..=(max_step / bin_hours) as usize)
            .map(|w| WindowIndex {
                window_id: w,
                start_step: w as u64 * bin_hours,
                end_step: (w as u64 + 1) * bin_hours,
            })
            .collect(),
    };
    Ok((ids, windows))
}

/// Per-window quotas by largest remainder. Every non-empty window keeps at
/// least one slot when `cap` allows it; the slot is taken from the window
/// holding the largest quota.
pub fn window_quotas(counts: &[usize], cap: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if cap >= total {
        return counts.to_vec();
    }
    let (cap_w, total_w) = (cap as u128, total as u128);
    let mut quotas: Vec<usize> = counts.iter().map(|&c| (cap_w * c as u128 / total_w) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&w| counts[w] > 0).collect();
    // Descending fractional part, lower window id first on ties.
    order.sort_by(|&a, &b| {
        let fa = cap_w * counts[a] as u128 % total_w;
        let fb = cap_w * counts[b] as u128 % total_w;
        fb.cmp(&fa).then(a.cmp(&b))
    });
    for &w in order.iter().take(cap - assigned) {
        quotas[w] += 1;
    }

    let non_empty = counts.iter().filter(|&&c| c > 0).count();
    if cap >= non_empty {
        for w in 0..counts.len() {
            if counts[w] > 0 && quotas[w] == 0 {
                let donor = (0..counts.len())
                    .max_by(|&a, &b| quotas[a].cmp(&quotas[b]).then(b.cmp(&a)))
                    .expect("non-empty counts");
                quotas[donor] -= 1;
                quotas[w] = 1;
            }
        }
    }
    quotas
}

/// Keeps at most `cap` records, drawing each window's quota uniformly without
/// replacement. Output preserves input order and is a pure function of
/// `(records, window_ids, cap, seed)`.
pub fn stratified_subsample(
    records: &[TransactionRecord],
    window_ids: &[usize],
    cap: usize,
    seed: u64,
) -> Result<Vec<TransactionRecord>> {
    let keep = stratified_indices(window_ids, cap, seed)?;
    Ok(keep.into_iter().map(|i| records[i].clone()).collect())
}

/// Index form of [`stratified_subsample`]; returned indices are ascending.
pub fn stratified_indices(window_ids: &[usize], cap: usize, seed: u64) -> Result<Vec<usize>> {
    if cap == 0 {
        return Err(Error::Argument("subsample cap must be positive".into()));
    }
    if cap >= window_ids.len() {
        return Ok((0..window_ids.len()).collect());
    }
    let n_windows = window_ids.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_windows];
    for (i, &w) in window_ids.iter().enumerate() {
        members[w].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = window_quotas(&counts, cap);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(cap);
    for (rows, &quota) in members.iter().zip(&quotas) {
        if quota == 0 {
            continue;
        }
        let picked = rand::seq::index::sample(&mut rng, rows.len(), quota);
        keep.extend(picked.into_iter().map(|k| rows[k]));
    }
    keep.sort_unstable();
    Ok(keep)
}
