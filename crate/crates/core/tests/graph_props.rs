//! Property checks for snapshot construction and propagation operators.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stc_mixhop::graph::{build_snapshot, khop_apply, normalize_adjacency, SparseMatrix};
use stc_mixhop::ingest::{TransactionRecord, CANONICAL_TX_TYPES};
use stc_mixhop::numcore::Tensor2;

fn random_pattern(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseMatrix {
    let mut edges = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r != c && rng.random_bool(p) {
                edges.push((r, c));
            }
        }
    }
    SparseMatrix::from_pattern(n, &edges).unwrap()
}

fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(m: &Tensor2) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

fn dense_power_apply(a: &Tensor2, x: &Tensor2, k: usize) -> Tensor2 {
    (0..k).fold(x.clone(), |acc, _| a.matmul(&acc).unwrap())
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<TransactionRecord> {
    (0..n)
        .map(|_| {
            let amount = (rng.random_range(1.0..1000.0f64) * 100.0).round() / 100.0;
            let before = rng.random_range(0.0..2000.0);
            TransactionRecord {
                step: 0,
                tx_type: CANONICAL_TX_TYPES[rng.random_range(0..5)].to_string(),
                amount,
                src_id: format!("C{}", rng.random_range(0..12)),
                dst_id: format!("M{}", rng.random_range(0..12)),
                src_balance_before: before,
                src_balance_after: before - amount,
                dst_balance_before: 0.0,
                dst_balance_after: amount,
                is_fraud: rng.random_bool(0.2),
            }
        })
        .collect()
}

fn vocab() -> Vec<String> {
    CANONICAL_TX_TYPES.iter().map(|s| s.to_string()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_adjacency_is_symmetric_with_positive_diagonal(seed in 0u64..10_000, n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_hat = normalize_adjacency(&random_pattern(&mut rng, n, 0.08));
        a_hat.validate().unwrap();
        for (r, c, v) in a_hat.iter() {
            prop_assert_eq!(v, a_hat.get(c, r));
        }
        for i in 0..n {
            prop_assert!(a_hat.get(i, i) > 0.0);
        }
    }

    #[test]
    fn khop_composes(seed in 0u64..10_000, n in 1usize..50, a in 0usize..4, b in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_hat = normalize_adjacency(&random_pattern(&mut rng, n, 0.1));
        let x = random_dense(&mut rng, n, 3);
        let direct = khop_apply(&a_hat, &x, a + b).unwrap();
        let nested = khop_apply(&a_hat, &khop_apply(&a_hat, &x, b).unwrap(), a).unwrap();
        prop_assert!(direct.max_abs_diff(&nested) < 1e-12);
        let dense = dense_power_apply(&a_hat.to_dense(), &x, a + b);
        prop_assert!(direct.max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn spectral_radius_at_most_one(seed in 0u64..10_000, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_hat = normalize_adjacency(&random_pattern(&mut rng, n, 0.15)).to_dense();
        let eig = symmetric_eigenvalues(&a_hat);
        let rho = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(rho <= 1.0 + 1e-9, "rho {}", rho);
    }

    #[test]
    fn features_ignore_fraud_flags(seed in 0u64..10_000, n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_records(&mut rng, n);
        let flipped: Vec<_> = records.iter().cloned().map(|mut r| { r.is_fraud = !r.is_fraud; r }).collect();
        let a = build_snapshot(0, &records, &vocab()).unwrap();
        let b = build_snapshot(0, &flipped, &vocab()).unwrap();
        prop_assert_eq!(a.features.data(), b.features.data());
        prop_assert_eq!(a.adjacency, b.adjacency);
    }

    #[test]
    fn adjacency_matches_transfers(seed in 0u64..10_000, n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_records(&mut rng, n);
        let s = build_snapshot(0, &records, &vocab()).unwrap();
        prop_assert!(s.node_ids.windows(2).all(|w| w[0] < w[1]));
        for i in 0..s.n_nodes() {
            for j in 0..s.n_nodes() {
                let sent = records.iter().any(|r| r.src_id == s.node_ids[i] && r.dst_id == s.node_ids[j]);
                prop_assert_eq!(s.adjacency.get(i, j) == 1.0, sent);
            }
        }
    }
}

#[test]
fn eigen_oracle_sanity() {
    let m = Tensor2::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let mut e = symmetric_eigenvalues(&m);
    e.sort_by(f64::total_cmp);
    assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
}
