//! Matching optimality against brute-force enumeration and the scaling
//! invariants on a generated corpus.

mod common;

use bilu::{max_weight_matching, transversal_product, verify_matching, SparseMatrix};
use common::{random_dd, rng};
use rand::prelude::*;

/// Max over all permutations of the product of |entries| on the pattern.
fn brute_force_best(a: &SparseMatrix) -> f64 {
    let n = a.n_rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0.0f64;
    permute_all(&mut perm, 0, &mut |p| {
        let mut prod = 1.0;
        for (i, &j) in p.iter().enumerate() {
            prod *= a.get(i, j).abs();
        }
        if prod > best {
            best = prod;
        }
    });
    best
}

fn permute_all(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_all(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

#[test]
fn optimal_on_small_random_instances() {
    let mut r = rng(31001);
    let mut tested = 0usize;
    while tested < 200 {
        let n = r.gen_range(2..=7);
        let density = r.gen_range(0.4..1.0);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if r.gen::<f64>() < density {
                    t.push((i, j, r.gen_range(0.1..10.0)));
                }
            }
        }
        let a = match SparseMatrix::from_triplets(n, n, &t) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let best = brute_force_best(&a);
        match max_weight_matching(&a) {
            Ok(m) => {
                let got = transversal_product(&a, &m.perm);
                assert_eq!(
                    got, best,
                    "suboptimal matching on instance {tested} (n={n})"
                );
                assert!(verify_matching(&a, &m).unwrap().pass());
                tested += 1;
            }
            Err(_) => {
                // structurally singular pattern: the oracle must agree
                assert_eq!(best, 0.0, "matching failed on a coverable pattern");
            }
        }
    }
}

#[test]
fn scaling_invariants_on_corpus() {
    let mut r = rng(31002);
    for n in [10usize, 40, 80, 150] {
        for _ in 0..3 {
            let a = random_dd(n, 0.1, &mut r);
            let m = max_weight_matching(&a).unwrap();
            let rep = verify_matching(&a, &m).unwrap();
            assert!(
                rep.pass(),
                "n={n}: excess {} diag deviation {}",
                rep.max_entry_excess,
                rep.max_diag_deviation
            );
        }
    }
}

#[test]
fn wide_magnitude_range_still_scales() {
    let mut r = rng(31003);
    let n = 30;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 10f64.powi(r.gen_range(-8..8))));
        let j = (i + 7) % n;
        t.push((i, j, 10f64.powi(r.gen_range(-8..8))));
    }
    let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
    let m = max_weight_matching(&a).unwrap();
    assert!(verify_matching(&a, &m).unwrap().pass());
}

#[test]
fn duality_slackness_on_random_instances() {
    let mut r = rng(31004);
    for _ in 0..50 {
        let n = r.gen_range(3..=12);
        let a = random_dd(n, 0.5, &mut r);
        let m = max_weight_matching(&a).unwrap();
        let a = a.to_csc();
        let mut maxcol = vec![0.0f64; n];
        for j in 0..n {
            for &v in a.outer(j).1 {
                maxcol[j] = maxcol[j].max(v.abs());
            }
        }
        for j in 0..n {
            let (rows, vals) = a.outer(j);
            for (&i, &v) in rows.iter().zip(vals) {
                if v == 0.0 {
                    continue;
                }
                let c = (maxcol[j] / v.abs()).ln();
                let slack = c - m.row_duals[i] - m.col_duals[j];
                assert!(slack >= -1e-10, "infeasible dual at ({i},{j}): {slack}");
                if m.perm.map()[i] == j {
                    assert!(slack.abs() <= 1e-10, "matched edge not tight: {slack}");
                }
            }
        }
    }
}
