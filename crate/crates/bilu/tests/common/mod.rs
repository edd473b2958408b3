//! Shared test fixtures: seeded random matrices and the dense LDU oracle.
//!
//! The oracle performs plain unpivoted Doolittle elimination on a dense copy
//! and never touches the sparse factorization code paths it is used to
//! check.
#![allow(dead_code)]

use bilu::{BlockFactorization, SparseMatrix};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random diagonally dominant matrix with roughly `density` off-diagonal
/// fill per row.
pub fn random_dd(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    let mut rowsum = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if v != 0.0 {
                    t.push((i, j, v));
                    rowsum[i] += v.abs();
                }
            }
        }
    }
    for (i, &s) in rowsum.iter().enumerate() {
        t.push((i, i, s + 1.0 + rng.gen::<f64>()));
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

/// Fully dense random matrix with a dominant diagonal.
pub fn random_dense_dd(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v: f64 = if i == j {
                n as f64 + rng.gen::<f64>()
            } else {
                rng.gen_range(-1.0..1.0)
            };
            t.push((i, j, v));
        }
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

/// Unit-lower L, pivot vector d, unit-upper U from unpivoted dense
/// elimination; `None` on a zero pivot.
#[allow(clippy::type_complexity)]
pub fn dense_ldu_oracle(a: &SparseMatrix) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.n_rows();
    let mut w = a.to_dense();
    let mut l = vec![vec![0.0; n]; n];
    let mut u = vec![vec![0.0; n]; n];
    let mut d = vec![0.0; n];
    for k in 0..n {
        let piv = w[k][k];
        if piv == 0.0 {
            return None;
        }
        d[k] = piv;
        l[k][k] = 1.0;
        u[k][k] = 1.0;
        for i in k + 1..n {
            l[i][k] = w[i][k] / piv;
        }
        for j in k + 1..n {
            u[k][j] = w[k][j] / piv;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                w[i][j] -= l[i][k] * piv * u[k][j];
            }
        }
    }
    Some((l, d, u))
}

/// Rebuild the dense matrix `L * P * U` from a block factorization, where
/// `P` blocks are recovered by inverting the stored `Dinv`.
pub fn reconstruct_dense(f: &BlockFactorization) -> Vec<Vec<f64>> {
    let n = f.n();
    let part = f.partition();
    let mut l = vec![vec![0.0; n]; n];
    let mut u = vec![vec![0.0; n]; n];
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        l[i][i] = 1.0;
        u[i][i] = 1.0;
    }
    for k in 0..part.n_blocks() {
        let span = part.span(k);
        let lb = &f.l_blocks()[k];
        for (t, &row) in lb.indices.iter().enumerate() {
            for (c, col) in span.clone().enumerate() {
                l[row][col] = lb.data.get(t, c);
            }
        }
        let ub = &f.u_blocks()[k];
        for (t, &col) in ub.indices.iter().enumerate() {
            for (a, row) in span.clone().enumerate() {
                u[row][col] = ub.data.get(t, a);
            }
        }
        let dinv = &f.dinv_blocks()[k];
        let (pk, status) = bilu::lu_invert(dinv, f64::INFINITY);
        assert!(
            !matches!(status, bilu::InvertStatus::Singular),
            "stored Dinv block {k} is singular"
        );
        for (a, row) in span.clone().enumerate() {
            for (b, col) in span.clone().enumerate() {
                p[row][col] = pk.get(a, b);
            }
        }
    }
    let lp = matmul(&l, &p);
    matmul(&lp, &u)
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let ail = a[i][l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i][j] += ail * b[l][j];
            }
        }
    }
    c
}

pub fn norm_inf_dense(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn diff_norm_inf(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut d = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        let s: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum();
        d = d.max(s);
    }
    d
}

/// Dense GEMV helper for small checks.
pub fn dense_mul_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(&aij, &xj)| aij * xj).sum())
        .collect()
}
