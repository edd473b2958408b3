//! Diagonal-block perturbation for singular or ill-conditioned pivots.
//!
//! The target entry of a flagged column is its maximum-modulus entry, with
//! preference for the diagonal whenever `2*|d_jj| >= |d_kj|`, and it moves to
//!
//! ```text
//! d_new = d * (1 + rho * delta) + sign(d) * tau * alpha,    sign(0) = +1,
//! ```
//!
//! where `delta` is the column's maximum modulus and `alpha` the largest
//! entry of the scaled matrix. A column pass handles exactly zero columns and
//! pivot steps that hit an exact zero during an LU probe (the
//! minimum-|pivot| column when the block is merely ill-conditioned); a row
//! pass then repeats the procedure row-wise if the block is still defective.

use crate::dense::{cond_estimate_1norm, DenseBlock, LuFactors};

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Perturb one target entry of column `j`; returns 1 when an entry changed.
fn perturb_column(d: &mut DenseBlock, j: usize, alpha: f64, tau: f64, rho: f64) -> usize {
    let m = d.rows();
    let mut delta = 0.0f64;
    let mut kmax = 0usize;
    for i in 0..m {
        let v = d.get(i, j).abs();
        if v > delta {
            delta = v;
            kmax = i;
        }
    }
    let target = if 2.0 * d.get(j, j).abs() >= d.get(kmax, j).abs() {
        j
    } else {
        kmax
    };
    let old = d.get(target, j);
    d.set(target, j, old * (1.0 + rho * delta) + sign(old) * tau * alpha);
    1
}

fn perturb_row(d: &mut DenseBlock, i: usize, alpha: f64, tau: f64, rho: f64) -> usize {
    let m = d.cols();
    let mut delta = 0.0f64;
    let mut kmax = 0usize;
    for j in 0..m {
        let v = d.get(i, j).abs();
        if v > delta {
            delta = v;
            kmax = j;
        }
    }
    let target = if 2.0 * d.get(i, i).abs() >= d.get(i, kmax).abs() {
        i
    } else {
        kmax
    };
    let old = d.get(i, target);
    d.set(i, target, old * (1.0 + rho * delta) + sign(old) * tau * alpha);
    1
}

fn is_zero_column(d: &DenseBlock, j: usize) -> bool {
    (0..d.rows()).all(|i| d.get(i, j) == 0.0)
}

fn is_zero_row(d: &DenseBlock, i: usize) -> bool {
    (0..d.cols()).all(|j| d.get(i, j) == 0.0)
}

/// Perturb a diagonal block that was flagged singular or ill-conditioned.
///
/// Returns the perturbed block and the number of modified entries; a block
/// that turns out well-conditioned (below `cond_threshold`) with no zero
/// column is returned unchanged with count 0.
pub fn perturb_diagonal(
    d: &DenseBlock,
    alpha: f64,
    tau: f64,
    rho: f64,
    cond_threshold: f64,
) -> (DenseBlock, usize) {
    let mut d = d.clone();
    let m = d.rows();
    let mut count = 0usize;
    let mut fixed_col = vec![false; m];

    // column pass: zero columns first
    for j in 0..m {
        if is_zero_column(&d, j) {
            count += perturb_column(&mut d, j, alpha, tau, rho);
            fixed_col[j] = true;
        }
    }
    // then columns implicated by the LU probe
    let mut probe_fixes = false;
    loop {
        let lu = LuFactors::factor(&d);
        match lu.zero_pivot() {
            Some(p) if !fixed_col[p] => {
                count += perturb_column(&mut d, p, alpha, tau, rho);
                fixed_col[p] = true;
                probe_fixes = true;
            }
            Some(_) => break, // already fixed once; leave it to the row pass
            None => {
                if count == 0 && !probe_fixes {
                    // nothing structurally wrong: only act when genuinely
                    // ill-conditioned, on the smallest-pivot column
                    let kappa = cond_estimate_1norm(&d, &lu);
                    if kappa <= cond_threshold {
                        return (d, 0);
                    }
                    let pivots = lu.pivot_magnitudes();
                    let (jmin, _) = pivots
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (j, &p)| {
                            if p < acc.1 {
                                (j, p)
                            } else {
                                acc
                            }
                        });
                    count += perturb_column(&mut d, jmin, alpha, tau, rho);
                    fixed_col[jmin] = true;
                }
                break;
            }
        }
    }

    // row pass, only while the block is still defective
    let lu = LuFactors::factor(&d);
    if lu.is_singular() || (0..m).any(|i| is_zero_row(&d, i)) {
        let mut fixed_row = vec![false; m];
        for i in 0..m {
            if is_zero_row(&d, i) {
                count += perturb_row(&mut d, i, alpha, tau, rho);
                fixed_row[i] = true;
            }
        }
        loop {
            let lu = LuFactors::factor(&d);
            match lu.zero_pivot() {
                Some(p) if !fixed_row[p] => {
                    count += perturb_row(&mut d, p, alpha, tau, rho);
                    fixed_row[p] = true;
                }
                _ => break,
            }
        }
    }

    (d, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_1x1_block_gets_tau_alpha() {
        let d = DenseBlock::zeros(1, 1);
        let (p, count) = perturb_diagonal(&d, 1.0, 1e-2, 1e-1, 1e12);
        assert_eq!(count, 1);
        assert!((p.get(0, 0) - 1e-2).abs() < 1e-18);
    }

    #[test]
    fn flagged_unit_1x1_follows_formula() {
        // d(1 + rho*delta) + sign(d)*tau*alpha = 1*(1.1) + 0.01 = 1.11
        let d = DenseBlock::from_rows(&[&[1.0]]);
        // force the ill-conditioned path with a zero threshold
        let (p, count) = perturb_diagonal(&d, 1.0, 1e-2, 1e-1, 0.5);
        assert_eq!(count, 1);
        assert!((p.get(0, 0) - 1.11).abs() < 1e-15);
    }

    #[test]
    fn well_conditioned_block_unchanged() {
        let d = DenseBlock::from_rows(&[&[2.0, 0.1], &[0.0, 3.0]]);
        let (p, count) = perturb_diagonal(&d, 1.0, 1e-2, 1e-1, 1e12);
        assert_eq!(count, 0);
        assert_eq!(p, d);
    }

    #[test]
    fn rank_deficient_ones_block_recovers() {
        let d = DenseBlock::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let (p, count) = perturb_diagonal(&d, 1.0, 1e-2, 1e-1, 1e12);
        assert!(count >= 1);
        let det = p.get(0, 0) * p.get(1, 1) - p.get(0, 1) * p.get(1, 0);
        assert!(det.abs() > 1e-4, "block still numerically singular: {p}");
        // diagonal preferred: off-diagonal entries untouched
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(1, 0), 1.0);
    }

    #[test]
    fn zero_row_fixed_by_row_pass() {
        let d = DenseBlock::from_rows(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let (p, count) = perturb_diagonal(&d, 1.0, 1e-2, 1e-1, 1e12);
        assert!(count >= 1);
        assert!(!LuFactors::factor(&p).is_singular(), "still singular: {p}");
    }

    #[test]
    fn perturbation_is_bounded() {
        // each modified entry moves by at most rho*|entry|*delta + tau*alpha
        let d = DenseBlock::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let (alpha, tau, rho) = (2.0, 1e-2, 1e-1);
        let (p, _) = perturb_diagonal(&d, alpha, tau, rho, 1e12);
        for i in 0..2 {
            for j in 0..2 {
                let shift = (p.get(i, j) - d.get(i, j)).abs();
                assert!(shift <= rho * d.get(i, j).abs() * 1.0 + tau * alpha + 1e-15);
            }
        }
    }
}
