//! Level-1, threshold-filtered ILU simulation used to enlarge an a-priori
//! block partition before the factorization runs.
//!
//! For each scalar step `k` the estimated column pattern keeps original
//! entries with `|a_ik| >= tau*|a_kk|` and adds level-1 fill positions `i`
//! where `|a_ij * a_jk| >= tau*|a_jj * a_kk|` for some `j < k` in column `k`'s
//! upper pattern (the fill value would be `-a_ij*a_jk/a_jj`). Only original
//! values of `A` enter the analysis. Consecutive steps are aggregated into a
//! block while the padded block storage stays affordable:
//!
//! ```text
//! f_{l+1} <= 4/3 * c'   or   f_{l+1} <= c' + 4*(l+1),
//! ```
//!
//! where `f_l = (r+s+l)*l` is the block nonzero count on the union pattern
//! and `c' = f_l - c + |I_{k+l}| + |J_{k+l}| + 1` is the running scalar
//! equivalent. Existing blocks of the input partition are atomic: their
//! pattern sets are the unions over their member columns/rows and the scalar
//! baseline term generalizes to the candidate block's own storage cost.

use crate::sparse::{BlockPartition, SparseMatrix};

/// Which sets feed the `|I| + |J|` term of the scalar-equivalent count `c'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountSets {
    /// The threshold-filtered, fill-augmented sets (the narrative's I-tilde).
    #[default]
    Filtered,
    /// The unfiltered original pattern sets.
    Raw,
}

/// Knobs of [`ilu1t_block_guess_with`].
#[derive(Debug, Clone, Copy)]
pub struct Ilu1tOptions {
    pub count_sets: CountSets,
    /// When false, only the pattern sets are computed and the input partition
    /// is returned unchanged.
    pub aggregate: bool,
    /// Hard cap on the guessed block width.
    pub max_block: usize,
}

impl Default for Ilu1tOptions {
    fn default() -> Self {
        Self {
            count_sets: CountSets::Filtered,
            aggregate: true,
            max_block: 256,
        }
    }
}

/// Estimated patterns of one scalar step: filtered original pattern and the
/// same with simulated level-1 fill.
#[derive(Debug, Clone)]
pub struct PatternEstimate {
    pub i_hat: Vec<usize>,
    pub j_hat: Vec<usize>,
    pub i_tilde: Vec<usize>,
    pub j_tilde: Vec<usize>,
}

/// Running storage budget of the block being aggregated.
#[derive(Debug, Clone, Copy)]
pub struct AggregationBudget {
    /// Current block width.
    pub l: usize,
    /// Block nonzeros `(r+s+l)*l` on the union pattern.
    pub f_l: usize,
    /// Accumulated wasted zeros, `f_l - c` is the simulated scalar count.
    pub c: usize,
    /// Nonzero off-diagonal rows of the union column pattern.
    pub r: usize,
    /// Nonzero off-diagonal columns of the union row pattern.
    pub s: usize,
}

/// The aggregation admission test in exact integer arithmetic:
/// `3*f_next <= 4*c_prime` or `f_next <= c_prime + 4*new_width`.
pub fn ilu1t_admit(f_next: usize, c_prime: usize, new_width: usize) -> bool {
    3 * f_next <= 4 * c_prime || f_next <= c_prime + 4 * new_width
}

struct StepContext<'a> {
    csc: &'a SparseMatrix,
    csr: SparseMatrix,
    /// |a_kk| with the degenerate-pivot substitution applied.
    diag_guard: Vec<f64>,
    tau: f64,
}

impl<'a> StepContext<'a> {
    fn new(a: &'a SparseMatrix, tau: f64) -> Self {
        let csr = a.transpose_view().to_csc();
        let alpha_max = a.max_abs();
        let diag_guard: Vec<f64> = a
            .diag()
            .iter()
            .map(|&d| {
                let ad = d.abs();
                if ad == 0.0 {
                    tau * alpha_max
                } else {
                    ad
                }
            })
            .collect();
        Self {
            csc: a,
            csr,
            diag_guard,
            tau,
        }
    }

    /// Filtered original pattern plus level-1 fill of one triangular side.
    /// `primary` is the CSC matrix for the L side and the CSR view for the U
    /// side; both the step pattern and the fill probes read the same side.
    fn side_sets(
        &self,
        primary: &SparseMatrix,
        k: usize,
        raw: &mut Vec<usize>,
        hat: &mut Vec<usize>,
        tilde: &mut Vec<usize>,
        stamp: &mut [usize],
        epoch: usize,
    ) {
        raw.clear();
        hat.clear();
        tilde.clear();
        let dk = self.diag_guard[k];
        let cut = self.tau * dk;
        let (idx, vals) = primary.outer(k);
        for (&i, &v) in idx.iter().zip(vals) {
            if i >= k {
                if v != 0.0 {
                    raw.push(i);
                }
                if v.abs() >= cut {
                    hat.push(i);
                    if stamp[i] != epoch {
                        stamp[i] = epoch;
                        tilde.push(i);
                    }
                }
            }
        }
        // level-1 fill through j < k present in this column's upper part
        for (&j, &vjk) in idx.iter().zip(vals) {
            if j >= k {
                break; // indices are sorted
            }
            if vjk == 0.0 {
                continue;
            }
            let dj = self.diag_guard[j];
            let (jidx, jvals) = primary.outer(j);
            let lo = jidx.partition_point(|&i| i <= k);
            for (&i, &vij) in jidx[lo..].iter().zip(&jvals[lo..]) {
                if (vij * vjk).abs() >= self.tau * (dj * dk).abs() && stamp[i] != epoch {
                    stamp[i] = epoch;
                    tilde.push(i);
                }
            }
        }
        tilde.sort_unstable();
    }
}

/// Pattern estimate of a single scalar step, mostly for inspection and tests.
pub fn estimate_step_pattern(a: &SparseMatrix, tau: f64, k: usize) -> PatternEstimate {
    let a = a.to_csc();
    let ctx = StepContext::new(&a, tau);
    let n = a.n_cols();
    let mut stamp = vec![usize::MAX; n];
    let (mut raw, mut hat, mut tilde) = (Vec::new(), Vec::new(), Vec::new());
    ctx.side_sets(ctx.csc, k, &mut raw, &mut hat, &mut tilde, &mut stamp, 2 * k);
    let (i_hat, i_tilde) = (hat.clone(), tilde.clone());
    ctx.side_sets(&ctx.csr, k, &mut raw, &mut hat, &mut tilde, &mut stamp, 2 * k + 1);
    PatternEstimate {
        i_hat,
        j_hat: hat,
        i_tilde,
        j_tilde: tilde,
    }
}

/// Enlarge a partition by simulating the Crout factorization with level-1
/// fill and threshold `tau`. Existing blocks are never split.
pub fn ilu1t_block_guess(
    a: &SparseMatrix,
    partition: &BlockPartition,
    tau: f64,
) -> BlockPartition {
    ilu1t_block_guess_with(a, partition, tau, &Ilu1tOptions::default())
}

/// [`ilu1t_block_guess`] with explicit options.
pub fn ilu1t_block_guess_with(
    a: &SparseMatrix,
    partition: &BlockPartition,
    tau: f64,
    opts: &Ilu1tOptions,
) -> BlockPartition {
    let a = a.to_csc();
    assert!(a.is_square(), "block guess needs a square matrix");
    assert_eq!(partition.total(), a.n_cols(), "partition must cover the matrix");
    if !opts.aggregate {
        return partition.clone();
    }
    let n = a.n_cols();
    let ctx = StepContext::new(&a, tau);

    let mut stamp = vec![usize::MAX; n];

    // union pattern of the aggregate under construction, deduped via stamps
    let mut union_rows: Vec<usize> = Vec::new();
    let mut union_cols: Vec<usize> = Vec::new();
    let mut row_stamp = vec![usize::MAX; n];
    let mut col_stamp = vec![usize::MAX; n];
    let mut agg_epoch = 0usize;

    let (mut raw, mut hat, mut tilde) = (Vec::new(), Vec::new(), Vec::new());

    // per-candidate-block scratch, deduped with its own stamps
    let mut cand_rows: Vec<usize> = Vec::new();
    let mut cand_cols: Vec<usize> = Vec::new();
    let mut cand_raw_rows: Vec<usize> = Vec::new();
    let mut cand_raw_cols: Vec<usize> = Vec::new();
    let mut cstamp = vec![usize::MAX; 4 * n];

    let count_beyond = |v: &[usize], end: usize| v.iter().filter(|&&i| i >= end).count();

    let mut out_sizes: Vec<usize> = Vec::new();
    let mut agg_width = 0usize;
    let mut base_sum = 0usize; // simulated cost of the input partition so far

    for g in 0..partition.n_blocks() {
        let span = partition.span(g);
        let (gs, ge) = (span.start, span.end);
        let gw = ge - gs;

        cand_rows.clear();
        cand_cols.clear();
        cand_raw_rows.clear();
        cand_raw_cols.clear();
        let gepoch = g + 1;
        for t in gs..ge {
            ctx.side_sets(ctx.csc, t, &mut raw, &mut hat, &mut tilde, &mut stamp, 2 * (g * n + t));
            for &i in &tilde {
                if cstamp[4 * i] != gepoch {
                    cstamp[4 * i] = gepoch;
                    cand_rows.push(i);
                }
            }
            for &i in &raw {
                if i > t && cstamp[4 * i + 1] != gepoch {
                    cstamp[4 * i + 1] = gepoch;
                    cand_raw_rows.push(i);
                }
            }
            ctx.side_sets(&ctx.csr, t, &mut raw, &mut hat, &mut tilde, &mut stamp, 2 * (g * n + t) + 1);
            for &j in &tilde {
                if cstamp[4 * j + 2] != gepoch {
                    cstamp[4 * j + 2] = gepoch;
                    cand_cols.push(j);
                }
            }
            for &j in &raw {
                if j > t && cstamp[4 * j + 3] != gepoch {
                    cstamp[4 * j + 3] = gepoch;
                    cand_raw_cols.push(j);
                }
            }
        }

        let r_g = count_beyond(&cand_rows, ge);
        let s_g = count_beyond(&cand_cols, ge);
        let base_g = match opts.count_sets {
            CountSets::Filtered => (r_g + s_g + gw) * gw,
            CountSets::Raw => {
                (count_beyond(&cand_raw_rows, ge) + count_beyond(&cand_raw_cols, ge) + gw) * gw
            }
        };

        let merge = if agg_width == 0 {
            false
        } else {
            // tentative union with the candidate appended
            let new_width = agg_width + gw;
            let extra_rows = cand_rows
                .iter()
                .filter(|&&i| i >= ge && row_stamp[i] != agg_epoch)
                .count();
            let extra_cols = cand_cols
                .iter()
                .filter(|&&j| j >= ge && col_stamp[j] != agg_epoch)
                .count();
            let r_new = count_beyond(&union_rows, ge) + extra_rows;
            let s_new = count_beyond(&union_cols, ge) + extra_cols;
            let f_new = (r_new + s_new + new_width) * new_width;
            let c_prime = base_sum + base_g;
            new_width <= opts.max_block && ilu1t_admit(f_new, c_prime, new_width)
        };

        if merge {
            agg_width += gw;
            base_sum += base_g;
        } else {
            if agg_width > 0 {
                out_sizes.push(agg_width);
            }
            agg_epoch += 1;
            union_rows.clear();
            union_cols.clear();
            agg_width = gw;
            base_sum = base_g;
        }
        for &i in &cand_rows {
            if row_stamp[i] != agg_epoch {
                row_stamp[i] = agg_epoch;
                union_rows.push(i);
            }
        }
        for &j in &cand_cols {
            if col_stamp[j] != agg_epoch {
                col_stamp[j] = agg_epoch;
                union_cols.push(j);
            }
        }
    }
    if agg_width > 0 {
        out_sizes.push(agg_width);
    }
    BlockPartition::from_sizes(out_sizes).expect("aggregated sizes are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> SparseMatrix {
        SparseMatrix::from_triplets(n, n, &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn admission_trace_of_identity_recurrence() {
        // widths 1..5 admit, width 6 is rejected: c' = l+1 for decoupled
        // scalars, f_{l+1} = (l+1)^2
        assert!(ilu1t_admit(4, 2, 2)); // 4 <= 2 + 8
        assert!(ilu1t_admit(9, 3, 3));
        assert!(ilu1t_admit(16, 4, 4));
        assert!(ilu1t_admit(25, 5, 5)); // 25 <= 5 + 20, boundary
        assert!(!ilu1t_admit(36, 6, 6)); // 36 > max(8, 30)
    }

    #[test]
    fn identity_aggregates_to_uniform_fives() {
        for n in [10usize, 25] {
            let a = identity(n);
            let p = ilu1t_block_guess(&a, &BlockPartition::scalar(n), 1e-2);
            assert!(
                p.sizes().iter().all(|&s| s == 5),
                "expected uniform size-5 blocks, got {:?}",
                p.sizes()
            );
        }
        // non-multiple tail
        let a = identity(12);
        let p = ilu1t_block_guess(&a, &BlockPartition::scalar(12), 1e-2);
        assert_eq!(p.sizes(), &[5, 5, 2]);
    }

    #[test]
    fn scalar_pairs_with_empty_patterns_always_merge() {
        // second inequality with r = s = r' = s' = 0: f_2 = 4 <= 2 + 8
        assert!(ilu1t_admit(4, 2, 2));
        let a = identity(2);
        let p = ilu1t_block_guess(&a, &BlockPartition::scalar(2), 0.5);
        assert_eq!(p.sizes(), &[2]);
    }

    #[test]
    fn aggregation_disabled_returns_input() {
        let a = identity(7);
        let part = BlockPartition::from_sizes(vec![2, 3, 2]).unwrap();
        let opts = Ilu1tOptions {
            aggregate: false,
            ..Ilu1tOptions::default()
        };
        let p = ilu1t_block_guess_with(&a, &part, 2.0, &opts);
        assert_eq!(p, part);
    }

    #[test]
    fn never_shrinks_blocks() {
        let mut t = Vec::new();
        let n = 12;
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
                t.push((i, i + 1, -1.0));
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &t).unwrap();
        let part = BlockPartition::from_sizes(vec![3, 3, 3, 3]).unwrap();
        let p = ilu1t_block_guess(&a, &part, 1e-2);
        assert_eq!(p.total(), n);
        // every output block is a union of consecutive input blocks
        let mut offs: Vec<usize> = vec![0];
        for &s in p.sizes() {
            offs.push(offs.last().unwrap() + s);
        }
        for o in &offs {
            assert!(part.offsets().contains(o), "offset {o} splits an input block");
        }
        assert!(p.n_blocks() <= part.n_blocks());
    }

    #[test]
    fn pattern_estimate_sets_sorted_and_nested() {
        let t = vec![
            (0, 0, 2.0),
            (1, 0, 1.0),
            (0, 1, 1.0),
            (1, 1, 2.0),
            (2, 1, 1.0),
            (3, 1, 0.001),
            (1, 2, 1.0),
            (2, 2, 2.0),
            (3, 3, 2.0),
            (3, 2, 1.0),
            (2, 3, 1.0),
        ];
        let a = SparseMatrix::from_triplets(4, 4, &t).unwrap();
        for k in 0..4 {
            let est = estimate_step_pattern(&a, 1e-2, k);
            for set in [&est.i_hat, &est.j_hat, &est.i_tilde, &est.j_tilde] {
                assert!(set.windows(2).all(|w| w[0] < w[1]), "set not sorted");
                assert!(set.iter().all(|&i| i >= k), "index below step");
            }
            assert!(est.i_hat.iter().all(|i| est.i_tilde.contains(i)));
            assert!(est.j_hat.iter().all(|j| est.j_tilde.contains(j)));
        }
    }

    #[test]
    fn level1_fill_extends_the_pattern() {
        // a_20 and a_01 nonzero: fill at (2,1) when values are large enough
        let t = vec![
            (0, 0, 1.0),
            (2, 0, 1.0),
            (0, 1, 1.0),
            (1, 1, 1.0),
            (2, 2, 1.0),
        ];
        let a = SparseMatrix::from_triplets(3, 3, &t).unwrap();
        let est = estimate_step_pattern(&a, 1e-1, 1);
        assert!(
            est.i_tilde.contains(&2),
            "expected simulated fill at row 2, got {:?}",
            est.i_tilde
        );
        assert!(!est.i_hat.contains(&2));
    }

    #[test]
    fn tau_one_keeps_partition_when_nothing_merges() {
        // dense coupling forces nonzero unions; with tau >= 1 sets shrink to
        // the diagonal and everything aggregates like the identity, so use
        // aggregate=false to pin the "unchanged" contract instead.
        let a = identity(9);
        let part = BlockPartition::from_sizes(vec![4, 5]).unwrap();
        let opts = Ilu1tOptions {
            aggregate: false,
            ..Ilu1tOptions::default()
        };
        assert_eq!(ilu1t_block_guess_with(&a, &part, 1.0, &opts), part);
    }
}
