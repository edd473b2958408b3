//! Cosine-based row grouping.
//!
//! Rows whose sparsity patterns overlap strongly are grouped into one
//! diagonal block: rows `i` and `j` join when
//! `nz(a_i ∩ a_j)^2 >= tau * nz(a_i) * nz(a_j)`. The scan walks the upper
//! triangular pattern of `A A^T` row by row; a row joins the earliest-opened
//! compatible group and groups close once the scan passes them. Rows and
//! columns with more than `mu + dense_filter_sigmas * sigma` nonzeros are
//! excluded from grouping (and from the overlap counts) to keep `A A^T`
//! affordable on matrices with a few dense rows.

use crate::sparse::{BlockPartition, PermutationVector, SparseMatrix};

/// Parameters of [`cosine_blocks`].
#[derive(Debug, Clone, Copy)]
pub struct CosineConfig {
    /// Similarity threshold in `[0, 1]`.
    pub tau_cos: f64,
    /// Dense row/column filter: indices with more than
    /// `mean + dense_filter_sigmas * std` nonzeros are ignored.
    pub dense_filter_sigmas: f64,
}

impl Default for CosineConfig {
    fn default() -> Self {
        Self {
            tau_cos: 0.8,
            dense_filter_sigmas: 2.0,
        }
    }
}

/// Outcome of the grouping: a contiguous-block partition and the symmetric
/// permutation `Q` with `Q^T A Q` grouping each block contiguously.
#[derive(Debug, Clone)]
pub struct CosineBlocks {
    pub partition: BlockPartition,
    pub q: PermutationVector,
}

fn dense_cutoff(counts: &[usize], sigmas: f64) -> f64 {
    if counts.is_empty() {
        return f64::INFINITY;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    mean + sigmas * var.sqrt()
}

/// Group rows with nearly identical patterns; pattern-only, so the values of
/// `a` never influence the outcome.
pub fn cosine_blocks(a: &SparseMatrix, config: &CosineConfig) -> CosineBlocks {
    assert!(
        (0.0..=1.0).contains(&config.tau_cos),
        "tau_cos must lie in [0, 1]"
    );
    let a = a.to_csc();
    assert!(a.is_square(), "cosine blocking needs a square matrix");
    let n = a.n_cols();
    let at = a.transpose_view().to_csc(); // rows of A as columns

    let mut row_counts = vec![0usize; n];
    let col_counts: Vec<usize> = (0..n).map(|j| a.outer(j).0.len()).collect();
    for j in 0..n {
        for &r in a.outer(j).0 {
            row_counts[r] += 1;
        }
    }
    let row_cut = dense_cutoff(&row_counts, config.dense_filter_sigmas);
    let col_cut = dense_cutoff(&col_counts, config.dense_filter_sigmas);
    let row_dense: Vec<bool> = row_counts.iter().map(|&c| c as f64 > row_cut).collect();
    let col_dense: Vec<bool> = col_counts.iter().map(|&c| c as f64 > col_cut).collect();

    // Nonzero counts per row on the filtered pattern (dense columns removed),
    // consistent with the overlap counts below.
    let filtered_count: Vec<usize> = (0..n)
        .map(|i| at.outer(i).0.iter().filter(|&&c| !col_dense[c]).count())
        .collect();

    const UNASSIGNED: usize = usize::MAX;
    let mut group_of = vec![UNASSIGNED; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut overlap = vec![0usize; n];
    let mut touched: Vec<usize> = Vec::new();

    for i in 0..n {
        if group_of[i] != UNASSIGNED {
            continue;
        }
        let gid = groups.len();
        group_of[i] = gid;
        groups.push(vec![i]);
        if row_dense[i] || filtered_count[i] == 0 {
            continue; // dense or empty rows stay singletons
        }
        // overlap[j] = |pattern(i) ∩ pattern(j)| over non-dense columns,
        // for unassigned non-dense rows j > i
        for &c in at.outer(i).0 {
            if col_dense[c] {
                continue;
            }
            for &j in a.outer(c).0 {
                if j > i && group_of[j] == UNASSIGNED && !row_dense[j] {
                    if overlap[j] == 0 {
                        touched.push(j);
                    }
                    overlap[j] += 1;
                }
            }
        }
        let nz_i = filtered_count[i];
        touched.sort_unstable();
        for &j in &touched {
            let w = overlap[j];
            overlap[j] = 0;
            let nz_j = filtered_count[j];
            if (w * w) as f64 >= config.tau_cos * (nz_i * nz_j) as f64 {
                group_of[j] = gid;
                groups[gid].push(j);
            }
        }
        touched.clear();
    }

    let mut map = Vec::with_capacity(n);
    let mut sizes = Vec::with_capacity(groups.len());
    for g in &groups {
        sizes.push(g.len());
        map.extend_from_slice(g);
    }
    CosineBlocks {
        partition: BlockPartition::from_sizes(sizes).expect("group sizes are positive"),
        q: PermutationVector::from_map(map).expect("groups partition the index set"),
    }
}
