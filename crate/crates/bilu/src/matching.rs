//! Maximum product transversal with dual-variable scalings.
//!
//! Finds a permutation maximizing the product of diagonal moduli by solving
//! the equivalent linear assignment problem on column-max-normalized negative
//! log weights, `c_ij = log(maxcol_j / |a_ij|) >= 0`. Augmenting paths are
//! found with Dijkstra over reduced costs plus dual potentials `u_i`, `v_j`
//! (a sparse Kuhn-Munkres variant). At the optimum every matched entry is
//! tight, `u_i + v_j = c_ij`, and every stored entry satisfies
//! `u_i + v_j <= c_ij`, so the exponentials `exp(u_i)` and
//! `exp(v_j)/maxcol_j` scale the matched entries to modulus one and all
//! entries to modulus at most one.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::sparse::{
    apply_matching_transform, DiagonalScaling, PermutationVector, SparseError, SparseMatrix,
};

/// Entries with smaller modulus than this are clamped before taking logs.
const LOG_CLAMP: f64 = 1e-300;

/// Permutation and two-sided scalings returned by [`max_weight_matching`].
#[derive(Debug, Clone)]
pub struct MatchingResult {
    /// `perm.map()[i]` is the column matched with row `i`.
    pub perm: PermutationVector,
    pub row_scaling: DiagonalScaling,
    pub col_scaling: DiagonalScaling,
    /// Row duals `u_i` of the assignment problem.
    pub row_duals: Vec<f64>,
    /// Column duals `v_j` of the assignment problem.
    pub col_duals: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error(
        "structurally singular pattern: columns {witness_columns:?} reach only rows {reachable_rows:?}, so these rows cannot all be covered"
    )]
    StructurallySingular {
        witness_columns: Vec<usize>,
        reachable_rows: Vec<usize>,
    },
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("scaling overflow: {0}")]
    Scaling(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

struct HeapItem {
    dist: f64,
    row: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.row == other.row
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap, ties broken by row index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.row.cmp(&self.row))
    }
}

/// Compute a maximum product transversal of a square sparse matrix.
///
/// Exact zeros in the pattern are excluded from the bipartite graph. A
/// pattern with no perfect matching yields
/// [`MatchingError::StructurallySingular`] naming a deficient column set and
/// the rows it can reach.
pub fn max_weight_matching(a: &SparseMatrix) -> Result<MatchingResult, MatchingError> {
    let a = a.to_csc();
    if !a.is_square() {
        return Err(MatchingError::NotSquare(a.n_rows(), a.n_cols()));
    }
    let n = a.n_cols();

    // Column-max normalized negative-log costs, excluding exact zeros.
    let mut maxcol = vec![0.0f64; n];
    for j in 0..n {
        let (_, vals) = a.outer(j);
        for &v in vals {
            maxcol[j] = maxcol[j].max(v.abs());
        }
    }
    // cols[j]: (row, cost) for each usable entry of column j
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for j in 0..n {
        let (rows, vals) = a.outer(j);
        let logmax = maxcol[j].max(LOG_CLAMP).ln();
        let col: Vec<(usize, f64)> = rows
            .iter()
            .zip(vals)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&r, &v)| (r, logmax - v.abs().max(LOG_CLAMP).ln()))
            .collect();
        if col.is_empty() {
            return Err(MatchingError::StructurallySingular {
                witness_columns: vec![j],
                reachable_rows: vec![],
            });
        }
        cols.push(col);
    }

    let mut u = vec![f64::INFINITY; n];
    let mut v = vec![0.0f64; n];
    for col in &cols {
        for &(r, c) in col {
            if c < u[r] {
                u[r] = c;
            }
        }
    }
    for (i, ui) in u.iter().enumerate() {
        if !ui.is_finite() {
            return Err(MatchingError::StructurallySingular {
                witness_columns: (0..n).collect(),
                reachable_rows: vec![i],
            });
        }
    }

    const NONE: usize = usize::MAX;
    let mut row_of_col = vec![NONE; n];
    let mut col_of_row = vec![NONE; n];

    // Greedy pass on tight edges.
    for (j, col) in cols.iter().enumerate() {
        for &(r, c) in col {
            if col_of_row[r] == NONE && c == u[r] {
                col_of_row[r] = j;
                row_of_col[j] = r;
                break;
            }
        }
    }

    // Shortest augmenting path for each remaining column.
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![NONE; n];
    let mut visited = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut heap: BinaryHeap<HeapItem> = BinaryHeap::new();

    for j0 in 0..n {
        if row_of_col[j0] != NONE {
            continue;
        }
        for &t in &touched {
            dist[t] = f64::INFINITY;
            pred[t] = NONE;
            visited[t] = false;
        }
        touched.clear();
        heap.clear();

        for &(r, c) in &cols[j0] {
            // reduced costs are nonnegative in exact arithmetic; clamp roundoff
            let rd = (c - u[r] - v[j0]).max(0.0);
            if rd < dist[r] {
                dist[r] = rd;
                pred[r] = j0;
                touched.push(r);
                heap.push(HeapItem { dist: rd, row: r });
            }
        }

        let mut final_row = NONE;
        let mut lsp = 0.0f64;
        let mut order: Vec<usize> = Vec::new();
        while let Some(HeapItem { dist: dpop, row: i }) = heap.pop() {
            if visited[i] || dpop > dist[i] {
                continue;
            }
            visited[i] = true;
            order.push(i);
            if col_of_row[i] == NONE {
                final_row = i;
                lsp = dist[i];
                break;
            }
            let jm = col_of_row[i];
            let base = dist[i];
            for &(r2, c2) in &cols[jm] {
                if visited[r2] {
                    continue;
                }
                let rd = base + (c2 - u[r2] - v[jm]).max(0.0);
                if rd < dist[r2] {
                    if dist[r2].is_infinite() {
                        touched.push(r2);
                    }
                    dist[r2] = rd;
                    pred[r2] = jm;
                    heap.push(HeapItem { dist: rd, row: r2 });
                }
            }
        }

        if final_row == NONE {
            let mut witness_columns = vec![j0];
            let mut reachable_rows = Vec::new();
            for &i in &order {
                reachable_rows.push(i);
                if col_of_row[i] != NONE {
                    witness_columns.push(col_of_row[i]);
                }
            }
            witness_columns.sort_unstable();
            reachable_rows.sort_unstable();
            return Err(MatchingError::StructurallySingular {
                witness_columns,
                reachable_rows,
            });
        }

        // Dual update keeps all entries feasible and new matched edges tight.
        for &i in &order {
            if i == final_row {
                continue;
            }
            let jm = col_of_row[i];
            v[jm] += lsp - dist[i];
            u[i] += dist[i] - lsp;
        }
        u[final_row] += dist[final_row] - lsp; // adds zero, kept for clarity
        v[j0] += lsp;

        // Augment along predecessor columns.
        let mut i = final_row;
        loop {
            let j = pred[i];
            let prev = row_of_col[j];
            row_of_col[j] = i;
            col_of_row[i] = j;
            if j == j0 {
                break;
            }
            i = prev;
        }
    }

    let perm = PermutationVector::from_map(col_of_row)?;
    let row_scaling: Vec<f64> = u.iter().map(|&ui| ui.exp()).collect();
    let col_scaling: Vec<f64> = v
        .iter()
        .zip(&maxcol)
        .map(|(&vj, &mc)| vj.exp() / mc.max(LOG_CLAMP))
        .collect();
    let row_scaling = DiagonalScaling::new(row_scaling)
        .map_err(|e| MatchingError::Scaling(format!("row scaling: {e}")))?;
    let col_scaling = DiagonalScaling::new(col_scaling)
        .map_err(|e| MatchingError::Scaling(format!("column scaling: {e}")))?;

    Ok(MatchingResult {
        perm,
        row_scaling,
        col_scaling,
        row_duals: u,
        col_duals: v,
    })
}

/// Outcome of [`verify_matching`].
#[derive(Debug, Clone, Copy)]
pub struct MatchingReport {
    /// `max(|a_hat_ij| - 1, 0)` over all stored entries.
    pub max_entry_excess: f64,
    /// `max | |a_hat_ii| - 1 |` over the diagonal.
    pub max_diag_deviation: f64,
}

impl MatchingReport {
    pub fn pass(&self) -> bool {
        self.max_entry_excess <= 1e-8 && self.max_diag_deviation <= 1e-8
    }
}

/// Check the scaling invariants of a matching result against a matrix.
pub fn verify_matching(
    a: &SparseMatrix,
    result: &MatchingResult,
) -> Result<MatchingReport, MatchingError> {
    let hat = apply_matching_transform(a, &result.row_scaling, &result.col_scaling, &result.perm)?;
    let mut excess = 0.0f64;
    for &v in hat.values() {
        excess = excess.max(v.abs() - 1.0);
    }
    let mut diag_dev = 0.0f64;
    for d in hat.diag() {
        diag_dev = diag_dev.max((d.abs() - 1.0).abs());
    }
    Ok(MatchingReport {
        max_entry_excess: excess.max(0.0),
        max_diag_deviation: diag_dev,
    })
}

/// Product of the matched entry moduli, `prod |a_{i, perm[i]}|`.
pub fn transversal_product(a: &SparseMatrix, perm: &PermutationVector) -> f64 {
    let a = a.to_csc();
    let mut p = 1.0;
    for (i, &j) in perm.map().iter().enumerate() {
        p *= a.get(i, j).abs();
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matches_trivially() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)])
            .unwrap();
        let m = max_weight_matching(&a).unwrap();
        assert_eq!(m.perm.map(), &[0, 1, 2]);
        assert!(m.row_scaling.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(m.col_scaling.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(transversal_product(&a, &m.perm), 1.0);
    }

    #[test]
    fn antidiagonal_2x2() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        let m = max_weight_matching(&a).unwrap();
        assert_eq!(m.perm.map(), &[1, 0]);
        assert_eq!(transversal_product(&a, &m.perm), 6.0);
        let rep = verify_matching(&a, &m).unwrap();
        assert!(rep.pass(), "report {rep:?}");
        assert!(rep.max_diag_deviation < 1e-12);
    }

    #[test]
    fn empty_column_is_structurally_singular() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        match max_weight_matching(&a) {
            Err(MatchingError::StructurallySingular { .. }) => {}
            other => panic!("expected structural singularity, got {other:?}"),
        }
    }

    #[test]
    fn competing_columns_force_augmentation() {
        // (0,0), (0,1), (1,0): column 1 can only take row 0.
        let a =
            SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let m = max_weight_matching(&a).unwrap();
        assert_eq!(m.perm.map(), &[1, 0]);
        assert!(verify_matching(&a, &m).unwrap().pass());
    }

    #[test]
    fn duality_invariants_hold() {
        let a = SparseMatrix::from_triplets(
            4,
            4,
            &[
                (0, 0, 0.5),
                (0, 2, 3.0),
                (1, 0, 2.0),
                (1, 1, 1.0),
                (2, 1, 4.0),
                (2, 2, 0.25),
                (2, 3, 1.0),
                (3, 2, 1.5),
                (3, 3, 2.0),
            ],
        )
        .unwrap();
        let m = max_weight_matching(&a).unwrap();
        let a = a.to_csc();
        let mut maxcol = vec![0.0f64; 4];
        for j in 0..4 {
            for &v in a.outer(j).1 {
                maxcol[j] = maxcol[j].max(v.abs());
            }
        }
        for j in 0..4 {
            let (rows, vals) = a.outer(j);
            for (&i, &v) in rows.iter().zip(vals) {
                let c = (maxcol[j] / v.abs()).ln();
                assert!(
                    m.row_duals[i] + m.col_duals[j] <= c + 1e-10,
                    "feasibility violated at ({i},{j})"
                );
                if m.perm.map()[i] == j {
                    assert!(
                        (m.row_duals[i] + m.col_duals[j] - c).abs() <= 1e-10,
                        "matched edge ({i},{j}) not tight"
                    );
                }
            }
        }
        assert!(verify_matching(&a, &m).unwrap().pass());
    }

    #[test]
    fn verify_rejects_unscaled_diagonal() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]).unwrap();
        let fake = MatchingResult {
            perm: PermutationVector::identity(2),
            row_scaling: DiagonalScaling::identity(2),
            col_scaling: DiagonalScaling::identity(2),
            row_duals: vec![0.0; 2],
            col_duals: vec![0.0; 2],
        };
        let rep = verify_matching(&a, &fake).unwrap();
        assert!(!rep.pass());
        assert!((rep.max_diag_deviation - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_built_optimal_result_passes_exactly() {
        // A = [[0,2],[3,0]]: optimal scalings D_l = diag(1/2, 1/3), D_r = I.
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        let hand = MatchingResult {
            perm: PermutationVector::from_map(vec![1, 0]).unwrap(),
            row_scaling: DiagonalScaling::new(vec![0.5, 1.0 / 3.0]).unwrap(),
            col_scaling: DiagonalScaling::identity(2),
            row_duals: vec![0.0; 2],
            col_duals: vec![0.0; 2],
        };
        let rep = verify_matching(&a, &hand).unwrap();
        assert_eq!(rep.max_entry_excess, 0.0);
        assert_eq!(rep.max_diag_deviation, 0.0);
    }
}
