//! Fill-reducing symmetric orderings for the companion graph.
//!
//! The native backend is a minimum-degree ordering on the quotient graph with
//! element absorption and true external degrees. An external executable (for
//! example a nested-dissection wrapper) can be plugged in instead: the pattern
//! is written as a Matrix Market pattern file, the command is invoked as
//! `<cmd> <in> <out>`, and a whitespace-separated 0-based permutation is read
//! back.

use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::process::Command;

use thiserror::Error;

use crate::sparse::{
    write_matrix_market_pattern_to, PermutationVector, SparseError, SparseMatrix,
};

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("ordering backend i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("external ordering command `{cmd}` failed: {msg}")]
    External { cmd: String, msg: String },
    #[error("external ordering returned an invalid permutation: {0}")]
    BadPermutation(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Which ordering produces the companion permutation.
#[derive(Debug, Clone, Default)]
pub enum OrderingBackend {
    /// Built-in minimum degree.
    #[default]
    NativeMinimumDegree,
    /// `<cmd> <pattern.mtx> <perm.txt>` exchange with an external program.
    External(PathBuf),
}

/// Fill-reducing symmetric ordering with the native minimum-degree backend.
///
/// The pattern is symmetrized internally (`B + B^T`, diagonal ignored). The
/// returned permutation lists the elimination order, so `P^T B P` has the
/// pivots along the diagonal in that order.
pub fn fill_reducing_ordering(b: &SparseMatrix) -> PermutationVector {
    minimum_degree(&symmetrized_adjacency(b))
}

/// Fill-reducing ordering through a selectable backend.
pub fn fill_reducing_ordering_with(
    b: &SparseMatrix,
    backend: &OrderingBackend,
) -> Result<PermutationVector, OrderingError> {
    match backend {
        OrderingBackend::NativeMinimumDegree => Ok(fill_reducing_ordering(b)),
        OrderingBackend::External(cmd) => external_ordering(b, cmd),
    }
}

/// Undirected adjacency lists of `B + B^T` without self loops.
fn symmetrized_adjacency(b: &SparseMatrix) -> Vec<Vec<usize>> {
    let a = b.to_csc();
    assert!(a.is_square(), "ordering needs a square pattern");
    let n = a.n_cols();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        let (rows, _) = a.outer(j);
        for &i in rows {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// Minimum-degree elimination on the quotient graph.
///
/// Eliminating pivot `p` replaces it by an element whose boundary is the set
/// of still-active neighbors reachable through `p`; elements adjacent to `p`
/// are absorbed into the new one, and direct edges covered by the element are
/// pruned. Degrees are true external degrees recomputed for boundary nodes.
fn minimum_degree(adj: &[Vec<usize>]) -> PermutationVector {
    let n = adj.len();
    let mut adj_var: Vec<Vec<usize>> = adj.to_vec();
    let mut adj_el: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elements: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut element_alive = vec![false; n];
    let mut eliminated = vec![false; n];
    let mut degree: Vec<usize> = adj_var.iter().map(|l| l.len()).collect();
    let mut stamp = vec![usize::MAX; n];
    let mut epoch = 0usize;

    // min-heap on (degree, push sequence, node): ties between equal degrees
    // go to the longest-waiting entry, so freshly updated nodes do not jump
    // ahead of untouched ones
    let mut seq = n;
    let mut heap: BinaryHeap<std::cmp::Reverse<(usize, usize, usize)>> = (0..n)
        .map(|i| std::cmp::Reverse((degree[i], i, i)))
        .collect();

    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse((d, _, p))) = heap.pop() {
        if eliminated[p] || d != degree[p] {
            continue;
        }
        eliminated[p] = true;
        order.push(p);

        // Boundary of the new element: active direct neighbors plus the
        // boundaries of all adjacent elements.
        epoch += 1;
        let mut boundary = Vec::new();
        for &w in &adj_var[p] {
            if !eliminated[w] && stamp[w] != epoch {
                stamp[w] = epoch;
                boundary.push(w);
            }
        }
        for &e in &adj_el[p] {
            if !element_alive[e] {
                continue;
            }
            for &w in &elements[e] {
                if !eliminated[w] && stamp[w] != epoch {
                    stamp[w] = epoch;
                    boundary.push(w);
                }
            }
            element_alive[e] = false; // absorbed by the new element
        }
        boundary.sort_unstable();
        adj_el[p].clear();
        adj_var[p].clear();

        if boundary.is_empty() {
            continue;
        }
        elements[p] = boundary.clone();
        element_alive[p] = true;

        // `stamp == epoch` marks boundary membership for pruning below.
        for &i in &boundary {
            adj_var[i].retain(|&w| !eliminated[w] && stamp[w] != epoch);
            adj_el[i].retain(|&e| element_alive[e]);
            adj_el[i].push(p);
        }

        // Recompute true external degrees of the boundary.
        for &i in &boundary {
            epoch += 1;
            stamp[i] = epoch;
            let mut deg = 0usize;
            for &w in &adj_var[i] {
                if !eliminated[w] && stamp[w] != epoch {
                    stamp[w] = epoch;
                    deg += 1;
                }
            }
            for &e in &adj_el[i] {
                for &w in &elements[e] {
                    if !eliminated[w] && stamp[w] != epoch {
                        stamp[w] = epoch;
                        deg += 1;
                    }
                }
            }
            if deg != degree[i] {
                degree[i] = deg;
                heap.push(std::cmp::Reverse((deg, seq, i)));
                seq += 1;
            }
        }
    }
    PermutationVector::from_map(order).expect("elimination order is a bijection")
}

fn external_ordering(
    b: &SparseMatrix,
    cmd: &PathBuf,
) -> Result<PermutationVector, OrderingError> {
    let dir = std::env::temp_dir();
    let pid = std::process::id();
    let tag = format!("bilu-ordering-{pid}-{:x}", b as *const _ as usize);
    let in_path = dir.join(format!("{tag}.mtx"));
    let out_path = dir.join(format!("{tag}.perm"));
    {
        let f = std::fs::File::create(&in_path)?;
        write_matrix_market_pattern_to(b, std::io::BufWriter::new(f))?;
    }
    let status = Command::new(cmd).arg(&in_path).arg(&out_path).status();
    let result = (|| {
        let status = status.map_err(|e| OrderingError::External {
            cmd: cmd.display().to_string(),
            msg: e.to_string(),
        })?;
        if !status.success() {
            return Err(OrderingError::External {
                cmd: cmd.display().to_string(),
                msg: format!("exit status {status}"),
            });
        }
        let text = std::fs::read_to_string(&out_path)?;
        let map: Result<Vec<usize>, _> = text.split_whitespace().map(str::parse).collect();
        let map = map.map_err(|e| OrderingError::BadPermutation(e.to_string()))?;
        if map.len() != b.n_cols() {
            return Err(OrderingError::BadPermutation(format!(
                "expected {} indices, got {}",
                b.n_cols(),
                map.len()
            )));
        }
        PermutationVector::from_map(map)
            .map_err(|e| OrderingError::BadPermutation(e.to_string()))
    })();
    let _ = std::fs::remove_file(&in_path);
    let _ = std::fs::remove_file(&out_path);
    result
}

/// Exact symbolic Cholesky fill count of `P^T S P` (S symmetrized), counting
/// strictly-lower entries of the factor that are not present in the permuted
/// pattern. Independent of the minimum-degree code path; used as the quality
/// oracle for orderings.
pub fn symbolic_cholesky_fill(s: &SparseMatrix, p: &PermutationVector) -> usize {
    let adj = symmetrized_adjacency(s);
    let n = adj.len();
    assert_eq!(p.len(), n);
    let inv = p.inverse();
    // below-diagonal pattern of each column in the permuted order
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut initial_lower = 0usize;
    for old_i in 0..n {
        for &old_j in &adj[old_i] {
            let (i, j) = (inv.map()[old_i], inv.map()[old_j]);
            if i > j {
                cols[j].push(i);
                initial_lower += 1;
            }
        }
    }
    let mut total = 0usize;
    for k in 0..n {
        let mut col = std::mem::take(&mut cols[k]);
        col.sort_unstable();
        col.dedup();
        total += col.len();
        // merge the remainder into the parent column (Liu's algorithm);
        // duplicates are removed when the parent is processed
        if let Some((&parent, rest)) = col.split_first() {
            cols[parent].extend_from_slice(rest);
        }
    }
    total - initial_lower
}
