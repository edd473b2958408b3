//! Sparse matrix storage and the preprocessing primitives built on it.
//!
//! The exchange type throughout the crate is a compressed sparse matrix with
//! sorted, duplicate-free inner indices. Column-compressed storage is the
//! default; a row-compressed view of the same data is obtained in O(1) through
//! [`SparseMatrix::transpose_view`] because the transpose of a CSC matrix is
//! the identical buffer read as CSR. All indices are 0-based internally;
//! Matrix Market I/O converts at the boundary.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

/// Storage orientation of a [`SparseMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `ptr` runs over columns, `idx` holds row indices.
    ColumnCompressed,
    /// `ptr` runs over rows, `idx` holds column indices.
    RowCompressed,
}

/// Compressed sparse matrix with sorted inner indices and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    /// Offsets, length = outer dimension + 1.
    ptr: Vec<usize>,
    /// Inner indices, strictly increasing within each outer segment.
    idx: Vec<usize>,
    values: Vec<f64>,
    layout: Layout,
}

/// Errors from sparse construction, I/O and structural transforms.
#[derive(Debug, Error)]
pub enum SparseError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported matrix market format: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("invalid block partition: {0}")]
    InvalidPartition(String),
    #[error("invalid scaling: {0}")]
    InvalidScaling(String),
    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),
}

impl SparseMatrix {
    /// Build from raw CSC arrays, validating all structural invariants.
    pub fn from_csc(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let m = Self {
            n_rows,
            n_cols,
            ptr: col_ptr,
            idx: row_idx,
            values,
            layout: Layout::ColumnCompressed,
        };
        m.validate()?;
        Ok(m)
    }

    /// Build a CSC matrix from (row, col, value) triplets. Duplicates are
    /// summed, entries are sorted within each column.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(SparseError::InvalidStructure(format!(
                    "triplet ({r}, {c}) out of bounds for {n_rows}x{n_cols}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> =
            triplets.iter().map(|&(r, c, v)| (c, r, v)).collect();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut ptr = vec![0usize; n_cols + 1];
        let mut idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in sorted {
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
            } else {
                idx.push(r);
                values.push(v);
                ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for c in 0..n_cols {
            ptr[c + 1] += ptr[c];
        }
        let m = Self {
            n_rows,
            n_cols,
            ptr,
            idx,
            values,
            layout: Layout::ColumnCompressed,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), SparseError> {
        let outer = match self.layout {
            Layout::ColumnCompressed => self.n_cols,
            Layout::RowCompressed => self.n_rows,
        };
        let inner = match self.layout {
            Layout::ColumnCompressed => self.n_rows,
            Layout::RowCompressed => self.n_cols,
        };
        if self.ptr.len() != outer + 1 {
            return Err(SparseError::InvalidStructure(format!(
                "ptr length {} != outer dim + 1 = {}",
                self.ptr.len(),
                outer + 1
            )));
        }
        if self.ptr[0] != 0 || *self.ptr.last().unwrap() != self.idx.len() {
            return Err(SparseError::InvalidStructure(
                "ptr must start at 0 and end at nnz".into(),
            ));
        }
        if self.idx.len() != self.values.len() {
            return Err(SparseError::InvalidStructure(
                "idx and values length differ".into(),
            ));
        }
        for w in self.ptr.windows(2) {
            if w[1] < w[0] {
                return Err(SparseError::InvalidStructure("ptr not non-decreasing".into()));
            }
            for k in w[0]..w[1] {
                if self.idx[k] >= inner {
                    return Err(SparseError::InvalidStructure(format!(
                        "index {} out of range {}",
                        self.idx[k], inner
                    )));
                }
                if k > w[0] && self.idx[k] <= self.idx[k - 1] {
                    return Err(SparseError::InvalidStructure(
                        "inner indices not strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// Offsets array (`col_ptr` in CSC, `row_ptr` in CSR).
    pub fn ptr(&self) -> &[usize] {
        &self.ptr
    }

    /// Inner index array (`row_idx` in CSC, `col_idx` in CSR).
    pub fn idx(&self) -> &[usize] {
        &self.idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices and values of outer segment `j` (a column in CSC layout).
    pub fn outer(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.ptr[j], self.ptr[j + 1]);
        (&self.idx[s..e], &self.values[s..e])
    }

    /// The transpose, reinterpreting the same buffers in the other layout. O(1).
    pub fn transpose_view(&self) -> SparseMatrix {
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            ptr: self.ptr.clone(),
            idx: self.idx.clone(),
            values: self.values.clone(),
            layout: match self.layout {
                Layout::ColumnCompressed => Layout::RowCompressed,
                Layout::RowCompressed => Layout::ColumnCompressed,
            },
        }
    }

    /// Re-compress into column-compressed layout (O(nnz) when stored row-wise).
    pub fn to_csc(&self) -> SparseMatrix {
        match self.layout {
            Layout::ColumnCompressed => self.clone(),
            Layout::RowCompressed => {
                // self.ptr runs over rows; bucket-sort entries by column.
                let mut counts = vec![0usize; self.n_cols + 1];
                for &c in &self.idx {
                    counts[c + 1] += 1;
                }
                for i in 0..self.n_cols {
                    counts[i + 1] += counts[i];
                }
                let mut ptr = counts.clone();
                let mut idx = vec![0usize; self.nnz()];
                let mut values = vec![0.0; self.nnz()];
                for r in 0..self.n_rows {
                    for k in self.ptr[r]..self.ptr[r + 1] {
                        let c = self.idx[k];
                        let dst = ptr[c];
                        idx[dst] = r;
                        values[dst] = self.values[k];
                        ptr[c] += 1;
                    }
                }
                SparseMatrix {
                    n_rows: self.n_rows,
                    n_cols: self.n_cols,
                    ptr: counts,
                    idx,
                    values,
                    layout: Layout::ColumnCompressed,
                }
            }
        }
    }

    /// Explicit transpose in column-compressed layout.
    pub fn transpose_csc(&self) -> SparseMatrix {
        self.transpose_view().to_csc()
    }

    /// y = A*x (CSC layout required).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.layout, Layout::ColumnCompressed);
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for j in 0..self.n_cols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.ptr[j]..self.ptr[j + 1] {
                y[self.idx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    /// Largest entry in absolute value (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum); requires CSC layout.
    pub fn norm_inf(&self) -> f64 {
        assert_eq!(self.layout, Layout::ColumnCompressed);
        let mut rowsum = vec![0.0; self.n_rows];
        for k in 0..self.nnz() {
            rowsum[self.idx[k]] += self.values[k].abs();
        }
        rowsum.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Diagonal values (missing entries are 0); square CSC matrices only.
    pub fn diag(&self) -> Vec<f64> {
        assert_eq!(self.layout, Layout::ColumnCompressed);
        let n = self.n_cols.min(self.n_rows);
        let mut d = vec![0.0; n];
        for (j, dj) in d.iter_mut().enumerate() {
            let (rows, vals) = self.outer(j);
            if let Ok(p) = rows.binary_search(&j) {
                *dj = vals[p];
            }
        }
        d
    }

    /// Value at (i, j), 0.0 if not stored. CSC layout.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert_eq!(self.layout, Layout::ColumnCompressed);
        let (rows, vals) = self.outer(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Dense copy, row-major `n_rows x n_cols`. Intended for small matrices in
    /// tests and oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let a = self.to_csc();
        let mut d = vec![vec![0.0; a.n_cols]; a.n_rows];
        for j in 0..a.n_cols {
            let (rows, vals) = a.outer(j);
            for (&r, &v) in rows.iter().zip(vals) {
                d[r][j] = v;
            }
        }
        d
    }
}

// ---------------------------------------------------------------------------
// Permutations, scalings, partitions
// ---------------------------------------------------------------------------

/// Permutation stored as `map[new_position] = old_index`.
///
/// As a matrix, `P e_i = e_{map[i]}`, so `P^T A P` has entry `(i, j)` equal to
/// `A(map[i], map[j])` and `(P x)[map[i]] = x[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationVector {
    map: Vec<usize>,
}

impl PermutationVector {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self, SparseError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || seen[m] {
                return Err(SparseError::InvalidPermutation(format!(
                    "map is not a bijection on 0..{n}"
                )));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> PermutationVector {
        let mut inv = vec![0usize; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        PermutationVector { map: inv }
    }

    /// Matrix product `self * other`: `(self*other) e_i = e_{self.map[other.map[i]]}`.
    pub fn compose(&self, other: &PermutationVector) -> PermutationVector {
        assert_eq!(self.len(), other.len());
        PermutationVector {
            map: other.map.iter().map(|&i| self.map[i]).collect(),
        }
    }

    /// y = P x, i.e. `y[map[i]] = x[i]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len());
        let mut y = vec![0.0; x.len()];
        for (i, &m) in self.map.iter().enumerate() {
            y[m] = x[i];
        }
        y
    }

    /// y = P^T x, i.e. `y[i] = x[map[i]]`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.len());
        self.map.iter().map(|&m| x[m]).collect()
    }
}

/// Positive diagonal scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalScaling {
    d: Vec<f64>,
}

impl DiagonalScaling {
    pub fn identity(n: usize) -> Self {
        Self { d: vec![1.0; n] }
    }

    pub fn new(d: Vec<f64>) -> Result<Self, SparseError> {
        if d.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(SparseError::InvalidScaling(
                "entries must be finite and > 0".into(),
            ));
        }
        Ok(Self { d })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }
}

/// Contiguous diagonal-block sizes summing to the matrix dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    /// Prefix sums, length `sizes.len() + 1`, `offsets[0] == 0`.
    offsets: Vec<usize>,
}

impl BlockPartition {
    /// All blocks of size one.
    pub fn scalar(n: usize) -> Self {
        Self {
            sizes: vec![1; n],
            offsets: (0..=n).collect(),
        }
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self, SparseError> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(SparseError::InvalidPartition("block size 0".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Half-open scalar range of block `b`.
    pub fn span(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Block index of each scalar index.
    pub fn block_of(&self) -> Vec<usize> {
        let mut blk = vec![0usize; self.total()];
        for b in 0..self.n_blocks() {
            for i in self.span(b) {
                blk[i] = b;
            }
        }
        blk
    }

    pub fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_size(&self) -> f64 {
        if self.sizes.is_empty() {
            0.0
        } else {
            self.total() as f64 / self.sizes.len() as f64
        }
    }

    pub fn std_size(&self) -> f64 {
        if self.sizes.is_empty() {
            return 0.0;
        }
        let mean = self.mean_size();
        let var = self
            .sizes
            .iter()
            .map(|&s| (s as f64 - mean).powi(2))
            .sum::<f64>()
            / self.sizes.len() as f64;
        var.sqrt()
    }
}

impl fmt::Display for BlockPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} blocks, max {}, mean {:.2}",
            self.n_blocks(),
            self.max_size(),
            self.mean_size()
        )
    }
}

// ---------------------------------------------------------------------------
// Matrix Market I/O
// ---------------------------------------------------------------------------

fn parse_err(line: usize, msg: impl Into<String>) -> SparseError {
    SparseError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Read a Matrix Market coordinate file (`real`, `general` or `symmetric`).
///
/// Symmetric input is expanded to general storage; 1-based indices become
/// 0-based; duplicate entries are summed; columns come out sorted.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix, SparseError> {
    let file = File::open(path.as_ref())?;
    read_matrix_market_from(BufReader::new(file))
}

/// Same as [`read_matrix_market`] but from any reader.
pub fn read_matrix_market_from(reader: impl BufRead) -> Result<SparseMatrix, SparseError> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Err(parse_err(1, "empty file")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%MatrixMarket" || fields[1] != "matrix" {
        return Err(parse_err(1, "header must start with `%%MatrixMarket matrix`"));
    }
    if fields[2] != "coordinate" {
        return Err(SparseError::Unsupported(format!(
            "only coordinate format is supported, got `{}`",
            fields[2]
        )));
    }
    if fields[3] != "real" {
        return Err(SparseError::Unsupported(format!(
            "only real values are supported, got `{}`",
            fields[3]
        )));
    }
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(SparseError::Unsupported(format!(
                "only general/symmetric storage is supported, got `{other}`"
            )))
        }
    };

    let mut lineno = 1usize;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for line in lines {
        let line = line?;
        lineno += 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        if dims.is_none() {
            let nr: usize = it
                .next()
                .ok_or_else(|| parse_err(lineno, "missing row count"))?
                .parse()
                .map_err(|_| parse_err(lineno, "cannot parse row count"))?;
            let nc: usize = it
                .next()
                .ok_or_else(|| parse_err(lineno, "missing column count"))?
                .parse()
                .map_err(|_| parse_err(lineno, "cannot parse column count"))?;
            let nnz: usize = it
                .next()
                .ok_or_else(|| parse_err(lineno, "missing nonzero count"))?
                .parse()
                .map_err(|_| parse_err(lineno, "cannot parse nonzero count"))?;
            dims = Some((nr, nc, nnz));
            triplets.reserve(if symmetric { 2 * nnz } else { nnz });
            continue;
        }
        let (nr, nc, nnz) = dims.unwrap();
        let i: usize = it
            .next()
            .ok_or_else(|| parse_err(lineno, "missing row index"))?
            .parse()
            .map_err(|_| parse_err(lineno, "cannot parse row index"))?;
        let j: usize = it
            .next()
            .ok_or_else(|| parse_err(lineno, "missing column index"))?
            .parse()
            .map_err(|_| parse_err(lineno, "cannot parse column index"))?;
        let v: f64 = it
            .next()
            .ok_or_else(|| parse_err(lineno, "missing value"))?
            .parse()
            .map_err(|_| parse_err(lineno, "cannot parse value as a real number"))?;
        if i < 1 || i > nr || j < 1 || j > nc {
            return Err(parse_err(
                lineno,
                format!("index ({i}, {j}) out of range for {nr}x{nc}"),
            ));
        }
        let count_limit = nnz;
        let stored = if symmetric {
            triplets
                .iter()
                .filter(|&&(a, b, _)| a >= b)
                .count()
        } else {
            triplets.len()
        };
        if stored >= count_limit && count_limit > 0 {
            return Err(parse_err(lineno, "more entries than declared"));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    let (nr, nc, _) = dims.ok_or_else(|| parse_err(lineno, "missing size line"))?;
    SparseMatrix::from_triplets(nr, nc, &triplets)
}

/// Write a matrix as Matrix Market coordinate real general.
pub fn write_matrix_market(
    m: &SparseMatrix,
    path: impl AsRef<Path>,
) -> Result<(), SparseError> {
    let file = File::create(path.as_ref())?;
    write_matrix_market_to(m, BufWriter::new(file))
}

/// Same as [`write_matrix_market`] but to any writer.
pub fn write_matrix_market_to(
    m: &SparseMatrix,
    mut w: impl Write,
) -> Result<(), SparseError> {
    let a = m.to_csc();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for j in 0..a.n_cols() {
        let (rows, vals) = a.outer(j);
        for (&r, &v) in rows.iter().zip(vals) {
            writeln!(w, "{} {} {:.17e}", r + 1, j + 1, v)?;
        }
    }
    Ok(())
}

/// Write only the sparsity pattern, `coordinate pattern general`. This is the
/// exchange format handed to external ordering executables.
pub fn write_matrix_market_pattern_to(
    m: &SparseMatrix,
    mut w: impl Write,
) -> Result<(), SparseError> {
    let a = m.to_csc();
    writeln!(w, "%%MatrixMarket matrix coordinate pattern general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for j in 0..a.n_cols() {
        let (rows, _) = a.outer(j);
        for &r in rows {
            writeln!(w, "{} {}", r + 1, j + 1)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Structural transforms
// ---------------------------------------------------------------------------

/// Apply the matching transform `A_hat = D_l A D_r Pi`.
///
/// Column `j` of the result is `d_l .* (column pi(j) of A) * d_r[pi(j)]`, so
/// the diagonal of the result collects the matched entries.
pub fn apply_matching_transform(
    a: &SparseMatrix,
    d_l: &DiagonalScaling,
    d_r: &DiagonalScaling,
    pi: &PermutationVector,
) -> Result<SparseMatrix, SparseError> {
    let a = a.to_csc();
    if d_l.len() != a.n_rows() || d_r.len() != a.n_cols() || pi.len() != a.n_cols() {
        return Err(SparseError::DimensionMismatch(format!(
            "matrix {}x{}, d_l {}, d_r {}, pi {}",
            a.n_rows(),
            a.n_cols(),
            d_l.len(),
            d_r.len(),
            pi.len()
        )));
    }
    let dl = d_l.values();
    let dr = d_r.values();
    let mut ptr = Vec::with_capacity(a.n_cols() + 1);
    let mut idx = Vec::with_capacity(a.nnz());
    let mut values = Vec::with_capacity(a.nnz());
    ptr.push(0);
    for j in 0..a.n_cols() {
        let src = pi.map()[j];
        let (rows, vals) = a.outer(src);
        for (&r, &v) in rows.iter().zip(vals) {
            idx.push(r);
            values.push(dl[r] * v * dr[src]);
        }
        ptr.push(idx.len());
    }
    SparseMatrix::from_csc(a.n_rows(), a.n_cols(), ptr, idx, values)
}

/// Symmetric permutation `P^T A P`; entry `(i, j)` of the result is
/// `A(P[i], P[j])`.
pub fn symmetric_permute(
    a: &SparseMatrix,
    p: &PermutationVector,
) -> Result<SparseMatrix, SparseError> {
    let a = a.to_csc();
    if !a.is_square() || p.len() != a.n_cols() {
        return Err(SparseError::DimensionMismatch(format!(
            "matrix {}x{}, permutation {}",
            a.n_rows(),
            a.n_cols(),
            p.len()
        )));
    }
    let inv = p.inverse();
    let n = a.n_cols();
    let mut triplets = Vec::with_capacity(a.nnz());
    for newj in 0..n {
        let oldj = p.map()[newj];
        let (rows, vals) = a.outer(oldj);
        for (&oldr, &v) in rows.iter().zip(vals) {
            triplets.push((inv.map()[oldr], newj, v));
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Compress each block of `a` into a scalar: the companion matrix `B` has a
/// unit entry at `(I, J)` iff block `(I, J)` of `a` contains a nonzero.
pub fn compress_companion(
    a: &SparseMatrix,
    partition: &BlockPartition,
) -> Result<SparseMatrix, SparseError> {
    let a = a.to_csc();
    if !a.is_square() || partition.total() != a.n_cols() {
        return Err(SparseError::DimensionMismatch(format!(
            "matrix {}x{}, partition covers {}",
            a.n_rows(),
            a.n_cols(),
            partition.total()
        )));
    }
    let blk = partition.block_of();
    let nb = partition.n_blocks();
    let mut ptr = Vec::with_capacity(nb + 1);
    let mut idx: Vec<usize> = Vec::new();
    let mut stamp = vec![usize::MAX; nb];
    ptr.push(0);
    for bj in 0..nb {
        let start = idx.len();
        for j in partition.span(bj) {
            let (rows, _) = a.outer(j);
            for &r in rows {
                let br = blk[r];
                if stamp[br] != bj {
                    stamp[br] = bj;
                    idx.push(br);
                }
            }
        }
        idx[start..].sort_unstable();
        ptr.push(idx.len());
    }
    let values = vec![1.0; idx.len()];
    SparseMatrix::from_csc(nb, nb, ptr, idx, values)
}

/// Expand a block permutation to a scalar one that moves each block
/// contiguously, preserving intra-block order. Also returns the reordered
/// partition.
pub fn expand_permutation(
    p_b: &PermutationVector,
    partition: &BlockPartition,
) -> Result<(PermutationVector, BlockPartition), SparseError> {
    if p_b.len() != partition.n_blocks() {
        return Err(SparseError::DimensionMismatch(format!(
            "block permutation {} vs {} blocks",
            p_b.len(),
            partition.n_blocks()
        )));
    }
    let new_sizes: Vec<usize> = p_b.map().iter().map(|&b| partition.sizes()[b]).collect();
    let mut map = Vec::with_capacity(partition.total());
    for &b in p_b.map() {
        map.extend(partition.span(b));
    }
    let p = PermutationVector::from_map(map)?;
    let new_partition = BlockPartition::from_sizes(new_sizes)?;
    Ok((p, new_partition))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn mm(text: &str) -> Result<SparseMatrix, SparseError> {
        read_matrix_market_from(Cursor::new(text.as_bytes()))
    }

    #[test]
    fn read_simple_diagonal() {
        let a = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 2.0\n2 2 3.0\n")
            .unwrap();
        assert_eq!(a.n_rows(), 2);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 1), 3.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn read_sorts_within_column() {
        let a = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n2 1 5.0\n1 1 1.0\n")
            .unwrap();
        let (rows, vals) = a.outer(0);
        assert_eq!(rows, &[0, 1]);
        assert_eq!(vals, &[1.0, 5.0]);
    }

    #[test]
    fn read_symmetric_expands() {
        let a =
            mm("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1.0\n2 1 4.0\n")
                .unwrap();
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn read_sums_duplicates() {
        let a = mm("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n1 1 2.5\n2 2 1.0\n")
            .unwrap();
        assert_eq!(a.get(0, 0), 3.5);
    }

    #[test]
    fn read_rejects_bad_header() {
        assert!(matches!(
            mm("%%MatrixMarket vector coordinate real general\n1 1 1\n1 1 1.0\n"),
            Err(SparseError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn read_rejects_pattern_and_complex() {
        for field in ["pattern", "complex", "integer"] {
            let text = format!("%%MatrixMarket matrix coordinate {field} general\n1 1 1\n1 1 1\n");
            assert!(matches!(mm(&text), Err(SparseError::Unsupported(_))));
        }
    }

    #[test]
    fn read_reports_line_numbers() {
        let err = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n3 1 1.0\n")
            .unwrap_err();
        match err {
            SparseError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let err = mm("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 abc\n").unwrap_err();
        match err {
            SparseError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn write_read_round_trip() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.5), (2, 0, -2.25), (1, 1, 3.0), (0, 2, 1e-8)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_market_to(&a, &mut buf).unwrap();
        let b = read_matrix_market_from(Cursor::new(buf)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matching_transform_identity() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let t = apply_matching_transform(
            &a,
            &DiagonalScaling::identity(2),
            &DiagonalScaling::identity(2),
            &PermutationVector::identity(2),
        )
        .unwrap();
        assert_eq!(t, a);
    }

    #[test]
    fn matching_transform_2x2_swap() {
        // A = [[0,2],[3,0]], D_l = diag(1/2, 1/3), D_r = I, Pi = swap -> I.
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        let dl = DiagonalScaling::new(vec![0.5, 1.0 / 3.0]).unwrap();
        let dr = DiagonalScaling::identity(2);
        let pi = PermutationVector::from_map(vec![1, 0]).unwrap();
        let t = apply_matching_transform(&a, &dl, &dr, &pi).unwrap();
        assert!((t.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((t.get(1, 1) - 1.0).abs() < 1e-15);
        assert_eq!(t.nnz(), 2);
    }

    #[test]
    fn symmetric_permute_identity_and_swap() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let id = symmetric_permute(&a, &PermutationVector::identity(2)).unwrap();
        assert_eq!(id, a);
        let sw = symmetric_permute(&a, &PermutationVector::from_map(vec![1, 0]).unwrap()).unwrap();
        assert_eq!(sw.get(0, 0), 2.0);
        assert_eq!(sw.get(1, 1), 1.0);
    }

    #[test]
    fn compress_scalar_partition_is_pattern() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 5.0), (2, 1, -1.0), (1, 2, 2.0)])
            .unwrap();
        let b = compress_companion(&a, &BlockPartition::scalar(3)).unwrap();
        assert_eq!(b.nnz(), a.nnz());
        assert_eq!(b.idx(), a.idx());
        assert!(b.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn compress_block_diagonal_is_identity_pattern() {
        let a = SparseMatrix::from_triplets(
            4,
            4,
            &[(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
        )
        .unwrap();
        let part = BlockPartition::from_sizes(vec![2, 2]).unwrap();
        let b = compress_companion(&a, &part).unwrap();
        assert_eq!(b.nnz(), 2);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(1, 1), 1.0);
    }

    #[test]
    fn expand_permutation_small() {
        // partition [2,1], P_B = [1,0] -> P = [2,0,1]
        let part = BlockPartition::from_sizes(vec![2, 1]).unwrap();
        let pb = PermutationVector::from_map(vec![1, 0]).unwrap();
        let (p, newpart) = expand_permutation(&pb, &part).unwrap();
        assert_eq!(p.map(), &[2, 0, 1]);
        assert_eq!(newpart.sizes(), &[1, 2]);
    }

    #[test]
    fn expand_identity_is_identity() {
        let part = BlockPartition::from_sizes(vec![3, 1, 2]).unwrap();
        let pb = PermutationVector::identity(3);
        let (p, newpart) = expand_permutation(&pb, &part).unwrap();
        assert_eq!(p, PermutationVector::identity(6));
        assert_eq!(newpart, part);
    }

    #[test]
    fn partition_invariants() {
        let p = BlockPartition::from_sizes(vec![2, 3, 1]).unwrap();
        assert_eq!(p.total(), 6);
        assert_eq!(p.offsets(), &[0, 2, 5, 6]);
        assert_eq!(p.block_of(), vec![0, 0, 1, 1, 1, 2]);
        assert!(BlockPartition::from_sizes(vec![1, 0]).is_err());
    }

    #[test]
    fn csr_view_round_trip() {
        let a = SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (2, 0, 2.0), (1, 1, 3.0)])
            .unwrap();
        let at = a.transpose_view();
        assert_eq!(at.layout(), Layout::RowCompressed);
        assert_eq!(at.n_rows(), 2);
        let back = at.to_csc(); // this is A^T in CSC
        assert_eq!(back.get(0, 0), 1.0);
        assert_eq!(back.get(0, 2), 2.0);
        assert_eq!(back.get(1, 1), 3.0);
        assert_eq!(a.transpose_csc().transpose_csc(), a);
    }
}
