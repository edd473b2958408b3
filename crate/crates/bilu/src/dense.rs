//! Small dense-matrix kernels used by the block factorization: accumulating
//! matrix-matrix products, LU with partial pivoting, explicit inversion, and
//! a Hager-style 1-norm condition estimate.
//!
//! Blocks are stored column-major. These are reference kernels: the tested
//! contract is the plain loop nest, not a vendor BLAS.

use std::fmt;

/// Column-major dense block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Outcome of [`lu_invert`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvertStatus {
    Ok,
    /// An exactly zero pivot occurred.
    Singular,
    /// The 1-norm condition estimate exceeded the threshold.
    IllConditioned(f64),
}

impl InvertStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, InvertStatus::Ok)
    }
}

impl DenseBlock {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b.data[i + i * n] = 1.0;
        }
        b
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Self { rows, cols, data }
    }

    /// Row-major convenience constructor, mostly for tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut b = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            for (j, &v) in row.iter().enumerate() {
                b.data[i + j * r] = v;
            }
        }
        b
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.rows] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self.get(i, j).abs();
            }
            best = best.max(s);
        }
        best
    }

    /// Max absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let s: f64 = self.data[j * self.rows..(j + 1) * self.rows]
                .iter()
                .map(|v| v.abs())
                .sum();
            best = best.max(s);
        }
        best
    }

    pub fn transposed(&self) -> DenseBlock {
        let mut t = DenseBlock::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `self <- self + sign * a * b`.
    pub fn gemm_acc(&mut self, a: &DenseBlock, b: &DenseBlock, sign: f64) {
        assert_eq!(a.cols, b.rows, "inner dimensions must agree");
        assert_eq!(self.rows, a.rows, "output rows must match a");
        assert_eq!(self.cols, b.cols, "output cols must match b");
        gemm_acc_raw(
            self.rows, self.cols, a.cols, &a.data, a.rows, &b.data, b.rows, &mut self.data,
            self.rows, sign,
        );
    }

    /// Matrix-vector product `y <- y + sign * self * x`.
    pub fn gemv_acc(&self, x: &[f64], y: &mut [f64], sign: f64) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for j in 0..self.cols {
            let s = sign * x[j];
            if s == 0.0 {
                continue;
            }
            let col = &self.data[j * self.rows..(j + 1) * self.rows];
            for (yi, &aij) in y.iter_mut().zip(col) {
                *yi += aij * s;
            }
        }
    }
}

impl fmt::Display for DenseBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            for j in 0..self.cols {
                write!(f, "{:12.5e} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Strided accumulating GEMM on raw column-major buffers:
/// `C[0..m, 0..n] += sign * A[0..m, 0..k] * B[0..k, 0..n]`.
///
/// `lda`/`ldb`/`ldc` are the column strides (leading dimensions), allowing the
/// factorization to update sub-views without copies.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc_raw(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
    sign: f64,
) {
    debug_assert!(lda >= m && ldb >= k && ldc >= m);
    for j in 0..n {
        let ccol = &mut c[j * ldc..j * ldc + m];
        for l in 0..k {
            let blj = sign * b[l + j * ldb];
            if blj == 0.0 {
                continue;
            }
            let acol = &a[l * lda..l * lda + m];
            for (ci, &ail) in ccol.iter_mut().zip(acol) {
                *ci += ail * blj;
            }
        }
    }
}

/// LU factors of a square block, `P*A = L*U` with partial pivoting.
#[derive(Debug, Clone)]
pub struct LuFactors {
    /// Unit-lower L below the diagonal, U on and above, column-major.
    lu: DenseBlock,
    /// Row swap applied at each elimination step (LAPACK-style ipiv).
    piv: Vec<usize>,
    /// Step of the first exactly-zero pivot, if any.
    zero_pivot: Option<usize>,
}

impl LuFactors {
    /// Factor with partial pivoting. Elimination continues past exact zero
    /// pivots (skipping the division) so that callers can inspect the full
    /// pivot sequence.
    pub fn factor(d: &DenseBlock) -> LuFactors {
        assert_eq!(d.rows, d.cols, "LU needs a square block");
        let n = d.rows;
        let mut lu = d.clone();
        let mut piv = vec![0usize; n];
        let mut zero_pivot = None;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    let a = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, a);
                }
            }
            let pivval = lu.get(k, k);
            if pivval == 0.0 {
                if zero_pivot.is_none() {
                    zero_pivot = Some(k);
                }
                continue;
            }
            for i in k + 1..n {
                let lik = lu.get(i, k) / pivval;
                lu.set(i, k, lik);
                if lik != 0.0 {
                    for j in k + 1..n {
                        lu.set(i, j, lu.get(i, j) - lik * lu.get(k, j));
                    }
                }
            }
        }
        LuFactors {
            lu,
            piv,
            zero_pivot,
        }
    }

    pub fn n(&self) -> usize {
        self.lu.rows
    }

    pub fn zero_pivot(&self) -> Option<usize> {
        self.zero_pivot
    }

    pub fn is_singular(&self) -> bool {
        self.zero_pivot.is_some()
    }

    /// Pivot magnitudes |u_kk| in elimination order.
    pub fn pivot_magnitudes(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.lu.get(k, k).abs()).collect()
    }

    /// Solve `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n();
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..n {
                    b[i] -= self.lu.get(i, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..n {
                s -= self.lu.get(k, j) * b[j];
            }
            b[k] = s / self.lu.get(k, k);
        }
    }

    /// Solve `A^T x = b` in place.
    pub fn solve_transpose(&self, b: &mut [f64]) {
        let n = self.n();
        assert_eq!(b.len(), n);
        // A^T = U^T L^T P, so U^T w = b (forward), L^T v = w (backward),
        // then undo the row swaps in reverse order.
        for k in 0..n {
            let mut s = b[k];
            for j in 0..k {
                s -= self.lu.get(j, k) * b[j];
            }
            b[k] = s / self.lu.get(k, k);
        }
        for k in (0..n).rev() {
            let bk = b[k];
            if bk != 0.0 {
                for i in 0..k {
                    b[i] -= self.lu.get(k, i) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            b.swap(k, self.piv[k]);
        }
    }
}

/// Hager/Higham 1-norm condition estimate from existing LU factors.
///
/// Runs at most 5 iterations of the power method on `D^{-1}` and returns
/// `||D||_1 * est(||D^{-1}||_1)`; the estimate never exceeds the true
/// condition number because the power method only yields lower bounds.
pub fn cond_estimate_1norm(d: &DenseBlock, lu: &LuFactors) -> f64 {
    let n = lu.n();
    if n == 0 {
        return 1.0;
    }
    if lu.is_singular() {
        return f64::INFINITY;
    }
    let norm_d = d.norm_1();
    let mut x = vec![1.0 / n as f64; n];
    let mut est = 0.0f64;
    for _ in 0..5 {
        let mut y = x.clone();
        lu.solve(&mut y);
        let y1: f64 = y.iter().map(|v| v.abs()).sum();
        est = est.max(y1);
        let mut xi: Vec<f64> = y
            .iter()
            .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
            .collect();
        lu.solve_transpose(&mut xi);
        let (jmax, zmax) = xi
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        let zx: f64 = xi.iter().zip(&x).map(|(z, xv)| z * xv).sum();
        if zmax <= zx.abs() + 1e-16 {
            break;
        }
        x = vec![0.0; n];
        x[jmax] = 1.0;
    }
    norm_d * est
}

/// Invert a square block via LU with partial pivoting and column solves.
///
/// The status reports exactly-zero pivots as `Singular` and a condition
/// estimate above `cond_threshold` as `IllConditioned`; the inverse is still
/// returned in the ill-conditioned case and is zero-filled in the singular
/// case.
pub fn lu_invert(d: &DenseBlock, cond_threshold: f64) -> (DenseBlock, InvertStatus) {
    assert_eq!(d.rows, d.cols, "inversion needs a square block");
    let n = d.rows;
    if n == 1 {
        let v = d.get(0, 0);
        if v == 0.0 {
            return (DenseBlock::zeros(1, 1), InvertStatus::Singular);
        }
        let inv = DenseBlock::from_data(1, 1, vec![1.0 / v]);
        if !inv.get(0, 0).is_finite() {
            return (DenseBlock::zeros(1, 1), InvertStatus::Singular);
        }
        return (inv, InvertStatus::Ok);
    }
    let lu = LuFactors::factor(d);
    if lu.is_singular() {
        return (DenseBlock::zeros(n, n), InvertStatus::Singular);
    }
    let mut inv = DenseBlock::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        lu.solve(&mut col);
        for i in 0..n {
            inv.set(i, j, col[i]);
        }
    }
    if inv.data.iter().any(|v| !v.is_finite()) {
        return (DenseBlock::zeros(n, n), InvertStatus::Singular);
    }
    let kappa = cond_estimate_1norm(d, &lu);
    if kappa > cond_threshold {
        return (inv, InvertStatus::IllConditioned(kappa));
    }
    (inv, InvertStatus::Ok)
}
