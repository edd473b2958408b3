//! Crout-type block incomplete LDU factorization with hybrid storage.
//!
//! One block step loads the block column of the input into a dense buffer,
//! subtracts the contributions of earlier block columns discovered through
//! linked traversal lists (gather, dense multiply-accumulate, scatter),
//! drops small block rows, inverts the diagonal block (perturbing it when
//! singular or ill-conditioned), and repeats the mirrored procedure for the
//! block row of U. The factors satisfy `A_check ~= L * P * U` with `L` and
//! `U^T` unit block lower triangular and `P` the block-diagonal pivots; the
//! stored `Dinv` blocks are the inverted pivots, so applying the
//! preconditioner multiplies by `Dinv` instead of solving with the diagonal.
//!
//! Storage is hybrid: a block column of `L` keeps one dense matrix over its
//! nonzero scalar rows; block rows of `U` are stored transposed the same
//! way. During the sweep `U` is kept in raw (pivot-scaled) form because the
//! Crout updates consume `P_j * U_{j,k}`; rows are normalized to unit form
//! once the sweep finishes.

mod lists;
mod perturb;

pub use perturb::perturb_diagonal;

use std::io::Write;

use thiserror::Error;

use crate::dense::{gemm_acc_raw, lu_invert, DenseBlock, InvertStatus};
use crate::pipeline::PreprocessResult;
use crate::sparse::{BlockPartition, SparseMatrix};
use lists::{TraversalLists, NONE};

/// Dropping, aggregation and perturbation knobs of [`factorize`].
#[derive(Debug, Clone)]
pub struct FactorConfig {
    /// Relative drop tolerance in `(0, 1]`; `0` disables dropping.
    pub drop_tau: f64,
    /// Progressive aggregation of consecutive block columns (the `p` flag).
    pub aggregate: bool,
    /// Absolute perturbation tolerance (`tau` of the perturbation formula).
    pub perturb_tau: f64,
    /// Relative perturbation tolerance (`rho`).
    pub perturb_rho: f64,
    /// Diagonal blocks with a 1-norm condition estimate above this are
    /// treated like singular ones.
    pub cond_threshold: f64,
    /// Hard cap on aggregated block width.
    pub max_block: usize,
    /// When false, a defective diagonal block aborts with a breakdown error
    /// instead of being perturbed.
    pub perturb: bool,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            drop_tau: 1e-2,
            aggregate: false,
            perturb_tau: 1e-2,
            perturb_rho: 1e-1,
            cond_threshold: 1e12,
            max_block: 256,
            perturb: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("breakdown: diagonal block {block} is unrecoverably singular")]
    Breakdown { block: usize },
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

/// One hybrid-stored block column (of L) or transposed block row (of U):
/// sorted scalar indices outside the diagonal block plus one dense matrix
/// holding those index positions across the block's width.
#[derive(Debug, Clone)]
pub struct FactorBlock {
    pub indices: Vec<usize>,
    pub data: DenseBlock,
}

impl FactorBlock {
    fn empty() -> Self {
        Self {
            indices: Vec::new(),
            data: DenseBlock::zeros(0, 0),
        }
    }
}

/// The assembled preconditioner.
#[derive(Debug, Clone)]
pub struct BlockFactorization {
    l: Vec<FactorBlock>,
    dinv: Vec<DenseBlock>,
    u: Vec<FactorBlock>,
    partition: BlockPartition,
    preprocess: PreprocessResult,
    perturbation_count: usize,
    drop_tau: f64,
    n: usize,
}

/// Progressive-aggregation admission test.
///
/// `mu = p*(p+r+s+r'+s') + q*(q+t+t')` counts the nonzeros stored by the two
/// separate blocks, `nu = (p+q)*(p+q+u+v)` the nonzeros after merging onto
/// the union patterns; merging is allowed when `nu <= 1.2*mu` or
/// `nu <= mu + 2*(p+q)`, and the merged width respects `max_block`.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_test(
    p: usize,
    q: usize,
    r: usize,
    s: usize,
    t: usize,
    r_up: usize,
    s_up: usize,
    t_up: usize,
    u: usize,
    v: usize,
    max_block: usize,
) -> bool {
    let mu = p * (p + r + s + r_up + s_up) + q * (q + t + t_up);
    let nu = (p + q) * (p + q + u + v);
    p + q <= max_block && (5 * nu <= 6 * mu || nu <= mu + 2 * (p + q))
}

struct Sweep<'a> {
    a: &'a SparseMatrix,
    at: SparseMatrix,
    n: usize,
    alpha: f64,
    config: &'a FactorConfig,
    spans: Vec<(usize, usize)>,
    widths: Vec<usize>,
    blk_of: Vec<usize>,
    lcols: Vec<FactorBlock>,
    urows: Vec<FactorBlock>, // raw (pivot-scaled) U rows, transposed
    dinv: Vec<DenseBlock>,
    pivots: Vec<DenseBlock>,
    llists: TraversalLists,
    ulists: TraversalLists,
    perturbations: usize,
    // step workspaces
    col_buf: Vec<f64>,
    row_buf: Vec<f64>,
    touched_rows: Vec<usize>,
    touched_cols: Vec<usize>,
    row_mark: Vec<usize>,
    col_mark: Vec<usize>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl<'a> Sweep<'a> {
    fn new(a: &'a SparseMatrix, partition: &BlockPartition, config: &'a FactorConfig) -> Self {
        let n = a.n_cols();
        let nb = partition.n_blocks();
        Sweep {
            at: a.transpose_view().to_csc(),
            a,
            n,
            alpha: a.max_abs(),
            config,
            spans: (0..nb)
                .map(|b| (partition.offsets()[b], partition.offsets()[b + 1]))
                .collect(),
            widths: partition.sizes().to_vec(),
            blk_of: partition.block_of(),
            lcols: vec![FactorBlock::empty(); nb],
            urows: vec![FactorBlock::empty(); nb],
            dinv: vec![DenseBlock::zeros(0, 0); nb],
            pivots: vec![DenseBlock::zeros(0, 0); nb],
            llists: TraversalLists::new(nb),
            ulists: TraversalLists::new(nb),
            perturbations: 0,
            col_buf: Vec::new(),
            row_buf: Vec::new(),
            touched_rows: Vec::new(),
            touched_cols: Vec::new(),
            row_mark: vec![usize::MAX; n],
            col_mark: vec![usize::MAX; n],
            scratch_a: Vec::new(),
            scratch_b: Vec::new(),
        }
    }

    fn ensure_buffers(&mut self, w: usize) {
        let need = self.n * w;
        if self.col_buf.len() < need {
            self.col_buf.resize(need, 0.0);
        }
        if self.row_buf.len() < need {
            self.row_buf.resize(need, 0.0);
        }
    }

    fn touch_row(&mut self, r: usize, k: usize) {
        if self.row_mark[r] != k {
            self.row_mark[r] = k;
            self.touched_rows.push(r);
        }
    }

    /// Load the block column/row of A into the two dense buffers.
    fn load(&mut self, k: usize) {
        let (ks, ke) = self.spans[k];
        for c in ks..ke {
            let (rows, vals) = self.a.outer(c);
            let lo = rows.partition_point(|&r| r < ks);
            for (&r, &v) in rows[lo..].iter().zip(&vals[lo..]) {
                self.col_buf[r + (c - ks) * self.n] = v;
                if r >= ke {
                    self.touch_row(r, k);
                }
            }
        }
        for t in ks..ke {
            let (cols, vals) = self.at.outer(t);
            let lo = cols.partition_point(|&c| c < ke);
            for (&c, &v) in cols[lo..].iter().zip(&vals[lo..]) {
                self.row_buf[c + (t - ks) * self.n] = v;
                if self.col_mark[c] != k {
                    self.col_mark[c] = k;
                    self.touched_cols.push(c);
                }
            }
        }
    }

    /// Subtract earlier contributions from the column buffer (driven by the
    /// U chains) and from the row buffer (driven by the L chains).
    fn update(&mut self, k: usize) {
        let (ks, ke) = self.spans[k];
        let n = self.n;

        // column side: blocks j with a raw U entry in block column k
        let mut chain = self.ulists.take_chain(k);
        while let Some(j) = chain.next(&self.ulists) {
            if self.widths[j] == 0 || self.urows[j].indices.is_empty() {
                continue;
            }
            let jw = self.widths[j];
            let upos = self.ulists.first[j];
            let ucols = &self.urows[j].indices;
            let mut cnt = 0usize;
            while upos + cnt < ucols.len() && ucols[upos + cnt] < ke {
                cnt += 1;
            }
            debug_assert!(cnt > 0 && ucols[upos] >= ks);

            let lpos = self.llists.first[j];
            let lpos = if lpos == NONE { 0 } else { lpos };
            let lrows = &self.lcols[j].indices;
            let m_j = lrows.len().saturating_sub(lpos);
            if m_j > 0 {
                // gather B = U~_{j, block k} as (jw x cnt), transposing the
                // stored (cols x jw) slice
                let udata = self.urows[j].data.data();
                let c_j = self.urows[j].indices.len();
                self.scratch_a.resize(jw * cnt, 0.0);
                for t in 0..cnt {
                    for a in 0..jw {
                        self.scratch_a[a + t * jw] = udata[(upos + t) + a * c_j];
                    }
                }
                // C (m_j x cnt) = L tail (m_j x jw) * B
                self.scratch_b.resize(m_j * cnt, 0.0);
                self.scratch_b.iter_mut().for_each(|v| *v = 0.0);
                let ldata = self.lcols[j].data.data();
                let lrows_total = lrows.len();
                gemm_acc_raw(
                    m_j,
                    cnt,
                    jw,
                    &ldata[lpos..],
                    lrows_total,
                    &self.scratch_a,
                    jw,
                    &mut self.scratch_b,
                    m_j,
                    1.0,
                );
                // scatter-subtract into the column buffer
                for t in 0..cnt {
                    let c_local = ucols[upos + t] - ks;
                    for (ri, &row) in lrows[lpos..].iter().enumerate() {
                        self.col_buf[row + c_local * n] -= self.scratch_b[ri + t * m_j];
                        if row >= ke && self.row_mark[row] != k {
                            self.row_mark[row] = k;
                            self.touched_rows.push(row);
                        }
                    }
                }
            }
            let indices = std::mem::take(&mut self.urows[j].indices);
            self.ulists.advance(j, cnt, &indices, &self.blk_of);
            self.urows[j].indices = indices;
        }

        // row side: blocks j with an L entry in block row k
        let mut chain = self.llists.take_chain(k);
        while let Some(j) = chain.next(&self.llists) {
            if self.widths[j] == 0 || self.lcols[j].indices.is_empty() {
                continue;
            }
            let jw = self.widths[j];
            let lpos = self.llists.first[j];
            let lrows = &self.lcols[j].indices;
            let mut cntr = 0usize;
            while lpos + cntr < lrows.len() && lrows[lpos + cntr] < ke {
                cntr += 1;
            }
            debug_assert!(cntr > 0 && lrows[lpos] >= ks);

            let upos = self.ulists.first[j];
            let upos = if upos == NONE { 0 } else { upos };
            let ucols = &self.urows[j].indices;
            let tlen = ucols.len().saturating_sub(upos);
            if tlen > 0 {
                let w = ke - ks;
                // gather L_{k,j}^T as (jw x w), zero-padding missing rows
                let ldata = self.lcols[j].data.data();
                let lrows_total = lrows.len();
                self.scratch_a.resize(jw * w, 0.0);
                self.scratch_a.iter_mut().for_each(|v| *v = 0.0);
                for t in 0..cntr {
                    let row_local = lrows[lpos + t] - ks;
                    for a in 0..jw {
                        self.scratch_a[a + row_local * jw] = ldata[(lpos + t) + a * lrows_total];
                    }
                }
                // R (tlen x w) = U~ tail (tlen x jw) * L_{k,j}^T
                self.scratch_b.resize(tlen * w, 0.0);
                self.scratch_b.iter_mut().for_each(|v| *v = 0.0);
                let udata = self.urows[j].data.data();
                let c_j = ucols.len();
                gemm_acc_raw(
                    tlen,
                    w,
                    jw,
                    &udata[upos..],
                    c_j,
                    &self.scratch_a,
                    jw,
                    &mut self.scratch_b,
                    tlen,
                    1.0,
                );
                for t in 0..tlen {
                    let col = ucols[upos + t];
                    debug_assert!(col >= ke);
                    if self.col_mark[col] != k {
                        self.col_mark[col] = k;
                        self.touched_cols.push(col);
                    }
                    for a in 0..w {
                        self.row_buf[col + a * n] -= self.scratch_b[t + a * tlen];
                    }
                }
            }
            let indices = std::mem::take(&mut self.lcols[j].indices);
            self.llists.advance(j, cntr, &indices, &self.blk_of);
            self.lcols[j].indices = indices;
        }
    }

    /// Invert the raw pivot, perturbing per configuration. Returns the
    /// inverse or a breakdown error.
    fn invert_pivot(
        &mut self,
        k: usize,
        pivot: &mut DenseBlock,
    ) -> Result<DenseBlock, FactorError> {
        let cfg = self.config;
        let (inv, status) = lu_invert(pivot, cfg.cond_threshold);
        if status.is_ok() {
            return Ok(inv);
        }
        if !cfg.perturb {
            return Err(FactorError::Breakdown { block: k });
        }
        let (mut fixed, count) = perturb_diagonal(
            pivot,
            self.alpha,
            cfg.perturb_tau,
            cfg.perturb_rho,
            cfg.cond_threshold,
        );
        self.perturbations += count;
        let (inv, status) = lu_invert(&fixed, cfg.cond_threshold);
        if status.is_ok() {
            *pivot = fixed;
            return Ok(inv);
        }
        // last resort: shift every diagonal entry by tau*alpha
        let w = fixed.rows();
        let shift = cfg.perturb_tau * self.alpha;
        for i in 0..w {
            let v = fixed.get(i, i);
            let sgn = if v < 0.0 { -1.0 } else { 1.0 };
            fixed.set(i, i, v + sgn * shift);
        }
        self.perturbations += w;
        let (inv, status) = lu_invert(&fixed, cfg.cond_threshold);
        if matches!(status, InvertStatus::Singular) {
            return Err(FactorError::Breakdown { block: k });
        }
        *pivot = fixed;
        Ok(inv)
    }

    /// Extract, drop and store the factors of step `k`.
    fn finalize_step(&mut self, k: usize) -> Result<(), FactorError> {
        let (ks, ke) = self.spans[k];
        let w = ke - ks;
        let n = self.n;
        let tau = self.config.drop_tau;

        let mut pivot = DenseBlock::zeros(w, w);
        for c in 0..w {
            for r in 0..w {
                pivot.set(r, c, self.col_buf[(ks + r) + c * n]);
            }
        }
        let dinv = self.invert_pivot(k, &mut pivot)?;

        // L side: compact touched below-diagonal rows, normalize, drop
        self.touched_rows.sort_unstable();
        let rows: Vec<usize> = self.touched_rows.clone();
        let m = rows.len();
        let mut raw = DenseBlock::zeros(m, w);
        for (ri, &r) in rows.iter().enumerate() {
            for c in 0..w {
                raw.data_mut()[ri + c * m] = self.col_buf[r + c * n];
            }
        }
        let mut unit = DenseBlock::zeros(m, w);
        unit.gemm_acc(&raw, &dinv, 1.0);
        let keep_rows = self.drop_mask(&rows, &unit, tau);
        let (lidx, ldata) = compact_rows(&rows, &unit, &keep_rows);
        self.lcols[k] = FactorBlock {
            indices: lidx,
            data: ldata,
        };

        // U side: drop on the normalized copy, store raw
        self.touched_cols.sort_unstable();
        let cols: Vec<usize> = self.touched_cols.clone();
        let cu = cols.len();
        let mut uraw = DenseBlock::zeros(cu, w);
        for (ci, &c) in cols.iter().enumerate() {
            for a in 0..w {
                uraw.data_mut()[ci + a * cu] = self.row_buf[c + a * n];
            }
        }
        let mut uunit = DenseBlock::zeros(cu, w);
        uunit.gemm_acc(&uraw, &dinv.transposed(), 1.0);
        let keep_cols = self.drop_mask(&cols, &uunit, tau);
        let (uidx, udata) = compact_rows(&cols, &uraw, &keep_cols);
        self.urows[k] = FactorBlock {
            indices: uidx,
            data: udata,
        };

        self.dinv[k] = dinv;
        self.pivots[k] = pivot;
        Ok(())
    }

    /// Per-block-row drop decisions on the normalized buffer: a block row
    /// survives when its largest normalized entry exceeds `tau`. `tau == 0`
    /// keeps everything.
    fn drop_mask(&self, indices: &[usize], unit: &DenseBlock, tau: f64) -> Vec<bool> {
        let mut keep = vec![true; indices.len()];
        if tau == 0.0 || indices.is_empty() {
            return keep;
        }
        let w = unit.cols();
        let m = indices.len();
        let mut start = 0usize;
        while start < m {
            let b = self.blk_of[indices[start]];
            let mut end = start + 1;
            while end < m && self.blk_of[indices[end]] == b {
                end += 1;
            }
            let mut maxabs = 0.0f64;
            for c in 0..w {
                for r in start..end {
                    maxabs = maxabs.max(unit.data()[r + c * m].abs());
                }
            }
            if maxabs <= tau {
                for kr in keep.iter_mut().take(end).skip(start) {
                    *kr = false;
                }
            }
            start = end;
        }
        keep
    }

    /// Zero out the touched buffer entries so the workspaces can be reused.
    fn clear_buffers(&mut self, k: usize) {
        let (ks, ke) = self.spans[k];
        let w = ke - ks;
        let n = self.n;
        for c in 0..w {
            for r in ks..ke {
                self.col_buf[r + c * n] = 0.0;
            }
        }
        for &r in &self.touched_rows {
            for c in 0..w {
                self.col_buf[r + c * n] = 0.0;
            }
        }
        for &c in &self.touched_cols {
            for a in 0..w {
                self.row_buf[c + a * n] = 0.0;
            }
        }
        self.touched_rows.clear();
        self.touched_cols.clear();
    }

    /// Try to merge block `k-1` into block `k` right after step `k`.
    fn try_aggregate(&mut self, k: usize) -> Result<(), FactorError> {
        if k == 0 {
            return Ok(());
        }
        let kp = k - 1;
        let p = self.widths[kp];
        let q = self.widths[k];
        if p == 0 || p + q > self.config.max_block {
            return Ok(());
        }
        let (ks, ke) = self.spans[k];

        let lprev = &self.lcols[kp].indices;
        let in_k_l = lprev.partition_point(|&r| r < ke) - lprev.partition_point(|&r| r < ks);
        let r = in_k_l;
        let s = lprev.len() - lprev.partition_point(|&r| r < ke);
        let t = self.lcols[k].indices.len();

        let uprev = &self.urows[kp].indices;
        let in_k_u = uprev.partition_point(|&c| c < ke) - uprev.partition_point(|&c| c < ks);
        let r_up = in_k_u;
        let s_up = uprev.len() - uprev.partition_point(|&c| c < ke);
        let t_up = self.urows[k].indices.len();

        let u = union_count(
            &lprev[lprev.partition_point(|&x| x < ke)..],
            &self.lcols[k].indices,
        );
        let v = union_count(
            &uprev[uprev.partition_point(|&x| x < ke)..],
            &self.urows[k].indices,
        );

        if !aggregate_test(p, q, r, s, t, r_up, s_up, t_up, u, v, self.config.max_block) {
            return Ok(());
        }
        self.merge_previous(k)
    }

    /// Merge block `k-1` into block `k`: rebuild the merged L column, raw U
    /// row and pivot, invert the merged pivot, void block `k-1`. The
    /// traversal lists stay untouched; the void block drops out of its
    /// chains when they are next consumed.
    fn merge_previous(&mut self, k: usize) -> Result<(), FactorError> {
        let kp = k - 1;
        let (ps, _pe) = self.spans[kp];
        let (ks, ke) = self.spans[k];
        let p = self.widths[kp];
        let q = self.widths[k];
        let m = p + q;

        // the predecessor becomes void; take its storage now
        let lprev = std::mem::replace(&mut self.lcols[kp], FactorBlock::empty());
        let uprev = std::mem::replace(&mut self.urows[kp], FactorBlock::empty());
        let pprev = std::mem::replace(&mut self.pivots[kp], DenseBlock::zeros(0, 0));
        let dinv_prev = std::mem::replace(&mut self.dinv[kp], DenseBlock::zeros(0, 0));

        // L_{k,k-1} as unit (q x p), zero-padded
        let lo = lprev.indices.partition_point(|&r| r < ks);
        let hi = lprev.indices.partition_point(|&r| r < ke);
        let mut lkp = DenseBlock::zeros(q, p);
        let total_prev = lprev.indices.len();
        for t in lo..hi {
            let rl = lprev.indices[t] - ks;
            for a in 0..p {
                lkp.set(rl, a, lprev.data.data()[t + a * total_prev]);
            }
        }

        // U~_{k-1,k} as raw (p x q)
        let ulo = uprev.indices.partition_point(|&c| c < ks);
        let uhi = uprev.indices.partition_point(|&c| c < ke);
        debug_assert_eq!(ulo, uprev.indices.partition_point(|&c| c < ks));
        let mut ukp_raw = DenseBlock::zeros(p, q);
        let uc_prev = uprev.indices.len();
        for t in ulo..uhi {
            let cl = uprev.indices[t] - ks;
            for a in 0..p {
                ukp_raw.set(a, cl, uprev.data.data()[t + a * uc_prev]);
            }
        }

        // merged pivot [[P_{k-1}, U~_{k-1,k}], [L_{k,k-1} P_{k-1},
        //               L_{k,k-1} U~_{k-1,k} + P_k]]
        let mut pivot = DenseBlock::zeros(m, m);
        for a in 0..p {
            for b in 0..p {
                pivot.set(a, b, pprev.get(a, b));
            }
        }
        for a in 0..p {
            for b in 0..q {
                pivot.set(a, p + b, ukp_raw.get(a, b));
            }
        }
        let mut w21 = DenseBlock::zeros(q, p);
        w21.gemm_acc(&lkp, &pprev, 1.0);
        for a in 0..q {
            for b in 0..p {
                pivot.set(p + a, b, w21.get(a, b));
            }
        }
        let mut br = self.pivots[k].clone();
        br.gemm_acc(&lkp, &ukp_raw, 1.0);
        for a in 0..q {
            for b in 0..q {
                pivot.set(p + a, p + b, br.get(a, b));
            }
        }
        let dinv_m = self.invert_pivot(k, &mut pivot)?;

        // merged L column on the union row pattern beyond ke:
        // columns 0..p hold L^_{.,k-1} = L_{.,k-1} - L_{.,k} * L_{k,k-1},
        // columns p..m hold L_{.,k} unchanged
        let lbeyond = &lprev.indices[hi..];
        let lk = &self.lcols[k];
        let union_l = sorted_union(lbeyond, &lk.indices);
        let un = union_l.len();
        let mut ldata = DenseBlock::zeros(un, m);
        for (t, &row) in lprev.indices.iter().enumerate().skip(hi) {
            let pos = union_l.binary_search(&row).unwrap();
            for a in 0..p {
                ldata.set(pos, a, lprev.data.data()[t + a * total_prev]);
            }
        }
        let tk = lk.indices.len();
        if tk > 0 {
            // product L_{.,k} * L_{k,k-1} lands at block k's row positions
            let mut prod = DenseBlock::zeros(tk, p);
            prod.gemm_acc(&lk.data, &lkp, 1.0);
            for (t, &row) in lk.indices.iter().enumerate() {
                let pos = union_l.binary_search(&row).unwrap();
                for a in 0..p {
                    ldata.set(pos, a, ldata.get(pos, a) - prod.get(t, a));
                }
                for a in 0..q {
                    ldata.set(pos, p + a, lk.data.get(t, a));
                }
            }
        }

        // merged raw U row: build unit rows, apply the symmetric update,
        // then re-scale by the merged pivot
        let dinv_prev_t = dinv_prev.transposed();
        let ubeyond_idx = &uprev.indices[uhi..];
        let nprev = ubeyond_idx.len();
        let mut unit_prev = DenseBlock::zeros(nprev, p);
        for (t, _) in ubeyond_idx.iter().enumerate() {
            for a in 0..p {
                unit_prev.set(t, a, uprev.data.data()[(uhi + t) + a * uc_prev]);
            }
        }
        let mut unit_prev_n = DenseBlock::zeros(nprev, p);
        unit_prev_n.gemm_acc(&unit_prev, &dinv_prev_t, 1.0);

        let uk = &self.urows[k];
        let nk = uk.indices.len();
        let mut unit_k = DenseBlock::zeros(nk, q);
        unit_k.gemm_acc(&uk.data, &self.dinv[k].transposed(), 1.0);

        // unit U_{k-1,k} = Dinv_{k-1} * U~_{k-1,k}
        let mut ukp_unit = DenseBlock::zeros(p, q);
        ukp_unit.gemm_acc(&dinv_prev, &ukp_raw, 1.0);
        let ukp_unit_t = ukp_unit.transposed(); // (q x p)

        let union_u = sorted_union(ubeyond_idx, &uk.indices);
        let vn = union_u.len();
        let mut udata_unit = DenseBlock::zeros(vn, m);
        for (t, &col) in ubeyond_idx.iter().enumerate() {
            let pos = union_u.binary_search(&col).unwrap();
            for a in 0..p {
                udata_unit.set(pos, a, unit_prev_n.get(t, a));
            }
        }
        if nk > 0 {
            let mut prod = DenseBlock::zeros(nk, p);
            prod.gemm_acc(&unit_k, &ukp_unit_t, 1.0);
            for (t, &col) in uk.indices.iter().enumerate() {
                let pos = union_u.binary_search(&col).unwrap();
                for a in 0..p {
                    udata_unit.set(pos, a, udata_unit.get(pos, a) - prod.get(t, a));
                }
                for a in 0..q {
                    udata_unit.set(pos, p + a, unit_k.get(t, a));
                }
            }
        }
        let mut udata_raw = DenseBlock::zeros(vn, m);
        udata_raw.gemm_acc(&udata_unit, &pivot.transposed(), 1.0);

        // commit: k-1 becomes void, k absorbs it
        for i in ps..ks {
            self.blk_of[i] = k;
        }
        self.spans[k] = (ps, ke);
        self.widths[k] = m;
        self.widths[kp] = 0;
        self.lcols[k] = FactorBlock {
            indices: union_l,
            data: ldata,
        };
        self.urows[k] = FactorBlock {
            indices: union_u,
            data: udata_raw,
        };
        self.dinv[k] = dinv_m;
        self.pivots[k] = pivot;
        Ok(())
    }

    #[cfg(debug_assertions)]
    fn check_lists(&self) {
        for (lists, blocks) in [(&self.llists, &self.lcols), (&self.ulists, &self.urows)] {
            let nb = self.widths.len();
            let mut seen = vec![0usize; nb];
            for b in 0..nb {
                let mut cur = lists.head[b];
                while cur != NONE {
                    seen[cur] += 1;
                    cur = lists.list[cur];
                }
            }
            for (j, &cnt) in seen.iter().enumerate() {
                assert!(cnt <= 1, "block {j} appears in {cnt} chains");
                if cnt == 1 && self.widths[j] > 0 {
                    let pos = lists.first[j];
                    assert!(pos < blocks[j].indices.len());
                }
            }
        }
    }
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

fn union_count(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
        c += 1;
    }
    c + (a.len() - i) + (b.len() - j)
}

fn compact_rows(
    indices: &[usize],
    data: &DenseBlock,
    keep: &[bool],
) -> (Vec<usize>, DenseBlock) {
    let kept: Vec<usize> = (0..indices.len()).filter(|&i| keep[i]).collect();
    let m = kept.len();
    let w = data.cols();
    let mut out = DenseBlock::zeros(m, w);
    let src = data.data();
    let total = indices.len();
    for (dst, &srcrow) in kept.iter().enumerate() {
        for c in 0..w {
            out.data_mut()[dst + c * m] = src[srcrow + c * total];
        }
    }
    (kept.iter().map(|&i| indices[i]).collect(), out)
}

/// Compute the block incomplete LDU factorization of a square matrix whose
/// columns are sorted, on the given block partition.
pub fn factorize(
    a: &SparseMatrix,
    partition: &BlockPartition,
    config: &FactorConfig,
) -> Result<BlockFactorization, FactorError> {
    let a = a.to_csc();
    if !a.is_square() {
        return Err(FactorError::Mismatch(format!(
            "matrix is {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if partition.total() != a.n_cols() {
        return Err(FactorError::Mismatch(format!(
            "partition covers {} of {}",
            partition.total(),
            a.n_cols()
        )));
    }
    let nb = partition.n_blocks();
    let mut sweep = Sweep::new(&a, partition, config);

    for k in 0..nb {
        let w = sweep.widths[k];
        sweep.ensure_buffers(w);
        sweep.load(k);
        sweep.update(k);
        sweep.finalize_step(k)?;
        sweep.clear_buffers(k);
        if config.aggregate {
            sweep.try_aggregate(k)?;
        }
        let indices = std::mem::take(&mut sweep.lcols[k].indices);
        sweep.llists.register(k, &indices, &sweep.blk_of);
        sweep.lcols[k].indices = indices;
        let indices = std::mem::take(&mut sweep.urows[k].indices);
        sweep.ulists.register(k, &indices, &sweep.blk_of);
        sweep.urows[k].indices = indices;
        #[cfg(debug_assertions)]
        sweep.check_lists();
    }

    // normalize U to unit form and compact away void blocks
    let mut l = Vec::new();
    let mut u = Vec::new();
    let mut dinv = Vec::new();
    let mut sizes = Vec::new();
    for k in 0..nb {
        if sweep.widths[k] == 0 {
            continue;
        }
        let w = sweep.widths[k];
        sizes.push(w);
        let ub = std::mem::replace(&mut sweep.urows[k], FactorBlock::empty());
        let cu = ub.indices.len();
        let mut unit = DenseBlock::zeros(cu, w);
        unit.gemm_acc(&ub.data, &sweep.dinv[k].transposed(), 1.0);
        u.push(FactorBlock {
            indices: ub.indices,
            data: unit,
        });
        l.push(std::mem::replace(&mut sweep.lcols[k], FactorBlock::empty()));
        dinv.push(std::mem::replace(
            &mut sweep.dinv[k],
            DenseBlock::zeros(0, 0),
        ));
    }
    let partition = BlockPartition::from_sizes(sizes).expect("non-void blocks remain");
    Ok(BlockFactorization {
        l,
        dinv,
        u,
        partition,
        preprocess: PreprocessResult::identity(a.n_cols()),
        perturbation_count: sweep.perturbations,
        drop_tau: config.drop_tau,
        n: a.n_cols(),
    })
}

impl BlockFactorization {
    /// Attach the preprocessing transforms so [`Self::apply`] acts on the
    /// original variable order.
    pub fn with_preprocess(mut self, preprocess: PreprocessResult) -> Self {
        assert_eq!(preprocess.perm_left.len(), self.n);
        self.preprocess = preprocess;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn preprocess(&self) -> &PreprocessResult {
        &self.preprocess
    }

    pub fn perturbation_count(&self) -> usize {
        self.perturbation_count
    }

    pub fn drop_tau(&self) -> f64 {
        self.drop_tau
    }

    pub fn l_blocks(&self) -> &[FactorBlock] {
        &self.l
    }

    pub fn u_blocks(&self) -> &[FactorBlock] {
        &self.u
    }

    pub fn dinv_blocks(&self) -> &[DenseBlock] {
        &self.dinv
    }

    /// Stored factor values: L and U dense payloads plus the inverted
    /// diagonal blocks.
    pub fn stored_values(&self) -> usize {
        let lu: usize = self
            .l
            .iter()
            .zip(&self.u)
            .zip(self.partition.sizes())
            .map(|((lb, ub), &w)| (lb.indices.len() + ub.indices.len()) * w)
            .sum();
        let diag: usize = self.partition.sizes().iter().map(|&w| w * w).sum();
        lu + diag
    }

    /// Bytes held by the factor payloads and index lists.
    pub fn memory_bytes(&self) -> usize {
        let idx: usize = self
            .l
            .iter()
            .zip(&self.u)
            .map(|(lb, ub)| lb.indices.len() + ub.indices.len())
            .sum();
        8 * self.stored_values() + 8 * idx
    }

    /// Apply the preconditioner: `y = M^{-1} x` for the composed
    /// approximation `M = D_l^{-1} P_l L D^{-1} U P_r^T D_r^{-1}`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "length mismatch");
        let pre = &self.preprocess;
        let dl = pre.row_scaling.values();
        let dr = pre.col_scaling.values();

        let scaled: Vec<f64> = x.iter().zip(dl).map(|(&v, &d)| v * d).collect();
        let mut z = pre.perm_left.apply_transpose(&scaled);

        // forward substitution with unit block L, interleaving the Dinv
        // multiply once each block's segment is final
        let mut seg = Vec::new();
        for (k, lb) in self.l.iter().enumerate() {
            let span = self.partition.span(k);
            seg.clear();
            seg.extend_from_slice(&z[span.clone()]);
            if !lb.indices.is_empty() {
                let m = lb.indices.len();
                let data = lb.data.data();
                for (c, &sc) in seg.iter().enumerate() {
                    if sc == 0.0 {
                        continue;
                    }
                    let col = &data[c * m..(c + 1) * m];
                    for (ri, &row) in lb.indices.iter().enumerate() {
                        z[row] -= col[ri] * sc;
                    }
                }
            }
            // z_k <- Dinv_k * z_k
            let d = &self.dinv[k];
            let w = seg.len();
            for a in 0..w {
                let mut s = 0.0;
                for b in 0..w {
                    s += d.get(a, b) * seg[b];
                }
                z[span.start + a] = s;
            }
        }

        // backward substitution with unit block U
        for k in (0..self.u.len()).rev() {
            let ub = &self.u[k];
            if ub.indices.is_empty() {
                continue;
            }
            let span = self.partition.span(k);
            let w = span.len();
            let cu = ub.indices.len();
            let data = ub.data.data();
            for a in 0..w {
                let col = &data[a * cu..(a + 1) * cu];
                let mut s = 0.0;
                for (t, &cidx) in ub.indices.iter().enumerate() {
                    s += col[t] * z[cidx];
                }
                z[span.start + a] -= s;
            }
        }

        let permuted = pre.perm_right.apply(&z);
        permuted.iter().zip(dr).map(|(&v, &d)| v * d).collect()
    }

    /// Text dump of the factors for debugging and cross-implementation
    /// diffing: partition sizes, then per block the index list and dense
    /// values row-major.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "bilu factor dump v1 n {} blocks {} drop_tau {:e} perturbations {}",
            self.n,
            self.partition.n_blocks(),
            self.drop_tau,
            self.perturbation_count
        )?;
        write!(w, "sizes:")?;
        for s in self.partition.sizes() {
            write!(w, " {s}")?;
        }
        writeln!(w)?;
        for k in 0..self.partition.n_blocks() {
            let width = self.partition.sizes()[k];
            let lb = &self.l[k];
            writeln!(w, "L {} rows {}", k, lb.indices.len())?;
            write_indices(&mut w, &lb.indices)?;
            write_block_rowmajor(&mut w, &lb.data)?;
            writeln!(w, "D {} size {}", k, width)?;
            write_block_rowmajor(&mut w, &self.dinv[k])?;
            let ub = &self.u[k];
            writeln!(w, "U {} cols {}", k, ub.indices.len())?;
            write_indices(&mut w, &ub.indices)?;
            // stored transposed; dump the logical (width x cols) block
            write_block_rowmajor(&mut w, &ub.data.transposed())?;
        }
        Ok(())
    }
}

fn write_indices(w: &mut impl Write, idx: &[usize]) -> std::io::Result<()> {
    for (n, i) in idx.iter().enumerate() {
        if n > 0 {
            write!(w, " ")?;
        }
        write!(w, "{i}")?;
    }
    writeln!(w)
}

fn write_block_rowmajor(w: &mut impl Write, b: &DenseBlock) -> std::io::Result<()> {
    for i in 0..b.rows() {
        for j in 0..b.cols() {
            if j > 0 {
                write!(w, " ")?;
            }
            write!(w, "{:.17e}", b.get(i, j))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
