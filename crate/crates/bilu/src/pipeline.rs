//! The preprocessing pipeline: matching, optional cosine blocking, companion
//! compression with fill-reducing ordering, and the optional ILU(1,tau)
//! partition guess. The collected transforms compose into
//! `A_check = P_l^T D_l A D_r P_r` with `P_l = Q*P` and `P_r = Pi*Q*P`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cosine::{cosine_blocks, CosineConfig};
use crate::ilu1t::{ilu1t_block_guess_with, Ilu1tOptions};
use crate::matching::{max_weight_matching, MatchingError};
use crate::ordering::{fill_reducing_ordering_with, OrderingBackend, OrderingError};
use crate::sparse::{
    apply_matching_transform, compress_companion, expand_permutation, symmetric_permute,
    BlockPartition, DiagonalScaling, PermutationVector, SparseError, SparseMatrix,
};

/// Which blocking strategies run, parsed from tags like `cip`, `c--`, `---`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingFlags {
    /// Cosine grouping before the ordering.
    pub cosine: bool,
    /// ILU(1,tau) partition enlargement after the ordering.
    pub ilu1t: bool,
    /// Progressive aggregation during the factorization.
    pub aggregate: bool,
}

impl BlockingFlags {
    pub fn none() -> Self {
        Self {
            cosine: false,
            ilu1t: false,
            aggregate: false,
        }
    }

    pub fn all() -> Self {
        Self {
            cosine: true,
            ilu1t: true,
            aggregate: true,
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid blocking tag `{0}`: expected three of [c-][i-][p-], e.g. `cip` or `c--`")]
pub struct BadBlockingTag(String);

impl FromStr for BlockingFlags {
    type Err = BadBlockingTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(BadBlockingTag(s.into()));
        }
        let pick = |c: char, on: char| -> Result<bool, BadBlockingTag> {
            if c == on {
                Ok(true)
            } else if c == '-' {
                Ok(false)
            } else {
                Err(BadBlockingTag(s.into()))
            }
        };
        Ok(Self {
            cosine: pick(chars[0], 'c')?,
            ilu1t: pick(chars[1], 'i')?,
            aggregate: pick(chars[2], 'p')?,
        })
    }
}

impl fmt::Display for BlockingFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            if self.cosine { 'c' } else { '-' },
            if self.ilu1t { 'i' } else { '-' },
            if self.aggregate { 'p' } else { '-' }
        )
    }
}

/// Scalings and permutations accumulated by the pipeline.
#[derive(Debug, Clone)]
pub struct PreprocessResult {
    /// Left matching scaling `D_l`.
    pub row_scaling: DiagonalScaling,
    /// Right matching scaling `D_r`.
    pub col_scaling: DiagonalScaling,
    /// Matching permutation `Pi`.
    pub matching_perm: PermutationVector,
    /// Cosine grouping permutation `Q` (identity without the `c` flag).
    pub cosine_perm: PermutationVector,
    /// Fill-reducing block ordering expanded to scalars, `P`.
    pub ordering_perm: PermutationVector,
    /// `P_l = Q * P`.
    pub perm_left: PermutationVector,
    /// `P_r = Pi * Q * P`.
    pub perm_right: PermutationVector,
}

impl PreprocessResult {
    pub fn identity(n: usize) -> Self {
        Self {
            row_scaling: DiagonalScaling::identity(n),
            col_scaling: DiagonalScaling::identity(n),
            matching_perm: PermutationVector::identity(n),
            cosine_perm: PermutationVector::identity(n),
            ordering_perm: PermutationVector::identity(n),
            perm_left: PermutationVector::identity(n),
            perm_right: PermutationVector::identity(n),
        }
    }
}

/// Tuning knobs of [`build_pipeline_partition`].
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub cosine: CosineConfig,
    pub ilu1t: Ilu1tOptions,
    pub ordering: OrderingBackend,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Run the preprocessing steps in order: matching (always), cosine blocking
/// (flag `c`), companion compression + fill-reducing ordering + expansion
/// (always, scalar companion without cosine), ILU(1,tau) guess (flag `i`).
/// Returns the preprocessed matrix, the partition, and the composed
/// transforms.
pub fn build_pipeline_partition(
    a: &SparseMatrix,
    flags: &BlockingFlags,
    tau: f64,
    config: &PipelineConfig,
) -> Result<(SparseMatrix, BlockPartition, PreprocessResult), PipelineError> {
    let a = a.to_csc();
    let n = a.n_cols();

    let matching = max_weight_matching(&a)?;
    let a_hat = apply_matching_transform(
        &a,
        &matching.row_scaling,
        &matching.col_scaling,
        &matching.perm,
    )?;

    let (a_tilde, partition, q) = if flags.cosine {
        let blocks = cosine_blocks(&a_hat, &config.cosine);
        let a_tilde = symmetric_permute(&a_hat, &blocks.q)?;
        (a_tilde, blocks.partition, blocks.q)
    } else {
        (a_hat, BlockPartition::scalar(n), PermutationVector::identity(n))
    };

    let companion = compress_companion(&a_tilde, &partition)?;
    let p_b = fill_reducing_ordering_with(&companion, &config.ordering)?;
    let (p, partition) = expand_permutation(&p_b, &partition)?;
    let a_check = symmetric_permute(&a_tilde, &p)?;

    let partition = if flags.ilu1t {
        ilu1t_block_guess_with(&a_check, &partition, tau, &config.ilu1t)
    } else {
        partition
    };

    let perm_left = q.compose(&p);
    let perm_right = matching.perm.compose(&perm_left);
    let preprocess = PreprocessResult {
        row_scaling: matching.row_scaling,
        col_scaling: matching.col_scaling,
        matching_perm: matching.perm,
        cosine_perm: q,
        ordering_perm: p,
        perm_left,
        perm_right,
    };
    Ok((a_check, partition, preprocess))
}
