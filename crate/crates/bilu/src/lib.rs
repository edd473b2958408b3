//! Block incomplete LU preconditioning for sparse linear systems.
//!
//! The crate builds `A ~= D_l^{-1} P_l L D^{-1} U P_r^T D_r^{-1}` in stages:
//! a maximum product transversal supplies the scalings and the column
//! permutation, cosine grouping and a fill-reducing ordering of the
//! companion graph shape the block structure, an ILU(1,tau) simulation
//! enlarges it, and a Crout-type block factorization with progressive
//! aggregation and diagonal perturbation produces the factors applied inside
//! restarted GMRES.

pub mod cosine;
pub mod dense;
pub mod factor;
pub mod gmres;
pub mod ilu1t;
pub mod matching;
pub mod ordering;
pub mod pipeline;
pub mod sparse;

pub use cosine::{cosine_blocks, CosineBlocks, CosineConfig};
pub use dense::{cond_estimate_1norm, lu_invert, DenseBlock, InvertStatus, LuFactors};
pub use factor::{
    aggregate_test, factorize, perturb_diagonal, BlockFactorization, FactorBlock, FactorConfig,
    FactorError,
};
pub use gmres::{gmres, identity_preconditioner, GmresConfig, SolveStats};
pub use ilu1t::{
    estimate_step_pattern, ilu1t_block_guess, ilu1t_block_guess_with, CountSets, Ilu1tOptions,
    PatternEstimate,
};
pub use matching::{
    max_weight_matching, transversal_product, verify_matching, MatchingError, MatchingReport,
    MatchingResult,
};
pub use ordering::{
    fill_reducing_ordering, fill_reducing_ordering_with, symbolic_cholesky_fill, OrderingBackend,
    OrderingError,
};
pub use pipeline::{
    build_pipeline_partition, BlockingFlags, PipelineConfig, PipelineError, PreprocessResult,
};
pub use sparse::{
    apply_matching_transform, compress_companion, expand_permutation, read_matrix_market,
    read_matrix_market_from, symmetric_permute, write_matrix_market, write_matrix_market_to,
    BlockPartition, DiagonalScaling, Layout, PermutationVector, SparseError, SparseMatrix,
};

use thiserror::Error;

/// End-to-end driver: preprocess with the given blocking flags, factorize,
/// and return a preconditioner acting on the original variable order.
pub fn build_preconditioner(
    a: &SparseMatrix,
    flags: &BlockingFlags,
    tau: f64,
    pipeline_config: &PipelineConfig,
    factor_config: &FactorConfig,
) -> Result<BlockFactorization, BuildError> {
    let (a_check, partition, preprocess) = build_pipeline_partition(a, flags, tau, pipeline_config)?;
    let mut cfg = factor_config.clone();
    cfg.drop_tau = tau;
    cfg.aggregate = flags.aggregate;
    let fact = factorize(&a_check, &partition, &cfg)?;
    Ok(fact.with_preprocess(preprocess))
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}
