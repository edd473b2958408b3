//! Running (matrix, method, tau) cells and collecting records.
//!
//! `factor_time_s` covers the blocking-specific work (cosine grouping, the
//! ILU(1,tau) guess and the block factorization itself); matching and the
//! fill-reducing ordering run for every method alike and stay outside the
//! timed span, mirroring how the methods under comparison share their setup.
//! Each cell runs in a fresh state; `repeats` keeps the fastest repetition.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use bilu::{
    apply_matching_transform, compress_companion, cosine_blocks, expand_permutation, factorize,
    gmres, ilu1t_block_guess_with, max_weight_matching, read_matrix_market, symmetric_permute,
    BlockPartition, BlockingFlags, FactorConfig, GmresConfig, PermutationVector, PipelineConfig,
    PreprocessResult, SparseMatrix,
};

use crate::record::{RunRecord, RunStatus};

/// Everything a suite run needs besides the matrix list.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub methods: Vec<String>,
    pub taus: Vec<f64>,
    pub gmres: GmresConfig,
    pub factor: FactorConfig,
    pub pipeline: PipelineConfig,
    pub repeats: usize,
    pub jobs: usize,
    /// Right-hand side; all ones when absent.
    pub rhs: Option<Vec<f64>>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            methods: vec!["cip".into()],
            taus: vec![1e-2],
            gmres: GmresConfig::default(),
            factor: FactorConfig::default(),
            pipeline: PipelineConfig::default(),
            repeats: 1,
            jobs: 1,
            rhs: None,
        }
    }
}

/// Parse a corpus list file: one path per line, `#` comments and blank lines
/// skipped; relative paths resolve against the list file's directory.
pub fn read_corpus_list(path: impl AsRef<Path>) -> std::io::Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn matrix_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Phase timings of one preconditioner build.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimes {
    pub matching_s: f64,
    pub ordering_s: f64,
    /// cosine + ILU(1,tau) + factorization
    pub factor_s: f64,
}

/// Build the preconditioner for one method tag with phase timing.
pub fn timed_build(
    a: &SparseMatrix,
    flags: &BlockingFlags,
    tau: f64,
    pipeline: &PipelineConfig,
    factor_config: &FactorConfig,
) -> Result<(bilu::BlockFactorization, PhaseTimes), String> {
    let n = a.n_cols();
    let mut times = PhaseTimes::default();

    let t0 = Instant::now();
    let matching = max_weight_matching(a).map_err(|e| e.to_string())?;
    let a_hat = apply_matching_transform(
        a,
        &matching.row_scaling,
        &matching.col_scaling,
        &matching.perm,
    )
    .map_err(|e| e.to_string())?;
    times.matching_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let (a_tilde, partition, q) = if flags.cosine {
        let blocks = cosine_blocks(&a_hat, &pipeline.cosine);
        let a_tilde = symmetric_permute(&a_hat, &blocks.q).map_err(|e| e.to_string())?;
        (a_tilde, blocks.partition, blocks.q)
    } else {
        (
            a_hat,
            BlockPartition::scalar(n),
            PermutationVector::identity(n),
        )
    };
    times.factor_s += t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let companion = compress_companion(&a_tilde, &partition).map_err(|e| e.to_string())?;
    let p_b = bilu::fill_reducing_ordering_with(&companion, &pipeline.ordering)
        .map_err(|e| e.to_string())?;
    let (p, partition) = expand_permutation(&p_b, &partition).map_err(|e| e.to_string())?;
    let a_check = symmetric_permute(&a_tilde, &p).map_err(|e| e.to_string())?;
    times.ordering_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let partition = if flags.ilu1t {
        ilu1t_block_guess_with(&a_check, &partition, tau, &pipeline.ilu1t)
    } else {
        partition
    };
    let mut cfg = factor_config.clone();
    cfg.drop_tau = tau;
    cfg.aggregate = flags.aggregate;
    let fact = factorize(&a_check, &partition, &cfg).map_err(|e| e.to_string())?;
    times.factor_s += t0.elapsed().as_secs_f64();

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
    Ok((fact.with_preprocess(preprocess), times))
}

/// Run one benchmark cell on an already-loaded matrix.
pub fn run_cell(
    name: &str,
    a: &SparseMatrix,
    method: &str,
    tau: f64,
    opts: &SuiteOptions,
) -> RunRecord {
    let mut failed = |status: RunStatus| RunRecord {
        matrix: name.to_string(),
        method: method.to_string(),
        tau,
        status,
        factor_time_s: 0.0,
        solve_time_s: 0.0,
        iterations: 0,
        fill_ratio: 0.0,
        peak_mem_bytes: 0,
        perturbations: 0,
        n_blocks: 0,
        max_block: 0,
        mean_block: 0.0,
    };
    let flags: BlockingFlags = match method.parse() {
        Ok(f) => f,
        Err(_) => return failed(RunStatus::Error),
    };

    let mut best: Option<RunRecord> = None;
    for _ in 0..opts.repeats.max(1) {
        let (fact, times) = match timed_build(a, &flags, tau, &opts.pipeline, &opts.factor) {
            Ok(ok) => ok,
            Err(msg) => {
                let status = if msg.starts_with("breakdown") {
                    RunStatus::Breakdown
                } else {
                    RunStatus::Error
                };
                return failed(status);
            }
        };
        let b = match &opts.rhs {
            Some(v) => v.clone(),
            None => vec![1.0; a.n_rows()],
        };
        let t0 = Instant::now();
        let (_x, stats) = gmres(a, &b, |v| fact.apply(v), &opts.gmres);
        let solve_time_s = t0.elapsed().as_secs_f64();

        let part = fact.partition();
        let record = RunRecord {
            matrix: name.to_string(),
            method: method.to_string(),
            tau,
            status: if stats.converged {
                RunStatus::Ok
            } else {
                RunStatus::NoConvergence
            },
            factor_time_s: times.factor_s,
            solve_time_s,
            iterations: stats.iterations,
            fill_ratio: fact.stored_values() as f64 / a.nnz().max(1) as f64,
            peak_mem_bytes: fact.memory_bytes(),
            perturbations: fact.perturbation_count(),
            n_blocks: part.n_blocks(),
            max_block: part.max_size(),
            mean_block: part.mean_size(),
        };
        best = Some(match best.take() {
            None => record,
            Some(prev) if record.total_time() < prev.total_time() => record,
            Some(prev) => prev,
        });
    }
    best.expect("repeats >= 1")
}

/// Run the full (matrix x method x tau) grid. Per-run failures are recorded,
/// never abort the suite; unreadable matrices produce `error` records for
/// each requested cell.
pub fn run_suite(matrix_paths: &[PathBuf], opts: &SuiteOptions) -> Vec<RunRecord> {
    let mut cells: Vec<(PathBuf, String, f64)> = Vec::new();
    for path in matrix_paths {
        for m in &opts.methods {
            for &tau in &opts.taus {
                cells.push((path.clone(), m.clone(), tau));
            }
        }
    }
    let sink: Mutex<Vec<(usize, RunRecord)>> = Mutex::new(Vec::new());
    let next: Mutex<usize> = Mutex::new(0);
    let jobs = opts.jobs.max(1).min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    let i = *guard;
                    if i >= cells.len() {
                        break;
                    }
                    *guard += 1;
                    i
                };
                let (path, method, tau) = &cells[idx];
                let name = matrix_name(path);
                let record = match read_matrix_market(path) {
                    Ok(a) => run_cell(&name, &a, method, *tau, opts),
                    Err(_) => RunRecord {
                        matrix: name,
                        method: method.clone(),
                        tau: *tau,
                        status: RunStatus::Error,
                        factor_time_s: 0.0,
                        solve_time_s: 0.0,
                        iterations: 0,
                        fill_ratio: 0.0,
                        peak_mem_bytes: 0,
                        perturbations: 0,
                        n_blocks: 0,
                        max_block: 0,
                        mean_block: 0.0,
                    },
                };
                sink.lock().unwrap().push((idx, record));
            });
        }
    });

    let mut collected = sink.into_inner().unwrap();
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}
