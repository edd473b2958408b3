//! Benchmark run records and their CSV schema.
//!
//! The CSV header is fixed:
//! `matrix,method,tau,status,factor_time_s,solve_time_s,iterations,fill_ratio,peak_mem_bytes,perturbations,n_blocks,max_block,mean_block`

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Breakdown,
    NoConvergence,
    Error,
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// One (matrix, method, tau) benchmark cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub matrix: String,
    pub method: String,
    pub tau: f64,
    pub status: RunStatus,
    pub factor_time_s: f64,
    pub solve_time_s: f64,
    pub iterations: usize,
    pub fill_ratio: f64,
    pub peak_mem_bytes: usize,
    pub perturbations: usize,
    pub n_blocks: usize,
    pub max_block: usize,
    pub mean_block: f64,
}

impl RunRecord {
    pub fn total_time(&self) -> f64 {
        self.factor_time_s + self.solve_time_s
    }

    /// One `key=value` line, the `solve` subcommand's output format.
    pub fn key_value_line(&self) -> String {
        format!(
            "matrix={} method={} tau={:e} status={} factor_time_s={:.6} solve_time_s={:.6} iterations={} fill_ratio={:.4} peak_mem_bytes={} perturbations={} n_blocks={} max_block={} mean_block={:.4}",
            self.matrix,
            self.method,
            self.tau,
            match self.status {
                RunStatus::Ok => "ok",
                RunStatus::Breakdown => "breakdown",
                RunStatus::NoConvergence => "no_convergence",
                RunStatus::Error => "error",
            },
            self.factor_time_s,
            self.solve_time_s,
            self.iterations,
            self.fill_ratio,
            self.peak_mem_bytes,
            self.perturbations,
            self.n_blocks,
            self.max_block,
            self.mean_block,
        )
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_records(records: &[RunRecord], w: impl Write) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_records_path(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), CsvError> {
    let f = std::fs::File::create(path)?;
    write_records(records, std::io::BufWriter::new(f))
}

pub fn read_records(r: impl Read) -> Result<Vec<RunRecord>, CsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn read_records_path(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, CsvError> {
    let f = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(f))
}
