//! Dolan-More performance profiles.
//!
//! For a statistic `t_ms` of method `m` on problem `s` and the per-problem
//! best `t~_s = min_m t_ms`, the profile value
//! `p_m(alpha) = |{s : t_ms <= alpha * t~_s}| / |S|` is the fraction of
//! problems solved within factor `alpha` of the best method. Curves are
//! sampled at every distinct breakpoint ratio plus `alpha = 1`; failed cells
//! carry an infinite statistic so they never win the minimum and never
//! satisfy the indicator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::record::{CsvError, RunRecord};

/// Which column of the records feeds the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Time,
    Memory,
    TimeXMemory,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" => Ok(Statistic::Time),
            "memory" => Ok(Statistic::Memory),
            "time_x_memory" => Ok(Statistic::TimeXMemory),
            other => Err(format!(
                "unknown metric `{other}` (expected time, memory or time_x_memory)"
            )),
        }
    }
}

impl Statistic {
    fn of(&self, r: &RunRecord) -> f64 {
        if !r.status.is_ok() {
            return f64::INFINITY;
        }
        match self {
            Statistic::Time => r.total_time(),
            Statistic::Memory => r.peak_mem_bytes as f64,
            Statistic::TimeXMemory => r.total_time() * r.peak_mem_bytes as f64,
        }
    }
}

/// Profile curve of one method, sampled at all breakpoint ratios.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    pub method: String,
    /// `(alpha, p_m(alpha))` with alpha ascending and p non-decreasing.
    pub points: Vec<(f64, f64)>,
}

/// Reduce a multi-tau sweep to the best-tau record per (matrix, method):
/// minimal total time among converged runs, or one failed representative
/// when none converged.
pub fn best_tau_records(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut groups: BTreeMap<(String, String), RunRecord> = BTreeMap::new();
    for r in records {
        let key = (r.matrix.clone(), r.method.clone());
        match groups.get_mut(&key) {
            None => {
                groups.insert(key, r.clone());
            }
            Some(cur) => {
                let better = match (cur.status.is_ok(), r.status.is_ok()) {
                    (true, true) => r.total_time() < cur.total_time(),
                    (false, true) => true,
                    (true, false) => false,
                    (false, false) => false,
                };
                if better {
                    *cur = r.clone();
                }
            }
        }
    }
    groups.into_values().collect()
}

/// Build one profile curve per method. Problems failed by every method are
/// dropped from the problem set with a warning on stderr.
pub fn performance_profile(records: &[RunRecord], stat: Statistic) -> Vec<ProfileCurve> {
    let mut methods: Vec<String> = Vec::new();
    let mut matrices: Vec<String> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !matrices.contains(&r.matrix) {
            matrices.push(r.matrix.clone());
        }
    }
    // t[m][s], missing cells count as failed
    let mut t = vec![vec![f64::INFINITY; matrices.len()]; methods.len()];
    for r in records {
        let mi = methods.iter().position(|m| *m == r.method).unwrap();
        let si = matrices.iter().position(|s| *s == r.matrix).unwrap();
        t[mi][si] = t[mi][si].min(stat.of(r));
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut best: Vec<f64> = Vec::new();
    for si in 0..matrices.len() {
        let b = (0..methods.len()).map(|mi| t[mi][si]).fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            kept.push(si);
            best.push(b);
        } else {
            eprintln!(
                "warning: `{}` failed for every method; dropped from the profile",
                matrices[si]
            );
        }
    }

    let mut alphas: Vec<f64> = vec![1.0];
    for mi in 0..methods.len() {
        for (pos, &si) in kept.iter().enumerate() {
            let ratio = t[mi][si] / best[pos];
            if ratio.is_finite() {
                alphas.push(ratio);
            }
        }
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let total = kept.len().max(1) as f64;
    methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let points = alphas
                .iter()
                .map(|&alpha| {
                    let hits = kept
                        .iter()
                        .enumerate()
                        .filter(|(pos, &si)| t[mi][si] <= alpha * best[*pos])
                        .count();
                    (alpha, hits as f64 / total)
                })
                .collect();
            ProfileCurve {
                method: method.clone(),
                points,
            }
        })
        .collect()
}

/// Write curves as `method,alpha,p` CSV.
pub fn write_profile(curves: &[ProfileCurve], w: impl Write) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "alpha", "p"])?;
    for c in curves {
        for &(alpha, p) in &c.points {
            wtr.write_record([c.method.as_str(), &format!("{alpha}"), &format!("{p}")])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Read curves back from `method,alpha,p` CSV.
pub fn read_profile(r: impl Read) -> Result<Vec<ProfileCurve>, CsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut curves: Vec<ProfileCurve> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let method = rec.get(0).unwrap_or_default().to_string();
        let alpha: f64 = rec.get(1).unwrap_or_default().parse().unwrap_or(f64::NAN);
        let p: f64 = rec.get(2).unwrap_or_default().parse().unwrap_or(f64::NAN);
        match curves.last_mut() {
            Some(c) if c.method == method => c.points.push((alpha, p)),
            _ => curves.push(ProfileCurve {
                method,
                points: vec![(alpha, p)],
            }),
        }
    }
    Ok(curves)
}

/// Check the structural invariants of a curve: alphas ascending, p in [0,1]
/// and non-decreasing.
pub fn curve_is_valid(c: &ProfileCurve) -> bool {
    c.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1)
        && c.points.iter().all(|&(a, p)| a >= 1.0 && (0.0..=1.0).contains(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RunStatus;

    fn rec(matrix: &str, method: &str, time: f64, ok: bool) -> RunRecord {
        RunRecord {
            matrix: matrix.into(),
            method: method.into(),
            tau: 1e-2,
            status: if ok { RunStatus::Ok } else { RunStatus::NoConvergence },
            factor_time_s: time,
            solve_time_s: 0.0,
            iterations: 1,
            fill_ratio: 1.0,
            peak_mem_bytes: 100,
            perturbations: 0,
            n_blocks: 1,
            max_block: 1,
            mean_block: 1.0,
        }
    }

    #[test]
    fn hand_example_two_methods() {
        // m1: [1, 2], m2: [2, 2] -> p_m1(1) = 1.0, p_m2(1) = 0.5, p_m2(2) = 1.0
        let records = vec![
            rec("s1", "m1", 1.0, true),
            rec("s2", "m1", 2.0, true),
            rec("s1", "m2", 2.0, true),
            rec("s2", "m2", 2.0, true),
        ];
        let curves = performance_profile(&records, Statistic::Time);
        let m1 = curves.iter().find(|c| c.method == "m1").unwrap();
        let m2 = curves.iter().find(|c| c.method == "m2").unwrap();
        let at = |c: &ProfileCurve, alpha: f64| {
            c.points
                .iter()
                .find(|(a, _)| *a == alpha)
                .map(|&(_, p)| p)
                .unwrap()
        };
        assert_eq!(at(m1, 1.0), 1.0);
        assert_eq!(at(m2, 1.0), 0.5);
        assert_eq!(at(m2, 2.0), 1.0);
    }

    #[test]
    fn single_method_all_solved_is_flat_one() {
        let records = vec![rec("a", "m", 3.0, true), rec("b", "m", 5.0, true)];
        let curves = performance_profile(&records, Statistic::Time);
        assert_eq!(curves.len(), 1);
        assert!(curves[0].points.iter().all(|&(_, p)| p == 1.0));
    }

    #[test]
    fn failures_cap_the_limit() {
        let records = vec![
            rec("a", "m", 1.0, true),
            rec("b", "m", 1.0, true),
            rec("c", "m", 1.0, true),
            rec("d", "m", 1.0, false),
            // second method so matrix d is not dropped entirely
            rec("a", "o", 2.0, true),
            rec("b", "o", 2.0, true),
            rec("c", "o", 2.0, true),
            rec("d", "o", 2.0, true),
        ];
        let curves = performance_profile(&records, Statistic::Time);
        let m = curves.iter().find(|c| c.method == "m").unwrap();
        let last = m.points.last().unwrap().1;
        assert_eq!(last, 0.75);
    }

    #[test]
    fn all_failed_matrix_is_dropped() {
        let records = vec![
            rec("a", "m", 1.0, true),
            rec("a", "o", 2.0, true),
            rec("z", "m", 1.0, false),
            rec("z", "o", 1.0, false),
        ];
        let curves = performance_profile(&records, Statistic::Time);
        for c in &curves {
            // only matrix `a` remains
            assert!(c.points.iter().all(|&(_, p)| p == 0.0 || p == 1.0));
            assert_eq!(c.points.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn ratio_invariance_under_common_scaling() {
        let base = vec![
            rec("a", "m1", 1.0, true),
            rec("a", "m2", 3.0, true),
            rec("b", "m1", 4.0, true),
            rec("b", "m2", 2.0, true),
        ];
        let mut scaled = base.clone();
        for r in scaled.iter_mut().filter(|r| r.matrix == "a") {
            r.factor_time_s *= 77.0;
        }
        let c1 = performance_profile(&base, Statistic::Time);
        let c2 = performance_profile(&scaled, Statistic::Time);
        for (a, b) in c1.iter().zip(&c2) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.points, b.points);
        }
    }

    #[test]
    fn best_tau_prefers_fastest_converged() {
        let mut r1 = rec("a", "m", 5.0, true);
        r1.tau = 1e-1;
        let mut r2 = rec("a", "m", 2.0, true);
        r2.tau = 1e-3;
        let mut r3 = rec("a", "m", 1.0, false);
        r3.tau = 1e-2;
        let best = best_tau_records(&[r1, r2, r3]);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].tau, 1e-3);
    }

    #[test]
    fn profile_csv_round_trip() {
        let records = vec![
            rec("s1", "m1", 1.0, true),
            rec("s2", "m1", 2.0, true),
            rec("s1", "m2", 2.0, true),
            rec("s2", "m2", 2.0, true),
        ];
        let curves = performance_profile(&records, Statistic::Time);
        let mut buf = Vec::new();
        write_profile(&curves, &mut buf).unwrap();
        let back = read_profile(&buf[..]).unwrap();
        assert_eq!(back.len(), curves.len());
        for (a, b) in curves.iter().zip(&back) {
            assert_eq!(a.method, b.method);
            assert_eq!(a.points.len(), b.points.len());
            for (pa, pb) in a.points.iter().zip(&b.points) {
                assert_eq!(pa, pb);
            }
        }
    }
}
