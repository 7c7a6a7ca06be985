//! Per-chain fit files and their read-back.

use crate::error::{CliError, Result};
use crate::io::{pattern_names, read_labeled, read_table, study_names, write_labeled, write_table};
use ndarray::Array2;
use std::path::{Path, PathBuf};
use zinmf_core::{ChainOutput, CountDataset, SweepDiagnostics};

/// What evaluation needs from a fitted chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub w_median: Array2<f64>,
    pub h_median: Vec<Array2<f64>>,
    /// K×S.
    pub prevalence: Array2<f64>,
    /// Per draw, per study, K×N 0-based cluster labels.
    pub d_draws: Option<Vec<Vec<Array2<usize>>>>,
}

impl From<&ChainOutput> for FitSummary {
    fn from(chain: &ChainOutput) -> Self {
        let d_draws = chain.draws.iter().map(|d| d.d.clone()).collect::<Option<Vec<_>>>().filter(|v| !v.is_empty());
        Self {
            w_median: chain.summaries.w_median.clone(),
            h_median: chain.summaries.h_median.clone(),
            prevalence: chain.prevalence.clone(),
            d_draws,
        }
    }
}

pub fn chain_dir(out: &Path, chain_id: u64) -> PathBuf {
    out.join(format!("chain_{chain_id}"))
}

fn study_file(dir: &Path, s: usize, name: &str) -> PathBuf {
    dir.join(format!("study_{}_{name}.csv", s + 1))
}

fn strings<T: ToString>(values: impl IntoIterator<Item = T>) -> Vec<String> {
    values.into_iter().map(|v| v.to_string()).collect()
}

fn header(fixed: &[&str], rest: &[String]) -> Vec<String> {
    fixed.iter().map(|s| (*s).to_owned()).chain(rest.iter().cloned()).collect()
}

/// Writes every output of one chain into `dir`; returns the files written.
pub fn write_chain(
    dir: &Path,
    data: &CountDataset,
    chain: &ChainOutput,
    trace: &[SweepDiagnostics],
) -> Result<Vec<PathBuf>> {
    crate::io::create_dir(dir)?;
    let variables = &data.studies[0].variable_names;
    let (k_dim, s_dim) = chain.prevalence.dim();
    let patterns = pattern_names(k_dim);
    let mut files = Vec::new();
    let mut push = |p: PathBuf| {
        files.push(p.clone());
        p
    };

    write_labeled(&push(dir.join("w_median.csv")), "variable", variables, &patterns, &chain.summaries.w_median)?;
    write_labeled(&push(dir.join("prevalence.csv")), "pattern", &patterns, &study_names(s_dim), &chain.prevalence)?;
    for (s, study) in data.studies.iter().enumerate() {
        let path = push(study_file(dir, s, "h_median"));
        write_labeled(&path, "pattern", &patterns, &study.subject_ids, &chain.summaries.h_median[s])?;
    }
    let sm = &chain.summaries;
    let pi_rows = (0..s_dim).flat_map(|s| {
        (0..variables.len()).map(move |p| {
            vec![
                (s + 1).to_string(),
                variables[p].clone(),
                sm.pi_median[s][p].to_string(),
                sm.pi_lower[s][p].to_string(),
                sm.pi_upper[s][p].to_string(),
            ]
        })
    });
    write_table(
        &push(dir.join("pi_summary.csv")),
        &strings(["study", "variable", "median", "lower", "upper"]),
        pi_rows,
    )?;

    let draws = &chain.draws;
    if draws.iter().all(|d| d.w.is_some()) {
        let rows = draws.iter().flat_map(|d| {
            let w = d.w.as_ref().expect("checked");
            (0..w.nrows()).map(move |p| {
                std::iter::once(d.sweep.to_string())
                    .chain(std::iter::once(variables[p].clone()))
                    .chain(strings(w.row(p)))
                    .collect()
            })
        });
        write_table(&push(dir.join("draws_w.csv")), &header(&["sweep", "variable"], &patterns), rows)?;
    }
    if draws.iter().all(|d| d.pi.is_some()) {
        let rows = draws.iter().flat_map(|d| {
            let pi = d.pi.as_ref().expect("checked");
            pi.iter().enumerate().map(move |(s, v)| strings([d.sweep, s + 1]).into_iter().chain(strings(v)).collect())
        });
        write_table(&push(dir.join("draws_pi.csv")), &header(&["sweep", "study"], variables), rows)?;
    }
    if draws.iter().all(|d| d.h_summary.is_some()) {
        let rows = draws.iter().flat_map(|d| {
            let h = d.h_summary.as_ref().expect("checked");
            (0..s_dim).map(move |s| strings([d.sweep, s + 1]).into_iter().chain(strings(h.column(s))).collect())
        });
        write_table(&push(dir.join("draws_h_summary.csv")), &header(&["sweep", "study"], &patterns), rows)?;
    }
    if draws.iter().all(|d| d.theta.is_some()) {
        let levels: Vec<String> = (1..=chain.meta.truncation).map(|l| format!("cluster_{l}")).collect();
        let rows = draws.iter().flat_map(|d| {
            let theta = d.theta.as_ref().expect("checked");
            (0..k_dim).map(move |k| strings([d.sweep, k + 1]).into_iter().chain(strings(theta.row(k))).collect())
        });
        write_table(&push(dir.join("draws_theta.csv")), &header(&["sweep", "pattern"], &levels), rows)?;
    }
    for (s, study) in data.studies.iter().enumerate() {
        if draws.iter().all(|d| d.d.is_some()) {
            let rows = draws.iter().flat_map(|d| {
                let labels = &d.d.as_ref().expect("checked")[s];
                (0..k_dim).map(move |k| {
                    strings([d.sweep, k + 1]).into_iter().chain(strings(labels.row(k).iter().map(|l| l + 1))).collect()
                })
            });
            write_table(
                &push(study_file(dir, s, "draws_d")),
                &header(&["sweep", "pattern"], &study.subject_ids),
                rows,
            )?;
        }
        if draws.iter().all(|d| d.h.is_some()) {
            let rows = draws.iter().flat_map(|d| {
                let h = &d.h.as_ref().expect("checked")[s];
                (0..k_dim).map(move |k| strings([d.sweep, k + 1]).into_iter().chain(strings(h.row(k))).collect())
            });
            write_table(
                &push(study_file(dir, s, "draws_h")),
                &header(&["sweep", "pattern"], &study.subject_ids),
                rows,
            )?;
        }
    }
    let rows = trace.iter().map(|t| {
        vec![
            t.sweep.to_string(),
            t.log_joint.map_or_else(String::new, |v| v.to_string()),
            t.active_patterns.to_string(),
        ]
    });
    write_table(&push(dir.join("trace.csv")), &strings(["sweep", "log_joint", "active_patterns"]), rows)?;
    Ok(files)
}

fn read_label_draws(path: &Path, k_dim: usize) -> Result<Vec<Array2<usize>>> {
    let (header, rows) = read_table(path)?;
    let n = header.len().saturating_sub(2);
    if rows.len() % k_dim.max(1) != 0 {
        return Err(CliError::Data(format!("{}: row count is not a multiple of {k_dim}", path.display())));
    }
    let bad = || CliError::Data(format!("{}: malformed label row", path.display()));
    rows.chunks(k_dim)
        .map(|block| {
            let mut m = Array2::zeros((k_dim, n));
            for (k, row) in block.iter().enumerate() {
                if row.len() != n + 2 {
                    return Err(bad());
                }
                for (i, cell) in row[2..].iter().enumerate() {
                    let label: usize = cell.parse().map_err(|_| bad())?;
                    m[[k, i]] = label.checked_sub(1).ok_or_else(bad)?;
                }
            }
            Ok(m)
        })
        .collect()
}

pub fn read_chain(dir: &Path) -> Result<FitSummary> {
    let w_median = read_labeled(&dir.join("w_median.csv"))?.values;
    let prevalence: Array2<f64> = read_labeled(&dir.join("prevalence.csv"))?.values;
    let (k_dim, s_dim) = prevalence.dim();
    let mut h_median = Vec::with_capacity(s_dim);
    let mut per_study = Vec::with_capacity(s_dim);
    for s in 0..s_dim {
        h_median.push(read_labeled(&study_file(dir, s, "h_median"))?.values);
        let path = study_file(dir, s, "draws_d");
        if path.is_file() {
            per_study.push(read_label_draws(&path, k_dim)?);
        }
    }
    if per_study.iter().any(|d| d.len() != per_study[0].len()) {
        return Err(CliError::Data(format!("{}: studies store different draw counts", dir.display())));
    }
    let d_draws = (per_study.len() == s_dim && s_dim > 0).then(|| {
        let t = per_study[0].len();
        (0..t).map(|j| per_study.iter().map(|draws| draws[j].clone()).collect()).collect()
    });
    Ok(FitSummary { w_median, h_median, prevalence, d_draws })
}

/// Chain directories under a fit output, ordered by chain id.
pub fn chain_dirs(fit_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(fit_dir).map_err(CliError::io(fit_dir))? {
        let entry = entry.map_err(CliError::io(fit_dir))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_prefix("chain_")).and_then(|n| n.parse().ok()) {
            if entry.path().is_dir() {
                found.push((id, entry.path()));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Data(format!("{}: no chain_<id> directories", fit_dir.display())));
    }
    Ok(found)
}
