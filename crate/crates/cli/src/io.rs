//! CSV and JSON layouts for datasets, truth, and fit outputs.

use crate::error::{CliError, Result};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use zinmf_core::simulate::ScenarioTruth;
use zinmf_core::{CountDataset, StudyData};

pub const INTERCEPT: &str = "intercept";

pub fn counts_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("study_{}_counts.csv", s + 1))
}

pub fn covariates_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("study_{}_covariates.csv", s + 1))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(path))?;
    w.write_record(header).map_err(CliError::csv(path))?;
    for row in rows {
        w.write_record(&row).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let header = r.headers().map_err(CliError::csv(path))?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        rows.push(record.map_err(CliError::csv(path))?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

/// A matrix with a name column and a header of column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<T> {
    pub corner: String,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    pub values: Array2<T>,
}

pub fn write_labeled<T: Display>(
    path: &Path,
    corner: &str,
    row_names: &[String],
    col_names: &[String],
    values: &Array2<T>,
) -> Result<()> {
    let header: Vec<String> = std::iter::once(corner.to_owned()).chain(col_names.iter().cloned()).collect();
    let rows = values
        .rows()
        .into_iter()
        .zip(row_names)
        .map(|(row, name)| std::iter::once(name.clone()).chain(row.iter().map(T::to_string)).collect());
    write_table(path, &header, rows)
}

fn parse<T: FromStr>(path: &Path, cell: &str) -> Result<T> {
    cell.trim().parse().map_err(|_| CliError::Data(format!("{}: cannot parse `{cell}`", path.display())))
}

pub fn read_labeled<T: FromStr + Clone>(path: &Path) -> Result<Labeled<T>> {
    let (header, rows) = read_table(path)?;
    let Some((corner, col_names)) = header.split_first() else {
        return Err(CliError::Data(format!("{}: empty header", path.display())));
    };
    let mut row_names = Vec::with_capacity(rows.len());
    let mut flat = Vec::with_capacity(rows.len() * col_names.len());
    for row in &rows {
        if row.len() != header.len() {
            return Err(CliError::Data(format!("{}: ragged row `{}`", path.display(), row[0])));
        }
        row_names.push(row[0].clone());
        for cell in &row[1..] {
            flat.push(parse(path, cell)?);
        }
    }
    let values = Array2::from_shape_vec((rows.len(), col_names.len()), flat).expect("row lengths checked");
    Ok(Labeled { corner: corner.clone(), row_names, col_names: col_names.to_vec(), values })
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

pub fn pattern_names(k: usize) -> Vec<String> {
    numbered("pattern_", k)
}

pub fn study_names(s: usize) -> Vec<String> {
    numbered("study_", s)
}

fn covariate_names(q: usize) -> Vec<String> {
    std::iter::once(INTERCEPT.to_owned()).chain(numbered("x", q.saturating_sub(1))).collect()
}

pub fn write_dataset(dir: &Path, data: &CountDataset) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for (s, study) in data.studies.iter().enumerate() {
        let path = counts_path(dir, s);
        write_labeled(&path, "variable", &study.variable_names, &study.subject_ids, &study.counts)?;
        written.push(path);
        let path = covariates_path(dir, s);
        let rows = study.covariates.rows().into_iter().map(|r| r.iter().map(f64::to_string).collect());
        write_table(&path, &covariate_names(study.num_covariates()), rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Reads `study_<s>_*.csv` for s = 1, 2, … until the next counts file is absent.
///
/// Returns the dataset, the files read, and warnings about prepended intercepts.
pub fn read_dataset(dir: &Path) -> Result<(CountDataset, Vec<PathBuf>, Vec<String>)> {
    let mut studies = Vec::new();
    let mut inputs = Vec::new();
    let mut warnings = Vec::new();
    while counts_path(dir, studies.len()).is_file() {
        let s = studies.len();
        let path = counts_path(dir, s);
        let counts: Labeled<u32> = read_labeled(&path)?;
        inputs.push(path);
        let path = covariates_path(dir, s);
        if !path.is_file() {
            return Err(CliError::Data(format!(
                "study {}: missing intercept/covariates file {}",
                s + 1,
                path.display()
            )));
        }
        let (header, rows) = read_table(&path)?;
        let mut flat = Vec::new();
        for row in &rows {
            if row.len() != header.len() {
                return Err(CliError::Data(format!("{}: ragged row", path.display())));
            }
            for cell in row {
                flat.push(parse::<f64>(&path, cell)?);
            }
        }
        let mut covariates = Array2::from_shape_vec((rows.len(), header.len()), flat).expect("row lengths checked");
        let has_intercept = covariates.ncols() > 0 && covariates.column(0).iter().all(|x| *x == 1.0);
        if !has_intercept {
            warnings.push(format!("study {}: intercept column absent; prepending one", s + 1));
            let mut with = Array2::ones((covariates.nrows(), covariates.ncols() + 1));
            with.slice_mut(ndarray::s![.., 1..]).assign(&covariates);
            covariates = with;
        }
        inputs.push(path);
        studies.push(StudyData {
            counts: counts.values,
            covariates,
            variable_names: counts.row_names,
            subject_ids: counts.col_names,
        });
    }
    if studies.is_empty() {
        return Err(CliError::Data(format!("{}: no study_1_counts.csv found", dir.display())));
    }
    Ok((CountDataset { studies }, inputs, warnings))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn bools_to_u8(m: &Array2<bool>) -> Array2<u8> {
    m.mapv(u8::from)
}

fn u8_to_bools(path: &Path, m: Array2<u8>) -> Result<Array2<bool>> {
    if m.iter().any(|v| *v > 1) {
        return Err(CliError::Data(format!("{}: expected 0/1 entries", path.display())));
    }
    Ok(m.mapv(|v| v == 1))
}

/// Writes the truth files under `dir`, named after `data`'s variables and subjects.
pub fn write_truth(dir: &Path, data: &CountDataset, truth: &ScenarioTruth) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let variables = &data.studies[0].variable_names;
    let patterns = pattern_names(truth.w_true.ncols());
    let mut written = Vec::new();

    let path = dir.join("w_true.csv");
    write_labeled(&path, "variable", variables, &patterns, &truth.w_true)?;
    written.push(path);
    let path = dir.join("sharing.csv");
    write_labeled(&path, "pattern", &patterns, &study_names(data.num_studies()), &bools_to_u8(&truth.sharing))?;
    written.push(path);
    for (s, study) in data.studies.iter().enumerate() {
        let path = dir.join(format!("study_{}_h_true.csv", s + 1));
        write_labeled(&path, "pattern", &patterns, &study.subject_ids, &truth.h_true[s])?;
        written.push(path);
        let path = dir.join(format!("study_{}_zero_mask.csv", s + 1));
        write_labeled(&path, "variable", variables, &study.subject_ids, &bools_to_u8(&truth.zero_mask[s]))?;
        written.push(path);
        if let Some(labels) = &truth.cluster_labels {
            let path = dir.join(format!("study_{}_labels.csv", s + 1));
            write_labeled(&path, "pattern", &patterns, &study.subject_ids, &labels[s])?;
            written.push(path);
        }
    }
    let path = dir.join("generator_config.json");
    write_json(&path, &truth.generator_config)?;
    written.push(path);
    Ok(written)
}

pub fn read_truth(dir: &Path) -> Result<ScenarioTruth> {
    let w_true = read_labeled::<f64>(&dir.join("w_true.csv"))?.values;
    let path = dir.join("sharing.csv");
    let sharing = u8_to_bools(&path, read_labeled(&path)?.values)?;
    let mut h_true = Vec::new();
    let mut zero_mask = Vec::new();
    let mut labels = Vec::new();
    for s in 0..sharing.ncols() {
        h_true.push(read_labeled(&dir.join(format!("study_{}_h_true.csv", s + 1)))?.values);
        let path = dir.join(format!("study_{}_zero_mask.csv", s + 1));
        zero_mask.push(u8_to_bools(&path, read_labeled(&path)?.values)?);
        let path = dir.join(format!("study_{}_labels.csv", s + 1));
        if path.is_file() {
            labels.push(read_labeled(&path)?.values);
        }
    }
    let cluster_labels = (labels.len() == sharing.ncols() && !labels.is_empty()).then_some(labels);
    let path = dir.join("generator_config.json");
    let generator_config = if path.is_file() { read_json(&path)? } else { serde_json::Value::Null };
    Ok(ScenarioTruth { w_true, h_true, zero_mask, sharing, cluster_labels, generator_config })
}
