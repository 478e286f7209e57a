//! CSV datasets: a header row, feature columns, and a final `label` column.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{generate_synthetic, Dataset, Targets, Task};

use super::config::DatasetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

struct RawCsv {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<f64>,
}

fn read_csv(path: &Path) -> Result<RawCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let csv_err = |line: usize, column: usize, reason: String| Error::Csv { line, column, reason };
    let header = reader.headers().map_err(|e| csv_err(1, 0, e.to_string()))?.clone();
    if header.len() < 2 || header.get(header.len() - 1).map(str::trim) != Some("label") {
        return Err(csv_err(1, header.len(), "last column must be named `label`".into()));
    }
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(csv_err(
                line,
                record.len(),
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                csv_err(
                    line,
                    c + 1,
                    format!("`{field}` in column `{}` is not a number", &header[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_err(line, c + 1, format!("non-finite value `{field}`")));
            }
            if c < dim {
                features.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(csv_err(1, 0, "no data rows".into()));
    }
    Ok(RawCsv { features, dim, labels })
}

fn to_dataset(raw: RawCsv, task: Task) -> Result<Dataset> {
    let n = raw.labels.len();
    let features = Matrix::from_vec(n, raw.dim, raw.features)?;
    let targets = match task {
        Task::Classification { .. } => Targets::Classes(raw.labels.iter().map(|&v| v as usize).collect()),
        Task::Regression => Targets::Values(raw.labels),
    };
    Dataset::new(features, targets, task)
}

fn class_labels_valid(path: &Path, raw: &RawCsv) -> Result<usize> {
    let mut max = 0usize;
    for (i, &v) in raw.labels.iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Csv {
                line: i + 2,
                column: raw.dim + 1,
                reason: format!("class label {v} in {} is not a non-negative integer", path.display()),
            });
        }
        max = max.max(v as usize);
    }
    Ok(max + 1)
}

/// Loads one or two CSV files as `(train, test)` with a shared task.
pub fn load_csv_dataset(train: &Path, test: Option<&Path>, kind: TaskKind) -> Result<(Dataset, Option<Dataset>)> {
    let raw_train = read_csv(train)?;
    let raw_test = test.map(read_csv).transpose()?;
    if let Some(t) = &raw_test {
        if t.dim != raw_train.dim {
            return Err(Error::invalid(format!(
                "train has {} features but test has {}",
                raw_train.dim, t.dim
            )));
        }
    }
    let task = match kind {
        TaskKind::Regression => Task::Regression,
        TaskKind::Classification => {
            let mut k = class_labels_valid(train, &raw_train)?;
            if let (Some(t), Some(p)) = (&raw_test, test) {
                k = k.max(class_labels_valid(p, t)?);
            }
            Task::Classification { num_classes: k.max(2) }
        }
    };
    Ok((
        to_dataset(raw_train, task)?,
        raw_test.map(|r| to_dataset(r, task)).transpose()?,
    ))
}

/// Materializes the `(train, test)` pair described by a dataset config.
pub fn load_dataset(cfg: &DatasetConfig) -> Result<(Dataset, Dataset)> {
    match cfg {
        DatasetConfig::Synthetic { spec, seed, test_n } => {
            let n = spec.n();
            let all = generate_synthetic(&spec.with_n(n + test_n), *seed)?;
            all.split_at(n)
        }
        DatasetConfig::Csv {
            train,
            test,
            task,
            test_fraction,
        } => {
            let (tr, te) = load_csv_dataset(train, test.as_deref(), *task)?;
            match te {
                Some(te) => Ok((tr, te)),
                None => {
                    let n_test = ((tr.len() as f64) * test_fraction).round() as usize;
                    if n_test == 0 || n_test >= tr.len() {
                        return Err(Error::invalid(format!("cannot hold out {n_test} of {} rows", tr.len())));
                    }
                    tr.split_at(tr.len() - n_test)
                }
            }
        }
    }
}

/// Writes a dataset in the loader's CSV format.
pub fn write_csv_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    let header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    text.push_str(&header.join(","));
    text.push_str(",label\n");
    let (x, y) = data.select(&(0..data.len()).collect::<Vec<_>>());
    for r in 0..data.len() {
        let fields: Vec<String> = x.row(r).iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&fields.join(","));
        match &y {
            Targets::Classes(c) => text.push_str(&format!(",{}\n", c[r])),
            Targets::Values(v) => text.push_str(&format!(",{:?}\n", v[r])),
        }
    }
    super::write_text(path, &text)
}
