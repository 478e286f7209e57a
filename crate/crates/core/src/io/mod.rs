//! Checkpoints, experiment configs, dataset files and table output.

mod checkpoint;
mod config;
mod dataset;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorRecord, TensorRole, DTYPE};
pub use config::{
    load_config, parse_config, AblationConfig, DatasetConfig, ExperimentConfig, FactorizeConfig, FinetuneConfig,
    ModelConfig, PruneConfig, StudyConfig,
};
pub use dataset::{load_csv_dataset, load_dataset, write_csv_dataset, TaskKind};

/// Serializes rows to CSV text with a header derived from the field names.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::invalid(format!("csv serialization: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv serialization: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_text(path, &csv_string(rows)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes `text`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
