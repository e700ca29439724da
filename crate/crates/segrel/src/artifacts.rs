//! Structured-text artifacts: training log lines, generation lines and reports.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use segrel_core::eval::MetricReport;
use segrel_core::train::{InitKind, Variant};

use crate::config::{Precision, RunConfig};
use crate::error::{io_error, CliError};

/// One line per eval interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub step: u64,
    /// Mean training loss per target token over the interval (dropout on).
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    pub elapsed_s: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationLine {
    pub id: String,
    /// One text per target segment, in generation order.
    pub generated: Vec<String>,
    pub references: Vec<String>,
    pub config_hash: String,
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationLine>, CliError> {
    let file = fs::File::open(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GenerationLine =
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(g);
    }
    Ok(out)
}

/// Variant flags recorded with every score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub variant: Variant,
    pub init: InitKind,
    pub collapse_relations: bool,
    pub precision: Precision,
    /// How attention scores are scaled before the softmax.
    pub score_scaling: String,
}

impl VariantFlags {
    pub fn from_config(c: &RunConfig) -> Self {
        VariantFlags {
            variant: c.train.variant,
            init: c.train.init,
            collapse_relations: c.model.collapse_relations,
            precision: c.precision,
            score_scaling: "1/sqrt(head_dim)".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub config_hash: String,
    /// Absent when evaluate was given neither a checkpoint nor a config.
    pub flags: Option<VariantFlags>,
    pub examples: usize,
    pub metrics: Vec<MetricReport>,
}
