//! Turns raw model-score logs into learner-ready utility sequences.
//!
//! Input is a CSV with header `step,<model>,<model>,...` and one row per
//! step. All score cells across all models are rescaled by a single affine
//! map onto `[-1, 1]`, so relative gaps between models are preserved, and a
//! constant zero-utility reference column is appended as the last action —
//! pairwise ranking feedback only identifies utility differences, and the
//! reference pins the scale.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ranklearn::environments::UtilitySequence;

/// A rescaled score log: utilities plus the map that produced them.
#[derive(Debug, Clone)]
pub struct ScoreDataset {
    /// Column names from the input header, in order. The appended reference
    /// action has index `model_names.len()` and no name of its own.
    pub model_names: Vec<String>,
    /// The affine map applied to every raw score: `u = scale * x + offset`.
    pub scale: f64,
    pub offset: f64,
    /// Utilities per step, one extra all-zero reference column at the end.
    pub sequence: UtilitySequence,
}

impl ScoreDataset {
    /// Total action count, reference included.
    pub fn action_count(&self) -> usize {
        self.model_names.len() + 1
    }
}

/// Reads and rescales a score CSV. Errors on ragged rows, non-numeric or
/// non-finite cells, fewer than two model columns, or an empty body.
pub fn ingest_scores(path: &Path) -> Result<ScoreDataset> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening score file {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);

    let headers = reader.headers().context("reading score header")?.clone();
    if headers.is_empty() || headers.get(0) != Some("step") {
        bail!("score files start with a `step` column");
    }
    let model_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if model_names.len() < 2 {
        bail!("need at least two model columns, got {}", model_names.len());
    }

    let mut raw: Vec<Vec<f64>> = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading score row {}", index + 1))?;
        if record.len() != model_names.len() + 1 {
            bail!(
                "row {}: expected {} cells, got {}",
                index + 1,
                model_names.len() + 1,
                record.len()
            );
        }
        let row: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|cell| {
                let value: f64 = cell
                    .trim()
                    .parse()
                    .with_context(|| format!("row {}: bad score `{cell}`", index + 1))?;
                if !value.is_finite() {
                    bail!("row {}: non-finite score `{cell}`", index + 1);
                }
                Ok(value)
            })
            .collect::<Result<_>>()?;
        raw.push(row);
    }
    if raw.is_empty() {
        bail!("score file has no data rows");
    }

    // One global affine map: min -> -1, max -> +1. A constant dataset has no
    // gaps to preserve, so it just shifts onto the reference level.
    let min = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let max = raw
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (scale, offset) = if max > min {
        (2.0 / (max - min), -(min + max) / (max - min))
    } else {
        (1.0, -min)
    };

    let vectors: Vec<Vec<f64>> = raw
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|x| (scale * x + offset).clamp(-1.0, 1.0))
                .chain(std::iter::once(0.0))
                .collect()
        })
        .collect();

    Ok(ScoreDataset {
        model_names,
        scale,
        offset,
        sequence: UtilitySequence::new(vectors)?,
    })
}

/// Writes the rescaled sequence and a small metadata file next to it.
///
/// `sequence.csv` is readable by the sequence loader; `metadata.csv` records
/// the affine map and the column names so utilities can be traced back to
/// raw scores.
pub fn write_ingest_outputs(dataset: &ScoreDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    ranklearn::environments::write_sequence(&dir.join("sequence.csv"), &dataset.sequence)?;

    let mut metadata = String::new();
    metadata.push_str("key,value\n");
    metadata.push_str(&format!("scale,{:.16e}\n", dataset.scale));
    metadata.push_str(&format!("offset,{:.16e}\n", dataset.offset));
    metadata.push_str(&format!("models,{}\n", dataset.model_names.join(";")));
    metadata.push_str(&format!("reference_action,{}\n", dataset.model_names.len()));
    metadata.push_str(&format!("steps,{}\n", dataset.sequence.len()));
    std::fs::write(dir.join("metadata.csv"), metadata).context("writing metadata.csv")?;
    Ok(())
}
