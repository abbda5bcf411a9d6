//! Aggregates trace files into plot-ready regret curves.
//!
//! Input is any set of online trace files over the same horizon — typically
//! the per-seed traces of one grid point. Output has exactly one row per
//! checkpoint with the across-trace mean of the average regret and a 95%
//! normal-approximation confidence halfwidth.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ranklearn::metrics;

use crate::experiment::read_trace;

/// One output row: `t, mean_avg_regret, ci_halfwidth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotRow {
    pub t: usize,
    pub mean_avg_regret: f64,
    pub ci_halfwidth: f64,
}

/// Computes the checkpoint curve for a set of traces. All traces must share
/// one horizon; the average regret at checkpoint `t` is the cumulative
/// external regret through `t` divided by `t`.
pub fn plot_rows(trace_paths: &[impl AsRef<Path>]) -> Result<Vec<PlotRow>> {
    if trace_paths.is_empty() {
        bail!("need at least one trace file");
    }
    let mut curves: Vec<Vec<f64>> = Vec::with_capacity(trace_paths.len());
    let mut horizon = 0usize;
    for (index, path) in trace_paths.iter().enumerate() {
        let path = path.as_ref();
        let trace =
            read_trace(path).with_context(|| format!("loading trace {}", path.display()))?;
        if trace.is_empty() {
            bail!("trace {} is empty", path.display());
        }
        if index == 0 {
            horizon = trace.len();
        } else if trace.len() != horizon {
            bail!(
                "trace {} has {} steps, expected {horizon}",
                path.display(),
                trace.len()
            );
        }
        curves.push(trace.cumulative_external);
    }

    let n = curves.len() as f64;
    Ok(metrics::checkpoints(horizon)
        .into_iter()
        .map(|t| {
            let values: Vec<f64> = curves.iter().map(|curve| curve[t - 1] / t as f64).collect();
            let mean = values.iter().sum::<f64>() / n;
            let ci_halfwidth = if values.len() < 2 {
                0.0
            } else {
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                let sd = (ss / (n - 1.0)).sqrt();
                1.96 * sd / n.sqrt()
            };
            PlotRow {
                t,
                mean_avg_regret: mean,
                ci_halfwidth,
            }
        })
        .collect())
}

/// Writes the checkpoint curve as `t,mean_avg_regret,ci_halfwidth`.
pub fn emit_plot_data(trace_paths: &[impl AsRef<Path>], output: &Path) -> Result<()> {
    use std::io::Write;
    let rows = plot_rows(trace_paths)?;
    let file =
        std::fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "t,mean_avg_regret,ci_halfwidth")?;
    for row in rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e}",
            row.t, row.mean_avg_regret, row.ci_halfwidth
        )?;
    }
    out.flush()?;
    Ok(())
}
