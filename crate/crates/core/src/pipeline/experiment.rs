use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::metrics::dice;
use crate::volume::{MaskVolume, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub k: usize,
    pub seed: u64,
    pub dice: f64,
    pub tasks: usize,
    pub tasks_failed: usize,
    pub wall_time_s: f64,
}

/// Run the pipeline once per axis count in `ks` and score each result
/// against `truth` (resampled nearest-neighbour when grids differ).
pub fn experiment_transforms(
    v: &Volume,
    prompts: &[Polyline],
    base: &RunConfig,
    ks: &[usize],
    truth: &MaskVolume,
) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let cfg = RunConfig { k, min_axes: base.min_axes.map(|m| m.min(k)), ..base.clone() };
        let res = run_pipeline(v, prompts, &cfg)?;
        let gt = if truth.grid.matches(&res.mask.grid) {
            std::borrow::Cow::Borrowed(truth)
        } else {
            std::borrow::Cow::Owned(truth.resample_nearest(&res.mask.grid))
        };
        rows.push(ExperimentRow {
            k,
            seed: cfg.seed,
            dice: dice(&res.mask, &gt)?,
            tasks: res.stats.tasks_total,
            tasks_failed: res.stats.tasks_failed,
            wall_time_s: res.stats.timings.total,
        });
    }
    Ok(rows)
}

pub fn write_experiment_csv(rows: &[ExperimentRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
