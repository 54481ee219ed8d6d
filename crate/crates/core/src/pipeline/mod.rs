//! End-to-end orchestration: resample, window, slice, segment, vote, mesh.

mod config;
mod experiment;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Segmenter;
use crate::error::{Error, Result};
use crate::geometry::{axis_set, Polyline};
use crate::recompose::{marching_cubes, mask_to_points, postprocess, threshold_votes, Mesh, VoteGrid};
use crate::slicing::{plan, TaskPlan};
use crate::volume::{resample_isotropic, window_normalize, Grid, MaskVolume, NormalizedVolume, Volume};

pub use config::RunConfig;
pub use experiment::{experiment_transforms, write_experiment_csv, ExperimentRow};

/// Wall time per stage, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub resample: f64,
    pub normalize: f64,
    pub schedule: f64,
    pub segment: f64,
    pub threshold: f64,
    pub postprocess: f64,
    pub mesh: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub tasks_total: usize,
    pub tasks_failed: usize,
    pub points_total: u64,
    pub points_dropped: u64,
    pub voxels: usize,
    pub timings: StageTimings,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub mask: MaskVolume,
    /// Empty when the mask is empty.
    pub mesh: Mesh,
    pub stats: RunStats,
}

/// Isotropic working volume and its windowed counterpart, shared by the
/// pipeline and by slice previews.
pub fn prepare(v: &Volume, window: (f64, f64)) -> Result<(Volume, NormalizedVolume)> {
    let iso = resample_isotropic(v);
    let nv = window_normalize(&iso, window.0, window.1)?;
    Ok((iso, nv))
}

pub fn run_pipeline(v: &Volume, prompts: &[Polyline], cfg: &RunConfig) -> Result<RunResult> {
    run_pipeline_with_progress(v, prompts, cfg, &|_, _| {})
}

/// As [`run_pipeline`], reporting `(tasks_done, tasks_total)` as slices finish.
pub fn run_pipeline_with_progress(
    v: &Volume,
    prompts: &[Polyline],
    cfg: &RunConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<RunResult> {
    cfg.validate()?;
    let backend = cfg.backend.build(cfg.seed)?;
    run_pipeline_with_backend(v, prompts, cfg, backend.as_ref(), progress)
}

/// As [`run_pipeline_with_progress`] with a caller-supplied segmenter in
/// place of `cfg.backend`.
pub fn run_pipeline_with_backend(
    v: &Volume,
    prompts: &[Polyline],
    cfg: &RunConfig,
    backend: &dyn Segmenter,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<RunResult> {
    cfg.validate()?;
    for p in prompts {
        p.validate()?;
    }
    let started = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let iso = resample_isotropic(v);
    timings.resample = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let nv = window_normalize(&iso, cfg.window.0, cfg.window.1)?;
    drop(iso);
    timings.normalize = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let axes = axis_set(cfg.k)?;
    let plans = plan(&nv.grid, &axes, prompts, cfg.stride)?;
    timings.schedule = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let tasks_total = plans.len();
    let (votes, failed) = segment_and_vote(&nv, plans, backend, cfg, progress)?;
    timings.segment = t.elapsed().as_secs_f64();

    if tasks_total > 0 && failed * 2 > tasks_total {
        return Err(Error::BackendUnavailable(format!("{failed} of {tasks_total} slice tasks failed")));
    }

    let t = Instant::now();
    let mask = threshold_votes(&votes, cfg.min_axes(), cfg.min_hits)?;
    timings.threshold = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mask = postprocess(&mask, cfg.postprocess)?;
    timings.postprocess = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mesh = match marching_cubes(&mask) {
        Ok(m) => m,
        Err(Error::EmptyMask) => {
            log::warn!("segmentation is empty; no mesh produced");
            Mesh::default()
        }
        Err(e) => return Err(e),
    };
    timings.mesh = t.elapsed().as_secs_f64();

    let mask = if cfg.original_grid && !v.grid.matches(&mask.grid) { mask.resample_nearest(&v.grid) } else { mask };
    timings.total = started.elapsed().as_secs_f64();
    let stats = RunStats {
        tasks_total,
        tasks_failed: failed,
        points_total: votes.points_total(),
        points_dropped: votes.points_dropped(),
        voxels: mask.count(),
        timings,
    };
    log::info!(
        "run finished: {} tasks ({} failed), {} voxels in {:.2}s",
        stats.tasks_total,
        stats.tasks_failed,
        stats.voxels,
        stats.timings.total
    );
    Ok(RunResult { mask, mesh, stats })
}

/// Render, segment and splat every task. Tasks are dealt round-robin onto
/// one partial vote grid per worker; partial grids merge by addition, so the
/// result does not depend on the worker count or on scheduling.
fn segment_and_vote(
    nv: &NormalizedVolume,
    plans: Vec<TaskPlan>,
    backend: &dyn Segmenter,
    cfg: &RunConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<(VoteGrid, usize)> {
    let workers = cfg.workers.unwrap_or_else(num_threads).max(1);
    let total = plans.len();
    let done = AtomicUsize::new(0);
    let mut groups: Vec<Vec<TaskPlan>> = (0..workers.min(total.max(1))).map(|_| Vec::new()).collect();
    let n_groups = groups.len();
    for (i, p) in plans.into_iter().enumerate() {
        groups[i % n_groups].push(p);
    }
    let grid: &Grid = &nv.grid;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let partials: Vec<Result<(VoteGrid, usize)>> = pool.install(|| {
        groups
            .into_par_iter()
            .map(|group| {
                let mut votes = VoteGrid::new(grid.clone(), cfg.k)?;
                let mut failed = 0;
                for p in group {
                    let task = p.render(nv);
                    match backend.segment(&task) {
                        Ok(mask) => votes.accumulate(&mask_to_points(&mask, task.frame())?),
                        Err(e @ (Error::BackendUnavailable(_) | Error::ProtocolError(_))) => {
                            log::warn!("slice axis {} index {} failed: {e}", task.frame().axis_id, task.frame().index);
                            failed += 1;
                        }
                        Err(e) => return Err(e),
                    }
                    progress(done.fetch_add(1, Ordering::Relaxed) + 1, total);
                }
                Ok((votes, failed))
            })
            .collect()
    });
    let mut merged = VoteGrid::new(grid.clone(), cfg.k)?;
    let mut failed = 0;
    for part in partials {
        let (g, f) = part?;
        merged.merge(&g)?;
        failed += f;
    }
    Ok((merged, failed))
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
