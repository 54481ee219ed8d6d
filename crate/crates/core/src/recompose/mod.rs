//! From per-slice masks back to a 3D mask and surface.
//!
//! Mask pixels become world-space points ([`mask_to_points`]); each point is
//! splatted into a [`VoteGrid`] over the footprint its pixel and slab cover,
//! recording which axes saw the voxel. [`threshold_votes`] keeps voxels seen by
//! enough distinct axes, which removes errors made on isolated slices.

mod marching_cubes;
mod mesh;
mod postprocess;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::backends::Mask2D;
use crate::error::{Error, Result};
use crate::geometry::{SliceFrame, Vec3};
use crate::volume::{Grid, MaskVolume};

pub use marching_cubes::{marching_cubes, marching_cubes_raw, SMOOTH_ITERATIONS, SMOOTH_LAMBDA, SMOOTH_MU};
pub use mesh::{export_mesh, read_stl, Mesh, MeshFormat};
pub use postprocess::{close, label_components_26, largest_component, postprocess, PostprocessFlags};

/// World-space points from one slice mask, plus the frame data needed to splat them.
#[derive(Clone, Debug, PartialEq)]
pub struct PointBatch {
    pub points: Vec<Vec3>,
    pub axis_id: usize,
    pub slab: f64,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub pitch: f64,
}

/// One point per set pixel, at the pixel centre.
pub fn mask_to_points(mask: &Mask2D, frame: &SliceFrame) -> Result<PointBatch> {
    if mask.width != frame.width || mask.height != frame.height {
        return Err(Error::GridMismatch(format!(
            "mask {}x{} vs frame {}x{}",
            mask.width, mask.height, frame.width, frame.height
        )));
    }
    let points = mask
        .bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b != 0)
        .map(|(o, _)| frame.pixel_to_world((o % mask.width) as f64, (o / mask.width) as f64))
        .collect();
    Ok(PointBatch {
        points,
        axis_id: frame.axis_id,
        slab: frame.slab,
        normal: frame.normal,
        u: frame.u,
        v: frame.v,
        pitch: frame.pitch,
    })
}

/// Per-voxel hit counts and axis-support bitsets on an isotropic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteGrid {
    grid: Grid,
    k: usize,
    hits: Vec<u16>,
    support: Vec<u16>,
    points_total: u64,
    points_dropped: u64,
}

impl VoteGrid {
    pub fn new(grid: Grid, k: usize) -> Result<Self> {
        if !grid.is_isotropic() {
            return Err(Error::GridMismatch("vote grid must be isotropic".into()));
        }
        if k == 0 || k > 16 {
            return Err(Error::InvalidConfig(format!("axis count {k}")));
        }
        let n = grid.len();
        Ok(VoteGrid { grid, k, hits: vec![0; n], support: vec![0; n], points_total: 0, points_dropped: 0 })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hits(&self) -> &[u16] {
        &self.hits
    }

    pub fn support(&self) -> &[u16] {
        &self.support
    }

    pub fn points_total(&self) -> u64 {
        self.points_total
    }

    /// Points whose footprint touched no voxel of the grid.
    pub fn points_dropped(&self) -> u64 {
        self.points_dropped
    }

    /// Elementwise sum of hits and union of supports.
    pub fn merge(&mut self, other: &VoteGrid) -> Result<()> {
        if !self.grid.matches(&other.grid) || self.k != other.k {
            return Err(Error::GridMismatch("cannot merge vote grids over different grids".into()));
        }
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a = a.saturating_add(*b);
        }
        for (a, b) in self.support.iter_mut().zip(&other.support) {
            *a |= *b;
        }
        self.points_total += other.points_total;
        self.points_dropped += other.points_dropped;
        Ok(())
    }

    /// Splat every point of `batch` over the voxels whose centres fall inside
    /// the point's footprint: half a pixel either way along `u` and `v`, the
    /// slab either way along the normal (half-open on the positive side).
    pub fn accumulate(&mut self, batch: &PointBatch) {
        if batch.axis_id >= self.k {
            log::warn!("batch axis {} outside vote grid with {} axes", batch.axis_id, self.k);
            self.points_dropped += batch.points.len() as u64;
            self.points_total += batch.points.len() as u64;
            return;
        }
        let bit = 1u16 << batch.axis_id;
        let t = self.grid.pitch();
        let dt = self.grid.direction.transpose();
        let (n, u, v) = (batch.normal, batch.u, batch.v);
        let half_px = batch.pitch / 2.0;
        let slab = batch.slab;
        // footprint half-extent in index units, per grid axis
        let (nu, nv, nn) = (dt * u, dt * v, dt * n);
        let reach = Vector3::from_fn(|a, _| (nu[a].abs() * half_px + nv[a].abs() * half_px + nn[a].abs() * slab) / t + 1e-9);
        let dims = self.grid.dims;
        for p in &batch.points {
            self.points_total += 1;
            let c = self.grid.world_to_index(p);
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut empty = false;
            for a in 0..3 {
                let l = (c[a] - reach[a]).ceil().max(0.0);
                let h = (c[a] + reach[a]).floor().min((dims[a] - 1) as f64);
                if l > h {
                    empty = true;
                    break;
                }
                lo[a] = l as usize;
                hi[a] = h as usize;
            }
            let mut touched = false;
            if !empty {
                for k in lo[2]..=hi[2] {
                    for j in lo[1]..=hi[1] {
                        for i in lo[0]..=hi[0] {
                            let q = self.grid.index_to_world(&Vector3::new(i as f64, j as f64, k as f64));
                            let r = q - p;
                            let (rn, ru, rv) = (r.dot(&n), r.dot(&u), r.dot(&v));
                            if rn >= -slab && rn < slab && ru >= -half_px && ru < half_px && rv >= -half_px && rv < half_px {
                                let o = self.grid.linear_index(i, j, k);
                                self.hits[o] = self.hits[o].saturating_add(1);
                                self.support[o] |= bit;
                                touched = true;
                            }
                        }
                    }
                }
            }
            if !touched {
                self.points_dropped += 1;
            }
        }
    }
}

/// Keep voxels supported by at least `min_axes` distinct axes and, when
/// given, hit at least `min_hits` times.
pub fn threshold_votes(g: &VoteGrid, min_axes: usize, min_hits: Option<u32>) -> Result<MaskVolume> {
    if min_axes < 1 || min_axes > g.k {
        return Err(Error::InvalidConfig(format!("min_axes {min_axes} outside [1, {}]", g.k)));
    }
    let min_hits = min_hits.unwrap_or(0);
    let data = g
        .support
        .iter()
        .zip(&g.hits)
        .map(|(&s, &h)| u8::from(s.count_ones() as usize >= min_axes && h as u32 >= min_hits))
        .collect();
    Ok(MaskVolume { grid: g.grid.clone(), data })
}

pub fn default_min_axes(k: usize) -> usize {
    k.div_ceil(2)
}

/// Summary counters of a vote grid, handy for reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub voxels_touched: usize,
    pub points_total: u64,
    pub points_dropped: u64,
}

impl VoteGrid {
    pub fn summary(&self) -> VoteSummary {
        VoteSummary {
            voxels_touched: self.support.iter().filter(|&&s| s != 0).count(),
            points_total: self.points_total,
            points_dropped: self.points_dropped,
        }
    }
}
