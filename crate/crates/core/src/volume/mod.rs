//! Scalar volumes on a regular grid, their file formats, isotropic
//! resampling and intensity windowing.

mod nifti;
mod rawjson;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::{encode_nifti_mask, encode_nifti_volume, parse_nifti};
pub use rawjson::{encode_rawjson_f32, parse_rawjson, RawHeader};

/// Tolerance used when deciding whether a continuous index is inside the grid.
const INDEX_TOLERANCE: f64 = 1e-6;

/// Geometry of a regular voxel grid: voxel `(i, j, k)` sits at
/// `origin + direction * (spacing ⊙ (i, j, k))` in world millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Vector3<f64>,
    pub direction: Matrix3<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_affine(dims, spacing, Vector3::zeros(), Matrix3::identity())
    }

    pub fn with_affine(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Vector3<f64>,
        direction: Matrix3<f64>,
    ) -> Result<Self> {
        let grid = Grid { dims, spacing, origin, direction };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidMetadata(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidMetadata(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidMetadata("origin is not finite".into()));
        }
        if !is_orthonormal(&self.direction, 1e-6) {
            return Err(Error::InvalidMetadata("direction matrix is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position of a (possibly fractional) voxel index.
    pub fn index_to_world(&self, idx: &Vector3<f64>) -> Vector3<f64> {
        let scaled = Vector3::new(idx.x * self.spacing[0], idx.y * self.spacing[1], idx.z * self.spacing[2]);
        self.origin + self.direction * scaled
    }

    /// Continuous voxel index of a world position.
    pub fn world_to_index(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let local = self.direction.transpose() * (p - self.origin);
        Vector3::new(local.x / self.spacing[0], local.y / self.spacing[1], local.z / self.spacing[2])
    }

    /// World positions of the eight extreme voxel centres.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let hi = [
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ];
        let mut out = [Vector3::zeros(); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let idx = Vector3::new(
                if c & 1 == 0 { 0.0 } else { hi[0] },
                if c & 2 == 0 { 0.0 } else { hi[1] },
                if c & 4 == 0 { 0.0 } else { hi[2] },
            );
            *slot = self.index_to_world(&idx);
        }
        out
    }

    pub fn is_isotropic(&self) -> bool {
        let [a, b, c] = self.spacing;
        (a - b).abs() <= 1e-9 && (a - c).abs() <= 1e-9
    }

    /// Isotropic pitch; only meaningful when [`Grid::is_isotropic`] holds.
    pub fn pitch(&self) -> f64 {
        self.spacing[0]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Grids are considered identical when dims match exactly and all
    /// metadata agrees within `1e-6`.
    pub fn matches(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self.spacing.iter().zip(other.spacing.iter()).all(|(a, b)| (a - b).abs() <= 1e-6)
            && (self.origin - other.origin).amax() <= 1e-6
            && (self.direction - other.direction).amax() <= 1e-6
    }

    /// 4×4 affine mapping voxel index to world mm, as rows.
    pub fn affine_rows(&self) -> [[f64; 4]; 3] {
        let mut rows = [[0.0; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.direction[(r, c)] * self.spacing[c];
            }
            row[3] = self.origin[r];
        }
        rows
    }

    /// Snap a continuous index into the grid if it is inside within tolerance.
    fn clamp_inside(&self, idx: &Vector3<f64>) -> Option<[f64; 3]> {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let hi = (self.dims[a] - 1) as f64;
            let x = idx[a];
            if !(x >= -INDEX_TOLERANCE && x <= hi + INDEX_TOLERANCE) {
                return None;
            }
            out[a] = x.clamp(0.0, hi);
        }
        Some(out)
    }

    /// Index of the voxel whose centre is nearest to `p`, if inside the grid.
    pub fn nearest_voxel(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let idx = self.world_to_index(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = idx[a].round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }
}

pub(crate) fn is_orthonormal(m: &Matrix3<f64>, tol: f64) -> bool {
    let gram = m.transpose() * m;
    (gram - Matrix3::identity()).amax() <= tol
}

/// Trilinear interpolation of `data` (x-fastest) at continuous index `idx`.
/// Returns `None` outside the grid.
pub fn trilinear<T: Copy + Into<f64>>(grid: &Grid, data: &[T], idx: &Vector3<f64>) -> Option<f64> {
    let x = grid.clamp_inside(idx)?;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let n = grid.dims[a];
        let f = x[a].floor();
        let mut b = f as usize;
        let mut t = x[a] - f;
        if b + 1 >= n {
            // at (or snapped onto) the last sample
            b = n - 1;
            t = 0.0;
        }
        base[a] = b;
        frac[a] = t;
    }
    let [nx, ny, _] = grid.dims;
    let step = [1usize, nx, nx * ny];
    let origin = grid.linear_index(base[0], base[1], base[2]);
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut off = origin;
        for a in 0..3 {
            let hi = corner >> a & 1 == 1;
            if hi {
                if frac[a] == 0.0 {
                    w = 0.0;
                    break;
                }
                w *= frac[a];
                off += step[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w != 0.0 {
            acc += w * data[off].into();
        }
    }
    Some(acc)
}

/// A scalar image on a regular grid. Data is stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidMetadata(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Volume { grid, data })
    }

    /// Build a volume by evaluating `f` at every voxel index.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        grid.validate()?;
        let [nx, ny, nz] = grid.dims;
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Ok(Volume { grid, data })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    pub fn sample_world(&self, p: &Vector3<f64>) -> Option<f64> {
        trilinear(&self.grid, &self.data, &self.grid.world_to_index(p))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Resample onto an isotropic grid whose pitch is the smallest input spacing.
///
/// The new grid keeps origin and direction; each axis gets
/// `floor(extent / pitch) + 1` samples where `extent = (n - 1) * spacing`.
pub fn resample_isotropic(v: &Volume) -> Volume {
    if v.grid.is_isotropic() {
        return v.clone();
    }
    let t = v.grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let extent = (v.grid.dims[a] - 1) as f64 * v.grid.spacing[a];
        dims[a] = (extent / t + 1e-9).floor() as usize + 1;
    }
    let grid = Grid { dims, spacing: [t; 3], origin: v.grid.origin, direction: v.grid.direction };
    let ratio = [t / v.grid.spacing[0], t / v.grid.spacing[1], t / v.grid.spacing[2]];
    let mut data = Vec::with_capacity(grid.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let idx = Vector3::new(i as f64 * ratio[0], j as f64 * ratio[1], k as f64 * ratio[2]);
                let value = trilinear(&v.grid, &v.data, &idx).expect("resampled grid lies within the source extent");
                data.push(value as f32);
            }
        }
    }
    Volume { grid, data }
}

/// Intensities mapped into `[0, 1]` through a percentile window.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedVolume {
    pub grid: Grid,
    pub data: Vec<f32>,
    pub window: (f64, f64),
    /// Set when the window collapsed (`hi - lo < 1e-12`); data is then all zeros.
    pub degenerate: bool,
}

impl NormalizedVolume {
    pub fn sample_world(&self, p: &Vector3<f64>) -> Option<f64> {
        trilinear(&self.grid, &self.data, &self.grid.world_to_index(p))
    }
}

pub const DEFAULT_WINDOW: (f64, f64) = (0.5, 99.5);

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f32], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let t = rank - lo as f64;
    sorted[lo] as f64 * (1.0 - t) + sorted[hi] as f64 * t
}

pub fn window_normalize(v: &Volume, p_lo: f64, p_hi: f64) -> Result<NormalizedVolume> {
    if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo >= p_hi {
        return Err(Error::InvalidConfig(format!("window percentiles ({p_lo}, {p_hi}) out of order or range")));
    }
    let mut sorted = v.data.clone();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let lo = percentile(&sorted, p_lo);
    let hi = percentile(&sorted, p_hi);
    let span = hi - lo;
    if !(span >= 1e-12) {
        log::warn!("degenerate intensity window [{lo}, {hi}]");
        return Ok(NormalizedVolume {
            grid: v.grid.clone(),
            data: vec![0.0; v.data.len()],
            window: (lo, hi),
            degenerate: true,
        });
    }
    let data = v
        .data
        .iter()
        .map(|&x| ((x as f64 - lo) / span).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(NormalizedVolume { grid: v.grid.clone(), data, window: (lo, hi), degenerate: false })
}

/// Binary segmentation on a grid; `data` holds 0 or 1 per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    pub grid: Grid,
    pub data: Vec<u8>,
}

impl MaskVolume {
    pub fn empty(grid: Grid) -> Self {
        let n = grid.len();
        MaskVolume { grid, data: vec![0; n] }
    }

    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidMetadata(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        let data = data.into_iter().map(|b| u8::from(b != 0)).collect();
        Ok(MaskVolume { grid, data })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = grid.dims;
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(u8::from(f(i, j, k)));
                }
            }
        }
        MaskVolume { grid, data }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.linear_index(i, j, k)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_all_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// Nearest-neighbour resampling onto another grid (e.g. back to the
    /// original, anisotropic acquisition grid).
    pub fn resample_nearest(&self, target: &Grid) -> MaskVolume {
        MaskVolume::from_fn(target.clone(), |i, j, k| {
            let p = target.index_to_world(&Vector3::new(i as f64, j as f64, k as f64));
            self.grid
                .nearest_voxel(&p)
                .map(|[a, b, c]| self.get(a, b, c))
                .unwrap_or(false)
        })
    }

    pub fn to_volume(&self) -> Volume {
        Volume { grid: self.grid.clone(), data: self.data.iter().map(|&b| b as f32).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFormat {
    Nifti1,
    RawJson,
}

impl VolumeFormat {
    /// `.json`/`.raw` select rawjson, anything else NIfTI-1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("raw") => VolumeFormat::RawJson,
            _ => VolumeFormat::Nifti1,
        }
    }
}

pub fn load_volume(path: impl AsRef<Path>, format: VolumeFormat) -> Result<Volume> {
    let path = path.as_ref();
    match format {
        VolumeFormat::Nifti1 => parse_nifti(&std::fs::read(path)?),
        VolumeFormat::RawJson => {
            let (json, raw) = rawjson::sidecar_paths(path);
            parse_rawjson(&std::fs::read(json)?, &std::fs::read(raw)?)
        }
    }
}

/// Load with the format inferred from the file extension.
pub fn load_volume_auto(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    load_volume(path, VolumeFormat::from_path(path))
}

fn binarize(v: Volume) -> MaskVolume {
    let data = v.data.iter().map(|&x| u8::from(x != 0.0)).collect();
    MaskVolume { grid: v.grid, data }
}

/// Load a mask; any nonzero sample is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    Ok(binarize(load_volume_auto(path)?))
}

/// Decode NIfTI-1 bytes (optionally gzip-compressed) as a mask.
pub fn parse_nifti_mask(raw: &[u8]) -> Result<MaskVolume> {
    Ok(binarize(parse_nifti(raw)?))
}

pub fn save_mask(m: &MaskVolume, path: impl AsRef<Path>, format: VolumeFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        VolumeFormat::Nifti1 => write_maybe_gz(path, &encode_nifti_mask(m)),
        VolumeFormat::RawJson => rawjson::write_mask(m, path),
    }
}

/// Write a float32 NIfTI-1 volume.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_maybe_gz(path.as_ref(), &encode_nifti_volume(v))
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let gz = path.extension().and_then(|e| e.to_str()) == Some("gz");
    if gz {
        let file = std::fs::File::create(path)?;
        let mut enc = flate2::write::GzEncoder::new(file, flate2::Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}
