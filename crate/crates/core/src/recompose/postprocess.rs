use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::MaskVolume;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessFlags {
    pub largest_component: bool,
    /// L∞ closing radius in voxels, 0 to 2.
    pub closing_radius: usize,
}

/// 26-connected labeling. Returns per-voxel labels (0 = background) and
/// component sizes indexed by `label - 1`.
pub fn label_components_26(m: &MaskVolume) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = m.grid.dims;
    let mut labels = vec![0u32; m.data.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..m.data.len() {
        if m.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(o) = queue.pop_front() {
            size += 1;
            let [i, j, k] = m.grid.unravel(o);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let n = m.grid.linear_index(a as usize, b as usize, c as usize);
                        if m.data[n] != 0 && labels[n] == 0 {
                            labels[n] = label;
                            queue.push_back(n);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keep only the largest 26-connected component (lowest label on ties).
pub fn largest_component(m: &MaskVolume) -> MaskVolume {
    let (labels, sizes) = label_components_26(m);
    let Some(best) = sizes.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).map(|(i, _)| i as u32 + 1)
    else {
        return m.clone();
    };
    MaskVolume { grid: m.grid.clone(), data: labels.iter().map(|&l| u8::from(l == best)).collect() }
}

/// Separable running max (`dilate`) or min along one axis with radius `r`.
/// Out-of-grid samples count as `outside`.
fn filter_axis(data: &[u8], dims: [usize; 3], axis: usize, r: usize, dilate: bool, outside: u8) -> Vec<u8> {
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis];
    let mut out = vec![0u8; data.len()];
    for (o, slot) in out.iter_mut().enumerate() {
        let pos = (o / stride) % n;
        let mut acc = if dilate { 0u8 } else { 1u8 };
        for d in -(r as i64)..=r as i64 {
            let q = pos as i64 + d;
            let v = if q < 0 || q >= n as i64 {
                outside
            } else {
                data[(o as i64 + d * stride as i64) as usize]
            };
            acc = if dilate { acc.max(v) } else { acc.min(v) };
        }
        *slot = acc;
    }
    out
}

/// Morphological closing with a `(2r+1)³` cube. Erosion treats the region
/// outside the grid as foreground, so closing never removes voxels.
pub fn close(m: &MaskVolume, radius: usize) -> MaskVolume {
    if radius == 0 {
        return m.clone();
    }
    let dims = m.grid.dims;
    let mut data = m.data.clone();
    for axis in 0..3 {
        data = filter_axis(&data, dims, axis, radius, true, 0);
    }
    for axis in 0..3 {
        data = filter_axis(&data, dims, axis, radius, false, 1);
    }
    MaskVolume { grid: m.grid.clone(), data }
}

pub fn postprocess(m: &MaskVolume, flags: PostprocessFlags) -> Result<MaskVolume> {
    if flags.closing_radius > 2 {
        return Err(Error::InvalidConfig(format!("closing radius {} outside 0..=2", flags.closing_radius)));
    }
    let mut out = if flags.largest_component { largest_component(m) } else { m.clone() };
    if flags.closing_radius > 0 {
        out = close(&out, flags.closing_radius);
    }
    Ok(out)
}
