//! Mask comparison and summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recompose::label_components_26;
use crate::volume::MaskVolume;

/// Dice overlap `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    if !a.grid.matches(&b.grid) {
        return Err(Error::GridMismatch(format!("dims {:?} vs {:?}", a.grid.dims, b.grid.dims)));
    }
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub voxels: usize,
    pub volume_mm3: f64,
    pub components: usize,
}

pub fn stats(m: &MaskVolume) -> MaskStats {
    let voxels = m.count();
    MaskStats {
        voxels,
        volume_mm3: voxels as f64 * m.grid.voxel_volume(),
        components: label_components_26(m).1.len(),
    }
}
