use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mask2D, Segmenter};
use crate::error::Result;
use crate::slicing::SliceTask;

/// Replaces a seeded random subset of masks with a rectangle covering
/// 10–40% of the slice. The decision for a task depends only on the seeds and
/// the task's `(axis_id, index)`, never on call order.
pub struct FaultBackend {
    inner: Box<dyn Segmenter>,
    p: f64,
    seed: u64,
    run_seed: u64,
}

impl FaultBackend {
    pub fn new(inner: Box<dyn Segmenter>, p: f64, seed: u64, run_seed: u64) -> Self {
        FaultBackend { inner, p, seed, run_seed }
    }

    fn rng_for(&self, axis_id: usize, index: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.run_seed.to_le_bytes());
        key[16..24].copy_from_slice(&(axis_id as u64).to_le_bytes());
        key[24..32].copy_from_slice(&(index as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Whether the task with this identity gets corrupted.
    pub fn is_corrupted(&self, axis_id: usize, index: usize) -> bool {
        self.rng_for(axis_id, index).random::<f64>() < self.p
    }
}

/// Axis-aligned rectangle covering 10–40% of a `width × height` slice.
pub fn corruption_pattern(rng: &mut impl Rng, width: usize, height: usize) -> Mask2D {
    let area = rng.random_range(0.1..=0.4);
    // width share in [area, 1] keeps the height share area / fw within [area, 1]
    let fw: f64 = rng.random_range(area..=1.0);
    let fh = area / fw;
    let w = ((fw * width as f64).round() as usize).clamp(1, width);
    let h = ((fh * height as f64).round() as usize).clamp(1, height);
    let x0 = rng.random_range(0..=width - w);
    let y0 = rng.random_range(0..=height - h);
    let mut m = Mask2D::empty(width, height);
    for y in y0..y0 + h {
        m.bits[y * width + x0..y * width + x0 + w].fill(1);
    }
    m
}

impl Segmenter for FaultBackend {
    fn segment(&self, task: &SliceTask) -> Result<Mask2D> {
        let f = task.frame();
        let mut rng = self.rng_for(f.axis_id, f.index);
        if rng.random::<f64>() < self.p {
            return Ok(corruption_pattern(&mut rng, f.width, f.height));
        }
        self.inner.segment(task)
    }

    fn name(&self) -> String {
        format!("fault:{}:{}:{}", self.p, self.seed, self.inner.name())
    }
}
