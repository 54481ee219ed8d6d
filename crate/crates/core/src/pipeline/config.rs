use serde::{Deserialize, Serialize};

use crate::backends::BackendSpec;
use crate::error::{Error, Result};
use crate::geometry::SUPPORTED_AXIS_COUNTS;
use crate::recompose::{default_min_axes, PostprocessFlags};
use crate::volume::DEFAULT_WINDOW;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    #[serde(rename = "stride_voxels", alias = "stride")]
    pub stride: usize,
    pub backend: BackendSpec,
    /// Minimum number of distinct supporting axes; `ceil(k / 2)` when unset.
    pub min_axes: Option<usize>,
    /// Optional extra criterion on the raw hit count.
    pub min_hits: Option<u32>,
    pub window: (f64, f64),
    pub postprocess: PostprocessFlags,
    pub seed: u64,
    /// Worker threads for slice tasks; logical core count when unset.
    pub workers: Option<usize>,
    /// Resample the final mask back onto the input grid (nearest neighbour).
    pub original_grid: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 3,
            stride: 1,
            backend: BackendSpec::default(),
            min_axes: None,
            min_hits: None,
            window: DEFAULT_WINDOW,
            postprocess: PostprocessFlags::default(),
            seed: 0,
            workers: None,
            original_grid: false,
        }
    }
}

impl RunConfig {
    pub fn min_axes(&self) -> usize {
        self.min_axes.unwrap_or_else(|| default_min_axes(self.k))
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_AXIS_COUNTS.contains(&self.k) {
            return Err(Error::UnsupportedAxisCount(self.k));
        }
        if self.stride < 1 {
            return Err(Error::InvalidConfig("stride must be >= 1".into()));
        }
        let m = self.min_axes();
        if m < 1 || m > self.k {
            return Err(Error::InvalidConfig(format!("min_axes {m} outside [1, {}]", self.k)));
        }
        let (lo, hi) = self.window;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidConfig(format!("window ({lo}, {hi})")));
        }
        if self.postprocess.closing_radius > 2 {
            return Err(Error::InvalidConfig(format!("closing radius {}", self.postprocess.closing_radius)));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        self.backend.validate()
    }
}
