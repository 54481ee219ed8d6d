//! Synthetic test volumes with analytic ground truth.

use nalgebra::Vector3;

use crate::geometry::{axis_set, Label, Polyline, Vec3};
use crate::volume::{Grid, MaskVolume, Volume};

/// A binary-contrast volume (1 inside, 0 outside), its exact rasterized
/// truth, and prompt polylines.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume,
    pub truth: MaskVolume,
    pub prompts: Vec<Polyline>,
}

fn cube(n: usize) -> Grid {
    Grid::new([n; 3], [1.0; 3]).expect("n >= 1")
}

fn centre(n: usize) -> Vec3 {
    Vector3::repeat((n as f64 - 1.0) / 2.0)
}

fn from_truth(truth: MaskVolume, prompts: Vec<Polyline>) -> Phantom {
    Phantom { volume: truth.to_volume(), truth, prompts }
}

/// Oblique unit direction that is parallel to none of the supported slice
/// planes, so a straight prompt along it crosses every axis family.
pub fn oblique() -> Vec3 {
    Vec3::new(1.0, 0.8, 0.6).normalize()
}

/// Ball of radius `r` voxels centred in an `n³` grid, prompted by one
/// diameter along [`oblique`].
pub fn sphere(n: usize, r: f64) -> Phantom {
    let c = centre(n);
    let truth = MaskVolume::from_fn(cube(n), |i, j, k| (Vector3::new(i as f64, j as f64, k as f64) - c).norm() <= r);
    let reach = 0.98 * r;
    let diameter = Polyline::new(Label::Positive, vec![c - oblique() * reach, c + oblique() * reach]).expect("distinct endpoints");
    from_truth(truth, vec![diameter])
}

/// Axis-aligned ellipsoid with semi-axes `radii`, prompted by one star
/// polyline through the centre that runs out to 95% of the support point
/// along each icosahedral axis and back through the centre to the opposite one.
pub fn ellipsoid(n: usize, radii: [f64; 3]) -> Phantom {
    let c = centre(n);
    let r = Vector3::from(radii);
    let truth = MaskVolume::from_fn(cube(n), |i, j, k| {
        let d = Vector3::new(i as f64, j as f64, k as f64) - c;
        d.component_div(&r).norm_squared() <= 1.0
    });
    let mut vertices = Vec::new();
    for axis in axis_set(6).expect("supported count").axes {
        let w = r.component_mul(&r).component_mul(&axis);
        let support = w / r.component_mul(&axis).norm();
        vertices.push(c + support * 0.95);
        vertices.push(c - support * 0.95);
    }
    from_truth(truth, vec![Polyline::new(Label::Positive, vertices).expect("distinct vertices")])
}

/// Two balls: the target at `-offset` along x and a distractor at `+offset`.
/// A positive polyline runs through the target; a negative one runs through
/// the distractor and well past its surface on both sides.
pub fn two_blobs(n: usize, r: f64, offset: f64) -> (Phantom, MaskVolume) {
    let c = centre(n);
    let a = c - Vec3::x() * offset;
    let b = c + Vec3::x() * offset;
    let inside = |p: Vec3, q: Vec3| (p - q).norm() <= r;
    let at = |i: usize, j: usize, k: usize| Vector3::new(i as f64, j as f64, k as f64);
    let both = MaskVolume::from_fn(cube(n), |i, j, k| inside(at(i, j, k), a) || inside(at(i, j, k), b));
    let target = MaskVolume::from_fn(cube(n), |i, j, k| inside(at(i, j, k), a));
    let distractor = MaskVolume::from_fn(cube(n), |i, j, k| inside(at(i, j, k), b));
    let reach = 0.8 * r;
    let d = oblique() * reach;
    let pos = Polyline::new(Label::Positive, vec![a - d, a + d]).expect("distinct");
    let far = oblique() * 1.5 * r;
    let neg = Polyline::new(Label::Negative, vec![b - far, b + far]).expect("distinct");
    let ph = Phantom { volume: both.to_volume(), truth: target, prompts: vec![pos, neg] };
    (ph, distractor)
}
