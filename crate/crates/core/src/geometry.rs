//! Slicing axes, slice frames, pixel/world mapping and polyline prompts.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Grid;

pub type Vec3 = Vector3<f64>;

pub const SUPPORTED_AXIS_COUNTS: [usize; 4] = [3, 4, 6, 10];

/// Default tolerance for polyline/plane tests, in mm.
pub const DEFAULT_EPS_MM: f64 = 1e-6;

/// Prompt points closer than this (in pixels) are merged.
const DEDUP_RADIUS_PX: f64 = 0.5;

/// A set of undirected slicing axes. Every axis is unit length with its
/// first nonzero component positive, and axes are sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSet {
    pub axes: Vec<Vec3>,
}

impl AxisSet {
    pub fn k(&self) -> usize {
        self.axes.len()
    }

    /// Undirected angles in degrees for every unordered axis pair.
    pub fn pairwise_angles_deg(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, a) in self.axes.iter().enumerate() {
            for b in &self.axes[i + 1..] {
                out.push(undirected_angle_deg(a, b));
            }
        }
        out
    }
}

pub fn undirected_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 keeps precision for nearly parallel lines where acos would not
    let cross = a.cross(b).norm();
    let dot = a.dot(b).abs();
    cross.atan2(dot).to_degrees()
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let first = v.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
    if first < 0.0 {
        -v
    } else {
        v
    }
}

fn cyclic_permutations(v: [f64; 3]) -> [Vec3; 3] {
    [
        Vec3::new(v[0], v[1], v[2]),
        Vec3::new(v[2], v[0], v[1]),
        Vec3::new(v[1], v[2], v[0]),
    ]
}

fn sign_variants(v: [f64; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(8);
    for mask in 0..8 {
        let mut w = v;
        for (a, c) in w.iter_mut().enumerate() {
            if mask >> a & 1 == 1 {
                *c = -*c;
            }
        }
        out.push(w);
    }
    out
}

/// Build the axis set for `k` ∈ {3, 4, 6, 10}: coordinate axes, cube body
/// diagonals, icosahedron vertex axes, dodecahedron vertex axes.
pub fn axis_set(k: usize) -> Result<AxisSet> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut raw: Vec<Vec3> = Vec::new();
    match k {
        3 => raw.extend([Vec3::x(), Vec3::y(), Vec3::z()]),
        4 => raw.extend(sign_variants([1.0, 1.0, 1.0]).into_iter().map(Vec3::from)),
        6 => {
            for v in sign_variants([0.0, 1.0, phi]) {
                raw.extend(cyclic_permutations(v));
            }
        }
        10 => {
            raw.extend(sign_variants([1.0, 1.0, 1.0]).into_iter().map(Vec3::from));
            for v in sign_variants([0.0, 1.0 / phi, phi]) {
                raw.extend(cyclic_permutations(v));
            }
        }
        other => return Err(Error::UnsupportedAxisCount(other)),
    }
    let mut axes: Vec<Vec3> = Vec::with_capacity(k);
    for v in raw {
        let v = canonical_sign(v.normalize());
        if !axes.iter().any(|a| a.dot(&v).abs() > 1.0 - 1e-9) {
            axes.push(v);
        }
    }
    axes.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    debug_assert_eq!(axes.len(), k);
    Ok(AxisSet { axes })
}

/// In-plane basis `(u, v)` for normal `n` such that `{u, v, n}` is a
/// right-handed orthonormal frame. Uses the canonical basis vector least
/// aligned with `n` (lowest index on ties).
pub fn plane_basis(n: &Vec3) -> Result<(Vec3, Vec3)> {
    let len = n.norm();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(Error::InvalidAxis(format!("normal {n:?} has no direction")));
    }
    let n = n / len;
    let mut best = 0;
    for a in 1..3 {
        if n[a].abs() < n[best].abs() {
            best = a;
        }
    }
    let e = Vec3::ith(best, 1.0);
    let u = n.cross(&e).normalize();
    let v = n.cross(&u);
    Ok((u, v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// A planar pixel grid embedded in world space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceFrame {
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    /// Plane offset: the plane is `{p : p·normal = d}`.
    #[serde(rename = "d")]
    pub offset: f64,
    /// World position of the centre of pixel (0, 0).
    pub origin2d: Vec3,
    pub pitch: f64,
    pub width: usize,
    pub height: usize,
    pub axis_id: usize,
    /// Position of this frame in its axis' offset sequence.
    pub index: usize,
    /// Half-thickness represented along the normal, in mm.
    pub slab: f64,
}

impl SliceFrame {
    pub fn pixel_to_world(&self, x: f64, y: f64) -> Vec3 {
        self.origin2d + self.u * (x * self.pitch) + self.v * (y * self.pitch)
    }

    pub fn world_to_pixel(&self, p: &Vec3) -> Result<(f64, f64)> {
        let distance = (p.dot(&self.normal) - self.offset).abs();
        if distance > self.slab {
            return Err(Error::OffPlane { distance, slab: self.slab });
        }
        Ok(self.project(p))
    }

    /// Orthogonal projection into pixel coordinates, ignoring the slab.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let r = p - self.origin2d;
        (r.dot(&self.u) / self.pitch, r.dot(&self.v) / self.pitch)
    }

    pub fn contains_pixel(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        p.dot(&self.normal) - self.offset
    }
}

/// Frames covering the whole grid along `axis`, spaced `stride_voxels * pitch`
/// apart. The offset sequence is centred in the projected extent so that every
/// voxel centre lies within the slab of some frame.
pub fn slice_frames(grid: &Grid, axis: &Vec3, axis_id: usize, stride_voxels: usize, pitch: f64) -> Result<Vec<SliceFrame>> {
    if stride_voxels == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    if !(pitch > 0.0) {
        return Err(Error::InvalidConfig(format!("pitch {pitch}")));
    }
    let n = axis.normalize();
    let (u, v) = plane_basis(&n)?;
    let corners = grid.corners();
    let range = |dir: &Vec3| {
        corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let d = c.dot(dir);
            (lo.min(d), hi.max(d))
        })
    };
    let (dmin, dmax) = range(&n);
    let (umin, umax) = range(&u);
    let (vmin, vmax) = range(&v);
    let step = stride_voxels as f64 * pitch;
    let span = dmax - dmin;
    // tolerance keeps exact multiples (e.g. 127 / 1) from losing the last frame
    let count = (span / step + 1e-9).floor() as usize + 1;
    let lead = ((span - (count - 1) as f64 * step) / 2.0).max(0.0);
    let width = ((umax - umin) / pitch - 1e-9).ceil().max(0.0) as usize + 1;
    let height = ((vmax - vmin) / pitch - 1e-9).ceil().max(0.0) as usize + 1;
    Ok((0..count)
        .map(|j| {
            let d = dmin + lead + j as f64 * step;
            SliceFrame {
                normal: n,
                u,
                v,
                offset: d,
                origin2d: n * d + u * umin + v * vmin,
                pitch,
                width,
                height,
                axis_id,
                index: j,
                slab: step / 2.0,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub label: Label,
    pub points: Vec<Vec3>,
}

impl Polyline {
    pub fn new(label: Label, points: Vec<Vec3>) -> Result<Self> {
        let p = Polyline { label, points };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidPolyline(format!("{} points, need at least 2", self.points.len())));
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidPolyline("non-finite coordinate".into()));
        }
        if self.points.windows(2).any(|w| (w[1] - w[0]).norm() <= 1e-9) {
            return Err(Error::InvalidPolyline("consecutive points coincide".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptPoint2D {
    pub x: f64,
    pub y: f64,
    pub label: Label,
}

/// Crossings of `poly` with the frame's plane, as pixel-space prompts.
///
/// Crossing segments contribute one point; segments lying in the plane
/// contribute both endpoints and the midpoint. Points within half a pixel
/// of an earlier point are dropped.
pub fn intersect_polyline_plane(poly: &Polyline, frame: &SliceFrame, eps_mm: f64) -> Vec<PromptPoint2D> {
    let n = &frame.normal;
    let d = frame.offset;
    let mut world: Vec<Vec3> = Vec::new();
    for seg in poly.points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ab = b - a;
        let g = n.dot(&ab);
        if g.abs() >= eps_mm {
            let t = (d - n.dot(&a)) / g;
            if (0.0..=1.0).contains(&t) {
                world.push(a + ab * t);
            }
        } else if (n.dot(&a) - d).abs() < eps_mm {
            world.extend([a, a + ab * 0.5, b]);
        }
    }
    let mut out: Vec<PromptPoint2D> = Vec::with_capacity(world.len());
    for p in world {
        let (x, y) = frame.project(&p);
        let dup = out
            .iter()
            .any(|q| (q.x - x).hypot(q.y - y) < DEDUP_RADIUS_PX);
        if !dup {
            out.push(PromptPoint2D { x, y, label: poly.label });
        }
    }
    out
}

/// On-disk prompt set: `{"polylines":[{"label":..,"points_mm":[[x,y,z],..]},..]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptFile {
    pub polylines: Vec<PolylineRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineRecord {
    pub label: Label,
    pub points_mm: Vec<[f64; 3]>,
}

impl PromptFile {
    pub fn from_polylines(polys: &[Polyline]) -> Self {
        PromptFile {
            polylines: polys
                .iter()
                .map(|p| PolylineRecord {
                    label: p.label,
                    points_mm: p.points.iter().map(|v| [v.x, v.y, v.z]).collect(),
                })
                .collect(),
        }
    }

    pub fn into_polylines(self) -> Result<Vec<Polyline>> {
        self.polylines
            .into_iter()
            .map(|r| Polyline::new(r.label, r.points_mm.into_iter().map(Vec3::from).collect()))
            .collect()
    }

    pub fn parse(bytes: &[u8]) -> Result<Vec<Polyline>> {
        let file: PromptFile = serde_json::from_slice(bytes)?;
        file.into_polylines()
    }
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<Polyline>> {
    PromptFile::parse(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn unsupported_k() {
        for k in [0, 1, 2, 5, 7, 12] {
            assert!(matches!(axis_set(k), Err(Error::UnsupportedAxisCount(_))));
        }
    }

    #[test]
    fn axis_sets_are_canonical_and_distinct() {
        for k in SUPPORTED_AXIS_COUNTS {
            let set = axis_set(k).unwrap();
            assert_eq!(set.k(), k);
            for a in &set.axes {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                let first = a.iter().find(|c| c.abs() > 1e-12).unwrap();
                assert!(*first > 0.0);
            }
            assert!(set.pairwise_angles_deg().iter().all(|&t| t > 1.0));
        }
    }

    #[test]
    fn cube_diagonal_angles() {
        let expect = (1.0f64 / 3.0).acos().to_degrees();
        for t in axis_set(4).unwrap().pairwise_angles_deg() {
            assert_close(t, expect, 1e-9);
        }
        assert_close(expect, 70.5288, 1e-4);
    }

    #[test]
    fn plane_basis_for_z() {
        let (u, v) = plane_basis(&Vec3::z()).unwrap();
        assert_eq!(u, Vec3::y());
        assert_eq!(v, -Vec3::x());
        assert!((u.cross(&v) - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn plane_basis_diagonal_tie_uses_first_axis() {
        let n = Vec3::new(1.0, 1.0, 1.0).normalize();
        let (u, v) = plane_basis(&n).unwrap();
        let expect_u = n.cross(&Vec3::x()).normalize();
        assert!((u - expect_u).norm() < 1e-15);
        assert!((u.cross(&v) - n).norm() < 1e-12);
    }

    #[test]
    fn plane_basis_zero_normal() {
        assert!(matches!(plane_basis(&Vec3::zeros()), Err(Error::InvalidAxis(_))));
    }

    #[test]
    fn frames_for_axis_aligned_cube() {
        let grid = Grid::new([128; 3], [1.0; 3]).unwrap();
        let frames = slice_frames(&grid, &Vec3::z(), 2, 1, 1.0).unwrap();
        assert_eq!(frames.len(), 128);
        for (j, f) in frames.iter().enumerate() {
            assert_close(f.offset, j as f64, 1e-12);
            assert!(f.width >= 128 && f.height >= 128);
            assert_close(f.slab, 0.5, 0.0);
            assert_eq!(f.axis_id, 2);
            assert_eq!(f.index, j);
        }
        let half = slice_frames(&grid, &Vec3::z(), 2, 2, 1.0).unwrap();
        assert!((half.len() as i64 - 64).abs() <= 1);
    }

    #[test]
    fn oblique_frame_range() {
        let grid = Grid::new([128; 3], [1.0; 3]).unwrap();
        let n = Vec3::new(1.0, 1.0, 1.0).normalize();
        let frames = slice_frames(&grid, &n, 0, 1, 1.0).unwrap();
        let span = 127.0 * 3f64.sqrt();
        assert_eq!(frames.len(), span.floor() as usize + 1);
        let first = frames[0].offset;
        let last = frames.last().unwrap().offset;
        // offsets are centred inside [0, span]
        assert_close(first, span - last, 1e-9);
    }

    #[test]
    fn frame_invariants() {
        let grid = Grid::new([20, 30, 40], [1.0; 3]).unwrap();
        for k in SUPPORTED_AXIS_COUNTS {
            for (id, axis) in axis_set(k).unwrap().axes.iter().enumerate() {
                for f in slice_frames(&grid, axis, id, 3, 1.0).unwrap() {
                    assert!((f.u.cross(&f.v) - f.normal).norm() < 1e-9);
                    assert!(f.u.dot(&f.normal).abs() < 1e-12 && f.v.dot(&f.normal).abs() < 1e-12);
                    assert_close(f.origin2d.dot(&f.normal), f.offset, 1e-6);
                }
            }
        }
    }

    #[test]
    fn pixel_world_hand_case() {
        let f = SliceFrame {
            normal: Vec3::z(),
            u: Vec3::x(),
            v: Vec3::y(),
            offset: 5.0,
            origin2d: Vec3::new(10.0, 10.0, 5.0),
            pitch: 2.0,
            width: 10,
            height: 10,
            axis_id: 0,
            index: 0,
            slab: 1.0,
        };
        assert_eq!(f.pixel_to_world(0.0, 0.0), f.origin2d);
        assert_eq!(f.pixel_to_world(3.0, 4.0), Vec3::new(16.0, 18.0, 5.0));
        assert_eq!(f.world_to_pixel(&Vec3::new(16.0, 18.0, 5.0)).unwrap(), (3.0, 4.0));
        assert!(matches!(f.world_to_pixel(&Vec3::new(0.0, 0.0, 7.5)), Err(Error::OffPlane { .. })));
    }

    fn z_frame(d: f64) -> SliceFrame {
        let grid = Grid::new([11, 11, 11], [1.0; 3]).unwrap();
        let mut f = slice_frames(&grid, &Vec3::z(), 0, 1, 1.0).unwrap()[0].clone();
        f.offset = d;
        f.origin2d.z = d;
        f
    }

    #[test]
    fn single_crossing() {
        let poly = Polyline::new(Label::Positive, vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 10.0)]).unwrap();
        let f = z_frame(5.0);
        let pts = intersect_polyline_plane(&poly, &f, DEFAULT_EPS_MM);
        assert_eq!(pts.len(), 1);
        assert!((f.pixel_to_world(pts[0].x, pts[0].y) - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        assert_eq!(pts[0].label, Label::Positive);
    }

    #[test]
    fn parallel_off_plane_segment() {
        let poly = Polyline::new(Label::Negative, vec![Vec3::new(0.0, 0.0, 3.0), Vec3::new(5.0, 5.0, 3.0)]).unwrap();
        assert!(intersect_polyline_plane(&poly, &z_frame(5.0), DEFAULT_EPS_MM).is_empty());
    }

    #[test]
    fn coplanar_segment_gives_three_points() {
        let poly = Polyline::new(Label::Positive, vec![Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0)]).unwrap();
        let f = z_frame(5.0);
        let pts = intersect_polyline_plane(&poly, &f, DEFAULT_EPS_MM);
        assert_eq!(pts.len(), 3);
        // dense-sampling oracle: each emitted point lies on the segment
        for p in &pts {
            let w = f.pixel_to_world(p.x, p.y);
            let best = (0..=1000)
                .map(|i| (Vec3::new(i as f64 * 0.01, 0.0, 5.0) - w).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 0.005 + 1e-9);
        }
    }

    #[test]
    fn v_shape_crosses_twice() {
        let poly = Polyline::new(
            Label::Positive,
            vec![Vec3::new(0.0, 0.0, 10.0), Vec3::new(5.0, 0.0, 0.0), Vec3::new(10.0, 0.0, 10.0)],
        )
        .unwrap();
        let pts = intersect_polyline_plane(&poly, &z_frame(5.0), DEFAULT_EPS_MM);
        assert_eq!(pts.len(), 2);
    }

    #[test]
    fn shared_vertex_on_plane_is_deduplicated() {
        let poly = Polyline::new(
            Label::Positive,
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 5.0), Vec3::new(4.0, 0.0, 10.0)],
        )
        .unwrap();
        assert_eq!(intersect_polyline_plane(&poly, &z_frame(5.0), DEFAULT_EPS_MM).len(), 1);
    }

    #[test]
    fn polyline_validation() {
        assert!(Polyline::new(Label::Positive, vec![Vec3::zeros()]).is_err());
        assert!(Polyline::new(Label::Positive, vec![Vec3::zeros(), Vec3::zeros()]).is_err());
    }

    #[test]
    fn prompt_file_roundtrip() {
        let json = br#"{"polylines":[{"label":"positive","points_mm":[[1,2,3],[4,5,6]]},{"label":"negative","points_mm":[[0,0,0],[0,0,1]]}]}"#;
        let polys = PromptFile::parse(json).unwrap();
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[1].label, Label::Negative);
        let back = serde_json::to_vec(&PromptFile::from_polylines(&polys)).unwrap();
        assert_eq!(PromptFile::parse(&back).unwrap(), polys);
    }
}
