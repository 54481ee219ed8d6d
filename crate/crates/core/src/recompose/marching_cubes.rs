//! Marching cubes over a binary mask at iso-level 0.5.
//!
//! The 256-entry case table is derived at first use from per-face rules
//! rather than typed in: on every cube face the crossing edges are paired so
//! that inside corners sharing only a face diagonal stay separated. Two cells
//! sharing a face therefore always agree on the face's contour, which makes
//! the surface closed, and each segment is directed so that the inside lies
//! on a fixed side, which makes the orientation consistent (normals point
//! from inside to outside).

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::Vector3;

use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::volume::MaskVolume;

/// Corner `c` sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_pos(c: usize) -> Vector3<f64> {
    Vector3::new((c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64)
}

/// The 12 cube edges as corner pairs `(lo, hi)` with `hi = lo | bit`.
fn cube_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(12);
    for lo in 0..8 {
        for bit in [1, 2, 4] {
            if lo & bit == 0 {
                edges.push((lo, lo | bit));
            }
        }
    }
    edges
}

struct CaseTable {
    edges: Vec<(usize, usize)>,
    /// Triangles per configuration, as edge-index triples.
    triangles: Vec<Vec<[u8; 3]>>,
}

fn edge_index(edges: &[(usize, usize)], a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    edges.iter().position(|&e| e == key).expect("corners share an edge")
}

fn build_table() -> CaseTable {
    let edges = cube_edges();
    let mid = |e: usize| (corner_pos(edges[e].0) + corner_pos(edges[e].1)) / 2.0;

    // faces as (outward normal, corners in cyclic order)
    let mut faces: Vec<(Vector3<f64>, [usize; 4])> = Vec::new();
    for axis in 0..3 {
        let (b, c) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for side in 0..2 {
            let base = side << axis;
            let ring = [base, base | 1 << b, base | 1 << b | 1 << c, base | 1 << c];
            let mut normal = Vector3::zeros();
            normal[axis] = if side == 0 { -1.0 } else { 1.0 };
            faces.push((normal, ring));
        }
    }

    let mut triangles = Vec::with_capacity(256);
    for config in 0..256usize {
        let inside = |c: usize| config >> c & 1 == 1;
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (normal, ring) in &faces {
            let ring_edge = |i: usize| edge_index(&edges, ring[i % 4], ring[(i + 1) % 4]);
            let crossing: Vec<usize> = (0..4).filter(|&i| inside(ring[i]) != inside(ring[(i + 1) % 4])).collect();
            let pairs: Vec<(usize, usize)> = match crossing.len() {
                0 => vec![],
                2 => vec![(ring_edge(crossing[0]), ring_edge(crossing[1]))],
                4 => (0..4)
                    .filter(|&i| inside(ring[i]))
                    .map(|i| (ring_edge(i + 3), ring_edge(i)))
                    .collect(),
                _ => unreachable!("a face has an even number of crossings"),
            };
            for (a, b) in pairs {
                let (lo, hi) = edges[a];
                let (c_in, c_out) = if inside(lo) { (lo, hi) } else { (hi, lo) };
                let w = corner_pos(c_out) - corner_pos(c_in);
                let t = mid(b) - mid(a);
                let (from, to) = if normal.dot(&t.cross(&w)) > 0.0 { (a, b) } else { (b, a) };
                let clash = next.insert(from, to);
                debug_assert!(clash.is_none(), "edge {from} starts two segments in case {config}");
            }
        }
        let mut tris = Vec::new();
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut used = [false; 12];
        for s in starts {
            if used[s] {
                continue;
            }
            let mut ring = vec![s];
            used[s] = true;
            let mut cur = next[&s];
            while cur != s {
                used[cur] = true;
                ring.push(cur);
                cur = next[&cur];
            }
            for i in 1..ring.len() - 1 {
                tris.push([ring[0] as u8, ring[i] as u8, ring[i + 1] as u8]);
            }
        }
        triangles.push(tris);
    }
    CaseTable { edges, triangles }
}

fn table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

/// Taubin parameters applied by [`marching_cubes`].
pub const SMOOTH_ITERATIONS: usize = 10;
pub const SMOOTH_LAMBDA: f64 = 0.5;
pub const SMOOTH_MU: f64 = -0.53;

/// [`marching_cubes_raw`] followed by Taubin smoothing, which removes the
/// voxel staircase without shrinking the surface.
pub fn marching_cubes(m: &MaskVolume) -> Result<Mesh> {
    let mut mesh = marching_cubes_raw(m)?;
    mesh.taubin_smooth(SMOOTH_ITERATIONS, SMOOTH_LAMBDA, SMOOTH_MU);
    Ok(mesh)
}

/// Iso-surface of the mask at 0.5 with vertices at cell-edge midpoints, in
/// world millimetres. The grid is padded by one empty layer on every side so
/// masks touching the boundary still give a closed surface.
pub fn marching_cubes_raw(m: &MaskVolume) -> Result<Mesh> {
    if m.is_all_empty() {
        return Err(Error::EmptyMask);
    }
    let table = table();
    let [nx, ny, nz] = m.grid.dims;
    // padded sample coordinates: p = voxel index + 1, valid range 0..=n+1
    let sample = |x: usize, y: usize, z: usize| -> bool {
        x >= 1 && y >= 1 && z >= 1 && x <= nx && y <= ny && z <= nz && m.get(x - 1, y - 1, z - 1)
    };
    let mut mesh = Mesh::default();
    let mut vertex_of: HashMap<(usize, usize, usize, usize), u32> = HashMap::new();
    for z in 0..=nz {
        for y in 0..=ny {
            for x in 0..=nx {
                let mut config = 0usize;
                for c in 0..8 {
                    if sample(x + (c & 1), y + (c >> 1 & 1), z + (c >> 2 & 1)) {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                for tri in &table.triangles[config] {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let (lo, hi) = table.edges[e as usize];
                        let axis = (hi ^ lo).trailing_zeros() as usize;
                        let key = (x + (lo & 1), y + (lo >> 1 & 1), z + (lo >> 2 & 1), axis);
                        *slot = *vertex_of.entry(key).or_insert_with(|| {
                            let mut idx = Vector3::new(key.0 as f64 - 1.0, key.1 as f64 - 1.0, key.2 as f64 - 1.0);
                            idx[axis] += 0.5;
                            mesh.vertices.push(m.grid.index_to_world(&idx));
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    mesh.push_triangle(ids);
                }
            }
        }
    }
    Ok(mesh)
}
