use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Triangle mesh in world millimetres with per-triangle unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

impl Mesh {
    /// Append a triangle; zero-area triangles are skipped.
    pub fn push_triangle(&mut self, tri: [u32; 3]) {
        let [a, b, c] = tri.map(|i| self.vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len <= 1e-12 {
            return;
        }
        self.triangles.push(tri);
        self.normals.push(n / len);
    }

    fn corners(&self, t: &[u32; 3]) -> [Vec3; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                (b - a).cross(&(c - a)).norm() / 2.0
            })
            .sum()
    }

    /// Enclosed volume by the signed tetrahedron sum.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Every directed edge appears exactly once and its reverse exactly once.
    pub fn is_closed_and_oriented(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for i in 0..3 {
                *directed.entry((t[i], t[(i + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Taubin smoothing: alternating shrink (`lambda`) and inflate (`mu`)
    /// umbrella steps over the edge graph. Connectivity is untouched, so a
    /// closed oriented mesh stays closed and oriented.
    pub fn taubin_smooth(&mut self, iterations: usize, lambda: f64, mu: f64) {
        if iterations == 0 || self.vertices.is_empty() {
            return;
        }
        let mut neighbours: Vec<Vec<u32>> = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                neighbours[a as usize].push(b);
                neighbours[b as usize].push(a);
            }
        }
        for n in &mut neighbours {
            n.sort_unstable();
            n.dedup();
        }
        let step = |factor: f64, verts: &mut Vec<Vec3>| {
            let moved: Vec<Vec3> = verts
                .iter()
                .zip(&neighbours)
                .map(|(&p, ns)| {
                    if ns.is_empty() {
                        return p;
                    }
                    let mean = ns.iter().map(|&j| verts[j as usize]).sum::<Vec3>() / ns.len() as f64;
                    p + (mean - p) * factor
                })
                .collect();
            *verts = moved;
        };
        let mut verts = std::mem::take(&mut self.vertices);
        for _ in 0..iterations {
            step(lambda, &mut verts);
            step(mu, &mut verts);
        }
        self.vertices = verts;
        self.recompute_normals();
    }

    /// Unit normals from the current vertex positions; degenerate faces get
    /// a zero normal.
    pub fn recompute_normals(&mut self) {
        self.normals = self
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len > 0.0 { n / len } else { Vec3::zeros() }
            })
            .collect();
    }

    pub fn indices_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.triangles.iter().all(|t| t.iter().all(|&i| i < n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    StlBinary,
    ObjAscii,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => MeshFormat::ObjAscii,
            _ => MeshFormat::StlBinary,
        }
    }
}

impl Mesh {
    pub fn to_stl_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        let tag = b"binary STL";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for (t, n) in self.triangles.iter().zip(&self.normals) {
            for c in n.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
            for v in self.corners(t) {
                for c in v.iter() {
                    out.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    pub fn write_obj(&self, w: &mut impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

pub fn export_mesh(mesh: &Mesh, format: MeshFormat, path: impl AsRef<Path>) -> Result<()> {
    match format {
        MeshFormat::StlBinary => std::fs::write(path, mesh.to_stl_bytes())?,
        MeshFormat::ObjAscii => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            mesh.write_obj(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Parse binary STL into `(normal, [v0, v1, v2])` records.
pub fn read_stl(bytes: &[u8]) -> Result<Vec<([f32; 3], [[f32; 3]; 3])>> {
    if bytes.len() < 84 {
        return Err(Error::CorruptInput("STL shorter than its header".into()));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(Error::CorruptInput(format!("STL size {} does not match {count} triangles", bytes.len())));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    Ok((0..count)
        .map(|t| {
            let base = 84 + 50 * t;
            let v3 = |o: usize| [f(o), f(o + 4), f(o + 8)];
            (v3(base), [v3(base + 12), v3(base + 24), v3(base + 36)])
        })
        .collect())
}
