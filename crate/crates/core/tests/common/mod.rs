//! Oracles shared by the integration tests. None of them call into the
//! code path they check.
#![allow(dead_code)]

use seg_core::geometry::{Polyline, SliceFrame, Vec3};
use seg_core::volume::{Grid, MaskVolume};

/// Crossings located by dense sampling of each segment followed by bisection;
/// shares nothing with the closed-form intersection.
pub fn dense_oracle(poly: &Polyline, f: &SliceFrame) -> Vec<Vec3> {
    let mut out = Vec::new();
    for seg in poly.points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let at = |t: f64| a + (b - a) * t;
        let dist = |t: f64| f.signed_distance(&at(t));
        let steps = 4000;
        for s in 0..steps {
            let (mut lo, mut hi) = (s as f64 / steps as f64, (s + 1) as f64 / steps as f64);
            let (dlo, dhi) = (dist(lo), dist(hi));
            if dlo == 0.0 {
                out.push(at(lo));
                continue;
            }
            // an exact zero at `hi` is picked up as the next step's `lo`
            if dlo.signum() == dhi.signum() || dhi == 0.0 {
                continue;
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if dist(mid).signum() == dlo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(at(0.5 * (lo + hi)));
        }
        if dist(1.0) == 0.0 {
            out.push(b);
        }
    }
    out
}

pub fn dedup_px(f: &SliceFrame, pts: Vec<Vec3>) -> Vec<Vec3> {
    let mut kept: Vec<Vec3> = Vec::new();
    for p in pts {
        let (x, y) = f.project(&p);
        if !kept.iter().any(|q| {
            let (qx, qy) = f.project(q);
            (qx - x).hypot(qy - y) < 0.5
        }) {
            kept.push(p);
        }
    }
    kept
}

/// Minimal OBJ reader written against the format, not the exporter.
pub fn parse_obj(text: &str) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(|t| t.parse().unwrap()).collect();
                v.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let c: Vec<usize> = it.map(|t| t.split('/').next().unwrap().parse::<usize>().unwrap() - 1).collect();
                f.push([c[0], c[1], c[2]]);
            }
            _ => {}
        }
    }
    (v, f)
}

/// Voxel-centre rasterization of a ball centred in an `n³` unit grid.
pub fn ball(n: usize, r: f64) -> MaskVolume {
    let c = (n as f64 - 1.0) / 2.0;
    MaskVolume::from_fn(Grid::new([n; 3], [1.0; 3]).unwrap(), |i, j, k| {
        let d = Vec3::new(i as f64 - c, j as f64 - c, k as f64 - c);
        d.norm() <= r
    })
}

/// Voxel-centre rasterization of an axis-aligned ellipsoid centred in an `n³` unit grid.
pub fn ellipsoid(n: usize, radii: [f64; 3]) -> MaskVolume {
    let c = (n as f64 - 1.0) / 2.0;
    MaskVolume::from_fn(Grid::new([n; 3], [1.0; 3]).unwrap(), |i, j, k| {
        let q = [i, j, k].iter().zip(&radii).map(|(&x, r)| ((x as f64 - c) / r).powi(2)).sum::<f64>();
        q <= 1.0
    })
}

/// Dice by direct counting.
pub fn dice_count(a: &MaskVolume, b: &MaskVolume) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let na = a.data.iter().filter(|&&x| x != 0).count();
    let nb = b.data.iter().filter(|&&x| x != 0).count();
    let both = a.data.iter().zip(&b.data).filter(|(&x, &y)| x != 0 && y != 0).count();
    if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 }
}
