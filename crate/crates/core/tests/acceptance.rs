//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --release -p seg-core --test acceptance`.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seg_core::backends::Mask2D;
use seg_core::geometry::{axis_set, intersect_polyline_plane, slice_frames, Label, Polyline, SliceFrame, Vec3, DEFAULT_EPS_MM};
use seg_core::metrics::dice;
use seg_core::phantom;
use seg_core::pipeline::{run_pipeline, RunConfig};
use seg_core::recompose::{export_mesh, marching_cubes, mask_to_points, read_stl, threshold_votes, MeshFormat, VoteGrid};
use seg_core::volume::{
    encode_nifti_mask, load_mask, load_volume_auto, resample_isotropic, save_mask, save_volume, trilinear, window_normalize, Grid,
    MaskVolume, Volume, VolumeFormat,
};

mod common;
use common::{ball, dedup_px, dense_oracle, dice_count, parse_obj};

const FIDELITY_DICE: f64 = 0.98;
const FIDELITY_SECONDS: f64 = 60.0;
const ROBUST_DICE: f64 = 0.95;
const FAULT_P: f64 = 0.15;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const K_SPREAD: f64 = 0.02;
const ANGLE_TOL_DEG: f64 = 1e-6;
const INTERSECT_TOL_MM: f64 = 1e-6;
const ROUNDTRIP_TOL_PX: f64 = 1e-9;
const TRILINEAR_TOL: f64 = 1e-6;
const MC_AREA_TOL: f64 = 0.05;
const MC_VOLUME_TOL: f64 = 0.03;

const ELLIPSOID_N: usize = 96;
const ELLIPSOID_RADII: [f64; 3] = [36.0, 26.0, 18.0];

#[derive(Default)]
struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn fault_cfg(k: usize, seed: u64, min_axes: Option<usize>) -> RunConfig {
    RunConfig {
        k,
        backend: format!("fault:{FAULT_P}:{seed}:flood:128").parse().unwrap(),
        seed,
        min_axes,
        ..Default::default()
    }
}

fn phantom_fidelity(r: &mut Report) {
    let ph = phantom::sphere(128, 40.0);
    let truth = ball(128, 40.0);
    let cfg = RunConfig { k: 3, stride: 1, min_axes: Some(1), ..Default::default() };
    let t0 = Instant::now();
    let res = run_pipeline(&ph.volume, &ph.prompts, &cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let d = dice_count(&res.mask, &truth);
    let majority = run_pipeline(&ph.volume, &ph.prompts, &RunConfig { min_axes: None, ..cfg }).unwrap();
    let dm = dice_count(&majority.mask, &truth);
    r.line(
        "phantom fidelity",
        d >= FIDELITY_DICE && secs < FIDELITY_SECONDS,
        format!(
            "dice {d:.4} (>= {FIDELITY_DICE}), {secs:.2} s (< {FIDELITY_SECONDS}), {} tasks; min_axes=2 dice {dm:.4}",
            res.stats.tasks_total
        ),
    );
}

fn robustness(r: &mut Report) {
    let ph = phantom::ellipsoid(ELLIPSOID_N, ELLIPSOID_RADII);
    let truth = common::ellipsoid(ELLIPSOID_N, ELLIPSOID_RADII);
    let run = |seed, m| dice_count(&run_pipeline(&ph.volume, &ph.prompts, &fault_cfg(6, seed, Some(m))).unwrap().mask, &truth);
    let voted: Vec<f64> = SEEDS.iter().map(|&s| run(s, 3)).collect();
    let union: Vec<f64> = SEEDS.iter().map(|&s| run(s, 1)).collect();
    let (mv, mu) = (median(voted.clone()), median(union.clone()));
    r.line(
        "redundancy/robustness",
        mv >= ROBUST_DICE && mv > mu,
        format!("k=6 p={FAULT_P}: median dice min_axes=3 {mv:.4} (>= {ROBUST_DICE}), min_axes=1 {mu:.4}; per seed {voted:.3?} vs {union:.3?}"),
    );
}

fn transforms_study(r: &mut Report) {
    let ph = phantom::ellipsoid(ELLIPSOID_N, ELLIPSOID_RADII);
    let truth = common::ellipsoid(ELLIPSOID_N, ELLIPSOID_RADII);
    let fault_median = |k| {
        median(SEEDS.iter().map(|&s| dice_count(&run_pipeline(&ph.volume, &ph.prompts, &fault_cfg(k, s, None)).unwrap().mask, &truth)).collect())
    };
    let faulty: Vec<(usize, f64)> = [3, 4, 6].iter().map(|&k| (k, fault_median(k))).collect();
    let mut clean = Vec::new();
    let mut tasks = Vec::new();
    for k in [3, 4, 6, 10] {
        let res = run_pipeline(&ph.volume, &ph.prompts, &RunConfig { k, ..Default::default() }).unwrap();
        clean.push(dice_count(&res.mask, &truth));
        tasks.push(res.stats.tasks_total);
    }
    let spread = clean.iter().cloned().fold(f64::MIN, f64::max) - clean.iter().cloned().fold(f64::MAX, f64::min);
    let rising = faulty[2].1 >= faulty[0].1;
    let increasing = tasks.windows(2).all(|w| w[0] < w[1]);
    r.line(
        "transforms study",
        rising && spread < K_SPREAD && increasing,
        format!(
            "fault medians k=3/4/6 {:.4}/{:.4}/{:.4} (k=6 >= k=3); oracle dice k=3/4/6/10 {clean:.4?} spread {spread:.4} (< {K_SPREAD}); tasks {tasks:?}",
            faulty[0].1, faulty[1].1, faulty[2].1
        ),
    );
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 {
            return v.normalize();
        }
    }
}

fn random_frame(rng: &mut ChaCha8Rng, grid: &Grid) -> SliceFrame {
    let frames = slice_frames(grid, &random_direction(rng), 0, 1, 1.0).unwrap();
    let i = rng.random_range(0..frames.len());
    frames[i].clone()
}

fn geometry_suite(r: &mut Report) {
    // angles from raw generator vectors
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let angle = |a: Vec3, b: Vec3| (a.dot(&b) / (a.norm() * b.norm())).abs().min(1.0).acos().to_degrees();
    let mut dodeca = vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 1.0, -1.0), Vec3::new(1.0, -1.0, 1.0), Vec3::new(-1.0, 1.0, 1.0)];
    for (a, b) in [(1.0 / phi, phi), (1.0 / phi, -phi)] {
        dodeca.extend([Vec3::new(0.0, a, b), Vec3::new(a, b, 0.0), Vec3::new(b, 0.0, a)]);
    }
    let mut min10 = f64::INFINITY;
    for i in 0..dodeca.len() {
        for j in i + 1..dodeca.len() {
            min10 = min10.min(angle(dodeca[i], dodeca[j]));
        }
    }
    let want = [(3, 90.0), (4, (1.0f64 / 3.0).acos().to_degrees()), (6, 2f64.atan().to_degrees()), (10, min10)];
    let mut angle_err: f64 = 0.0;
    for (k, lo) in want {
        let got = axis_set(k).unwrap().pairwise_angles_deg().into_iter().fold(f64::INFINITY, f64::min);
        angle_err = angle_err.max((got - lo).abs());
    }
    let published = [(90.0, 90.0), (want[1].1, 70.5288), (want[2].1, 63.4349), (min10, 41.8103)];
    let published_ok = published.iter().all(|(a, b)| (a - b).abs() < 5e-5);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let grid = Grid::new([41, 41, 41], [1.0; 3]).unwrap();
    let (mut worst_mm, mut count_mismatch) = (0.0f64, 0);
    for _ in 0..1000 {
        let f = random_frame(&mut rng, &grid);
        let n = rng.random_range(2..7);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-5.0..45.0), rng.random_range(-5.0..45.0), rng.random_range(-5.0..45.0)))
            .collect();
        let poly = Polyline::new(Label::Positive, pts).unwrap();
        let got = intersect_polyline_plane(&poly, &f, DEFAULT_EPS_MM);
        let want = dedup_px(&f, dense_oracle(&poly, &f));
        if got.len() != want.len() {
            count_mismatch += 1;
            continue;
        }
        for (g, w) in got.iter().zip(&want) {
            let p = f.pixel_to_world(g.x, g.y);
            let world = p + f.normal * (w.dot(&f.normal) - p.dot(&f.normal));
            worst_mm = worst_mm.max((world - w).norm());
        }
    }

    let mut worst_px = 0.0f64;
    for _ in 0..1000 {
        let f = random_frame(&mut rng, &grid);
        let (x, y) = (rng.random_range(-50.0..200.0), rng.random_range(-50.0..200.0));
        let (bx, by) = f.world_to_pixel(&f.pixel_to_world(x, y)).unwrap();
        worst_px = worst_px.max((bx - x).abs().max((by - y).abs()));
    }
    r.line(
        "geometry suite",
        angle_err <= ANGLE_TOL_DEG && published_ok && count_mismatch == 0 && worst_mm <= INTERSECT_TOL_MM && worst_px < ROUNDTRIP_TOL_PX,
        format!(
            "angle err {angle_err:.1e} deg; min10 {min10:.7}; 1000 intersections: {count_mismatch} count mismatches, max err {worst_mm:.1e} mm; round trip {worst_px:.1e} px"
        ),
    );
}

fn random_grid(rng: &mut ChaCha8Rng) -> Grid {
    let d = [rng.random_range(2..8), rng.random_range(2..8), rng.random_range(2..8)];
    let s = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
    let o = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    let rot = Rotation3::from_euler_angles(rng.random_range(-3.2..3.2), rng.random_range(-1.5..1.5), rng.random_range(-3.2..3.2));
    Grid::with_affine(d, s, o, rot.into_inner()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, g: Grid) -> MaskVolume {
    let data = (0..g.len()).map(|_| rng.random_range(0..2u8)).collect();
    MaskVolume::new(g, data).unwrap()
}

fn numerical_suite(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tri_err = 0.0f64;
    for _ in 0..200 {
        let g = random_grid(&mut rng);
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let field = |p: Vector3<f64>| c[0] * p.x + c[1] * p.y + c[2] * p.z + c[3];
        let data: Vec<f64> = (0..g.len())
            .map(|o| {
                let [i, j, k] = g.unravel(o);
                field(g.index_to_world(&Vector3::new(i as f64, j as f64, k as f64)))
            })
            .collect();
        for _ in 0..20 {
            let idx = Vector3::new(
                rng.random_range(0.0..(g.dims[0] - 1) as f64),
                rng.random_range(0.0..(g.dims[1] - 1) as f64),
                rng.random_range(0.0..(g.dims[2] - 1) as f64),
            );
            tri_err = tri_err.max((trilinear(&g, &data, &idx).unwrap() - field(g.index_to_world(&idx))).abs());
        }
    }

    let mut idempotent = true;
    for _ in 0..50 {
        let g = random_grid(&mut rng);
        let data = (0..g.len()).map(|_| rng.random_range(-100.0..100.0f32)).collect();
        let once = resample_isotropic(&Volume::new(g, data).unwrap());
        let twice = resample_isotropic(&once);
        idempotent &= once.grid == twice.grid && once.data.iter().zip(&twice.data).all(|(a, b)| (a - b).abs() <= 1e-6);
    }

    let mut monotone = true;
    for _ in 0..200 {
        let n = rng.random_range(8..200);
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1e3..1e3f32)).collect();
        let (lo, hi) = (rng.random_range(0.0..40.0), rng.random_range(60.0..100.0));
        let nv = window_normalize(&Volume::new(Grid::new([n, 1, 1], [1.0; 3]).unwrap(), data.clone()).unwrap(), lo, hi).unwrap();
        let mut pairs: Vec<(f32, f32)> = data.into_iter().zip(nv.data.iter().cloned()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        monotone &= pairs.windows(2).all(|w| w[0].1 <= w[1].1) && nv.data.iter().all(|&x| (0.0..=1.0).contains(&x));
    }

    let mut axioms = true;
    for _ in 0..100 {
        let g = Grid::new([5, 4, 3], [1.0; 3]).unwrap();
        let (a, b) = (random_mask(&mut rng, g.clone()), random_mask(&mut rng, g.clone()));
        let inv = MaskVolume::new(g, a.data.iter().map(|&x| 1 - x).collect()).unwrap();
        let (ab, ba) = (dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        axioms &= ab == ba && (ab - dice_count(&a, &b)).abs() < 1e-12;
        axioms &= dice(&a, &a).unwrap() == 1.0;
        axioms &= a.count() == 0 || inv.count() == 0 || dice(&a, &inv).unwrap() == 0.0;
    }
    let g = Grid::new([4, 1, 1], [1.0; 3]).unwrap();
    let hand = dice(&MaskVolume::new(g.clone(), vec![1, 1, 1, 0]).unwrap(), &MaskVolume::new(g, vec![0, 1, 1, 1]).unwrap()).unwrap();
    axioms &= (hand - 0.6667).abs() < 5e-5;

    r.line(
        "numerical suite",
        tri_err < TRILINEAR_TOL && idempotent && monotone && axioms,
        format!("trilinear max err {tri_err:.1e}; resample idempotent {idempotent}; window monotone {monotone}; dice axioms {axioms} (hand case {hand:.4})"),
    );
}

fn determinism(r: &mut Report) {
    let ph = phantom::ellipsoid(48, [18.0, 13.0, 9.0]);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [1, 8] {
        let cfg = RunConfig { workers: Some(workers), ..fault_cfg(6, 3, None) };
        let res = run_pipeline(&ph.volume, &ph.prompts, &cfg).unwrap();
        let path = dir.path().join(format!("mask{workers}.nii.gz"));
        save_mask(&res.mask, &path, VolumeFormat::Nifti1).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    r.line("determinism", files[0] == files[1], format!("1 vs 8 workers, {} byte mask files identical: {}", files[0].len(), files[0] == files[1]));
}

fn recomposition(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = Grid::new([14, 12, 10], [1.0; 3]).unwrap();
    let axes = axis_set(4).unwrap().axes;
    let frames: Vec<SliceFrame> = axes.iter().enumerate().flat_map(|(a, n)| slice_frames(&grid, n, a, 1, 1.0).unwrap()).collect();
    let (mut permutation, mut monotone) = (true, true);
    for _ in 0..50 {
        let mut batches: Vec<_> = (0..rng.random_range(2..16))
            .map(|_| {
                let f = &frames[rng.random_range(0..frames.len())];
                let mut m = Mask2D::empty(f.width, f.height);
                m.bits.iter_mut().for_each(|b| *b = u8::from(rng.random_bool(0.3)));
                mask_to_points(&m, f).unwrap()
            })
            .collect();
        let acc = |bs: &[_]| {
            let mut g = VoteGrid::new(grid.clone(), 4).unwrap();
            bs.iter().for_each(|b| g.accumulate(b));
            g
        };
        let reference = acc(&batches);
        batches.shuffle(&mut rng);
        permutation &= acc(&batches) == reference;
        let masks: Vec<MaskVolume> = (1..=4).map(|m| threshold_votes(&reference, m, None).unwrap()).collect();
        monotone &= masks.windows(2).all(|w| w[0].data.iter().zip(&w[1].data).all(|(lo, hi)| hi <= lo));
    }
    let rad = 20.0;
    let mesh = marching_cubes(&ball(48, rad)).unwrap();
    let area = mesh.area() / (4.0 * PI * rad * rad) - 1.0;
    let volume = mesh.signed_volume() / (4.0 / 3.0 * PI * rad.powi(3)) - 1.0;
    r.line(
        "recomposition invariants",
        permutation && monotone && area.abs() < MC_AREA_TOL && volume.abs() < MC_VOLUME_TOL && mesh.is_closed_and_oriented(),
        format!(
            "permutation invariant {permutation}; threshold monotone {monotone}; sphere r={rad} area {:+.2}% (< 5%), volume {:+.2}% (< 3%)",
            area * 100.0,
            volume * 100.0
        ),
    );
}

fn formats(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dir = tempfile::tempdir().unwrap();
    let mut nifti = true;
    for t in 0..40 {
        let g = random_grid(&mut rng);
        let m = random_mask(&mut rng, g);
        let path = dir.path().join(if t % 2 == 0 { "m.nii" } else { "m.nii.gz" });
        save_mask(&m, &path, VolumeFormat::Nifti1).unwrap();
        let back = load_mask(&path).unwrap();
        nifti &= back.data == m.data && back.grid.dims == m.grid.dims;
        nifti &= (back.grid.index_to_world(&Vector3::new(1.0, 1.0, 1.0)) - m.grid.index_to_world(&Vector3::new(1.0, 1.0, 1.0))).norm() < 1e-4;
        let g = random_grid(&mut rng);
        let data = (0..g.len()).map(|_| rng.random_range(-1e3..1e3f32)).collect();
        let v = Volume::new(g, data).unwrap();
        let vpath = dir.path().join("v.nii.gz");
        save_volume(&v, &vpath).unwrap();
        nifti &= load_volume_auto(&vpath).unwrap().data == v.data;
    }

    let mesh = marching_cubes(&ball(16, 5.0)).unwrap();
    let stl = dir.path().join("m.stl");
    export_mesh(&mesh, MeshFormat::StlBinary, &stl).unwrap();
    let bytes = std::fs::read(&stl).unwrap();
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let recs = read_stl(&bytes).unwrap();
    let stl_ok = bytes.len() == 84 + 50 * mesh.triangles.len()
        && count == mesh.triangles.len()
        && recs.iter().zip(&mesh.triangles).all(|((_, tri), t)| {
            (0..3).all(|c| (Vec3::new(tri[c][0] as f64, tri[c][1] as f64, tri[c][2] as f64) - mesh.vertices[t[c] as usize]).norm() < 1e-4)
        });
    let obj = dir.path().join("m.obj");
    export_mesh(&mesh, MeshFormat::ObjAscii, &obj).unwrap();
    let (v, f) = parse_obj(&std::fs::read_to_string(&obj).unwrap());
    let obj_ok = v.len() == mesh.vertices.len()
        && v.iter().zip(&mesh.vertices).all(|(a, b)| (Vec3::from(*a) - b).norm() < 1e-9)
        && f.iter().zip(&mesh.triangles).all(|(a, b)| a.iter().zip(b).all(|(x, &y)| *x == y as usize))
        && f.len() == mesh.triangles.len();

    let big = encode_nifti_mask(&MaskVolume::empty(Grid::new([128; 3], [1.0; 3]).unwrap()));
    let sizeof_hdr = i32::from_le_bytes(big[0..4].try_into().unwrap());
    let datatype = i16::from_le_bytes(big[70..72].try_into().unwrap());
    let vox_offset = f32::from_le_bytes(big[108..112].try_into().unwrap()) as usize;
    let payload = big.len() - vox_offset;
    let payload_ok = sizeof_hdr == 348 && datatype == 2 && &big[344..348] == b"n+1\0" && payload == 128 * 128 * 128;

    r.line(
        "formats",
        nifti && stl_ok && obj_ok && payload_ok,
        format!("nifti round trips {nifti}; stl {stl_ok} ({} bytes); obj {obj_ok}; 128^3 uint8 payload {payload} bytes (2097152)", bytes.len()),
    );
}

fn main() {
    let mut r = Report::default();
    phantom_fidelity(&mut r);
    robustness(&mut r);
    transforms_study(&mut r);
    geometry_suite(&mut r);
    numerical_suite(&mut r);
    determinism(&mut r);
    recomposition(&mut r);
    formats(&mut r);
    if r.failed.is_empty() {
        println!("acceptance: all {} criteria passed", 8);
    } else {
        println!("acceptance: {} failed: {}", r.failed.len(), r.failed.join(", "));
        std::process::exit(1);
    }
}
