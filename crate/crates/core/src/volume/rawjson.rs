//! Raw scalar blob plus JSON sidecar: `<name>.raw` and `<name>.json`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Grid, MaskVolume, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [i64; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    pub dtype: String,
    #[serde(default = "little")]
    pub order: String,
    /// Row-major 3×3; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<[f64; 9]>,
}

fn little() -> String {
    "little".into()
}

pub(super) fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".raw"))
}

pub fn parse_rawjson(header_json: &[u8], blob: &[u8]) -> Result<Volume> {
    let h: RawHeader = serde_json::from_slice(header_json)
        .map_err(|e| Error::CorruptInput(format!("rawjson header: {e}")))?;
    if h.dims.iter().any(|&d| d < 1) {
        return Err(Error::InvalidMetadata(format!("dims {:?}", h.dims)));
    }
    let dims = [h.dims[0] as usize, h.dims[1] as usize, h.dims[2] as usize];
    let direction = match h.direction {
        Some(d) => Matrix3::from_row_slice(&d),
        None => Matrix3::identity(),
    };
    let grid = Grid::with_affine(dims, h.spacing, Vector3::from(h.origin), direction)?;
    let little = match h.order.as_str() {
        "little" => true,
        "big" => false,
        other => return Err(Error::UnsupportedFormat(format!("byte order {other:?}"))),
    };
    let size = match h.dtype.as_str() {
        "u8" => 1,
        "i16" | "u16" => 2,
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::UnsupportedFormat(format!("dtype {other:?}"))),
    };
    let n = grid.len();
    if blob.len() < n * size {
        return Err(Error::CorruptInput(format!("raw blob has {} bytes, need {}", blob.len(), n * size)));
    }
    let blob = &blob[..n * size];
    macro_rules! decode {
        ($ty:ty, $size:expr) => {
            blob.chunks_exact($size)
                .map(|c| {
                    let a: [u8; $size] = c.try_into().unwrap();
                    (if little { <$ty>::from_le_bytes(a) } else { <$ty>::from_be_bytes(a) }) as f32
                })
                .collect::<Vec<f32>>()
        };
    }
    let data = match h.dtype.as_str() {
        "u8" => blob.iter().map(|&b| b as f32).collect(),
        "i16" => decode!(i16, 2),
        "u16" => decode!(u16, 2),
        "f32" => decode!(f32, 4),
        "f64" => decode!(f64, 8),
        _ => unreachable!(),
    };
    Volume::new(grid, data)
}

fn header_for(grid: &Grid, dtype: &str) -> RawHeader {
    let d = grid.direction;
    RawHeader {
        dims: grid.dims.map(|n| n as i64),
        spacing: grid.spacing,
        origin: [grid.origin.x, grid.origin.y, grid.origin.z],
        dtype: dtype.into(),
        order: little(),
        direction: (d != Matrix3::identity()).then(|| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = d[(r, c)];
                }
            }
            out
        }),
    }
}

pub(super) fn write_mask(m: &MaskVolume, path: &Path) -> Result<()> {
    let (json, raw) = sidecar_paths(path);
    std::fs::write(json, serde_json::to_vec_pretty(&header_for(&m.grid, "u8"))?)?;
    std::fs::write(raw, &m.data)?;
    Ok(())
}

/// Encode a float volume as a `(json, raw)` pair.
pub fn encode_rawjson_f32(v: &Volume) -> (Vec<u8>, Vec<u8>) {
    let json = serde_json::to_vec_pretty(&header_for(&v.grid, "f32")).expect("header serializes");
    let raw = v.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    (json, raw)
}
