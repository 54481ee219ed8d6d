//! Minimal NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer.

use std::io::Read;

use flate2::read::GzDecoder;
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::{is_orthonormal, Grid, MaskVolume, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, off: usize) -> [u8; N] {
        self.bytes[off..off + N].try_into().unwrap()
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.array(off)),
            Endian::Big => i16::from_be_bytes(self.array(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.array(off)),
            Endian::Big => f32::from_be_bytes(self.array(off)),
        }
    }
}

fn gunzip_if_needed(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::CorruptInput(format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Decode a NIfTI-1 file (optionally gzip-compressed) into a float volume.
///
/// Intensity scaling (`scl_slope`, `scl_inter`) is applied. The affine comes
/// from the sform when its code is set and its columns are orthogonal, then
/// from the qform, then from the pixel spacing alone.
pub fn parse_nifti(raw: &[u8]) -> Result<Volume> {
    let bytes = gunzip_if_needed(raw)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::CorruptInput(format!("header truncated at {} bytes", bytes.len())));
    }
    let endian = if i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::UnsupportedFormat("not a NIfTI-1 header (sizeof_hdr != 348)".into()));
    };
    let r = Reader { bytes: &bytes, endian };
    if &bytes[344..347] != b"n+1" && &bytes[344..347] != b"ni1" {
        return Err(Error::UnsupportedFormat("missing NIfTI-1 magic".into()));
    }

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::InvalidMetadata(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for a in 0..ndim as usize {
        let n = r.i16(42 + 2 * a);
        if n < 1 {
            return Err(Error::InvalidMetadata(format!("dim[{}] = {n}", a + 1)));
        }
        if a < 3 {
            dims[a] = n as usize;
        } else if n != 1 {
            return Err(Error::UnsupportedFormat("volumes with more than three dimensions".into()));
        }
    }

    let datatype = r.i16(70);
    let bytes_per_voxel = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedFormat(format!("NIfTI datatype {other}"))),
    };

    let pixdim: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i) as f64).collect();
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::CorruptInput(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let mut slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let (spacing, origin, direction) = affine_from_header(&r, &pixdim)?;
    let grid = Grid::with_affine(dims, spacing, origin, direction)?;

    let n = grid.len();
    let end = vox_offset + n * bytes_per_voxel;
    if bytes.len() < end {
        return Err(Error::CorruptInput(format!(
            "voxel data truncated: need {} bytes, have {}",
            end,
            bytes.len()
        )));
    }
    let payload = &bytes[vox_offset..end];
    let mut data = Vec::with_capacity(n);
    macro_rules! decode {
        ($ty:ty, $size:expr) => {
            for chunk in payload.chunks_exact($size) {
                let arr: [u8; $size] = chunk.try_into().unwrap();
                let v = match endian {
                    Endian::Little => <$ty>::from_le_bytes(arr),
                    Endian::Big => <$ty>::from_be_bytes(arr),
                };
                data.push((slope * v as f64 + inter) as f32);
            }
        };
    }
    match datatype {
        DT_UINT8 => data.extend(payload.iter().map(|&v| (slope * v as f64 + inter) as f32)),
        DT_INT16 => decode!(i16, 2),
        DT_UINT16 => decode!(u16, 2),
        DT_FLOAT32 => decode!(f32, 4),
        DT_FLOAT64 => decode!(f64, 8),
        _ => unreachable!(),
    }
    Volume::new(grid, data)
}

fn diagonal(pixdim: &[f64]) -> Result<([f64; 3], Vector3<f64>, Matrix3<f64>)> {
    let spacing = [pixdim[1], pixdim[2], pixdim[3]];
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidMetadata(format!("nonpositive pixdim {spacing:?}")));
    }
    Ok((spacing, Vector3::zeros(), Matrix3::identity()))
}

fn affine_from_header(r: &Reader<'_>, pixdim: &[f64]) -> Result<([f64; 3], Vector3<f64>, Matrix3<f64>)> {
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    if !(0..=4).contains(&qform_code) || !(0..=4).contains(&sform_code) {
        log::warn!("orientation codes out of range (qform {qform_code}, sform {sform_code}); using pixel spacing only");
        return diagonal(pixdim);
    }
    if sform_code > 0 {
        let mut m = Matrix3::zeros();
        let mut origin = Vector3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = r.f32(280 + 16 * row + 4 * col) as f64;
            }
            origin[row] = r.f32(280 + 16 * row + 12) as f64;
        }
        let spacing = [m.column(0).norm(), m.column(1).norm(), m.column(2).norm()];
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidMetadata(format!("nonpositive sform spacing {spacing:?}")));
        }
        let mut dir = m;
        for c in 0..3 {
            let col = dir.column(c) / spacing[c];
            dir.set_column(c, &col);
        }
        // stored in float32, so orthogonality only holds to single precision
        if is_orthonormal(&dir, 1e-4) {
            return Ok((spacing, origin, orthonormalize(&dir)));
        }
        log::warn!("sform is sheared; falling back");
    }
    if qform_code > 0 {
        let b = r.f32(256) as f64;
        let c = r.f32(260) as f64;
        let d = r.f32(264) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let mut rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let col = rot.column(2) * qfac;
        rot.set_column(2, &col);
        let (spacing, _, _) = diagonal(pixdim)?;
        let origin = Vector3::new(r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64);
        return Ok((spacing, origin, orthonormalize(&rot)));
    }
    diagonal(pixdim)
}

/// Clean up single-precision rounding so the direction passes the 1e-6 check.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

fn header(grid: &Grid, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    put_i16(&mut h, 40, 3);
    for a in 0..3 {
        put_i16(&mut h, 42 + 2 * a, grid.dims[a] as i16);
    }
    for a in 3..7 {
        put_i16(&mut h, 42 + 2 * a, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);

    let mut rot = grid.direction;
    let qfac = if rot.determinant() < 0.0 {
        let col = -rot.column(2);
        rot.set_column(2, &col);
        -1.0
    } else {
        1.0
    };
    put_f32(&mut h, 76, qfac);
    for a in 0..3 {
        put_f32(&mut h, 80 + 4 * a, grid.spacing[a] as f32);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // millimetres
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);

    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    put_f32(&mut h, 256, q.i as f32);
    put_f32(&mut h, 260, q.j as f32);
    put_f32(&mut h, 264, q.k as f32);
    for a in 0..3 {
        put_f32(&mut h, 268 + 4 * a, grid.origin[a] as f32);
    }
    for (row, vals) in grid.affine_rows().iter().enumerate() {
        for (col, &v) in vals.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * row + 4 * col, v as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Encode a mask as an uncompressed uint8 NIfTI-1 file with values 0/1.
pub fn encode_nifti_mask(m: &MaskVolume) -> Vec<u8> {
    let mut out = header(&m.grid, DT_UINT8, 8);
    out.extend(m.data.iter().map(|&b| u8::from(b != 0)));
    out
}

/// Encode a float volume as an uncompressed float32 NIfTI-1 file.
pub fn encode_nifti_volume(v: &Volume) -> Vec<u8> {
    let mut out = header(&v.grid, DT_FLOAT32, 32);
    out.reserve(v.data.len() * 4);
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_field(mut bytes: Vec<u8>, off: usize, val: &[u8]) -> Vec<u8> {
        bytes[off..off + val.len()].copy_from_slice(val);
        bytes
    }

    fn small_mask() -> MaskVolume {
        let grid = Grid::new([4, 3, 2], [1.0, 1.5, 2.0]).unwrap();
        MaskVolume::from_fn(grid, |i, j, k| (i * j + k) % 3 == 0)
    }

    #[test]
    fn scaling_is_applied() {
        let grid = Grid::new([1, 1, 1], [1.0; 3]).unwrap();
        let mut bytes = encode_nifti_volume(&Volume::new(grid, vec![3.0]).unwrap());
        bytes = with_field(bytes, 112, &2.0f32.to_le_bytes());
        bytes = with_field(bytes, 116, &1.0f32.to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.data, vec![7.0]);
    }

    #[test]
    fn zero_dim_rejected() {
        let bytes = with_field(encode_nifti_mask(&small_mask()), 42, &0i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::InvalidMetadata(_))));
    }

    #[test]
    fn unsupported_datatype() {
        let bytes = with_field(encode_nifti_mask(&small_mask()), 70, &8i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_nifti_mask(&small_mask());
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(parse_nifti(&bytes), Err(Error::CorruptInput(_))));
        assert!(matches!(parse_nifti(&bytes[..100]), Err(Error::CorruptInput(_))));
    }

    #[test]
    fn nonpositive_spacing_rejected() {
        // no sform/qform: spacing comes from pixdim
        let mut bytes = encode_nifti_mask(&small_mask());
        bytes = with_field(bytes, 252, &0i16.to_le_bytes());
        bytes = with_field(bytes, 254, &0i16.to_le_bytes());
        bytes = with_field(bytes, 84, &(-1.0f32).to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::InvalidMetadata(_))));
    }

    #[test]
    fn out_of_range_codes_fall_back_to_diagonal() {
        let grid = Grid::with_affine(
            [2, 2, 2],
            [1.0, 2.0, 3.0],
            Vector3::new(5.0, 6.0, 7.0),
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        )
        .unwrap();
        let mut bytes = encode_nifti_mask(&MaskVolume::empty(grid));
        bytes = with_field(bytes, 254, &9i16.to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.grid.direction, Matrix3::identity());
        assert_eq!(v.grid.origin, Vector3::zeros());
        assert_eq!(v.grid.spacing, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn qform_only_roundtrip_recovers_affine() {
        let dir = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let grid = Grid::with_affine([3, 4, 5], [0.8, 1.0, 2.5], Vector3::new(-10.0, 4.0, 2.0), dir).unwrap();
        let bytes = with_field(encode_nifti_mask(&MaskVolume::empty(grid.clone())), 254, &0i16.to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert!((v.grid.direction - dir).amax() < 1e-5);
        assert!((v.grid.origin - grid.origin).amax() < 1e-5);
    }

    #[test]
    fn big_endian_header_is_read() {
        // hand-built big-endian header with one int16 voxel
        let mut h = vec![0u8; VOX_OFFSET + 2];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        h[40..42].copy_from_slice(&3i16.to_be_bytes());
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&1i16.to_be_bytes());
        }
        h[70..72].copy_from_slice(&DT_INT16.to_be_bytes());
        for a in 0..3 {
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&1.0f32.to_be_bytes());
        }
        h[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h[VOX_OFFSET..].copy_from_slice(&(-300i16).to_be_bytes());
        assert_eq!(parse_nifti(&h).unwrap().data, vec![-300.0]);
    }
}
