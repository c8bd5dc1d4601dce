//! Single-file NIfTI-1 reader and writer.
//!
//! Reads little- and big-endian headers (detected from the header size field),
//! optionally gzip-compressed. Always writes little-endian with `vox_offset`
//! 352 and an empty extension block.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{GridGeometry, IntensityVolume, LabelVolume, Mask, Volume};

pub const HEADER_SIZE: usize = 348;
pub const DATA_OFFSET: usize = 352;

/// Supported on-disk voxel types (NIfTI datatype codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

/// Voxel payload in its stored type.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl VoxelData {
    pub fn datatype(&self) -> Datatype {
        match self {
            VoxelData::U8(_) => Datatype::U8,
            VoxelData::I16(_) => Datatype::I16,
            VoxelData::I32(_) => Datatype::I32,
            VoxelData::F32(_) => Datatype::F32,
            VoxelData::F64(_) => Datatype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::I32(v) => v.len(),
            VoxelData::F32(v) => v.len(),
            VoxelData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_f64(&self) -> Vec<f64> {
        match self {
            VoxelData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::F64(v) => v.clone(),
        }
    }
}

/// A decoded NIfTI image: geometry plus typed voxels (scaling already applied).
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub geometry: GridGeometry,
    pub data: VoxelData,
}

impl NiftiVolume {
    pub fn new(geometry: GridGeometry, data: VoxelData) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "{} voxels supplied for dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(NiftiVolume { geometry, data })
    }

    pub fn into_intensity(self) -> IntensityVolume {
        let data = self.data.to_f64();
        Volume::from_vec(self.geometry, data).expect("validated on construction")
    }

    /// Interprets the voxels as labels; negative or fractional values are a kind error.
    pub fn into_labels(self) -> Result<LabelVolume> {
        fn bad(x: impl std::fmt::Display) -> Error {
            Error::Kind(format!("voxel value {x} is not a non-negative integer label"))
        }
        let data: Vec<u32> = match self.data {
            VoxelData::U8(v) => v.into_iter().map(u32::from).collect(),
            VoxelData::I16(v) => v
                .into_iter()
                .map(|x| u32::try_from(x).map_err(|_| bad(x)))
                .collect::<Result<_>>()?,
            VoxelData::I32(v) => v
                .into_iter()
                .map(|x| u32::try_from(x).map_err(|_| bad(x)))
                .collect::<Result<_>>()?,
            VoxelData::F32(v) => v
                .into_iter()
                .map(|x| float_label(x as f64).ok_or_else(|| bad(x)))
                .collect::<Result<_>>()?,
            VoxelData::F64(v) => v
                .into_iter()
                .map(|x| float_label(x).ok_or_else(|| bad(x)))
                .collect::<Result<_>>()?,
        };
        Volume::from_vec(self.geometry, data)
    }

    /// Stores intensities in the narrowest type that holds every voxel bit-exactly
    /// (i16, then f32, then f64).
    pub fn from_intensity(v: &IntensityVolume) -> Self {
        let values = v.data();
        let data = if values
            .iter()
            .all(|&x| (x as i16 as f64).to_bits() == x.to_bits())
        {
            VoxelData::I16(values.iter().map(|&x| x as i16).collect())
        } else if values
            .iter()
            .all(|&x| x.is_nan() || (x as f32 as f64).to_bits() == x.to_bits())
        {
            VoxelData::F32(values.iter().map(|&x| x as f32).collect())
        } else {
            VoxelData::F64(values.to_vec())
        };
        NiftiVolume {
            geometry: v.geometry().clone(),
            data,
        }
    }

    /// Stores labels as u8, i16 or i32 depending on the largest label.
    pub fn from_labels(v: &LabelVolume) -> Result<Self> {
        let max = v.data().iter().copied().max().unwrap_or(0);
        let values = v.data();
        let data = if max <= u8::MAX as u32 {
            VoxelData::U8(values.iter().map(|&x| x as u8).collect())
        } else if max <= i16::MAX as u32 {
            VoxelData::I16(values.iter().map(|&x| x as i16).collect())
        } else if max <= i32::MAX as u32 {
            VoxelData::I32(values.iter().map(|&x| x as i32).collect())
        } else {
            return Err(Error::Capacity(format!("label {max} exceeds the i32 range")));
        };
        Ok(NiftiVolume {
            geometry: v.geometry().clone(),
            data,
        })
    }

    pub fn from_mask(v: &Mask) -> Self {
        NiftiVolume {
            geometry: v.geometry().clone(),
            data: VoxelData::U8(v.data().iter().map(|&b| b as u8).collect()),
        }
    }
}

fn float_label(x: f64) -> Option<u32> {
    (x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64).then_some(x as u32)
}

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
    fn arr<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[off..off + N]);
        a
    }

    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(off)),
            Endian::Big => i16::from_be_bytes(self.arr(off)),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(off)),
            Endian::Big => f32::from_be_bytes(self.arr(off)),
        }
    }
}

/// Decodes a single-file NIfTI-1 byte stream.
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let size_field: [u8; 4] = bytes[0..4].try_into().unwrap();
    let endian = if i32::from_le_bytes(size_field) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(size_field) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::Format(format!(
            "header size field is {}, expected 348",
            i32::from_le_bytes(size_field)
        )));
    };
    let r = Reader { bytes, endian };

    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::Format(
                "detached header/image pairs (ni1) are not supported".into(),
            ))
        }
        other => return Err(Error::Format(format!("bad magic {other:?}"))),
    }

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 3];
    for d in 1..=ndim as usize {
        let n = r.i16(40 + 2 * d);
        if n < 1 {
            return Err(Error::Format(format!("dim[{d}] = {n} is not positive")));
        }
        if d <= 3 {
            dims[d - 1] = n as usize;
        } else if n != 1 {
            return Err(Error::Format(format!(
                "dim[{d}] = {n}: only 3D volumes are supported"
            )));
        }
    }

    let datatype = Datatype::from_code(r.i16(70))?;
    let bitpix = r.i16(72);
    if bitpix as usize != datatype.size() * 8 {
        return Err(Error::Format(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype:?}"
        )));
    }

    let qfac = if r.f32(76) < 0.0 { -1.0 } else { 1.0 };
    let mut spacing = [0.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = (r.f32(80 + 4 * a) as f64).abs();
    }

    let vox_offset = r.f32(108);
    if !(vox_offset >= DATA_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Format(format!("vox_offset {vox_offset} is invalid")));
    }
    let offset = vox_offset as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;

    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    let (origin, orientation) = if sform_code > 0 {
        let mut origin = [0.0; 3];
        let mut m = [[0.0; 3]; 3];
        for row in 0..3 {
            let base = 280 + 16 * row;
            for (c, s) in spacing.iter().enumerate() {
                m[row][c] = r.f32(base + 4 * c) as f64 / s;
            }
            origin[row] = r.f32(base + 12) as f64;
        }
        normalize_columns(&mut m);
        (origin, m)
    } else if qform_code > 0 {
        let b = r.f32(256) as f64;
        let c = r.f32(260) as f64;
        let d = r.f32(264) as f64;
        let origin = [r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64];
        (origin, quaternion_to_matrix(b, c, d, qfac))
    } else {
        ([0.0; 3], crate::volume::IDENTITY)
    };

    let geometry = GridGeometry {
        dims,
        spacing,
        origin,
        orientation,
    };
    geometry.validate()?;

    let count = geometry.voxel_count();
    let need = count
        .checked_mul(datatype.size())
        .ok_or_else(|| Error::Format("voxel count overflows".into()))?;
    let available = bytes.len().saturating_sub(offset);
    if available < need {
        return Err(Error::Truncated {
            expected: need,
            found: available,
        });
    }
    let raw = &bytes[offset..offset + need];
    let data = decode(raw, datatype, endian);

    let data = if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        let mut values = data.to_f64();
        for x in &mut values {
            *x = *x * slope + inter;
        }
        VoxelData::F64(values)
    } else {
        data
    };

    Ok(NiftiVolume { geometry, data })
}

macro_rules! decode_as {
    ($raw:expr, $t:ty, $endian:expr) => {{
        const N: usize = std::mem::size_of::<$t>();
        $raw.chunks_exact(N)
            .map(|c| {
                let a: [u8; N] = c.try_into().unwrap();
                match $endian {
                    Endian::Little => <$t>::from_le_bytes(a),
                    Endian::Big => <$t>::from_be_bytes(a),
                }
            })
            .collect()
    }};
}

fn decode(raw: &[u8], datatype: Datatype, endian: Endian) -> VoxelData {
    match datatype {
        Datatype::U8 => VoxelData::U8(raw.to_vec()),
        Datatype::I16 => VoxelData::I16(decode_as!(raw, i16, endian)),
        Datatype::I32 => VoxelData::I32(decode_as!(raw, i32, endian)),
        Datatype::F32 => VoxelData::F32(decode_as!(raw, f32, endian)),
        Datatype::F64 => VoxelData::F64(decode_as!(raw, f64, endian)),
    }
}

fn normalize_columns(m: &mut [[f64; 3]; 3]) {
    for c in 0..3 {
        let norm = (m[0][c] * m[0][c] + m[1][c] * m[1][c] + m[2][c] * m[2][c]).sqrt();
        if norm > 0.0 && norm != 1.0 {
            for row in m.iter_mut() {
                row[c] /= norm;
            }
        }
    }
}

fn quaternion_to_matrix(b: f64, c: f64, d: f64, qfac: f64) -> [[f64; 3]; 3] {
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            qfac * 2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            qfac * 2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            qfac * (a * a + d * d - c * c - b * b),
        ],
    ]
}

/// Quaternion (b, c, d) and qfac for a direction matrix with unit columns.
fn matrix_to_quaternion(m: &[[f64; 3]; 3]) -> (f64, f64, f64, f64) {
    let mut r = *m;
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 { -1.0 } else { 1.0 };
    if qfac < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
    }
    let trace = r[0][0] + r[1][1] + r[2][2];
    let (a, b, c, d);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        a = 0.25 * s;
        b = (r[2][1] - r[1][2]) / s;
        c = (r[0][2] - r[2][0]) / s;
        d = (r[1][0] - r[0][1]) / s;
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        a = (r[2][1] - r[1][2]) / s;
        b = 0.25 * s;
        c = (r[0][1] + r[1][0]) / s;
        d = (r[0][2] + r[2][0]) / s;
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        a = (r[0][2] - r[2][0]) / s;
        b = (r[0][1] + r[1][0]) / s;
        c = 0.25 * s;
        d = (r[1][2] + r[2][1]) / s;
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        a = (r[1][0] - r[0][1]) / s;
        b = (r[0][2] + r[2][0]) / s;
        c = (r[1][2] + r[2][1]) / s;
        d = 0.25 * s;
    }
    // the stored form assumes a >= 0
    if a < 0.0 {
        (-b, -c, -d, qfac)
    } else {
        (b, c, d, qfac)
    }
}

/// Encodes a volume as a little-endian single-file NIfTI-1 stream.
pub fn write_nifti(v: &NiftiVolume) -> Result<Vec<u8>> {
    let g = &v.geometry;
    g.validate()?;
    for (a, &n) in g.dims.iter().enumerate() {
        if n > i16::MAX as usize {
            return Err(Error::Capacity(format!(
                "dims[{a}] = {n} exceeds the 16-bit dimension field"
            )));
        }
    }
    if v.data.len() != g.voxel_count() {
        return Err(Error::InvalidGeometry(format!(
            "{} voxels for dims {:?}",
            v.data.len(),
            g.dims
        )));
    }
    let datatype = v.data.datatype();
    let mut out = vec![0u8; DATA_OFFSET];
    let mut put = |off: usize, b: &[u8]| out[off..off + b.len()].copy_from_slice(b);

    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(38, b"r");
    put(40, &3i16.to_le_bytes());
    for a in 0..3 {
        put(42 + 2 * a, &(g.dims[a] as i16).to_le_bytes());
    }
    for d in 4..8 {
        put(40 + 2 * d, &1i16.to_le_bytes());
    }
    put(70, &datatype.code().to_le_bytes());
    put(72, &((datatype.size() * 8) as i16).to_le_bytes());

    let (qb, qc, qd, qfac) = matrix_to_quaternion(&g.orientation);
    put(76, &(qfac as f32).to_le_bytes());
    for a in 0..3 {
        put(80 + 4 * a, &(g.spacing[a] as f32).to_le_bytes());
    }
    for d in 4..8 {
        put(76 + 4 * d, &1f32.to_le_bytes());
    }
    put(108, &(DATA_OFFSET as f32).to_le_bytes());
    put(112, &1f32.to_le_bytes());
    put(116, &0f32.to_le_bytes());
    // NIFTI_UNITS_MM | NIFTI_UNITS_SEC
    put(123, &[10u8]);

    // scanner-based qform and aligned sform
    put(252, &1i16.to_le_bytes());
    put(254, &2i16.to_le_bytes());
    put(256, &(qb as f32).to_le_bytes());
    put(260, &(qc as f32).to_le_bytes());
    put(264, &(qd as f32).to_le_bytes());
    for a in 0..3 {
        put(268 + 4 * a, &(g.origin[a] as f32).to_le_bytes());
    }
    for row in 0..3 {
        let base = 280 + 16 * row;
        for c in 0..3 {
            let s = (g.orientation[row][c] as f32) * (g.spacing[c] as f32);
            put(base + 4 * c, &s.to_le_bytes());
        }
        put(base + 12, &(g.origin[row] as f32).to_le_bytes());
    }
    put(344, b"n+1\0");

    out.reserve(g.voxel_count() * datatype.size());
    match &v.data {
        VoxelData::U8(d) => out.extend_from_slice(d),
        VoxelData::I16(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::I32(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::F32(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VoxelData::F64(d) => d.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Reads a `.nii` or `.nii.gz` file; compression is detected from the content.
pub fn read_file(path: &Path) -> Result<NiftiVolume> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes)
}

/// Writes a NIfTI file, gzip-compressed when the path ends in `.gz`.
pub fn write_file(path: &Path, v: &NiftiVolume) -> Result<()> {
    let bytes = write_nifti(v)?;
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let payload = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Builds a big- or little-endian header by hand from the field layout.
    fn handmade(
        dims: [i16; 3],
        pixdim: [f32; 3],
        datatype: i16,
        bitpix: i16,
        big: bool,
        payload: &[u8],
    ) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let i32b = |x: i32| if big { x.to_be_bytes() } else { x.to_le_bytes() };
        let i16b = |x: i16| if big { x.to_be_bytes() } else { x.to_le_bytes() };
        let f32b = |x: f32| if big { x.to_be_bytes() } else { x.to_le_bytes() };
        h[0..4].copy_from_slice(&i32b(348));
        h[40..42].copy_from_slice(&i16b(3));
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&i16b(dims[a]));
        }
        h[70..72].copy_from_slice(&i16b(datatype));
        h[72..74].copy_from_slice(&i16b(bitpix));
        h[76..80].copy_from_slice(&f32b(1.0));
        for a in 0..3 {
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&f32b(pixdim[a]));
        }
        h[108..112].copy_from_slice(&f32b(352.0));
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }

    #[test]
    fn handmade_i16_header_decodes() {
        let payload: Vec<u8> = (0..64i16).flat_map(|x| x.to_le_bytes()).collect();
        let bytes = handmade([4, 4, 4], [0.5, 0.5, 3.0], 4, 16, false, &payload);
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.geometry.dims, [4, 4, 4]);
        assert_eq!(v.geometry.spacing, [0.5, 0.5, 3.0]);
        assert_eq!(v.geometry.orientation, crate::volume::IDENTITY);
        assert_eq!(v.data, VoxelData::I16((0..64).collect()));
    }

    #[test]
    fn big_endian_header_decodes() {
        let payload: Vec<u8> = (0..8i32).flat_map(|x| (x - 3).to_be_bytes()).collect();
        let bytes = handmade([2, 2, 2], [1.0, 2.0, 3.0], 8, 32, true, &payload);
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.geometry.spacing, [1.0, 2.0, 3.0]);
        assert_eq!(v.data, VoxelData::I32((-3..5).collect()));
    }

    #[test]
    fn scaling_is_applied() {
        let mut bytes = handmade([2, 1, 1], [1.0; 3], 2, 8, false, &[10, 20]);
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1024.0f32).to_le_bytes());
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.data, VoxelData::F64(vec![-1004.0, -984.0]));
    }

    #[test]
    fn zero_slope_is_identity() {
        let bytes = handmade([2, 1, 1], [1.0; 3], 2, 8, false, &[10, 20]);
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.data, VoxelData::U8(vec![10, 20]));
    }

    #[test]
    fn zero_bytes_rejected_as_format_error() {
        assert!(matches!(parse_nifti(&[0u8; 352]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_detached_rejected() {
        let mut bytes = handmade([1, 1, 1], [1.0; 3], 2, 8, false, &[1]);
        bytes[344..348].copy_from_slice(b"ni1\0");
        let err = parse_nifti(&bytes).unwrap_err();
        assert!(err.to_string().contains("ni1"));
        bytes[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        // 512 = uint16
        let bytes = handmade([1, 1, 1], [1.0; 3], 512, 16, false, &[0, 0]);
        assert!(matches!(
            parse_nifti(&bytes),
            Err(Error::UnsupportedDatatype(512))
        ));
    }

    #[test]
    fn four_d_rejected() {
        let mut bytes = handmade([1, 1, 1], [1.0; 3], 2, 8, false, &[0, 0]);
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        bytes[48..50].copy_from_slice(&2i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_data_rejected() {
        let bytes = handmade([4, 4, 4], [1.0; 3], 4, 16, false, &[0u8; 127]);
        assert!(matches!(
            parse_nifti(&bytes),
            Err(Error::Truncated {
                expected: 128,
                found: 127
            })
        ));
    }

    #[test]
    fn single_voxel_round_trip() {
        let g = GridGeometry::new([1, 1, 1], [1.0; 3]).unwrap();
        let v = NiftiVolume::new(g, VoxelData::I16(vec![7])).unwrap();
        let back = parse_nifti(&write_nifti(&v).unwrap()).unwrap();
        assert_eq!(back.into_intensity().data(), &[7.0]);
    }

    #[test]
    fn all_55_label_values_round_trip() {
        let g = GridGeometry::new([55, 1, 1], [0.5, 0.5, 3.0]).unwrap();
        let labels = Volume::from_vec(g, (0..=54u32).collect()).unwrap();
        let nv = NiftiVolume::from_labels(&labels).unwrap();
        let back = parse_nifti(&write_nifti(&nv).unwrap())
            .unwrap()
            .into_labels()
            .unwrap();
        assert_eq!(back, labels);
    }

    #[test]
    fn oversized_dims_rejected() {
        let g = GridGeometry::new([70000, 1, 1], [1.0; 3]).unwrap();
        let v = NiftiVolume::new(g, VoxelData::U8(vec![0; 70000])).unwrap();
        assert!(matches!(write_nifti(&v), Err(Error::Capacity(_))));
    }

    #[test]
    fn negative_values_are_not_labels() {
        let g = GridGeometry::new([2, 1, 1], [1.0; 3]).unwrap();
        let v = NiftiVolume::new(g.clone(), VoxelData::I16(vec![1, -1])).unwrap();
        assert!(matches!(v.into_labels(), Err(Error::Kind(_))));
        let v = NiftiVolume::new(g, VoxelData::F32(vec![1.0, 1.5])).unwrap();
        assert!(matches!(v.into_labels(), Err(Error::Kind(_))));
    }

    #[test]
    fn intensity_storage_is_narrowest_lossless() {
        let g = GridGeometry::new([3, 1, 1], [1.0; 3]).unwrap();
        let ints = Volume::from_vec(g.clone(), vec![-1000.0, 0.0, 2000.0]).unwrap();
        assert_eq!(NiftiVolume::from_intensity(&ints).data.datatype(), Datatype::I16);
        let halves = Volume::from_vec(g.clone(), vec![-0.5, 0.25, 1e6]).unwrap();
        assert_eq!(NiftiVolume::from_intensity(&halves).data.datatype(), Datatype::F32);
        let fine = Volume::from_vec(g, vec![0.1, 0.2, 0.3]).unwrap();
        let nv = NiftiVolume::from_intensity(&fine);
        assert_eq!(nv.data.datatype(), Datatype::F64);
        let back = parse_nifti(&write_nifti(&nv).unwrap()).unwrap().into_intensity();
        assert_eq!(back.data(), fine.data());
    }

    #[test]
    fn oblique_orientation_survives_within_tolerance() {
        let t: f64 = 0.3;
        let mut g = GridGeometry::new([2, 2, 2], [0.75, 0.75, 3.0]).unwrap();
        g.orientation = [[t.cos(), -t.sin(), 0.0], [t.sin(), t.cos(), 0.0], [0.0, 0.0, -1.0]];
        let v = NiftiVolume::new(g.clone(), VoxelData::U8(vec![0; 8])).unwrap();
        let back = parse_nifti(&write_nifti(&v).unwrap()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((back.geometry.orientation[r][c] - g.orientation[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let t: f64 = 1.1;
        let m = [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
        let (b, c, d, qfac) = matrix_to_quaternion(&m);
        let back = quaternion_to_matrix(b, c, d, qfac);
        for r in 0..3 {
            for col in 0..3 {
                assert!((back[r][col] - m[r][col]).abs() < 1e-12);
            }
        }
        let flip = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        let (b, c, d, qfac) = matrix_to_quaternion(&flip);
        assert_eq!(quaternion_to_matrix(b, c, d, qfac), flip);
    }

    #[test]
    fn gzip_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.nii.gz");
        let g = GridGeometry::new([3, 2, 1], [0.5, 0.5, 3.0]).unwrap();
        let v = NiftiVolume::new(g, VoxelData::I16(vec![1, 2, 3, 4, 5, 6])).unwrap();
        write_file(&path, &v).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..2], &[0x1f, 0x8b]);
        assert_eq!(read_file(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn truncation_never_yields_volume(cut in 0usize..(352 + 2 * 24)) {
            let g = GridGeometry::new([2, 3, 4], [0.5, 0.5, 3.0]).unwrap();
            let v = NiftiVolume::new(g, VoxelData::I16((0..24).collect())).unwrap();
            let bytes = write_nifti(&v).unwrap();
            prop_assert!(parse_nifti(&bytes[..cut]).is_err());
        }
    }
}
