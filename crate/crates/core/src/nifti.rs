//! Minimal NIfTI-1 single-file (`.nii`, `.nii.gz`) reader and writer for 3D
//! scalar volumes.
//!
//! On load, voxel axes are permuted and flipped so that axis i runs along
//! world axis i in the positive direction (the orientation is taken from the
//! sform when present, otherwise the qform, otherwise identity). Files are
//! written little-endian with an identity-oriented sform/qform.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

use crate::error::{Error, Result};
use crate::volume::{Spacing, Volume, VolumeKind};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offsets {
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    UInt8,
    Int8,
    Int16,
    UInt16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Self::UInt8,
            4 => Self::Int16,
            8 => Self::Int32,
            16 => Self::Float32,
            64 => Self::Float64,
            256 => Self::Int8,
            512 => Self::UInt16,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            Self::UInt8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Float64 => 64,
            Self::Int8 => 256,
            Self::UInt16 => 512,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::UInt8 | Self::Int8 => 1,
            Self::Int16 | Self::UInt16 => 2,
            Self::Int32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

/// Read a 3D scalar NIfTI-1 volume and validate it as `kind`.
pub fn load_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    let bad = |reason: String| Error::Nifti {
        path: path.to_path_buf(),
        reason,
    };
    match parse(&bytes) {
        Ok((dims, spacing, data)) => {
            Volume::new(dims, spacing, kind, data).map_err(|e| bad(e.to_string()))
        }
        Err(reason) => Err(bad(reason)),
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<([usize; 3], Spacing, Vec<f32>), String> {
    if bytes.len() < HEADER_SIZE {
        return Err(format!(
            "file is {} bytes, shorter than a header",
            bytes.len()
        ));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_with::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_with::<BigEndian>(bytes)
    } else {
        Err("sizeof_hdr is not 348".into())
    }
}

fn parse_with<B: ByteOrder>(
    h: &[u8],
) -> std::result::Result<([usize; 3], Spacing, Vec<f32>), String> {
    let magic = &h[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(format!(
            "unsupported magic {magic:?} (expected single-file NIfTI-1)"
        ));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&h[offsets::DIM + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(format!("dim[0] = {ndim} is invalid"));
    }
    let extent = |i: usize| if (i as i16) <= ndim { dim[i] } else { 1 };
    if (4..=7).any(|i| extent(i) > 1) {
        return Err(format!(
            "image is not 3D (dim = {:?})",
            &dim[..=ndim as usize]
        ));
    }
    let in_dims = [extent(1), extent(2), extent(3)];
    if in_dims.iter().any(|&d| d < 1) {
        return Err(format!("non-positive extent in {in_dims:?}"));
    }
    let in_dims = in_dims.map(|d| d as usize);

    let code = B::read_i16(&h[offsets::DATATYPE..]);
    let dtype =
        DataType::from_code(code).ok_or_else(|| format!("unsupported datatype code {code}"))?;
    let bitpix = B::read_i16(&h[offsets::BITPIX..]);
    if bitpix as usize != dtype.size() * 8 {
        return Err(format!("bitpix {bitpix} inconsistent with datatype {code}"));
    }

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = B::read_f32(&h[offsets::PIXDIM + 4 * i..]);
    }
    let vox_offset = B::read_f32(&h[offsets::VOX_OFFSET..]);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(format!("vox_offset {vox_offset} is invalid"));
    }
    let vox_offset = vox_offset as usize;
    let n = in_dims.iter().product::<usize>();
    let need = vox_offset + n * dtype.size();
    if h.len() < need {
        return Err(format!(
            "truncated data: need {need} bytes, have {}",
            h.len()
        ));
    }
    let body = &h[vox_offset..need];
    let mut values: Vec<f32> = match dtype {
        DataType::UInt8 => body.iter().map(|&b| b as f32).collect(),
        DataType::Int8 => body.iter().map(|&b| b as i8 as f32).collect(),
        DataType::Int16 => body
            .chunks_exact(2)
            .map(|c| B::read_i16(c) as f32)
            .collect(),
        DataType::UInt16 => body
            .chunks_exact(2)
            .map(|c| B::read_u16(c) as f32)
            .collect(),
        DataType::Int32 => body
            .chunks_exact(4)
            .map(|c| B::read_i32(c) as f32)
            .collect(),
        DataType::Float32 => body.chunks_exact(4).map(B::read_f32).collect(),
        DataType::Float64 => body
            .chunks_exact(8)
            .map(|c| B::read_f64(c) as f32)
            .collect(),
    };
    let slope = B::read_f32(&h[offsets::SCL_SLOPE..]);
    let inter = B::read_f32(&h[offsets::SCL_INTER..]);
    if slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        values.iter_mut().for_each(|v| *v = *v * slope + inter);
    }

    let axes = axis_map::<B>(h, &pixdim);
    let voxel_sizes = [pixdim[1], pixdim[2], pixdim[3]].map(|p| {
        let p = p.abs();
        if p.is_finite() && p > 0.0 {
            widen_decimal(p)
        } else {
            1.0
        }
    });
    let mut out_dims = [0usize; 3];
    let mut out_sp = [0f64; 3];
    for (a, &(w, _)) in axes.iter().enumerate() {
        out_dims[w] = in_dims[a];
        out_sp[w] = voxel_sizes[a];
    }
    let spacing = Spacing::new(out_sp[0], out_sp[1], out_sp[2]).map_err(|e| e.to_string())?;

    let data = if axes == [(0, false), (1, false), (2, false)] {
        values
    } else {
        reorient(&values, in_dims, out_dims, &axes)
    };
    Ok((out_dims, spacing, data))
}

/// For each voxel axis, the world axis it maps onto and whether it runs backwards.
/// The f64 nearest the shortest decimal that round-trips `v`, so a stored
/// 0.4f32 reads back as 0.4 rather than 0.4000000059604645.
fn widen_decimal(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn axis_map<B: ByteOrder>(h: &[u8], pixdim: &[f32; 8]) -> [(usize, bool); 3] {
    let identity = [(0, false), (1, false), (2, false)];
    let sform = B::read_i16(&h[offsets::SFORM_CODE..]);
    let qform = B::read_i16(&h[offsets::QFORM_CODE..]);
    // cols[a][w]: world component w of voxel axis a
    let cols: [[f64; 3]; 3] = if sform > 0 {
        let mut rows = [[0f64; 4]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = B::read_f32(&h[offsets::SROW_X + 16 * r + 4 * c..]) as f64;
            }
        }
        [0, 1, 2].map(|a| [rows[0][a], rows[1][a], rows[2][a]])
    } else if qform > 0 {
        let b = B::read_f32(&h[offsets::QUATERN_B..]) as f64;
        let c = B::read_f32(&h[offsets::QUATERN_B + 4..]) as f64;
        let d = B::read_f32(&h[offsets::QUATERN_B + 8..]) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2] * qfac, r[1][2] * qfac, r[2][2] * qfac],
        ]
    } else {
        return identity;
    };

    let mut used = [false; 3];
    let mut out = identity;
    for (a, col) in cols.iter().enumerate() {
        let (w, v) = col.iter().enumerate().fold((0, 0.0f64), |best, (w, &v)| {
            if v.abs() > best.1.abs() {
                (w, v)
            } else {
                best
            }
        });
        if v == 0.0 || used[w] {
            return identity;
        }
        used[w] = true;
        out[a] = (w, v < 0.0);
    }
    out
}

fn reorient(
    values: &[f32],
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    axes: &[(usize, bool); 3],
) -> Vec<f32> {
    let mut out = vec![0f32; values.len()];
    let stride = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let mut i = 0;
    for k in 0..in_dims[2] {
        for j in 0..in_dims[1] {
            for ii in 0..in_dims[0] {
                let mut o = 0;
                for (a, &c) in [ii, j, k].iter().enumerate() {
                    let (w, flip) = axes[a];
                    let c = if flip { in_dims[a] - 1 - c } else { c };
                    o += c * stride[w];
                }
                out[o] = values[i];
                i += 1;
            }
        }
    }
    out
}

/// Write `volume` as NIfTI-1; gzip-compressed when the path ends in `.gz`.
///
/// Masks are stored as uint8, label maps as int16 (float32 past 32767),
/// intensities and probabilities as float32.
pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(volume);
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    if gz {
        // mtime stays 0 so output is byte-reproducible
        let mut enc: GzEncoder<_> = GzBuilder::new().write(&mut w, Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode(v: &Volume) -> Vec<u8> {
    let dtype = match v.kind() {
        VolumeKind::BinaryMask => DataType::UInt8,
        VolumeKind::LabelMap if v.data().iter().all(|&x| x <= i16::MAX as f32) => DataType::Int16,
        _ => DataType::Float32,
    };
    let n = v.len();
    let mut buf = vec![0u8; VOX_OFFSET + n * dtype.size()];
    let h = &mut buf[..];
    type E = LittleEndian;
    E::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    let [nx, ny, nz] = v.dims();
    let dim: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut h[offsets::DIM + 2 * i..], *d);
    }
    E::write_i16(&mut h[offsets::DATATYPE..], dtype.code());
    E::write_i16(&mut h[offsets::BITPIX..], (dtype.size() * 8) as i16);
    let sp = v.spacing();
    let pixdim: [f32; 8] = [
        1.0,
        sp.dx as f32,
        sp.dy as f32,
        sp.dz as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut h[offsets::PIXDIM + 4 * i..], *p);
    }
    E::write_f32(&mut h[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    E::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    E::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    h[offsets::XYZT_UNITS] = 2; // millimetres
    let descrip = format!("rimscan {:?}", v.kind());
    h[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip.as_bytes());
    E::write_i16(&mut h[offsets::QFORM_CODE..], 1);
    E::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    let srow = [
        [sp.dx, 0.0, 0.0, 0.0],
        [0.0, sp.dy, 0.0, 0.0],
        [0.0, 0.0, sp.dz, 0.0],
    ];
    for (r, row) in srow.iter().enumerate() {
        for (c, val) in row.iter().enumerate() {
            E::write_f32(&mut h[offsets::SROW_X + 16 * r + 4 * c..], *val as f32);
        }
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    let body = &mut buf[VOX_OFFSET..];
    match dtype {
        DataType::UInt8 => body
            .iter_mut()
            .zip(v.data())
            .for_each(|(b, &x)| *b = x as u8),
        DataType::Int16 => body
            .chunks_exact_mut(2)
            .zip(v.data())
            .for_each(|(c, &x)| E::write_i16(c, x as i16)),
        DataType::Float32 => body
            .chunks_exact_mut(4)
            .zip(v.data())
            .for_each(|(c, &x)| E::write_f32(c, x)),
        _ => unreachable!("writer only emits uint8, int16, float32"),
    }
    buf
}
