//! Voxel-grid data model.
//!
//! Volumes are stored x-fastest (`x + nx * (y + ny * z)`); the z axis is the
//! slice axis for every per-slice operation in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability values this far outside [0, 1] are clamped instead of rejected.
pub const PROBABILITY_TOLERANCE: f32 = 1e-6;

/// Voxel edge lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Spacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        for (name, v) in [("dx", dx), ("dy", dy), ("dz", dz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "spacing {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { dx, dy, dz })
    }

    pub fn isotropic(d: f64) -> Result<Self> {
        Self::new(d, d, d)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn approx_eq(&self, other: &Spacing, tol: f64) -> bool {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// What the voxel values of a volume mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    Intensity,
    Probability,
    BinaryMask,
    LabelMap,
}

/// A 3D scalar grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: Spacing,
    kind: VolumeKind,
    data: Vec<f32>,
}

impl Volume {
    /// Build a volume, validating the invariants of `kind`.
    ///
    /// Probability values within [`PROBABILITY_TOLERANCE`] of [0, 1] are clamped.
    pub fn new(
        dims: [usize; 3],
        spacing: Spacing,
        kind: VolumeKind,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?} ({n} voxels)",
                data.len(),
                dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite value at voxel {i}"
            )));
        }
        match kind {
            VolumeKind::Intensity => {}
            VolumeKind::Probability => {
                for (i, v) in data.iter_mut().enumerate() {
                    if *v < -PROBABILITY_TOLERANCE || *v > 1.0 + PROBABILITY_TOLERANCE {
                        return Err(Error::InvalidVolume(format!(
                            "probability {v} outside [0,1] at voxel {i}"
                        )));
                    }
                    *v = v.clamp(0.0, 1.0);
                }
            }
            VolumeKind::BinaryMask => {
                if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidVolume(format!(
                        "binary mask holds value {} at voxel {i}",
                        data[i]
                    )));
                }
            }
            VolumeKind::LabelMap => {
                if let Some(i) = data
                    .iter()
                    .position(|&v| v < 0.0 || v.fract() != 0.0 || v > 16_777_216.0)
                {
                    return Err(Error::InvalidVolume(format!(
                        "label map holds value {} at voxel {i}",
                        data[i]
                    )));
                }
            }
        }
        Ok(Self {
            dims,
            spacing,
            kind,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: Spacing, kind: VolumeKind) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        assert!(n > 0, "zero-sized volume");
        Self {
            dims,
            spacing,
            kind,
            data: vec![0.0; n],
        }
    }

    /// Binary mask from a boolean per voxel.
    pub fn from_mask(dims: [usize; 3], spacing: Spacing, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(dims, spacing, VolumeKind::BinaryMask, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Value at signed coordinates, `None` outside the grid.
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> Option<f32> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some(self.get(x, y, z))
    }

    /// True where the voxel value is nonzero.
    pub fn mask_bits(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0.0).collect()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing.approx_eq(&other.spacing, 1e-6)
    }

    pub(crate) fn ensure_same_grid(&self, other: &Volume, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if !self.spacing.approx_eq(&other.spacing, 1e-6) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_kind(&self, kind: VolumeKind, what: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidVolume(format!(
                "{what}: expected {kind:?} volume, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Same grid and kind, new voxel values. Values are not revalidated.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            dims: self.dims,
            spacing: self.spacing,
            kind: self.kind,
            data,
        }
    }

    /// Reinterpret the values under a different kind, validating it.
    pub fn reinterpret(self, kind: VolumeKind) -> Result<Self> {
        Self::new(self.dims, self.spacing, kind, self.data)
    }

    /// Extract axial slice `z` of a mask-like volume.
    pub fn slice_mask(&self, z: usize) -> SliceMask {
        let [nx, ny, _] = self.dims;
        let start = z * nx * ny;
        let bits = self.data[start..start + nx * ny]
            .iter()
            .map(|&v| v != 0.0)
            .collect();
        SliceMask {
            width: nx,
            height: ny,
            bits,
        }
    }
}

/// A 2D binary grid (one axial slice), row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl SliceMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "slice size mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    /// Parse rows of `'1'`/`'#'` (set) and anything else (unset).
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for r in rows {
            assert_eq!(r.len(), width, "ragged rows");
            bits.extend(r.bytes().map(|c| c == b'1' || c == b'#'));
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[x + self.width * y]
    }

    /// Out-of-bounds reads are background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[x as usize + self.width * y as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[x + self.width * y] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &SliceMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}
