//! Per-lesion patch extraction and millimetre-based mask dilation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::LesionLabelMap;
use crate::volume::{Spacing, Volume, VolumeKind};

pub const DEFAULT_PATCH_SIZE: [usize; 3] = [64, 64, 24];
pub const DEFAULT_DILATION_MM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub size: [usize; 3],
    pub dilation_mm: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_PATCH_SIZE,
            dilation_mm: DEFAULT_DILATION_MM,
        }
    }
}

/// A fixed-size crop around one lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionPatch {
    pub lesion_id: u32,
    /// Parent-volume voxel coordinate of patch index (0, 0, 0); may be negative.
    pub offset: [i64; 3],
    pub qsm: Volume,
    pub prob: Option<Volume>,
    /// The lesion's own voxels inside the window.
    pub flair_mask: Volume,
    pub dilated_mask: Option<Volume>,
    /// Lesion voxels that fell outside the window.
    pub truncated_voxels: usize,
    /// Whether `apply_dilated_mask` has been run.
    pub masked: bool,
}

impl LesionPatch {
    pub fn dims(&self) -> [usize; 3] {
        self.flair_mask.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.flair_mask.spacing()
    }

    /// Attach a probability map on the patch grid.
    pub fn with_prob(mut self, prob: Volume) -> Result<Self> {
        prob.ensure_kind(VolumeKind::Probability, "patch probability map")?;
        prob.ensure_same_grid(&self.flair_mask, "patch probability map")?;
        self.prob = Some(prob);
        Ok(self)
    }

    /// Populate `dilated_mask` by dilating `flair_mask` by `radius_mm`.
    pub fn dilate(mut self, radius_mm: f64) -> Result<Self> {
        self.dilated_mask = Some(dilate_mask_mm(&self.flair_mask, radius_mm)?);
        Ok(self)
    }

    /// Check member grids and the flair ⊆ dilated relation.
    pub fn validate(&self) -> Result<()> {
        self.flair_mask
            .ensure_kind(VolumeKind::BinaryMask, "flair mask")?;
        self.qsm.ensure_same_grid(&self.flair_mask, "patch qsm")?;
        if let Some(p) = &self.prob {
            p.ensure_same_grid(&self.flair_mask, "patch probability map")?;
        }
        if let Some(d) = &self.dilated_mask {
            d.ensure_kind(VolumeKind::BinaryMask, "dilated mask")?;
            d.ensure_same_grid(&self.flair_mask, "dilated mask")?;
            let outside = self
                .flair_mask
                .data()
                .iter()
                .zip(d.data())
                .any(|(&f, &dm)| f != 0.0 && dm == 0.0);
            if outside {
                return Err(Error::InvalidVolume(
                    "flair mask is not contained in dilated mask".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Integer lesion centroid, truncated toward zero.
pub fn lesion_centroid(labels: &LesionLabelMap, lesion_id: u32) -> Result<[i64; 3]> {
    if !labels.contains(lesion_id) {
        return Err(Error::UnknownLesion(lesion_id));
    }
    let vol = labels.volume();
    let voxels = labels.voxels_of(lesion_id);
    if voxels.is_empty() {
        return Err(Error::UnknownLesion(lesion_id));
    }
    let mut sum = [0u64; 3];
    for &i in &voxels {
        let c = vol.coords(i);
        for a in 0..3 {
            sum[a] += c[a] as u64;
        }
    }
    let n = voxels.len() as u64;
    Ok(sum.map(|s| (s / n) as i64))
}

/// Crop a `size` window around the lesion centroid.
///
/// The centroid lands on patch index `size / 2`; out-of-volume voxels are
/// zero. The returned patch has no dilated mask or probability map yet.
pub fn crop_patch(
    qsm: &Volume,
    labels: &LesionLabelMap,
    lesion_id: u32,
    size: [usize; 3],
) -> Result<LesionPatch> {
    qsm.ensure_same_grid(labels.volume(), "crop_patch qsm vs labels")?;
    if size.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "patch size must be positive, got {size:?}"
        )));
    }
    let centroid = lesion_centroid(labels, lesion_id)?;
    let offset = [0, 1, 2].map(|a| centroid[a] - (size[a] / 2) as i64);

    let label_vol = labels.volume();
    let target = lesion_id as f32;
    let n = size.iter().product();
    let mut qsm_data = vec![0f32; n];
    let mut flair = vec![0f32; n];
    let mut inside = 0usize;
    let mut i = 0;
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let (px, py, pz) = (
                    offset[0] + x as i64,
                    offset[1] + y as i64,
                    offset[2] + z as i64,
                );
                if let Some(v) = qsm.get_signed(px, py, pz) {
                    qsm_data[i] = v;
                    if label_vol.get(px as usize, py as usize, pz as usize) == target {
                        flair[i] = 1.0;
                        inside += 1;
                    }
                }
                i += 1;
            }
        }
    }
    let total = labels.voxels_of(lesion_id).len();
    let spacing = qsm.spacing();
    Ok(LesionPatch {
        lesion_id,
        offset,
        qsm: Volume::new(size, spacing, VolumeKind::Intensity, qsm_data)?,
        prob: None,
        flair_mask: Volume::new(size, spacing, VolumeKind::BinaryMask, flair)?,
        dilated_mask: None,
        truncated_voxels: total - inside,
        masked: false,
    })
}

/// Crop, dilate and mask one lesion with `config`.
pub fn prepare_patch(
    qsm: &Volume,
    labels: &LesionLabelMap,
    lesion_id: u32,
    config: &PatchConfig,
) -> Result<LesionPatch> {
    let patch = crop_patch(qsm, labels, lesion_id, config.size)?.dilate(config.dilation_mm)?;
    apply_dilated_mask(patch)
}

/// Integer offsets inside the ellipsoid of `radius_mm` at `spacing`.
pub fn ellipsoid_offsets(spacing: Spacing, radius_mm: f64) -> Vec<[i64; 3]> {
    let sp = spacing.as_array();
    let reach = sp.map(|s| (radius_mm / s + 1e-9).floor() as i64);
    // tolerance keeps lattice points lying exactly on the surface
    let limit = radius_mm * radius_mm * (1.0 + 1e-9);
    let mut out = Vec::new();
    for dz in -reach[2]..=reach[2] {
        for dy in -reach[1]..=reach[1] {
            for dx in -reach[0]..=reach[0] {
                let d2 = (dx as f64 * sp[0]).powi(2)
                    + (dy as f64 * sp[1]).powi(2)
                    + (dz as f64 * sp[2]).powi(2);
                if d2 <= limit {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Binary dilation by an ellipsoid defined in millimetres.
pub fn dilate_mask_mm(mask: &Volume, radius_mm: f64) -> Result<Volume> {
    mask.ensure_kind(VolumeKind::BinaryMask, "dilate_mask_mm")?;
    if !(radius_mm.is_finite() && radius_mm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dilation radius must be positive, got {radius_mm}"
        )));
    }
    let offsets = ellipsoid_offsets(mask.spacing(), radius_mm);
    let [nx, ny, nz] = mask.dims();
    let src = mask.data();
    let mut out = src.to_vec();
    for (i, &v) in src.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let [x, y, z] = mask.coords(i);
        for o in &offsets {
            let (qx, qy, qz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
            if qx >= 0 && qy >= 0 && qz >= 0 && qx < nx as i64 && qy < ny as i64 && qz < nz as i64 {
                out[mask.index(qx as usize, qy as usize, qz as usize)] = 1.0;
            }
        }
    }
    Ok(mask.with_data(out))
}

/// Zero `qsm` (and `prob`, when attached) outside the dilated mask.
pub fn apply_dilated_mask(mut patch: LesionPatch) -> Result<LesionPatch> {
    let dilated = patch
        .dilated_mask
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("dilated mask for lesion {}", patch.lesion_id)))?;
    let keep = dilated.data();
    let masked = |v: &Volume| {
        let data = v
            .data()
            .iter()
            .zip(keep)
            .map(|(&x, &k)| if k != 0.0 { x } else { 0.0 })
            .collect();
        v.with_data(data)
    };
    patch.qsm = masked(&patch.qsm);
    if let Some(p) = &patch.prob {
        patch.prob = Some(masked(p));
    }
    patch.masked = true;
    Ok(patch)
}
