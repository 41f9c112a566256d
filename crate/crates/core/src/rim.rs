//! Rim segmentation from a probability map, per-slice thinning and the
//! length/perimeter measurements that feed the decision rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion_prep::LesionPatch;
use crate::volume::{SliceMask, Volume, VolumeKind};

/// Binary rim mask obtained at probability threshold `tau_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RimSegmentation {
    pub mask: Volume,
    pub tau_p: f64,
}

/// Per-slice measurements for one lesion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMeasure {
    pub slice_index: usize,
    /// Skeleton pixel count of the rim on this slice.
    pub rim_length: u32,
    /// 4-connectivity boundary pixel count of the lesion on this slice.
    pub flair_perimeter: u32,
}

/// Conventions behind the measurements, recorded alongside results.
pub const RIM_LENGTH_CONVENTION: &str =
    "skeleton pixel count, two-subiteration thinning, 8-connected";
pub const PERIMETER_CONVENTION: &str =
    "lesion pixels with a 4-neighbour outside the lesion, per axial slice";

/// Threshold `prob` at `tau_p` (inclusive) and intersect with `support`.
pub fn threshold_probability(
    prob: &Volume,
    support: Option<&Volume>,
    tau_p: f64,
) -> Result<RimSegmentation> {
    if !(0.0..=1.0).contains(&tau_p) {
        return Err(Error::InvalidParameter(format!(
            "tau_p must lie in [0,1], got {tau_p}"
        )));
    }
    prob.ensure_kind(VolumeKind::Probability, "threshold_probability")?;
    let mut bits: Vec<f32> = prob
        .data()
        .iter()
        .map(|&p| if p as f64 >= tau_p { 1.0 } else { 0.0 })
        .collect();
    if let Some(s) = support {
        s.ensure_same_grid(prob, "threshold support")?;
        bits.iter_mut().zip(s.data()).for_each(|(b, &m)| {
            if m == 0.0 {
                *b = 0.0;
            }
        });
    }
    Ok(RimSegmentation {
        mask: Volume::new(prob.dims(), prob.spacing(), VolumeKind::BinaryMask, bits)?,
        tau_p,
    })
}

/// Threshold a patch's probability map inside its dilated mask.
pub fn segment_patch(patch: &LesionPatch, tau_p: f64) -> Result<RimSegmentation> {
    let prob = patch
        .prob
        .as_ref()
        .ok_or_else(|| Error::Missing(format!("probability map for lesion {}", patch.lesion_id)))?;
    threshold_probability(prob, patch.dilated_mask.as_ref(), tau_p)
}

// Ring order: N, NE, E, SE, S, SW, W, NW (y grows downward).
const RING: [(i64, i64); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

#[inline]
fn ring(img: &SliceMask, x: usize, y: usize) -> [bool; 8] {
    RING.map(|(dx, dy)| img.get_signed(x as i64 + dx, y as i64 + dy))
}

/// Number of 0 -> 1 transitions walking once around the ring.
#[inline]
fn transitions(r: &[bool; 8]) -> u32 {
    (0..8).filter(|&i| !r[i] && r[(i + 1) % 8]).count() as u32
}

/// Yokoi connectivity number for 8-connected foreground; 1 means simple.
#[inline]
fn yokoi8(r: &[bool; 8]) -> u32 {
    let n = r.map(|b| !b as u32);
    [0, 2, 4, 6]
        .iter()
        .map(|&k| n[k] - n[k] * n[k + 1] * n[(k + 2) % 8])
        .sum()
}

/// Thin a binary slice to a one-pixel-wide skeleton.
///
/// Each pass runs the two directional subiterations of the Zhang-Suen scheme.
/// Candidates are collected on a snapshot, then removed in raster order only
/// while they are still simple points with at least two neighbours, so the
/// number of 8-connected components (and 4-connected holes) never changes.
pub fn thin_slice(slice: &SliceMask) -> SliceMask {
    let mut img = slice.clone();
    let (w, h) = (img.width(), img.height());
    let mut candidates = Vec::new();
    loop {
        let mut removed = 0usize;
        for step in 0..2 {
            candidates.clear();
            for y in 0..h {
                for x in 0..w {
                    if !img.get(x, y) {
                        continue;
                    }
                    let r = ring(&img, x, y);
                    let b = r.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) || transitions(&r) != 1 {
                        continue;
                    }
                    // r[0]=N(P2) r[2]=E(P4) r[4]=S(P6) r[6]=W(P8)
                    let ok = if step == 0 {
                        !(r[0] && r[2] && r[4]) && !(r[2] && r[4] && r[6])
                    } else {
                        !(r[0] && r[2] && r[6]) && !(r[0] && r[4] && r[6])
                    };
                    if ok {
                        candidates.push((x, y));
                    }
                }
            }
            for &(x, y) in &candidates {
                let r = ring(&img, x, y);
                let b = r.iter().filter(|&&v| v).count();
                if b >= 2 && yokoi8(&r) == 1 {
                    img.set(x, y, false);
                    removed += 1;
                }
            }
        }
        if removed == 0 {
            return img;
        }
    }
}

/// Skeleton pixel count of the rim on every axial slice.
pub fn rim_length_per_slice(rim: &RimSegmentation) -> Vec<SliceMeasure> {
    let nz = rim.mask.dims()[2];
    (0..nz)
        .map(|z| {
            let s = rim.mask.slice_mask(z);
            let rim_length = if s.count() == 0 {
                0
            } else {
                thin_slice(&s).count() as u32
            };
            SliceMeasure {
                slice_index: z,
                rim_length,
                flair_perimeter: 0,
            }
        })
        .collect()
}

/// Count of lesion pixels with a 4-neighbour outside the lesion (out of bounds counts as outside).
pub fn slice_perimeter(slice: &SliceMask) -> u32 {
    let mut n = 0;
    for y in 0..slice.height() {
        for x in 0..slice.width() {
            if !slice.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let boundary = !slice.get_signed(xi, yi - 1)
                || !slice.get_signed(xi + 1, yi)
                || !slice.get_signed(xi, yi + 1)
                || !slice.get_signed(xi - 1, yi);
            if boundary {
                n += 1;
            }
        }
    }
    n
}

/// Lesion perimeter on every axial slice of the patch.
pub fn flair_perimeter_per_slice(patch: &LesionPatch) -> Vec<SliceMeasure> {
    mask_perimeter_per_slice(&patch.flair_mask)
}

pub fn mask_perimeter_per_slice(mask: &Volume) -> Vec<SliceMeasure> {
    (0..mask.dims()[2])
        .map(|z| SliceMeasure {
            slice_index: z,
            rim_length: 0,
            flair_perimeter: slice_perimeter(&mask.slice_mask(z)),
        })
        .collect()
}

/// Combine rim lengths and perimeters slice by slice.
pub fn merge_measures(rim: &[SliceMeasure], flair: &[SliceMeasure]) -> Result<Vec<SliceMeasure>> {
    if rim.len() != flair.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rim slices vs {} perimeter slices",
            rim.len(),
            flair.len()
        )));
    }
    Ok(rim
        .iter()
        .zip(flair)
        .map(|(r, f)| SliceMeasure {
            slice_index: r.slice_index,
            rim_length: r.rim_length,
            flair_perimeter: f.flair_perimeter,
        })
        .collect())
}

/// Full per-slice measurement of one patch at `tau_p`.
pub fn measure_patch(
    patch: &LesionPatch,
    tau_p: f64,
) -> Result<(RimSegmentation, Vec<SliceMeasure>)> {
    let rim = segment_patch(patch, tau_p)?;
    let measures = merge_measures(
        &rim_length_per_slice(&rim),
        &flair_perimeter_per_slice(patch),
    )?;
    Ok((rim, measures))
}
