//! Deterministic synthetic lesion cohorts with known rim ground truth.
//!
//! Each lesion is an ellipsoidal FLAIR blob centred in its patch. PRLs carry
//! a full or partial shell rim on two or more consecutive slices; non-PRLs
//! carry no rim, a rim on a single slice, or a short arc. Every lesion is run
//! through the detection pipeline on its uncorrupted map during generation,
//! and rejected geometry is redrawn, so labels agree with the decision rule
//! at `tau_p = 0.5`, `tau_r = 0.1` by construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionThresholds, DEFAULT_TAU_R};
use crate::error::{Error, Result};
use crate::lesion_prep::{
    apply_dilated_mask, LesionPatch, DEFAULT_DILATION_MM, DEFAULT_PATCH_SIZE,
};
use crate::pipeline::detect_patch;
use crate::rng::{sub_seed, SeededRng};
use crate::volume::{Spacing, Volume, VolumeKind};

const MAX_ATTEMPTS: usize = 64;
/// Probability threshold of the built-in self-check.
pub const SELF_CHECK_TAU_P: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub n_subjects: usize,
    /// Inclusive range of lesions per subject.
    pub lesions_per_subject: (usize, usize),
    pub prl_fraction: f64,
    /// Inclusive range of rim thickness in voxels.
    pub rim_thickness_vox: (usize, usize),
    /// Share of PRLs drawn with a partial rim.
    pub partial_rim_fraction: f64,
    /// Arc range for partial rims, degrees.
    pub rim_arc_degrees: (f64, f64),
    pub noise_sigma: f64,
    pub blur_radius_vox: f64,
    pub seed: u64,
    pub patch_size: [usize; 3],
    pub spacing: [f64; 3],
    pub dilation_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_subjects: 50,
            lesions_per_subject: (4, 12),
            prl_fraction: 0.033,
            rim_thickness_vox: (1, 3),
            partial_rim_fraction: 0.3,
            rim_arc_degrees: (150.0, 300.0),
            noise_sigma: 0.0,
            blur_radius_vox: 0.0,
            seed: 7,
            patch_size: DEFAULT_PATCH_SIZE,
            spacing: [0.4, 0.4, 1.0],
            dilation_mm: DEFAULT_DILATION_MM,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        let (lo, hi) = self.lesions_per_subject;
        if lo == 0 || lo > hi {
            return bad(format!("lesions_per_subject range ({lo}, {hi}) is invalid"));
        }
        for (name, f) in [
            ("prl_fraction", self.prl_fraction),
            ("partial_rim_fraction", self.partial_rim_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0,1], got {f}"));
            }
        }
        let (t0, t1) = self.rim_thickness_vox;
        if t0 < 1 || t0 > t1 {
            return bad(format!("rim_thickness_vox range ({t0}, {t1}) is invalid"));
        }
        let (a0, a1) = self.rim_arc_degrees;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 360.0) {
            return bad(format!("rim_arc_degrees range ({a0}, {a1}) is invalid"));
        }
        if !(self.noise_sigma >= 0.0 && self.blur_radius_vox >= 0.0) {
            return bad("noise_sigma and blur_radius_vox must be non-negative".into());
        }
        if !(self.dilation_mm > 0.0) {
            return bad("dilation_mm must be positive".into());
        }
        let [nx, ny, nz] = self.patch_size;
        if nx < 24 || ny < 24 || nz < 8 {
            return bad(format!(
                "patch size {:?} too small for phantom lesions",
                self.patch_size
            ));
        }
        Spacing::new(self.spacing[0], self.spacing[1], self.spacing[2])?;
        Ok(())
    }

    fn spacing(&self) -> Spacing {
        Spacing {
            dx: self.spacing[0],
            dy: self.spacing[1],
            dz: self.spacing[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RimKind {
    None,
    Full,
    Partial,
    SingleSlice,
    ShortArc,
}

/// Geometry used to draw one lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionGeometry {
    /// Ellipsoid semi-axes in voxels (x, y, z).
    pub semi_axes: [f64; 3],
    pub rim_thickness: usize,
    pub arc_start_degrees: f64,
    pub arc_degrees: f64,
    /// Patch slices carrying rim voxels.
    pub rim_slices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomLesion {
    pub subject_id: String,
    pub lesion_id: u32,
    pub is_prl: bool,
    pub rim_kind: RimKind,
    pub geometry: LesionGeometry,
    pub sub_seed: u64,
    /// Dilated, masked patch with the (possibly corrupted) probability map attached.
    pub patch: LesionPatch,
    pub truth_rim: Volume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSubject {
    pub subject_id: String,
    pub lesions: Vec<PhantomLesion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCohort {
    pub spec: PhantomSpec,
    pub subjects: Vec<PhantomSubject>,
}

impl PhantomCohort {
    pub fn lesions(&self) -> impl Iterator<Item = &PhantomLesion> {
        self.subjects.iter().flat_map(|s| s.lesions.iter())
    }

    pub fn n_lesions(&self) -> usize {
        self.subjects.iter().map(|s| s.lesions.len()).sum()
    }

    pub fn n_prl(&self) -> usize {
        self.lesions().filter(|l| l.is_prl).count()
    }
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:03}")
}

/// Generate a cohort; output depends only on `spec`.
pub fn generate_phantom_cohort(spec: &PhantomSpec) -> Result<PhantomCohort> {
    spec.validate()?;
    let subjects = (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| generate_subject(spec, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomCohort {
        spec: spec.clone(),
        subjects,
    })
}

fn generate_subject(spec: &PhantomSpec, s: usize) -> Result<PhantomSubject> {
    let mut rng = SeededRng::new(sub_seed(spec.seed, &[s as u64]));
    let (lo, hi) = spec.lesions_per_subject;
    let n = rng.int_inclusive(lo as i64, hi as i64) as usize;
    let id = subject_id(s);
    let lesions = (0..n)
        .map(|l| generate_lesion(spec, &id, s, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomSubject {
        subject_id: id,
        lesions,
    })
}

/// Lesion voxels in the patch for given semi-axes, centred on `size / 2`.
fn ellipsoid_mask(size: [usize; 3], semi: [f64; 3]) -> Vec<bool> {
    let c = size.map(|s| (s / 2) as f64);
    let mut bits = vec![false; size.iter().product()];
    let mut i = 0;
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let d = [
                    (x as f64 - c[0]) / semi[0],
                    (y as f64 - c[1]) / semi[1],
                    (z as f64 - c[2]) / semi[2],
                ];
                bits[i] = d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0;
                i += 1;
            }
        }
    }
    bits
}

/// In-plane shell of `thickness` pixels inside the lesion on slice `z`, restricted to an arc.
fn draw_rim_slice(
    lesion: &[bool],
    rim: &mut [bool],
    size: [usize; 3],
    z: usize,
    thickness: usize,
    arc: Option<(f64, f64)>,
) {
    let (nx, ny) = (size[0], size[1]);
    let base = z * nx * ny;
    let inside = |x: i64, y: i64| {
        x >= 0
            && y >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && lesion[base + x as usize + nx * y as usize]
    };
    let t = thickness as i64;
    let (cx, cy) = ((nx / 2) as f64, (ny / 2) as f64);
    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            if !inside(x, y) {
                continue;
            }
            let near_edge = (-t..=t)
                .any(|dy| (-t..=t).any(|dx| dx * dx + dy * dy <= t * t && !inside(x + dx, y + dy)));
            if !near_edge {
                continue;
            }
            if let Some((start, span)) = arc {
                let ang = (y as f64 - cy)
                    .atan2(x as f64 - cx)
                    .to_degrees()
                    .rem_euclid(360.0);
                if (ang - start).rem_euclid(360.0) >= span {
                    continue;
                }
            }
            rim[base + x as usize + nx * y as usize] = true;
        }
    }
}

fn generate_lesion(spec: &PhantomSpec, subject: &str, s: usize, l: usize) -> Result<PhantomLesion> {
    let seed = sub_seed(spec.seed, &[s as u64, l as u64]);
    let mut rng = SeededRng::new(seed);
    let is_prl = rng.bernoulli(spec.prl_fraction);
    let size = spec.patch_size;
    let spacing = spec.spacing();
    let lesion_name = format!("{subject} lesion {}", l + 1);

    // room left for the dilation margin inside the patch
    let margin = [spacing.dx, spacing.dy, spacing.dz].map(|d| (spec.dilation_mm / d).floor());
    let max_semi = [0, 1, 2].map(|a| (size[a] / 2) as f64 - margin[a] - 2.0);
    let min_semi = [6.0, 6.0, 2.0];
    if (0..3).any(|a| max_semi[a] < min_semi[a]) {
        return Err(Error::InfeasibleGeometry(format!(
            "{lesion_name}: patch {size:?} cannot hold a lesion plus dilation"
        )));
    }

    for _ in 0..MAX_ATTEMPTS {
        let semi = [0, 1, 2].map(|a| {
            let hi = if a < 2 {
                max_semi[a].min(18.0)
            } else {
                max_semi[a].min(6.0)
            };
            rng.uniform_range(min_semi[a], hi.max(min_semi[a]))
        });
        let lesion = ellipsoid_mask(size, semi);
        let (t0, t1) = spec.rim_thickness_vox;
        let thickness = rng.int_inclusive(t0 as i64, t1 as i64) as usize;
        let cz = size[2] / 2;
        let half_z = semi[2].floor() as usize;
        // slices whose cross-section is wide enough to hold a visible rim
        let usable: Vec<usize> = (cz.saturating_sub(half_z)..=(cz + half_z).min(size[2] - 1))
            .filter(|&z| {
                let dz = (z as f64 - cz as f64) / semi[2];
                let r = semi[0].min(semi[1]) * (1.0 - dz * dz).max(0.0).sqrt();
                r >= thickness as f64 + 3.0
            })
            .collect();
        if usable.len() < 2 {
            continue;
        }

        let kind = if is_prl {
            if rng.bernoulli(spec.partial_rim_fraction) {
                RimKind::Partial
            } else {
                RimKind::Full
            }
        } else {
            match rng.below(3) {
                0 => RimKind::None,
                1 => RimKind::SingleSlice,
                _ => RimKind::ShortArc,
            }
        };
        let arc_start = rng.uniform_range(0.0, 360.0);
        let (arc, rim_slices) = match kind {
            RimKind::None => (360.0, Vec::new()),
            RimKind::Full | RimKind::Partial => {
                let n = rng.int_inclusive(2, usable.len() as i64) as usize;
                let start = rng.below((usable.len() - n + 1) as u64) as usize;
                let arc = if kind == RimKind::Full {
                    360.0
                } else {
                    rng.uniform_range(spec.rim_arc_degrees.0, spec.rim_arc_degrees.1)
                };
                (arc, usable[start..start + n].to_vec())
            }
            RimKind::SingleSlice => (360.0, vec![usable[rng.below(usable.len() as u64) as usize]]),
            RimKind::ShortArc => {
                let n = rng.int_inclusive(2, usable.len() as i64) as usize;
                let start = rng.below((usable.len() - n + 1) as u64) as usize;
                (
                    rng.uniform_range(8.0, 20.0),
                    usable[start..start + n].to_vec(),
                )
            }
        };
        let mut rim = vec![false; lesion.len()];
        let arc_window = (arc < 360.0).then_some((arc_start, arc));
        for &z in &rim_slices {
            draw_rim_slice(&lesion, &mut rim, size, z, thickness, arc_window);
        }

        let geometry = LesionGeometry {
            semi_axes: semi,
            rim_thickness: thickness,
            arc_start_degrees: arc_start,
            arc_degrees: arc,
            rim_slices,
        };
        let truth_rim = Volume::from_mask(size, spacing, &rim)?;
        let flair_mask = Volume::from_mask(size, spacing, &lesion)?;
        let qsm_data: Vec<f32> = lesion
            .iter()
            .zip(&rim)
            .map(|(&les, &r)| {
                if r {
                    0.08
                } else if les {
                    0.01
                } else {
                    0.0
                }
            })
            .collect();
        let patch = LesionPatch {
            lesion_id: (l + 1) as u32,
            offset: [0, 0, 0],
            qsm: Volume::new(size, spacing, VolumeKind::Intensity, qsm_data)?,
            prob: None,
            flair_mask,
            dilated_mask: None,
            truncated_voxels: 0,
            masked: false,
        }
        .dilate(spec.dilation_mm)?;

        let clean = patch
            .clone()
            .with_prob(truth_rim.clone().reinterpret(VolumeKind::Probability)?)?;
        if !self_check(&clean, is_prl)? {
            continue;
        }
        let prob = corrupt_probability(
            &truth_rim,
            spec.noise_sigma,
            spec.blur_radius_vox,
            sub_seed(seed, &[0xB10B]),
        )?;
        let patch = apply_dilated_mask(patch.with_prob(prob)?)?;
        return Ok(PhantomLesion {
            subject_id: subject.to_string(),
            lesion_id: (l + 1) as u32,
            is_prl,
            rim_kind: kind,
            geometry,
            sub_seed: seed,
            patch,
            truth_rim,
        });
    }
    Err(Error::InfeasibleGeometry(format!(
        "{lesion_name}: no geometry satisfied the rim rule after {MAX_ATTEMPTS} attempts"
    )))
}

/// PRLs must exceed the default rim-ratio threshold on two consecutive slices; others must not reach it.
fn self_check(clean: &LesionPatch, is_prl: bool) -> Result<bool> {
    let t = DetectionThresholds::new(SELF_CHECK_TAU_P, DEFAULT_TAU_R)?;
    let out = detect_patch(clean, t)?;
    Ok(if is_prl {
        out.verdict.is_prl && out.verdict.score > DEFAULT_TAU_R
    } else {
        !out.verdict.is_prl
    })
}

fn gaussian_kernel(std: f64) -> Vec<f64> {
    let r = (3.0 * std).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let c = ((i / stride) % dims[axis]) as i64;
        let base = i as i64 - c * stride as i64;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let p = c + k as i64 - r;
            if p >= 0 && p < n {
                acc += w * data[(base + p * stride as i64) as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Blur a binary rim with a separable Gaussian (std `blur` voxels, zero
/// boundary), add Gaussian noise of std `sigma` clipped at 3 sigma, and clamp
/// to [0, 1]. `sigma = blur = 0` returns the input values unchanged.
pub fn corrupt_probability(truth: &Volume, sigma: f64, blur: f64, seed: u64) -> Result<Volume> {
    if !(sigma >= 0.0 && sigma.is_finite() && blur >= 0.0 && blur.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma and blur must be non-negative, got {sigma}, {blur}"
        )));
    }
    let mut values: Vec<f64> = truth.data().iter().map(|&v| v as f64).collect();
    if blur > 0.0 {
        let kernel = gaussian_kernel(blur);
        for axis in 0..3 {
            values = convolve_axis(&values, truth.dims(), axis, &kernel);
        }
    }
    if sigma > 0.0 {
        let mut rng = SeededRng::new(seed);
        for v in values.iter_mut() {
            *v += sigma * rng.normal().clamp(-3.0, 3.0);
        }
    }
    let data = values
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0) as f32)
        .collect();
    Volume::new(truth.dims(), truth.spacing(), VolumeKind::Probability, data)
}

/// Lay a subject's lesions side by side along x in one volume.
///
/// Returns (qsm, flair mask); lesion `k` occupies x range `[k * nx, (k + 1) * nx)`.
pub fn render_subject(subject: &PhantomSubject) -> Result<(Volume, Volume)> {
    let first = subject
        .lesions
        .first()
        .ok_or_else(|| Error::Missing(format!("subject {} has no lesions", subject.subject_id)))?;
    let [nx, ny, nz] = first.patch.dims();
    let spacing = first.patch.spacing();
    let dims = [nx * subject.lesions.len(), ny, nz];
    let mut qsm = vec![0f32; dims.iter().product()];
    let mut flair = vec![0f32; qsm.len()];
    for (k, lesion) in subject.lesions.iter().enumerate() {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let dst = (k * nx + x) + dims[0] * (y + ny * z);
                    qsm[dst] = lesion.patch.qsm.get(x, y, z);
                    flair[dst] = lesion.patch.flair_mask.get(x, y, z);
                }
            }
        }
    }
    Ok((
        Volume::new(dims, spacing, VolumeKind::Intensity, qsm)?,
        Volume::new(dims, spacing, VolumeKind::BinaryMask, flair)?,
    ))
}
