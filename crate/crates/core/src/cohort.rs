//! On-disk lesion cohorts: NIfTI patch files plus a JSON manifest.
//!
//! Paths in the manifest are relative to the directory holding it.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{read_json, write_json};
use crate::lesion_prep::LesionPatch;
use crate::nifti::{load_volume, save_volume};
use crate::phantom::{render_subject, LesionGeometry, PhantomCohort, PhantomSpec, RimKind};
use crate::rim::{PERIMETER_CONVENTION, RIM_LENGTH_CONVENTION};
use crate::volume::{Volume, VolumeKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCH_DIR: &str = "patches";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRefs {
    pub qsm: String,
    pub flair_mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomLesionInfo {
    pub rim_kind: RimKind,
    pub geometry: LesionGeometry,
    pub sub_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub lesion_id: u32,
    pub offset: [i64; 3],
    pub qsm: String,
    pub flair_mask: String,
    #[serde(default)]
    pub dilated_mask: Option<String>,
    #[serde(default)]
    pub prob: Option<String>,
    #[serde(default)]
    pub truth_rim: Option<String>,
    #[serde(default)]
    pub label: Option<bool>,
    #[serde(default)]
    pub masked: bool,
    #[serde(default)]
    pub truncated_voxels: usize,
    #[serde(default)]
    pub source: Option<SourceRefs>,
    #[serde(default)]
    pub phantom: Option<PhantomLesionInfo>,
}

impl ManifestEntry {
    pub fn key(&self) -> (String, u32) {
        (self.subject_id.clone(), self.lesion_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub patch_size: [usize; 3],
    pub dilation_mm: f64,
    pub rim_length_convention: String,
    pub perimeter_convention: String,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub lesions: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn new(patch_size: [usize; 3], dilation_mm: f64) -> Self {
        Self {
            patch_size,
            dilation_mm,
            rim_length_convention: RIM_LENGTH_CONVENTION.into(),
            perimeter_convention: PERIMETER_CONVENTION.into(),
            phantom: None,
            warnings: Vec::new(),
            lesions: Vec::new(),
        }
    }
}

pub fn patch_stem(subject_id: &str, lesion_id: u32) -> String {
    format!("{subject_id}_les{lesion_id:03}")
}

pub fn read_manifest(dir: &Path) -> Result<CohortManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn write_manifest(dir: &Path, manifest: &CohortManifest) -> Result<()> {
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

fn save_rel(dir: &Path, rel: &str, v: &Volume) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_volume(v, path)
}

/// Write a patch's volumes under `dir/patches/` and describe them.
pub fn write_patch(
    dir: &Path,
    subject_id: &str,
    patch: &LesionPatch,
    truth_rim: Option<&Volume>,
) -> Result<ManifestEntry> {
    let stem = patch_stem(subject_id, patch.lesion_id);
    let rel = |suffix: &str| format!("{PATCH_DIR}/{stem}_{suffix}.nii.gz");
    let mut entry = ManifestEntry {
        subject_id: subject_id.to_string(),
        lesion_id: patch.lesion_id,
        offset: patch.offset,
        qsm: rel("qsm"),
        flair_mask: rel("flair"),
        dilated_mask: None,
        prob: None,
        truth_rim: None,
        label: None,
        masked: patch.masked,
        truncated_voxels: patch.truncated_voxels,
        source: None,
        phantom: None,
    };
    save_rel(dir, &entry.qsm, &patch.qsm)?;
    save_rel(dir, &entry.flair_mask, &patch.flair_mask)?;
    if let Some(d) = &patch.dilated_mask {
        let r = rel("dilated");
        save_rel(dir, &r, d)?;
        entry.dilated_mask = Some(r);
    }
    if let Some(p) = &patch.prob {
        let r = rel("prob");
        save_rel(dir, &r, p)?;
        entry.prob = Some(r);
    }
    if let Some(t) = truth_rim {
        let r = rel("truth_rim");
        save_rel(dir, &r, t)?;
        entry.truth_rim = Some(r);
    }
    Ok(entry)
}

/// Where a probability map for `entry` is looked up when not in the manifest.
pub fn prob_override_path(prob_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    prob_dir.join(format!(
        "{}_prob.nii.gz",
        patch_stem(&entry.subject_id, entry.lesion_id)
    ))
}

/// Load the patch described by `entry`. A probability map in `prob_dir`
/// takes precedence over the one listed in the manifest.
pub fn load_patch(
    dir: &Path,
    entry: &ManifestEntry,
    prob_dir: Option<&Path>,
) -> Result<LesionPatch> {
    let qsm = load_volume(dir.join(&entry.qsm), VolumeKind::Intensity)?;
    let flair_mask = load_volume(dir.join(&entry.flair_mask), VolumeKind::BinaryMask)?;
    let dilated_mask = entry
        .dilated_mask
        .as_ref()
        .map(|p| load_volume(dir.join(p), VolumeKind::BinaryMask))
        .transpose()?;
    let prob_path = match prob_dir {
        Some(pd) => {
            let p = prob_override_path(pd, entry);
            if p.exists() {
                Some(p)
            } else {
                entry.prob.as_ref().map(|p| dir.join(p))
            }
        }
        None => entry.prob.as_ref().map(|p| dir.join(p)),
    };
    let prob = prob_path
        .map(|p| load_volume(p, VolumeKind::Probability))
        .transpose()?;
    let patch = LesionPatch {
        lesion_id: entry.lesion_id,
        offset: entry.offset,
        qsm,
        prob,
        flair_mask,
        dilated_mask,
        truncated_voxels: entry.truncated_voxels,
        masked: entry.masked,
    };
    patch.validate()?;
    Ok(patch)
}

pub fn load_truth_rim(dir: &Path, entry: &ManifestEntry) -> Result<Option<Volume>> {
    entry
        .truth_rim
        .as_ref()
        .map(|p| load_volume(dir.join(p), VolumeKind::BinaryMask))
        .transpose()
}

/// Write a phantom cohort: per-lesion patches, per-subject tiled volumes and the manifest.
pub fn write_phantom_cohort(dir: &Path, cohort: &PhantomCohort) -> Result<CohortManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = &cohort.spec;
    let mut manifest = CohortManifest::new(spec.patch_size, spec.dilation_mm);
    manifest.phantom = Some(spec.clone());
    let lesions: Vec<_> = cohort.lesions().collect();
    manifest.lesions = lesions
        .par_iter()
        .map(|l| {
            let mut e = write_patch(dir, &l.subject_id, &l.patch, Some(&l.truth_rim))?;
            e.label = Some(l.is_prl);
            e.phantom = Some(PhantomLesionInfo {
                rim_kind: l.rim_kind,
                geometry: l.geometry.clone(),
                sub_seed: l.sub_seed,
            });
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    cohort
        .subjects
        .par_iter()
        .filter(|s| !s.lesions.is_empty())
        .map(|s| {
            let (qsm, flair) = render_subject(s)?;
            save_rel(dir, &format!("subjects/{}_qsm.nii.gz", s.subject_id), &qsm)?;
            save_rel(
                dir,
                &format!("subjects/{}_flair.nii.gz", s.subject_id),
                &flair,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}
