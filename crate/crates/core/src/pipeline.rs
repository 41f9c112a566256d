//! Per-lesion processing from a prepared patch to a verdict.

use crate::detection::{
    classify_lesion, pair_score, rim_ratio_profile, DetectionThresholds, LesionVerdict,
    RimRatioProfile,
};
use crate::error::{Error, Result};
use crate::lesion_prep::LesionPatch;
use crate::rim::{
    flair_perimeter_per_slice, merge_measures, rim_length_per_slice, segment_patch,
    RimSegmentation, SliceMeasure,
};

/// Everything computed for one lesion at fixed thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionOutcome {
    pub rim: RimSegmentation,
    pub measures: Vec<SliceMeasure>,
    pub profile: RimRatioProfile,
    pub verdict: LesionVerdict,
}

pub fn detect_patch(patch: &LesionPatch, thresholds: DetectionThresholds) -> Result<LesionOutcome> {
    let rim = segment_patch(patch, thresholds.tau_p)?;
    let measures = merge_measures(
        &rim_length_per_slice(&rim),
        &flair_perimeter_per_slice(patch),
    )?;
    let profile = rim_ratio_profile(patch.lesion_id, thresholds.tau_p, &measures);
    let verdict = classify_lesion(&profile, thresholds);
    Ok(LesionOutcome {
        rim,
        measures,
        profile,
        verdict,
    })
}

/// Pair score of one patch at every `tau_p` in `grid`.
pub fn score_patch_grid(patch: &LesionPatch, grid: &[f64]) -> Result<Vec<Option<f64>>> {
    if patch.prob.is_none() {
        return Err(Error::Missing(format!(
            "probability map for lesion {}",
            patch.lesion_id
        )));
    }
    let perimeter = flair_perimeter_per_slice(patch);
    grid.iter()
        .map(|&tau_p| {
            let rim = segment_patch(patch, tau_p)?;
            let measures = merge_measures(&rim_length_per_slice(&rim), &perimeter)?;
            Ok(pair_score(&rim_ratio_profile(
                patch.lesion_id,
                tau_p,
                &measures,
            )))
        })
        .collect()
}
