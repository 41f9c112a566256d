//! Rim-ratio profiles and the consecutive-slice PRL decision rule.
//!
//! A lesion is called PRL when its rim ratio reaches `tau_r` on two adjacent
//! axial slices. The rule is exposed as a continuous score,
//! `max_z min(ratio_z, ratio_{z+1})` over adjacent measured slices, so that
//! `score >= tau_r` is the rule itself and the score can drive ROC/PR curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rim::SliceMeasure;

/// Default rim-ratio threshold.
pub const DEFAULT_TAU_R: f64 = 0.1;
pub const DEFAULT_TAU_P: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThresholds {
    pub tau_p: f64,
    pub tau_r: f64,
}

impl DetectionThresholds {
    pub fn new(tau_p: f64, tau_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau_p) {
            return Err(Error::InvalidParameter(format!(
                "tau_p must lie in [0,1], got {tau_p}"
            )));
        }
        if !(tau_r.is_finite() && tau_r >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau_r must be a non-negative number, got {tau_r}"
            )));
        }
        Ok(Self { tau_p, tau_r })
    }
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            tau_p: DEFAULT_TAU_P,
            tau_r: DEFAULT_TAU_R,
        }
    }
}

/// Per-slice rim/perimeter ratios of one lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RimRatioProfile {
    pub lesion_id: u32,
    /// Original z index of each ratio, strictly increasing.
    pub slices: Vec<usize>,
    pub ratios: Vec<f64>,
    /// Slices skipped because the lesion has no perimeter there.
    pub excluded_slices: Vec<usize>,
    pub tau_p: f64,
}

impl RimRatioProfile {
    /// Build a profile directly from (slice, ratio) pairs.
    pub fn from_pairs(lesion_id: u32, tau_p: f64, pairs: &[(usize, f64)]) -> Self {
        Self {
            lesion_id,
            slices: pairs.iter().map(|p| p.0).collect(),
            ratios: pairs.iter().map(|p| p.1).collect(),
            excluded_slices: Vec::new(),
            tau_p,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

/// Ratio `rim_length / flair_perimeter` on each slice with a nonzero perimeter.
pub fn rim_ratio_profile(lesion_id: u32, tau_p: f64, measures: &[SliceMeasure]) -> RimRatioProfile {
    let mut sorted = measures.to_vec();
    sorted.sort_by_key(|m| m.slice_index);
    let mut profile = RimRatioProfile {
        lesion_id,
        slices: Vec::new(),
        ratios: Vec::new(),
        excluded_slices: Vec::new(),
        tau_p,
    };
    for m in sorted {
        if m.flair_perimeter > 0 {
            profile.slices.push(m.slice_index);
            profile
                .ratios
                .push(m.rim_length as f64 / m.flair_perimeter as f64);
        } else {
            profile.excluded_slices.push(m.slice_index);
        }
    }
    profile
}

/// Largest value reached on two adjacent measured slices, `None` when the
/// profile has no adjacent pair.
pub fn pair_score(profile: &RimRatioProfile) -> Option<f64> {
    profile
        .slices
        .windows(2)
        .zip(profile.ratios.windows(2))
        .filter(|(s, _)| s[1] == s[0] + 1)
        .map(|(_, r)| r[0].min(r[1]))
        .reduce(f64::max)
}

/// Largest value reached on two adjacent measured slices; 0 without any adjacent pair.
pub fn lesion_score(profile: &RimRatioProfile) -> f64 {
    pair_score(profile).unwrap_or(0.0)
}

/// The decision rule on a precomputed pair score.
///
/// Lesions without two adjacent measured slices are never PRL, even at `tau_r = 0`.
#[inline]
pub fn passes(pair_score: Option<f64>, tau_r: f64) -> bool {
    pair_score.is_some_and(|s| s >= tau_r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionVerdict {
    pub lesion_id: u32,
    pub is_prl: bool,
    pub score: f64,
    pub thresholds: DetectionThresholds,
}

pub fn classify_lesion(
    profile: &RimRatioProfile,
    thresholds: DetectionThresholds,
) -> LesionVerdict {
    let ps = pair_score(profile);
    LesionVerdict {
        lesion_id: profile.lesion_id,
        is_prl: passes(ps, thresholds.tau_r),
        score: ps.unwrap_or(0.0),
        thresholds,
    }
}
