//! Post-processing pipeline for paramagnetic rim lesion (PRL) detection on
//! susceptibility maps.
//!
//! Given lesion masks and a voxelwise rim-probability map, the crate crops
//! per-lesion patches, thresholds and thins the rim, measures per-slice
//! rim-length/perimeter ratios, applies the consecutive-slice decision rule,
//! tunes both thresholds by subject-level cross-validation and reports
//! detection and segmentation metrics. A synthetic phantom generator supplies
//! cohorts with known ground truth.

pub mod cohort;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod labeling;
pub mod lesion_prep;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod rim;
pub mod rng;
pub mod tuning;
pub mod volume;

pub use cohort::{load_patch, read_manifest, write_phantom_cohort, CohortManifest, ManifestEntry};
pub use detection::{
    classify_lesion, lesion_score, rim_ratio_profile, DetectionThresholds, LesionVerdict,
    RimRatioProfile,
};
pub use error::{Error, Result};
pub use evaluation::{
    cohens_kappa, confusion_metrics, dice_bce_loss, dice_score, pr_curve_auc, roc_curve_auc,
    AgreementTable, ConfusionCounts, CurvePoint, LossConfig, MetricsReport,
};
pub use export::VerdictRecord;
pub use labeling::{label_components, Connectivity, LesionLabelMap};
pub use lesion_prep::{apply_dilated_mask, crop_patch, dilate_mask_mm, LesionPatch, PatchConfig};
pub use nifti::{load_volume, save_volume};
pub use phantom::{corrupt_probability, generate_phantom_cohort, PhantomCohort, PhantomSpec};
pub use rim::{
    flair_perimeter_per_slice, rim_length_per_slice, thin_slice, threshold_probability,
    RimSegmentation, SliceMeasure,
};
pub use tuning::{
    cross_validate, grid_search_thresholds, make_folds, FoldAssignment, SensitivityBand,
    TuningResult,
};
pub use volume::{SliceMask, Spacing, Volume, VolumeKind};
