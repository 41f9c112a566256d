//! Shared inputs for the pipeline benchmarks.

use rimscan_core::phantom::{generate_phantom_cohort, render_subject, PhantomCohort, PhantomSpec};
use rimscan_core::{SliceMask, Volume};

/// Small deterministic phantom cohort.
pub fn cohort(n_subjects: usize) -> PhantomCohort {
    let spec = PhantomSpec { n_subjects, prl_fraction: 0.3, ..PhantomSpec::default() };
    generate_phantom_cohort(&spec).expect("default phantom spec is valid")
}

/// Whole-subject FLAIR lesion mask of the first subject.
pub fn subject_mask(cohort: &PhantomCohort) -> Volume {
    render_subject(&cohort.subjects[0]).expect("phantom subject renders").1
}

/// Filled disk of the given radius centred in a square slice.
pub fn disk(radius: usize) -> SliceMask {
    let side = 2 * radius + 3;
    let c = (side / 2) as i64;
    let r2 = (radius * radius) as i64;
    let bits = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as i64, (i / side) as i64);
            (x - c).pow(2) + (y - c).pow(2) <= r2
        })
        .collect();
    SliceMask::from_bits(side, side, bits)
}
