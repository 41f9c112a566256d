mod oracles;

use proptest::prelude::*;
use rimscan_core::error::Error;
use rimscan_core::rng::SeededRng;
use rimscan_core::tuning::{
    cross_validate, fold_members, grid_search_thresholds, make_folds, FoldAssignment, ScoreTable,
    ScoredLesion, SensitivityBand, SubjectSummary,
};

fn summaries(n: usize, positive: usize) -> Vec<SubjectSummary> {
    (0..n)
        .map(|i| SubjectSummary {
            subject_id: format!("sub-{i:03}"),
            n_lesions: 30,
            n_prl: usize::from(i < positive) * 3,
        })
        .collect()
}

fn positives_per_fold(f: &FoldAssignment, subjects: &[SubjectSummary]) -> Vec<usize> {
    let mut counts = vec![0; f.n_folds];
    for s in subjects.iter().filter(|s| s.n_prl > 0) {
        counts[f.subject_to_fold[&s.subject_id]] += 1;
    }
    counts
}

#[test]
fn stratified_folds_on_cohort_counts() {
    let subjects = summaries(256, 92);
    for seed in 0..5 {
        let f = make_folds(&subjects, 5, seed).unwrap();
        let pos = positives_per_fold(&f, &subjects);
        assert!(pos.iter().all(|&c| c == 18 || c == 19), "{pos:?}");
        assert_eq!(pos.iter().sum::<usize>(), 92);
        let mut sizes = vec![0; 5];
        f.subject_to_fold.values().for_each(|&k| sizes[k] += 1);
        assert!(sizes.iter().all(|&s| s == 51 || s == 52), "{sizes:?}");
    }
}

fn random_table(rng: &mut SeededRng, n_subjects: usize, grid_len: usize) -> ScoreTable {
    let tau_p_grid: Vec<f64> = (0..grid_len).map(|g| 0.5 + 0.1 * g as f64).collect();
    let mut lesions = Vec::new();
    for s in 0..n_subjects {
        for l in 0..rng.int_inclusive(1, 6) {
            let label = rng.bernoulli(0.3);
            let pair_scores = (0..grid_len)
                .map(|_| {
                    if rng.bernoulli(0.1) {
                        None
                    } else {
                        let base = if label { 4 } else { 0 };
                        Some((base + rng.below(10)) as f64 / 10.0)
                    }
                })
                .collect();
            lesions.push(ScoredLesion {
                subject_id: format!("s{s:02}"),
                lesion_id: l as u32 + 1,
                label,
                pair_scores,
            });
        }
    }
    ScoreTable {
        tau_p_grid,
        lesions,
    }
}

#[test]
fn grid_search_matches_exhaustive_oracle() {
    let mut rng = SeededRng::new(12);
    let mut compared = 0;
    for case in 0..200 {
        let table = random_table(&mut rng, 12, 1 + case % 5);
        let train: Vec<usize> = (0..table.lesions.len())
            .filter(|_| rng.bernoulli(0.8))
            .collect();
        let lo = rng.below(10) as f64 / 10.0;
        let band = SensitivityBand::new(lo, (lo + rng.below(4) as f64 / 10.0).min(1.0)).unwrap();
        let oracle = oracles::grid_oracle(&table, &train, band);
        match grid_search_thresholds(&table, &train, band) {
            Ok(c) => {
                let o = oracle.expect("oracle found no pair");
                assert_eq!(
                    (c.tau_p, c.tau_r, c.fallback),
                    (o.tau_p, o.tau_r, o.fallback),
                    "case {case}"
                );
                assert_eq!((c.sensitivity, c.ppv), (o.sensitivity, o.ppv));
                compared += 1;
            }
            Err(Error::NoPositives(_)) => assert!(train.iter().all(|&i| !table.lesions[i].label)),
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(compared > 150);
}

fn lesion(subject: &str, id: u32, label: bool, scores: &[Option<f64>]) -> ScoredLesion {
    ScoredLesion {
        subject_id: subject.into(),
        lesion_id: id,
        label,
        pair_scores: scores.to_vec(),
    }
}

#[test]
fn unique_band_pair_is_returned() {
    // ten positives with distinct scores at tau_p 0.5; at 0.9 they all tie
    let mut lesions: Vec<ScoredLesion> = (1..=10)
        .map(|k| lesion("a", k, true, &[Some(k as f64 / 10.0), Some(0.3)]))
        .collect();
    lesions.push(lesion("b", 1, false, &[Some(0.05), Some(0.9)]));
    let table = ScoreTable {
        tau_p_grid: vec![0.5, 0.9],
        lesions,
    };
    let all: Vec<usize> = (0..table.lesions.len()).collect();
    let band = SensitivityBand::new(0.85, 0.95).unwrap();
    let c = grid_search_thresholds(&table, &all, band).unwrap();
    assert_eq!((c.tau_p, c.tau_r, c.fallback), (0.5, 0.2, false));
    assert_eq!(c.sensitivity, 0.9);
}

#[test]
fn separable_case_prefers_highest_thresholds() {
    let table = ScoreTable {
        tau_p_grid: vec![0.5, 0.7],
        lesions: vec![
            lesion("a", 1, true, &[Some(0.8), Some(0.6)]),
            lesion("a", 2, false, &[Some(0.1), Some(0.1)]),
            lesion("b", 1, false, &[None, Some(0.2)]),
        ],
    };
    let c = grid_search_thresholds(&table, &[0, 1, 2], SensitivityBand::new(0.9, 1.0).unwrap())
        .unwrap();
    assert_eq!(
        (c.tau_p, c.tau_r, c.sensitivity, c.ppv),
        (0.7, 0.6, 1.0, 1.0)
    );
}

#[test]
fn no_positives_is_an_error() {
    let table = ScoreTable {
        tau_p_grid: vec![0.5],
        lesions: vec![lesion("a", 1, false, &[Some(0.3)])],
    };
    assert!(matches!(
        grid_search_thresholds(&table, &[0], SensitivityBand::new(0.9, 0.95).unwrap()),
        Err(Error::NoPositives(_))
    ));
}

fn cohort_table(seed: u64) -> (ScoreTable, FoldAssignment) {
    let mut rng = SeededRng::new(seed);
    let table = random_table(&mut rng, 30, 4);
    let mut subs: std::collections::BTreeMap<&str, SubjectSummary> = Default::default();
    for l in &table.lesions {
        let s = subs.entry(&l.subject_id).or_insert(SubjectSummary {
            subject_id: l.subject_id.clone(),
            n_lesions: 0,
            n_prl: 0,
        });
        s.n_lesions += 1;
        s.n_prl += usize::from(l.label);
    }
    let subs: Vec<_> = subs.into_values().collect();
    let folds = make_folds(&subs, 5, seed).unwrap();
    (table, folds)
}

#[test]
fn held_out_labels_do_not_leak() {
    let band = SensitivityBand::new(0.9, 0.95).unwrap();
    for seed in 0..10 {
        let (table, folds) = cohort_table(seed);
        let base = cross_validate(&table, &folds, band).unwrap();
        let members = fold_members(&table, &folds).unwrap();
        for (k, test) in members.iter().enumerate() {
            let mut perturbed = table.clone();
            for &i in test {
                perturbed.lesions[i].label = !perturbed.lesions[i].label;
            }
            let again = cross_validate(&perturbed, &folds, band).unwrap();
            let (a, b) = (&base.tuning.per_fold[k], &again.tuning.per_fold[k]);
            assert_eq!(
                (a.tau_p, a.tau_r),
                (b.tau_p, b.tau_r),
                "seed {seed} fold {k}"
            );
        }
    }
}

#[test]
fn pooled_counts_are_fold_sums_and_runs_repeat() {
    let band = SensitivityBand::new(0.9, 0.95).unwrap();
    let (table, folds) = cohort_table(77);
    let cv = cross_validate(&table, &folds, band).unwrap();
    let summed = cv.tuning.per_fold.iter().map(|f| f.counts).sum();
    assert_eq!(cv.pooled.counts, summed);
    assert_eq!(cv.held_out.len(), table.lesions.len());
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap();
    let a = one.install(|| cross_validate(&table, &folds, band).unwrap());
    let b = eight.install(|| cross_validate(&table, &folds, band).unwrap());
    assert_eq!(a.tuning, b.tuning);
    assert_eq!(a.held_out, b.held_out);
    assert_eq!(a.tuning, cv.tuning);
}

#[test]
fn identical_subjects_give_identical_fold_thresholds() {
    let template = [
        (true, [Some(0.9), Some(0.7)]),
        (false, [Some(0.2), Some(0.1)]),
        (false, [Some(0.4), None]),
        (true, [Some(0.6), Some(0.5)]),
    ];
    let mut lesions = Vec::new();
    for s in 0..10 {
        for (k, (label, scores)) in template.iter().enumerate() {
            lesions.push(lesion(&format!("s{s}"), k as u32 + 1, *label, scores));
        }
    }
    let table = ScoreTable {
        tau_p_grid: vec![0.5, 0.8],
        lesions,
    };
    let subs: Vec<_> = (0..10)
        .map(|s| SubjectSummary {
            subject_id: format!("s{s}"),
            n_lesions: 4,
            n_prl: 2,
        })
        .collect();
    let folds = make_folds(&subs, 5, 3).unwrap();
    let cv = cross_validate(&table, &folds, SensitivityBand::new(0.4, 0.6).unwrap()).unwrap();
    let first = &cv.tuning.per_fold[0];
    assert!(cv
        .tuning
        .per_fold
        .iter()
        .all(|f| (f.tau_p, f.tau_r) == (first.tau_p, first.tau_r)));
}

proptest! {
    #[test]
    fn folds_partition_and_stratify(n in 5usize..80, pos_frac in 0.0f64..1.0, k in 2usize..6, seed in any::<u64>()) {
        let positive = (n as f64 * pos_frac) as usize;
        let subjects = summaries(n, positive);
        let f = make_folds(&subjects, k, seed).unwrap();
        prop_assert_eq!(f.subject_to_fold.len(), n);
        prop_assert!(f.subject_to_fold.values().all(|&v| v < k));
        let pos = positives_per_fold(&f, &subjects);
        let mean = positive as f64 / k as f64;
        prop_assert!(pos.iter().all(|&c| (c as f64 - mean).abs() <= 1.0));
    }
}
