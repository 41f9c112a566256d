//! Subject-level cross-validated search for the probability and rim-ratio
//! thresholds: maximise precision among operating points whose sensitivity
//! lies in a band.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::passes;
use crate::error::{Error, Result};
use crate::evaluation::{ConfusionCounts, MetricsReport};
use crate::rng::SeededRng;

pub const DEFAULT_BAND: (f64, f64) = (0.90, 0.95);
pub const DEFAULT_FOLDS: usize = 5;
/// Attained probability values are added to the grid only up to this many.
pub const MAX_ATTAINED_GRID_VALUES: usize = 500;

/// Base probability-threshold grid: 0.50, 0.55, ..., 0.95, 0.99.
pub fn base_tau_p_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect();
    g.push(0.99);
    g
}

/// Base grid plus the attained probability values when there are few of them.
pub fn default_tau_p_grid(attained: impl IntoIterator<Item = f32>) -> Vec<f64> {
    let mut grid = base_tau_p_grid();
    let distinct: BTreeSet<u32> = attained
        .into_iter()
        .filter(|v| (0.0..=1.0).contains(v))
        .map(f32::to_bits)
        .collect();
    if distinct.len() <= MAX_ATTAINED_GRID_VALUES {
        grid.extend(distinct.into_iter().map(|b| f32::from_bits(b) as f64));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Sensitivity band, endpoints inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBand {
    pub lo: f64,
    pub hi: f64,
}

impl SensitivityBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "invalid sensitivity band [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }
}

impl Default for SensitivityBand {
    fn default() -> Self {
        Self {
            lo: DEFAULT_BAND.0,
            hi: DEFAULT_BAND.1,
        }
    }
}

/// One lesion's decision-rule pair score at every candidate `tau_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLesion {
    pub subject_id: String,
    pub lesion_id: u32,
    pub label: bool,
    /// Aligned with [`ScoreTable::tau_p_grid`]; `None` when no adjacent slice pair exists.
    pub pair_scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub tau_p_grid: Vec<f64>,
    pub lesions: Vec<ScoredLesion>,
}

impl ScoreTable {
    pub fn validate(&self) -> Result<()> {
        if self.tau_p_grid.is_empty() {
            return Err(Error::InvalidParameter("empty tau_p grid".into()));
        }
        if let Some(l) = self
            .lesions
            .iter()
            .find(|l| l.pair_scores.len() != self.tau_p_grid.len())
        {
            return Err(Error::Invariant(format!(
                "lesion {}/{} has {} scores for a grid of {}",
                l.subject_id,
                l.lesion_id,
                l.pair_scores.len(),
                self.tau_p_grid.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub seed: u64,
    pub subject_to_fold: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.subject_to_fold.get(subject).copied()
    }
}

/// Per-subject input to fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectSummary {
    pub subject_id: String,
    pub n_lesions: usize,
    pub n_prl: usize,
}

/// Stratified subject-level folds.
///
/// PRL-positive subjects are shuffled and dealt round-robin from fold 0; the
/// remaining subjects continue the deal where the positives stopped, so fold
/// sizes differ by at most one and so do positive counts.
pub fn make_folds(
    subjects: &[SubjectSummary],
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 folds, got {n_folds}"
        )));
    }
    let unique: BTreeSet<&str> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
    if unique.len() != subjects.len() {
        return Err(Error::InvalidParameter("duplicate subject ids".into()));
    }
    if subjects.len() < n_folds {
        return Err(Error::InvalidParameter(format!(
            "{} subjects cannot fill {n_folds} folds",
            subjects.len()
        )));
    }
    let mut positive: Vec<&str> = subjects
        .iter()
        .filter(|s| s.n_prl > 0)
        .map(|s| s.subject_id.as_str())
        .collect();
    let mut negative: Vec<&str> = subjects
        .iter()
        .filter(|s| s.n_prl == 0)
        .map(|s| s.subject_id.as_str())
        .collect();
    positive.sort_unstable();
    negative.sort_unstable();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut positive);
    rng.shuffle(&mut negative);
    let subject_to_fold = positive
        .iter()
        .chain(&negative)
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % n_folds))
        .collect();
    Ok(FoldAssignment {
        n_folds,
        seed,
        subject_to_fold,
    })
}

/// A selected operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub tau_p: f64,
    pub tau_r: f64,
    pub sensitivity: f64,
    pub ppv: f64,
    /// Set when no grid pair reached the band.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    tau_p: f64,
    tau_r: f64,
    sensitivity: f64,
    ppv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tier {
    InBand,
    Above,
    Below,
}

/// Total preference order within a tier; `Greater` means `a` is preferred.
fn prefer(a: &Cell, b: &Cell, tier: Tier) -> Ordering {
    let primary = match tier {
        Tier::InBand => a
            .ppv
            .total_cmp(&b.ppv)
            .then(a.sensitivity.total_cmp(&b.sensitivity)),
        // closest to the lower bound, then precision
        Tier::Above => b
            .sensitivity
            .total_cmp(&a.sensitivity)
            .then(a.ppv.total_cmp(&b.ppv)),
        Tier::Below => a
            .sensitivity
            .total_cmp(&b.sensitivity)
            .then(a.ppv.total_cmp(&b.ppv)),
    };
    primary
        .then(a.tau_p.total_cmp(&b.tau_p))
        .then(a.tau_r.total_cmp(&b.tau_r))
}

fn better(a: Option<Cell>, b: Option<Cell>, tier: Tier) -> Option<Cell> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if prefer(&x, &y, tier) == Ordering::Less {
            y
        } else {
            x
        }),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Operating points at one `tau_p`: one per attained score used as `tau_r`.
fn cells_at(tau_p: f64, scored: &[(Option<f64>, bool)], positives: u64) -> Vec<Cell> {
    let mut s: Vec<(f64, bool)> = scored
        .iter()
        .filter_map(|&(sc, l)| sc.map(|v| (v, l)))
        .collect();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < s.len() {
        let t = s[i].0;
        while i < s.len() && s[i].0 == t {
            if s[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(Cell {
            tau_p,
            tau_r: t,
            sensitivity: tp as f64 / positives as f64,
            ppv: tp as f64 / (tp + fp) as f64,
        });
    }
    out
}

/// Grid search over `tau_p` candidates x attained scores, on the lesions in `train`.
pub fn grid_search_thresholds(
    table: &ScoreTable,
    train: &[usize],
    band: SensitivityBand,
) -> Result<GridChoice> {
    table.validate()?;
    let positives = train.iter().filter(|&&i| table.lesions[i].label).count() as u64;
    if positives == 0 {
        return Err(Error::NoPositives(
            "training set has no positive lesions".into(),
        ));
    }
    let per_grid: Vec<[Option<Cell>; 3]> = table
        .tau_p_grid
        .par_iter()
        .enumerate()
        .map(|(g, &tau_p)| {
            let scored: Vec<(Option<f64>, bool)> = train
                .iter()
                .map(|&i| (table.lesions[i].pair_scores[g], table.lesions[i].label))
                .collect();
            let mut best = [None; 3];
            for c in cells_at(tau_p, &scored, positives) {
                let tier = if band.contains(c.sensitivity) {
                    Tier::InBand
                } else if c.sensitivity >= band.lo {
                    Tier::Above
                } else {
                    Tier::Below
                };
                best[tier as usize] = better(best[tier as usize], Some(c), tier);
            }
            best
        })
        .collect();
    let pick = |tier: Tier| {
        per_grid
            .iter()
            .fold(None, |acc, c| better(acc, c[tier as usize], tier))
    };
    let (cell, fallback) = match (pick(Tier::InBand), pick(Tier::Above), pick(Tier::Below)) {
        (Some(c), _, _) => (c, false),
        (None, Some(c), _) | (None, None, Some(c)) => (c, true),
        (None, None, None) => {
            return Err(Error::Missing(
                "no training lesion has two adjacent measured slices at any tau_p".into(),
            ))
        }
    };
    Ok(GridChoice {
        tau_p: cell.tau_p,
        tau_r: cell.tau_r,
        sensitivity: cell.sensitivity,
        ppv: cell.ppv,
        fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub tau_p: f64,
    pub tau_r: f64,
    pub train_sensitivity: f64,
    pub train_ppv: f64,
    pub val_sensitivity: Option<f64>,
    pub val_ppv: Option<f64>,
    pub fallback: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub band: SensitivityBand,
    pub n_folds: usize,
    pub seed: u64,
    pub tau_p_grid: Vec<f64>,
    pub per_fold: Vec<FoldResult>,
    pub warnings: Vec<String>,
}

/// A held-out decision made with its fold's thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutVerdict {
    pub subject_id: String,
    pub lesion_id: u32,
    pub fold: usize,
    pub score: f64,
    pub is_prl: bool,
    pub label: bool,
    pub tau_p: f64,
    pub tau_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub tuning: TuningResult,
    pub held_out: Vec<HeldOutVerdict>,
    pub pooled: MetricsReport,
}

/// Lesion indices per fold, following the subject assignment.
pub fn fold_members(table: &ScoreTable, folds: &FoldAssignment) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); folds.n_folds];
    for (i, l) in table.lesions.iter().enumerate() {
        let f = folds.fold_of(&l.subject_id).ok_or_else(|| {
            Error::Missing(format!("fold assignment for subject {}", l.subject_id))
        })?;
        if f >= folds.n_folds {
            return Err(Error::InvalidParameter(format!(
                "fold index {f} out of range"
            )));
        }
        members[f].push(i);
    }
    Ok(members)
}

/// Tune on each fold's complement and evaluate on the fold itself.
pub fn cross_validate(
    table: &ScoreTable,
    folds: &FoldAssignment,
    band: SensitivityBand,
) -> Result<CrossValidation> {
    table.validate()?;
    let members = fold_members(table, folds)?;
    let mut per_fold = Vec::with_capacity(folds.n_folds);
    let mut held_out = Vec::new();
    let mut warnings = Vec::new();
    for (k, test) in members.iter().enumerate() {
        let train: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, m)| m.iter().copied())
            .collect();
        let choice = grid_search_thresholds(table, &train, band)?;
        let g = table
            .tau_p_grid
            .iter()
            .position(|&t| t == choice.tau_p)
            .ok_or_else(|| Error::Invariant("chosen tau_p missing from grid".into()))?;
        let mut counts = ConfusionCounts::default();
        for &i in test {
            let l = &table.lesions[i];
            let ps = l.pair_scores[g];
            let is_prl = passes(ps, choice.tau_r);
            counts.record(is_prl, l.label);
            held_out.push(HeldOutVerdict {
                subject_id: l.subject_id.clone(),
                lesion_id: l.lesion_id,
                fold: k,
                score: ps.unwrap_or(0.0),
                is_prl,
                label: l.label,
                tau_p: choice.tau_p,
                tau_r: choice.tau_r,
            });
        }
        if counts.positives() == 0 {
            warnings.push(format!(
                "fold {k}: held-out set has no positive lesions; sensitivity undefined"
            ));
        }
        if choice.fallback {
            warnings.push(format!(
                "fold {k}: no grid pair reached the sensitivity band; using sensitivity {:.4}",
                choice.sensitivity
            ));
        }
        let rates = crate::evaluation::confusion_metrics(&counts);
        per_fold.push(FoldResult {
            fold: k,
            tau_p: choice.tau_p,
            tau_r: choice.tau_r,
            train_sensitivity: choice.sensitivity,
            train_ppv: choice.ppv,
            val_sensitivity: rates.sensitivity,
            val_ppv: rates.ppv,
            fallback: choice.fallback,
            n_train: train.len(),
            n_test: test.len(),
            counts,
        });
    }
    let items: Vec<(bool, bool, f64)> = held_out
        .iter()
        .map(|v| (v.is_prl, v.label, v.score))
        .collect();
    let pooled = MetricsReport::from_predictions(&items, &[]);
    Ok(CrossValidation {
        tuning: TuningResult {
            band,
            n_folds: folds.n_folds,
            seed: folds.seed,
            tau_p_grid: table.tau_p_grid.clone(),
            per_fold,
            warnings,
        },
        held_out,
        pooled,
    })
}
