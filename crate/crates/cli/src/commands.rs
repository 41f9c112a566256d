//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use serde_json::json;

use rimscan_core::cohort::{
    load_patch, load_truth_rim, patch_stem, read_manifest, write_manifest, write_patch,
    write_phantom_cohort, CohortManifest, ManifestEntry, SourceRefs, MANIFEST_FILE,
};
use rimscan_core::detection::{DetectionThresholds, DEFAULT_TAU_P, DEFAULT_TAU_R};
use rimscan_core::evaluation::{dice_score, pr_curve_auc, roc_curve_auc, MetricsReport};
use rimscan_core::export::{
    curve_csv, read_json, read_jsonl, slice_measures_csv, write_json, write_jsonl, write_text,
    VerdictRecord,
};
use rimscan_core::labeling::{label_components, Connectivity};
use rimscan_core::lesion_prep::{
    apply_dilated_mask, crop_patch, DEFAULT_DILATION_MM, DEFAULT_PATCH_SIZE,
};
use rimscan_core::nifti::{load_volume, save_volume};
use rimscan_core::phantom::{generate_phantom_cohort, PhantomSpec};
use rimscan_core::pipeline::{detect_patch, score_patch_grid};
use rimscan_core::tuning::{
    cross_validate, default_tau_p_grid, make_folds, FoldAssignment, ScoreTable, ScoredLesion,
    SensitivityBand, SubjectSummary, DEFAULT_BAND, DEFAULT_FOLDS, MAX_ATTAINED_GRID_VALUES,
};
use rimscan_core::{Error, VolumeKind};

use crate::config::{parse_list, parse_pair, parse_triple, resolve, resolve_with, ConfigFile};
use crate::snapshot::RunSnapshot;
use crate::{DetectArgs, EvalArgs, PhantomArgs, PrepArgs, TuneArgs};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_SUBJECT: &str = "sub-001";

pub struct Context {
    pub file: ConfigFile,
    pub seed: Option<u64>,
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Cohort manifest and every file it references, for input hashing.
fn cohort_inputs(dir: &Path, manifest: &CohortManifest) -> Vec<(String, PathBuf)> {
    let mut inputs = vec![(MANIFEST_FILE.to_string(), dir.join(MANIFEST_FILE))];
    for e in &manifest.lesions {
        let listed = [
            Some(&e.qsm),
            Some(&e.flair_mask),
            e.dilated_mask.as_ref(),
            e.prob.as_ref(),
        ];
        inputs.extend(
            listed
                .into_iter()
                .flatten()
                .map(|r| (r.clone(), dir.join(r))),
        );
    }
    inputs
}

fn prob_override_inputs(
    prob_dir: Option<&Path>,
    manifest: &CohortManifest,
) -> Vec<(String, PathBuf)> {
    let Some(pd) = prob_dir else {
        return Vec::new();
    };
    manifest
        .lesions
        .iter()
        .map(|e| rimscan_core::cohort::prob_override_path(pd, e))
        .filter(|p| p.exists())
        .map(|p| {
            (
                format!(
                    "prob_dir/{}",
                    p.file_name().unwrap_or_default().to_string_lossy()
                ),
                p,
            )
        })
        .collect()
}

pub fn prep(ctx: &Context, a: &PrepArgs) -> Result<Vec<String>> {
    let f = &ctx.file;
    let size = resolve_with(
        a.patch_size.as_deref(),
        f,
        "patch_size",
        DEFAULT_PATCH_SIZE,
        parse_triple,
    )?;
    let dilation_mm = resolve(a.dilation_mm, f, "dilation_mm", DEFAULT_DILATION_MM)?;
    let connectivity =
        Connectivity::from_count(resolve(a.connectivity, f, "connectivity", 26u32)?)?;
    let subject = resolve(a.subject.clone(), f, "subject", DEFAULT_SUBJECT.to_string())?;

    let qsm = load_volume(&a.qsm, VolumeKind::Intensity)?;
    let flair = load_volume(&a.flair_mask, VolumeKind::BinaryMask)?;
    if !qsm.same_grid(&flair) {
        return Err(Error::DimensionMismatch(format!(
            "qsm {:?} vs flair mask {:?}",
            qsm.dims(),
            flair.dims()
        ))
        .into());
    }
    let prob = a
        .prob
        .as_ref()
        .map(|p| load_volume(p, VolumeKind::Probability))
        .transpose()?;
    if let Some(p) = &prob {
        if !p.same_grid(&qsm) {
            return Err(Error::DimensionMismatch(format!(
                "probability map {:?} vs qsm {:?}",
                p.dims(),
                qsm.dims()
            ))
            .into());
        }
    }
    let labels = label_components(&flair, connectivity)?;
    create_out(&a.out)?;

    let mut warnings = Vec::new();
    if labels.is_empty() {
        warnings.push(format!(
            "lesion mask {} is empty; manifest lists no lesions",
            a.flair_mask.display()
        ));
    }
    let prob_as_intensity = prob
        .map(|p| p.reinterpret(VolumeKind::Intensity))
        .transpose()?;
    let source = SourceRefs {
        qsm: display(&a.qsm),
        flair_mask: display(&a.flair_mask),
    };
    let lesions = labels
        .lesion_ids()
        .par_iter()
        .map(|&id| {
            let mut patch = crop_patch(&qsm, &labels, id, size)?;
            if let Some(p) = &prob_as_intensity {
                let cropped = crop_patch(p, &labels, id, size)?
                    .qsm
                    .reinterpret(VolumeKind::Probability)?;
                patch = patch.with_prob(cropped)?;
            }
            let patch = apply_dilated_mask(patch.dilate(dilation_mm)?)?;
            let mut entry = write_patch(&a.out, &subject, &patch, None)?;
            entry.source = Some(source.clone());
            Ok(entry)
        })
        .collect::<rimscan_core::Result<Vec<_>>>()?;
    for e in &lesions {
        if e.truncated_voxels > 0 {
            warnings.push(format!(
                "lesion {} truncated by {} voxels at the patch border",
                e.lesion_id, e.truncated_voxels
            ));
        }
    }

    let mut manifest = CohortManifest::new(size, dilation_mm);
    manifest.lesions = lesions;
    manifest.warnings = warnings.clone();
    write_manifest(&a.out, &manifest)?;

    let mut inputs = vec![
        ("qsm".to_string(), a.qsm.clone()),
        ("flair_mask".to_string(), a.flair_mask.clone()),
    ];
    if let Some(p) = &a.prob {
        inputs.push(("prob".to_string(), p.clone()));
    }
    let config = json!({
        "qsm": display(&a.qsm),
        "flair_mask": display(&a.flair_mask),
        "prob": a.prob.as_deref().map(display),
        "subject": subject,
        "patch_size": size,
        "dilation_mm": dilation_mm,
        "connectivity": connectivity.count(),
    });
    RunSnapshot::new("prep", config, &inputs)?.write(&a.out)?;
    Ok(warnings)
}

pub fn detect(ctx: &Context, a: &DetectArgs) -> Result<Vec<String>> {
    let f = &ctx.file;
    let tau_p = resolve(a.tau_p, f, "tau_p", DEFAULT_TAU_P)?;
    let tau_r = resolve(a.tau_r, f, "tau_r", DEFAULT_TAU_R)?;
    let thresholds = DetectionThresholds::new(tau_p, tau_r)?;
    let manifest = read_manifest(&a.cohort)?;
    create_out(&a.out)?;
    let rim_dir = a.out.join("rims");
    create_out(&rim_dir)?;

    let results = manifest
        .lesions
        .par_iter()
        .map(|e| {
            let patch = load_patch(&a.cohort, e, a.prob_dir.as_deref())?;
            if patch.prob.is_none() {
                return Err(Error::Missing(format!(
                    "probability map for lesion {} of {}",
                    e.lesion_id, e.subject_id
                )));
            }
            let outcome = detect_patch(&patch, thresholds)?;
            save_volume(
                &outcome.rim.mask,
                rim_dir.join(format!(
                    "{}_rim.nii.gz",
                    patch_stem(&e.subject_id, e.lesion_id)
                )),
            )?;
            let record = VerdictRecord::new(
                &e.subject_id,
                &outcome.profile,
                outcome.verdict.score,
                outcome.verdict.is_prl,
                tau_r,
            );
            Ok((record, outcome.measures))
        })
        .collect::<rimscan_core::Result<Vec<_>>>()?;

    let records: Vec<VerdictRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let measure_rows: Vec<_> = results
        .iter()
        .flat_map(|(r, ms)| {
            ms.iter()
                .map(move |m| (r.subject_id.clone(), r.lesion_id, *m))
        })
        .collect();
    write_jsonl(&a.out.join("verdicts.jsonl"), &records)?;
    write_text(
        &a.out.join("slice_measures.csv"),
        &slice_measures_csv(&measure_rows),
    )?;

    let labelled = manifest.lesions.iter().all(|e| e.label.is_some());
    let report = (labelled && !records.is_empty()).then(|| {
        let items: Vec<_> = records
            .iter()
            .zip(&manifest.lesions)
            .map(|(r, e)| (r.is_prl, e.label.unwrap_or(false), r.score))
            .collect();
        MetricsReport::from_predictions(&items, &[])
    });
    let n_prl = records.iter().filter(|r| r.is_prl).count();
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "n_lesions": records.len(),
            "n_prl": n_prl,
            "tau_p": tau_p,
            "tau_r": tau_r,
            "report": report,
        }),
    )?;

    let mut inputs = cohort_inputs(&a.cohort, &manifest);
    inputs.extend(prob_override_inputs(a.prob_dir.as_deref(), &manifest));
    let config = json!({
        "cohort": display(&a.cohort),
        "prob_dir": a.prob_dir.as_deref().map(display),
        "tau_p": tau_p,
        "tau_r": tau_r,
    });
    RunSnapshot::new("detect", config, &inputs)?.write(&a.out)?;
    let mut warnings = Vec::new();
    if records.is_empty() {
        warnings.push("cohort lists no lesions".to_string());
    }
    Ok(warnings)
}

type LabelMap = BTreeMap<(String, u32), bool>;

fn parse_bool(v: &str) -> Option<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// CSV `subject_id,lesion_id,label` with a header row.
pub fn read_labels_csv(path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = LabelMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match cols.as_slice() {
            [s, l, v] => l
                .parse::<u32>()
                .ok()
                .zip(parse_bool(v))
                .map(|(l, v)| (s.to_string(), l, v)),
            _ => None,
        };
        let Some((s, l, v)) = parsed else {
            return Err(Error::Parse {
                what: format!("{} line {}", path.display(), n + 1),
                reason: "expected subject_id,lesion_id,label".into(),
            }
            .into());
        };
        if out.insert((s, l), v).is_some() {
            bail!("{}: duplicate entry on line {}", path.display(), n + 1);
        }
    }
    Ok(out)
}

pub fn labels_csv(labels: &LabelMap) -> String {
    let mut s = String::from("subject_id,lesion_id,label\n");
    for ((sub, l), v) in labels {
        s.push_str(&format!("{sub},{l},{}\n", u8::from(*v)));
    }
    s
}

fn manifest_labels(manifest: &CohortManifest) -> Result<LabelMap> {
    manifest
        .lesions
        .iter()
        .map(|e| {
            let label = e.label.ok_or_else(|| {
                Error::Missing(format!(
                    "label for lesion {} of {}",
                    e.lesion_id, e.subject_id
                ))
            })?;
            Ok((e.key(), label))
        })
        .collect()
}

/// Distinct positive probability values inside each patch's dilated mask.
fn attained_probabilities(
    dir: &Path,
    entries: &[ManifestEntry],
    prob_dir: Option<&Path>,
) -> rimscan_core::Result<BTreeSet<u32>> {
    let cap = MAX_ATTAINED_GRID_VALUES + 1;
    entries
        .par_iter()
        .map(|e| {
            let patch = load_patch(dir, e, prob_dir)?;
            let prob = patch.prob.as_ref().ok_or_else(|| {
                Error::Missing(format!(
                    "probability map for lesion {} of {}",
                    e.lesion_id, e.subject_id
                ))
            })?;
            let mut seen = BTreeSet::new();
            for (i, &v) in prob.data().iter().enumerate() {
                let inside = patch
                    .dilated_mask
                    .as_ref()
                    .map_or(true, |d| d.data()[i] != 0.0);
                if inside && v > 0.0 {
                    seen.insert(v.to_bits());
                    if seen.len() >= cap {
                        break;
                    }
                }
            }
            Ok(seen)
        })
        .try_reduce(BTreeSet::new, |mut a, b| {
            if a.len() < cap {
                a.extend(b);
            }
            Ok(a)
        })
}

fn write_curves(out: &Path, prefix: &str, scores: &[(f64, bool)]) -> Result<Option<(f64, f64)>> {
    let (Ok((roc, roc_auc)), Ok((pr, pr_auc))) = (roc_curve_auc(scores), pr_curve_auc(scores))
    else {
        return Ok(None);
    };
    write_text(&out.join(format!("{prefix}roc.csv")), &curve_csv(&roc))?;
    write_text(&out.join(format!("{prefix}pr.csv")), &curve_csv(&pr))?;
    Ok(Some((roc_auc, pr_auc)))
}

pub fn tune(ctx: &Context, a: &TuneArgs) -> Result<Vec<String>> {
    let f = &ctx.file;
    let (lo, hi) = resolve_with(a.band.as_deref(), f, "band", DEFAULT_BAND, parse_pair)?;
    let band = SensitivityBand::new(lo, hi)?;
    let n_folds = resolve(a.folds, f, "folds", DEFAULT_FOLDS)?;
    let seed = resolve(ctx.seed, f, "seed", DEFAULT_SEED)?;
    let explicit_grid = resolve_with(a.grid.as_deref(), f, "grid", None, |k, v| {
        parse_list::<f64>(k, v).map(Some)
    })?;

    let manifest = read_manifest(&a.cohort)?;
    let labels = match &a.labels {
        Some(p) => read_labels_csv(p)?,
        None => manifest_labels(&manifest)?,
    };
    let prob_dir = a.prob_dir.as_deref();
    let grid_source = if explicit_grid.is_some() {
        "explicit"
    } else {
        "default"
    };
    let grid = match explicit_grid {
        Some(mut g) => {
            if g.is_empty() || g.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::InvalidParameter(format!(
                    "tau_p grid must be non-empty values in [0,1], got {g:?}"
                ))
                .into());
            }
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        }
        None => default_tau_p_grid(
            attained_probabilities(&a.cohort, &manifest.lesions, prob_dir)?
                .into_iter()
                .map(f32::from_bits),
        ),
    };

    let lesions = manifest
        .lesions
        .par_iter()
        .map(|e| {
            let label = *labels.get(&e.key()).ok_or_else(|| {
                Error::Missing(format!(
                    "label for lesion {} of {}",
                    e.lesion_id, e.subject_id
                ))
            })?;
            let patch = load_patch(&a.cohort, e, prob_dir)?;
            Ok(ScoredLesion {
                subject_id: e.subject_id.clone(),
                lesion_id: e.lesion_id,
                label,
                pair_scores: score_patch_grid(&patch, &grid)?,
            })
        })
        .collect::<rimscan_core::Result<Vec<_>>>()?;
    let table = ScoreTable {
        tau_p_grid: grid,
        lesions,
    };

    let mut summaries: BTreeMap<&str, SubjectSummary> = BTreeMap::new();
    for l in &table.lesions {
        let s = summaries
            .entry(&l.subject_id)
            .or_insert_with(|| SubjectSummary {
                subject_id: l.subject_id.clone(),
                n_lesions: 0,
                n_prl: 0,
            });
        s.n_lesions += 1;
        s.n_prl += usize::from(l.label);
    }
    let summaries: Vec<_> = summaries.into_values().collect();
    let folds = match &a.fold_file {
        Some(p) => {
            let folds: FoldAssignment = read_json(p)?;
            let assigned: BTreeSet<&str> =
                folds.subject_to_fold.keys().map(String::as_str).collect();
            let present: BTreeSet<&str> = summaries.iter().map(|s| s.subject_id.as_str()).collect();
            if assigned != present || folds.subject_to_fold.values().any(|&k| k >= folds.n_folds) {
                bail!(
                    "fold file {} does not cover exactly the cohort's subjects",
                    p.display()
                );
            }
            folds
        }
        None => make_folds(&summaries, n_folds, seed)?,
    };
    let cv = cross_validate(&table, &folds, band)?;

    create_out(&a.out)?;
    write_json(&a.out.join("tuning.json"), &cv.tuning)?;
    write_json(&a.out.join("folds.json"), &folds)?;
    write_json(&a.out.join("pooled_report.json"), &cv.pooled)?;
    write_jsonl(&a.out.join("held_out.jsonl"), &cv.held_out)?;
    write_jsonl(&a.out.join("scores.jsonl"), &table.lesions)?;
    let pooled: Vec<(f64, bool)> = cv.held_out.iter().map(|v| (v.score, v.label)).collect();
    let mut warnings = cv.tuning.warnings.clone();
    if write_curves(&a.out, "", &pooled)?.is_none() {
        warnings.push("pooled held-out set lacks one class; no ROC/PR curves written".into());
    }
    let curve_dir = a.out.join("curves");
    create_out(&curve_dir)?;
    for k in 0..folds.n_folds {
        let scores: Vec<(f64, bool)> = cv
            .held_out
            .iter()
            .filter(|v| v.fold == k)
            .map(|v| (v.score, v.label))
            .collect();
        write_curves(&curve_dir, &format!("fold{k}_"), &scores)?;
    }

    let mut inputs = cohort_inputs(&a.cohort, &manifest);
    inputs.extend(prob_override_inputs(prob_dir, &manifest));
    if let Some(p) = &a.labels {
        inputs.push(("labels".into(), p.clone()));
    }
    if let Some(p) = &a.fold_file {
        inputs.push(("fold_file".into(), p.clone()));
    }
    let config = json!({
        "cohort": display(&a.cohort),
        "prob_dir": a.prob_dir.as_deref().map(display),
        "labels": a.labels.as_deref().map(display),
        "fold_file": a.fold_file.as_deref().map(display),
        "band": [band.lo, band.hi],
        "folds": folds.n_folds,
        "seed": seed,
        "grid_source": grid_source,
        "grid": table.tau_p_grid,
    });
    RunSnapshot::new("tune", config, &inputs)?.write(&a.out)?;
    Ok(warnings)
}

pub fn eval(_ctx: &Context, a: &EvalArgs) -> Result<Vec<String>> {
    let verdicts: Vec<VerdictRecord> = read_jsonl(&a.verdicts)?;
    let manifest = a.cohort.as_ref().map(|d| read_manifest(d)).transpose()?;
    let truth = match (&a.labels, &manifest) {
        (Some(p), _) => read_labels_csv(p)?,
        (None, Some(m)) => manifest_labels(m)?,
        (None, None) => bail!("eval needs ground truth: pass --labels or --cohort"),
    };
    let predicted: BTreeSet<(String, u32)> = verdicts
        .iter()
        .map(|v| (v.subject_id.clone(), v.lesion_id))
        .collect();
    if predicted.len() != verdicts.len() {
        bail!("verdicts contain duplicate lesion ids");
    }
    let truth_keys: BTreeSet<_> = truth.keys().cloned().collect();
    if predicted != truth_keys {
        let missing: Vec<_> = truth_keys.difference(&predicted).take(5).collect();
        let extra: Vec<_> = predicted.difference(&truth_keys).take(5).collect();
        bail!("prediction and truth ids differ (missing predictions {missing:?}, unknown lesions {extra:?})");
    }
    let items: Vec<(bool, bool, f64)> = verdicts
        .iter()
        .map(|v| {
            (
                v.is_prl,
                truth[&(v.subject_id.clone(), v.lesion_id)],
                v.score,
            )
        })
        .collect();

    let mut warnings = Vec::new();
    let mut dice_rows = Vec::new();
    if let Some(rims) = &a.rims {
        let (Some(m), Some(dir)) = (&manifest, &a.cohort) else {
            bail!("--rims needs --cohort for ground-truth rims");
        };
        let positives: Vec<&ManifestEntry> = m
            .lesions
            .iter()
            .filter(|e| truth.get(&e.key()) == Some(&true))
            .collect();
        dice_rows = positives
            .par_iter()
            .map(|e| {
                let t = load_truth_rim(dir, e)?.ok_or_else(|| {
                    Error::Missing(format!(
                        "ground-truth rim for lesion {} of {}",
                        e.lesion_id, e.subject_id
                    ))
                })?;
                let p = load_volume(
                    rims.join(format!(
                        "{}_rim.nii.gz",
                        patch_stem(&e.subject_id, e.lesion_id)
                    )),
                    VolumeKind::BinaryMask,
                )?;
                Ok((e.subject_id.clone(), e.lesion_id, dice_score(&p, &t)?))
            })
            .collect::<rimscan_core::Result<Vec<_>>>()?;
        if dice_rows.is_empty() {
            warnings.push("no positive lesions; Dice not computed".into());
        }
    }
    let dice: Vec<f64> = dice_rows.iter().map(|r| r.2).collect();
    let report = MetricsReport::from_predictions(&items, &dice);
    create_out(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    let scores: Vec<(f64, bool)> = items.iter().map(|&(_, l, s)| (s, l)).collect();
    if write_curves(&a.out, "", &scores)?.is_none() {
        warnings.push("truth set lacks one class; no ROC/PR curves written".into());
    }
    if a.rims.is_some() {
        let mut csv = String::from("subject_id,lesion_id,dice\n");
        for (s, l, d) in &dice_rows {
            csv.push_str(&format!("{s},{l},{d}\n"));
        }
        write_text(&a.out.join("dice.csv"), &csv)?;
    }

    let mut inputs = vec![("verdicts".to_string(), a.verdicts.clone())];
    if let Some(p) = &a.labels {
        inputs.push(("labels".into(), p.clone()));
    }
    if let (Some(dir), Some(m)) = (&a.cohort, &manifest) {
        inputs.push((MANIFEST_FILE.into(), dir.join(MANIFEST_FILE)));
        if a.rims.is_some() {
            inputs.extend(
                m.lesions
                    .iter()
                    .filter_map(|e| e.truth_rim.as_ref())
                    .map(|r| (r.clone(), dir.join(r))),
            );
        }
    }
    if let Some(rims) = &a.rims {
        for (s, l, _) in &dice_rows {
            let name = format!("{}_rim.nii.gz", patch_stem(s, *l));
            inputs.push((format!("rims/{name}"), rims.join(name)));
        }
    }
    let config = json!({
        "verdicts": display(&a.verdicts),
        "labels": a.labels.as_deref().map(display),
        "cohort": a.cohort.as_deref().map(display),
        "rims": a.rims.as_deref().map(display),
    });
    RunSnapshot::new("eval", config, &inputs)?.write(&a.out)?;
    Ok(warnings)
}

/// Phantom spec from defaults, then the config file, the spec file and flags.
pub fn resolve_phantom_spec(ctx: &Context, a: &PhantomArgs) -> Result<PhantomSpec> {
    let mut spec = PhantomSpec::default();
    apply_spec_keys(&mut spec, &ctx.file)?;
    if let Some(p) = &a.spec {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        if text.trim_start().starts_with('{') {
            spec = serde_json::from_str(&text).map_err(|e| Error::Parse {
                what: display(p),
                reason: e.to_string(),
            })?;
        } else {
            apply_spec_keys(
                &mut spec,
                &ConfigFile::parse(&text).with_context(|| format!("parsing {}", p.display()))?,
            )?;
        }
    }
    if let Some(v) = a.n_subjects {
        spec.n_subjects = v;
    }
    if let Some(v) = a.prl_fraction {
        spec.prl_fraction = v;
    }
    if let Some(v) = a.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = a.blur_radius_vox {
        spec.blur_radius_vox = v;
    }
    if let Some(v) = ctx.seed {
        spec.seed = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn apply_spec_keys(spec: &mut PhantomSpec, c: &ConfigFile) -> Result<()> {
    macro_rules! scalar {
        ($key:literal, $field:ident) => {
            if let Some(v) = c.get($key)? {
                spec.$field = v;
            }
        };
    }
    macro_rules! with {
        ($key:literal, $field:ident, $parse:path) => {
            if let Some(v) = c.raw($key) {
                spec.$field = $parse($key, v)?;
            }
        };
    }
    scalar!("n_subjects", n_subjects);
    scalar!("prl_fraction", prl_fraction);
    scalar!("partial_rim_fraction", partial_rim_fraction);
    scalar!("noise_sigma", noise_sigma);
    scalar!("blur_radius_vox", blur_radius_vox);
    scalar!("seed", seed);
    scalar!("dilation_mm", dilation_mm);
    with!("lesions_per_subject", lesions_per_subject, parse_pair);
    with!("rim_thickness_vox", rim_thickness_vox, parse_pair);
    with!("rim_arc_degrees", rim_arc_degrees, parse_pair);
    with!("patch_size", patch_size, parse_triple);
    with!("spacing", spacing, parse_triple);
    Ok(())
}

pub fn phantom(ctx: &Context, a: &PhantomArgs) -> Result<Vec<String>> {
    let spec = resolve_phantom_spec(ctx, a)?;
    let cohort = generate_phantom_cohort(&spec)?;
    let manifest = write_phantom_cohort(&a.out, &cohort)?;
    let labels: LabelMap = manifest
        .lesions
        .iter()
        .map(|e| (e.key(), e.label.unwrap_or(false)))
        .collect();
    write_text(&a.out.join("labels.csv"), &labels_csv(&labels))?;
    let inputs: Vec<(String, PathBuf)> = a
        .spec
        .iter()
        .map(|p| ("spec".to_string(), p.clone()))
        .collect();
    RunSnapshot::new("phantom", serde_json::to_value(&spec)?, &inputs)?.write(&a.out)?;
    let mut warnings = Vec::new();
    if cohort.n_prl() == 0 {
        warnings.push("phantom cohort has no PRL lesions".into());
    }
    Ok(warnings)
}
