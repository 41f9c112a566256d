use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rimscan_core::nifti::save_volume;
use rimscan_core::{Spacing, Volume, VolumeKind};
use serde_json::Value;

fn rimscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rimscan"))
        .args(args)
        .output()
        .expect("spawn rimscan")
}

fn ok(args: &[&str]) -> Output {
    let out = rimscan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(
        &fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap()
}

fn jsonl(path: PathBuf) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn phantom(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("phantom");
    let mut args = vec!["phantom", "--out", s(&out)];
    for (flag, default) in [("--n-subjects", "8"), ("--prl-fraction", "0.3")] {
        if !extra.contains(&flag) {
            args.extend([flag, default]);
        }
    }
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn write_inputs(dir: &Path, lesions: &[[usize; 3]], dims: [usize; 3]) -> (PathBuf, PathBuf) {
    let sp = Spacing::new(0.5, 0.5, 1.0).unwrap();
    let n = dims.iter().product();
    let mut mask = vec![false; n];
    for c in lesions {
        for dz in 0..2 {
            for dy in 0..3 {
                for dx in 0..3 {
                    mask[(c[0] + dx) + dims[0] * ((c[1] + dy) + dims[1] * (c[2] + dz))] = true;
                }
            }
        }
    }
    let qsm = Volume::new(
        dims,
        sp,
        VolumeKind::Intensity,
        (0..n).map(|i| (i % 7) as f32).collect(),
    )
    .unwrap();
    let (q, f) = (dir.join("qsm.nii.gz"), dir.join("flair.nii.gz"));
    save_volume(&qsm, &q).unwrap();
    save_volume(&Volume::from_mask(dims, sp, &mask).unwrap(), &f).unwrap();
    (q, f)
}

#[test]
fn prep_counts_lesions() {
    let dir = tempfile::tempdir().unwrap();
    let (q, f) = write_inputs(
        dir.path(),
        &[[2, 2, 1], [20, 4, 3], [10, 20, 5]],
        [30, 30, 8],
    );
    let out = dir.path().join("prep");
    ok(&[
        "prep",
        "--qsm",
        s(&q),
        "--flair-mask",
        s(&f),
        "--patch-size",
        "16,16,6",
        "--out",
        s(&out),
    ]);
    let m = json(out.join("manifest.json"));
    assert_eq!(m["lesions"].as_array().unwrap().len(), 3);
    assert_eq!(m["patch_size"], serde_json::json!([16, 16, 6]));
    let snap = json(out.join("run_config.json"));
    assert_eq!(snap["command"], "prep");
    assert_eq!(snap["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn prep_empty_mask_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (q, f) = write_inputs(dir.path(), &[], [12, 12, 4]);
    let out = dir.path().join("prep");
    let o = ok(&[
        "prep",
        "--qsm",
        s(&q),
        "--flair-mask",
        s(&f),
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(json(out.join("manifest.json"))["lesions"]
        .as_array()
        .unwrap()
        .is_empty());
}

#[test]
fn prep_rejects_grid_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (q, _) = write_inputs(dir.path(), &[[1, 1, 1]], [12, 12, 4]);
    let other = tempfile::tempdir().unwrap();
    let (_, f) = write_inputs(other.path(), &[[1, 1, 1]], [12, 10, 4]);
    let o = rimscan(&[
        "prep",
        "--qsm",
        s(&q),
        "--flair-mask",
        s(&f),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prep_on_phantom_subject_matches_phantom_lesions() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &[]);
    let m = json(ph.join("manifest.json"));
    let sub = "sub-001";
    let mut expected: Vec<u64> = Vec::new();
    for e in m["lesions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["subject_id"] == sub)
    {
        let v = rimscan_core::nifti::load_volume(
            ph.join(e["flair_mask"].as_str().unwrap()),
            VolumeKind::BinaryMask,
        )
        .unwrap();
        expected.push(v.count_nonzero() as u64);
    }
    let out = dir.path().join("prep");
    ok(&[
        "prep",
        "--qsm",
        s(&ph.join(format!("subjects/{sub}_qsm.nii.gz"))),
        "--flair-mask",
        s(&ph.join(format!("subjects/{sub}_flair.nii.gz"))),
        "--subject",
        sub,
        "--out",
        s(&out),
    ]);
    let prepped = json(out.join("manifest.json"));
    let mut got: Vec<u64> = Vec::new();
    for e in prepped["lesions"].as_array().unwrap() {
        let v = rimscan_core::nifti::load_volume(
            out.join(e["flair_mask"].as_str().unwrap()),
            VolumeKind::BinaryMask,
        )
        .unwrap();
        got.push(v.count_nonzero() as u64);
    }
    expected.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, expected);
}

#[test]
fn detect_on_uncorrupted_phantom_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &[]);
    let out = dir.path().join("det");
    ok(&["detect", "--cohort", s(&ph), "--out", s(&out)]);
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["report"]["sensitivity"], 1.0);
    assert_eq!(summary["report"]["ppv"], 1.0);
    let verdicts = jsonl(out.join("verdicts.jsonl"));
    assert!(!verdicts.is_empty());
    for key in [
        "lesion_id",
        "subject_id",
        "score",
        "is_prl",
        "tau_p",
        "tau_r",
        "ratios",
    ] {
        assert!(verdicts[0].get(key).is_some(), "{key}");
    }
    assert!(out.join("slice_measures.csv").exists());
    assert_eq!(
        fs::read_dir(out.join("rims")).unwrap().count(),
        verdicts.len()
    );

    let high = dir.path().join("high");
    ok(&[
        "detect",
        "--cohort",
        s(&ph),
        "--tau-r",
        "1000",
        "--out",
        s(&high),
    ]);
    assert_eq!(json(high.join("summary.json"))["n_prl"], 0);
}

#[test]
fn detect_without_probability_maps_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (q, f) = write_inputs(dir.path(), &[[2, 2, 1]], [20, 20, 6]);
    let prep = dir.path().join("prep");
    ok(&[
        "prep",
        "--qsm",
        s(&q),
        "--flair-mask",
        s(&f),
        "--patch-size",
        "8,8,4",
        "--out",
        s(&prep),
    ]);
    let o = rimscan(&[
        "detect",
        "--cohort",
        s(&prep),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("probability map"));
}

#[test]
fn config_precedence_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &[]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# detection\ntau_p = 0.7\ntau_r = 0.2\n").unwrap();
    let a = dir.path().join("a");
    ok(&[
        "detect",
        "--config",
        s(&cfg),
        "--cohort",
        s(&ph),
        "--out",
        s(&a),
    ]);
    let snap = json(a.join("run_config.json"));
    assert_eq!(
        (
            snap["config"]["tau_p"].as_f64(),
            snap["config"]["tau_r"].as_f64()
        ),
        (Some(0.7), Some(0.2))
    );
    let b = dir.path().join("b");
    ok(&[
        "detect",
        "--config",
        s(&cfg),
        "--tau-p",
        "0.6",
        "--cohort",
        s(&ph),
        "--out",
        s(&b),
    ]);
    assert_eq!(
        json(b.join("run_config.json"))["config"]["tau_p"].as_f64(),
        Some(0.6)
    );
    // rerun is byte-identical
    ok(&[
        "detect",
        "--config",
        s(&cfg),
        "--cohort",
        s(&ph),
        "--out",
        s(&a),
    ]);
    let again = json(a.join("run_config.json"));
    assert_eq!(snap, again);

    fs::write(&cfg, "colour = blue\n").unwrap();
    let o = rimscan(&[
        "detect",
        "--config",
        s(&cfg),
        "--cohort",
        s(&ph),
        "--out",
        s(&a),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tune_without_positives_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &["--prl-fraction", "0"]);
    let o = rimscan(&[
        "tune",
        "--cohort",
        s(&ph),
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn eval_identity_inversion_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(dir.path(), &[]);
    let det = dir.path().join("det");
    ok(&["detect", "--cohort", s(&ph), "--out", s(&det)]);
    let ev = dir.path().join("ev");
    ok(&[
        "eval",
        "--verdicts",
        s(&det.join("verdicts.jsonl")),
        "--cohort",
        s(&ph),
        "--rims",
        s(&det.join("rims")),
        "--out",
        s(&ev),
    ]);
    let r = json(ev.join("report.json"));
    assert_eq!(
        (r["sensitivity"].as_f64(), r["ppv"].as_f64()),
        (Some(1.0), Some(1.0))
    );
    assert_eq!(r["dice"]["mean"].as_f64(), Some(1.0));

    // swapped truth labels
    let labels = fs::read_to_string(ph.join("labels.csv")).unwrap();
    let swapped: String = labels
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let (head, v) = l.rsplit_once(',').unwrap();
                format!("{head},{}\n", if v == "1" { 0 } else { 1 })
            }
        })
        .collect();
    let swapped_path = dir.path().join("swapped.csv");
    fs::write(&swapped_path, swapped).unwrap();
    let ev2 = dir.path().join("ev2");
    ok(&[
        "eval",
        "--verdicts",
        s(&det.join("verdicts.jsonl")),
        "--labels",
        s(&swapped_path),
        "--out",
        s(&ev2),
    ]);
    assert_eq!(
        json(ev2.join("report.json"))["sensitivity"].as_f64(),
        Some(0.0)
    );

    let truncated: String = labels.lines().take(3).map(|l| format!("{l}\n")).collect();
    let short = dir.path().join("short.csv");
    fs::write(&short, truncated).unwrap();
    let o = rimscan(&[
        "eval",
        "--verdicts",
        s(&det.join("verdicts.jsonl")),
        "--labels",
        s(&short),
        "--out",
        s(&ev2),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

/// Recompute pooled detection counts and rates directly from the exported held-out verdicts.
#[test]
fn tune_and_eval_agree_with_replay() {
    let dir = tempfile::tempdir().unwrap();
    let ph = phantom(
        dir.path(),
        &[
            "--noise-sigma",
            "0.3",
            "--blur-radius-vox",
            "0.5",
            "--n-subjects",
            "20",
            "--prl-fraction",
            "0.15",
        ],
    );
    let tune = dir.path().join("tune");
    ok(&["tune", "--cohort", s(&ph), "--seed", "2", "--out", s(&tune)]);
    let held = jsonl(tune.join("held_out.jsonl"));
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for v in &held {
        match (
            v["is_prl"].as_bool().unwrap(),
            v["label"].as_bool().unwrap(),
        ) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let pooled = json(tune.join("pooled_report.json"));
    assert_eq!(
        pooled["counts"],
        serde_json::json!({"tp": tp, "fp": fp, "tn": tn, "fn": fn_})
    );
    let per_fold: u64 = json(tune.join("tuning.json"))["per_fold"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["counts"]["tp"].as_u64().unwrap())
        .sum();
    assert_eq!(per_fold, tp);

    let ev = dir.path().join("ev");
    ok(&[
        "eval",
        "--verdicts",
        s(&tune.join("held_out.jsonl")),
        "--cohort",
        s(&ph),
        "--out",
        s(&ev),
    ]);
    let r = json(ev.join("report.json"));
    assert_eq!(r["counts"], pooled["counts"]);
    let sens = tp as f64 / (tp + fn_) as f64;
    assert_eq!(r["sensitivity"].as_f64(), Some(sens));
    assert_eq!(r["roc_auc"], pooled["roc_auc"]);

    let folds: BTreeMap<String, Value> =
        serde_json::from_value(json(tune.join("folds.json"))["subject_to_fold"].clone()).unwrap();
    for v in &held {
        assert_eq!(folds[v["subject_id"].as_str().unwrap()], v["fold"]);
    }
}
