//! JSON / JSON-lines / CSV serialisation of pipeline outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::RimRatioProfile;
use crate::error::{Error, Result};
use crate::evaluation::CurvePoint;
use crate::rim::SliceMeasure;

/// One line of a verdicts file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub lesion_id: u32,
    pub subject_id: String,
    pub score: f64,
    pub is_prl: bool,
    pub tau_p: f64,
    pub tau_r: f64,
    #[serde(default)]
    pub ratios: Vec<f64>,
    #[serde(default)]
    pub slices: Vec<usize>,
}

impl VerdictRecord {
    pub fn new(
        subject_id: &str,
        profile: &RimRatioProfile,
        score: f64,
        is_prl: bool,
        tau_r: f64,
    ) -> Self {
        Self {
            lesion_id: profile.lesion_id,
            subject_id: subject_id.to_string(),
            score,
            is_prl,
            tau_p: profile.tau_p,
            tau_r,
            ratios: profile.ratios.clone(),
            slices: profile.slices.clone(),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("json encode: {e}")))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Invariant(format!("json encode: {e}")))?,
        );
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    s.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                what: format!("{} line {}", path.display(), i + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// `threshold,x,y` rows; the curve origin has threshold `inf`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,x,y\n");
    for p in points {
        let t = if p.threshold.is_infinite() {
            "inf".to_string()
        } else {
            p.threshold.to_string()
        };
        let _ = writeln!(s, "{t},{},{}", p.x, p.y);
    }
    s
}

pub fn slice_measures_csv(rows: &[(String, u32, SliceMeasure)]) -> String {
    let mut s = String::from("subject_id,lesion_id,slice_index,rim_length,flair_perimeter\n");
    for (subject, lesion, m) in rows {
        let _ = writeln!(
            s,
            "{subject},{lesion},{},{},{}",
            m.slice_index, m.rim_length, m.flair_perimeter
        );
    }
    s
}
