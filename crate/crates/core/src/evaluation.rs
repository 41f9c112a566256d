//! Segmentation and detection metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Dice overlap of two masks; 1.0 when both are empty.
pub fn dice_score(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "dice: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(dice_bits(
        a.data().iter().map(|&v| v != 0.0),
        b.data().iter().map(|&v| v != 0.0),
    ))
}

pub fn dice_bits(a: impl Iterator<Item = bool>, b: impl Iterator<Item = bool>) -> f64 {
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (x, y) in a.zip(b) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (predicted, actual) in pairs {
            c.record(predicted, actual);
        }
        c
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Derived rates; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(c: &ConfusionCounts) -> Rates {
    Rates {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv: ratio(c.tp, c.tp + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

/// One point of a ROC (x = FPR, y = TPR) or PR (x = recall, y = precision) curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Cumulative (threshold, positives >= t, negatives >= t) for each distinct score, descending.
fn sweep(scores: &[(f64, bool)]) -> Vec<(f64, u64, u64)> {
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, u64, u64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

fn check_scores(scores: &[(f64, bool)]) -> Result<(u64, u64)> {
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {}", s.0)));
    }
    let pos = scores.iter().filter(|s| s.1).count() as u64;
    Ok((pos, scores.len() as u64 - pos))
}

/// ROC curve over all distinct thresholds and its trapezoidal AUC.
///
/// The area is accumulated in integer pair counts, so it equals the
/// Mann-Whitney statistic with ties counted as one half.
pub fn roc_curve_auc(scores: &[(f64, bool)]) -> Result<(Vec<CurvePoint>, f64)> {
    let (pos, neg) = check_scores(scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidParameter(
            "ROC needs at least one positive and one negative".into(),
        ));
    }
    let mut curve = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    for (t, tp, fp) in sweep(scores) {
        twice_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        curve.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold: t,
        });
        prev_tp = tp;
        prev_fp = fp;
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((curve, auc))
}

/// Precision-recall curve and average precision (stepwise, no interpolation).
pub fn pr_curve_auc(scores: &[(f64, bool)]) -> Result<(Vec<CurvePoint>, f64)> {
    let (pos, _) = check_scores(scores)?;
    if pos == 0 {
        return Err(Error::NoPositives(
            "precision-recall needs at least one positive".into(),
        ));
    }
    let mut curve = Vec::new();
    let mut prev_tp = 0u64;
    let mut ap = 0.0;
    for (t, tp, fp) in sweep(scores) {
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (tp - prev_tp) as f64 * precision;
        curve.push(CurvePoint {
            x: tp as f64 / pos as f64,
            y: precision,
            threshold: t,
        });
        prev_tp = tp;
    }
    Ok((curve, ap / pos as f64))
}

/// 2x2 agreement table between two binary raters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub both_yes: u64,
    pub a_yes_b_no: u64,
    pub a_no_b_yes: u64,
    pub both_no: u64,
}

impl AgreementTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut t = Self {
            both_yes: 0,
            a_yes_b_no: 0,
            a_no_b_yes: 0,
            both_no: 0,
        };
        for p in pairs {
            match p {
                (true, true) => t.both_yes += 1,
                (true, false) => t.a_yes_b_no += 1,
                (false, true) => t.a_no_b_yes += 1,
                (false, false) => t.both_no += 1,
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.both_yes + self.a_yes_b_no + self.a_no_b_yes + self.both_no
    }
}

/// Cohen's kappa with marginal-product chance agreement.
pub fn cohens_kappa(t: &AgreementTable) -> Result<f64> {
    let n = t.total();
    if n == 0 {
        return Err(Error::InvalidParameter("kappa of an empty table".into()));
    }
    let n = n as f64;
    let p_o = (t.both_yes + t.both_no) as f64 / n;
    let a_yes = (t.both_yes + t.a_yes_b_no) as f64 / n;
    let b_yes = (t.both_yes + t.a_no_b_yes) as f64 / n;
    let p_e = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if p_e >= 1.0 {
        // both raters constant and identical
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Weights of the Dice + weighted-BCE objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub pos_weight: f64,
    /// Share of the Dice term; the BCE term gets `1 - mix`.
    pub mix: f64,
    pub smooth: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            pos_weight: 50.0,
            mix: 0.5,
            smooth: 1.0,
            eps: 1e-7,
        }
    }
}

/// `mix * (1 - softDice) + (1 - mix) * weighted BCE`, averaged over voxels.
///
/// Probabilities are clamped to `[eps, 1 - eps]` inside the logarithms only.
pub fn dice_bce_loss(prob: &Volume, truth: &Volume, cfg: &LossConfig) -> Result<f64> {
    if prob.dims() != truth.dims() {
        return Err(Error::DimensionMismatch(format!(
            "loss: {:?} vs {:?}",
            prob.dims(),
            truth.dims()
        )));
    }
    dice_bce_loss_slices(prob.data(), truth.data(), cfg)
}

pub fn dice_bce_loss_slices(prob: &[f32], truth: &[f32], cfg: &LossConfig) -> Result<f64> {
    if prob.len() != truth.len() || prob.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "loss: {} vs {} voxels",
            prob.len(),
            truth.len()
        )));
    }
    if !(cfg.pos_weight > 0.0) || !(0.0..=1.0).contains(&cfg.mix) {
        return Err(Error::InvalidParameter(format!(
            "loss needs pos_weight > 0 and mix in [0,1], got {} and {}",
            cfg.pos_weight, cfg.mix
        )));
    }
    let (mut inter, mut psum, mut ysum, mut bce) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&p, &y) in prob.iter().zip(truth) {
        let (p, y) = (p as f64, y as f64);
        inter += p * y;
        psum += p;
        ysum += y;
        let pc = p.clamp(cfg.eps, 1.0 - cfg.eps);
        bce -= cfg.pos_weight * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    let soft_dice = (2.0 * inter + cfg.smooth) / (psum + ysum + cfg.smooth);
    let bce = bce / prob.len() as f64;
    Ok(cfg.mix * (1.0 - soft_dice) + (1.0 - cfg.mix) * bce)
}

/// Mean and population standard deviation of per-lesion Dice scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl DiceStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            n: values.len(),
            mean,
            std: var.sqrt(),
        })
    }
}

/// Everything reported for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub accuracy: Option<f64>,
    pub dice: Option<DiceStats>,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    /// Agreement between predicted and reference labels.
    pub kappa: Option<f64>,
    pub pr_auc_method: String,
}

impl MetricsReport {
    /// Build a report from (predicted, actual, score) triples and optional Dice values.
    pub fn from_predictions(items: &[(bool, bool, f64)], dice_values: &[f64]) -> Self {
        let counts = ConfusionCounts::from_pairs(items.iter().map(|&(p, a, _)| (p, a)));
        let rates = confusion_metrics(&counts);
        let scored: Vec<(f64, bool)> = items.iter().map(|&(_, a, s)| (s, a)).collect();
        let roc_auc = roc_curve_auc(&scored).ok().map(|r| r.1);
        let pr_auc = pr_curve_auc(&scored).ok().map(|r| r.1);
        let kappa = if items.is_empty() {
            None
        } else {
            cohens_kappa(&AgreementTable::from_pairs(
                items.iter().map(|&(p, a, _)| (p, a)),
            ))
            .ok()
        };
        Self {
            counts,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            ppv: rates.ppv,
            accuracy: rates.accuracy,
            dice: DiceStats::from_values(dice_values),
            roc_auc,
            pr_auc,
            kappa,
            pr_auc_method: "average precision (stepwise)".into(),
        }
    }
}
