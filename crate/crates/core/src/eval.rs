//! Threshold-based detection metrics: single operating points, full ROC
//! sweeps with AUROC, and threshold calibration on a validation split.
//!
//! A sample is predicted positive when its score is strictly greater than
//! the threshold `tau`; ties count as negative everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::fsutil;
use crate::scoring::ScoredSample;

/// Positive-class labels used in reports.
pub const POSITIVE_MISCLASSIFIED: &str = "misclassified";
pub const POSITIVE_OOD: &str = "out_of_distribution";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "tau_serde")]
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// JSON has no infinities: the sweep sentinels are written as `"inf"` / `"-inf"`.
mod tau_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_infinite() {
            s.serialize_str(if *tau > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*tau)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scorer: String,
    pub positive_class: String,
    pub auroc: f64,
    /// Sorted by increasing threshold, from `-inf` to `inf`.
    pub points: Vec<OperatingPoint>,
}

impl DetectionReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        fsutil::read_json(path)
    }
}

fn class_totals(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(UqError::Domain(format!("score {s} is not a number")));
    }
    let pos = scores.iter().filter(|(_, p)| *p).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(UqError::DegenerateInput(format!(
            "detection needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    Ok((pos, neg))
}

fn point(tau: f64, tp: usize, fp: usize, pos: usize, neg: usize) -> OperatingPoint {
    OperatingPoint {
        tau,
        tpr: tp as f64 / pos as f64,
        fpr: fp as f64 / neg as f64,
        tp,
        fp,
        tn: neg - fp,
        fn_: pos - tp,
    }
}

/// Operating point at one threshold. `scores` pairs each score with whether
/// the sample belongs to the positive class.
pub fn evaluate(scores: &[(f64, bool)], tau: f64) -> Result<OperatingPoint> {
    let (pos, neg) = class_totals(scores)?;
    let tp = scores.iter().filter(|&&(s, p)| p && s > tau).count();
    let fp = scores.iter().filter(|&&(s, p)| !p && s > tau).count();
    Ok(point(tau, tp, fp, pos, neg))
}

/// Operating points at `-inf`, every distinct score, and `inf`, plus the
/// trapezoidal area under the resulting ROC curve.
pub fn sweep(scores: &[(f64, bool)], scorer: &str, positive_class: &str) -> Result<DetectionReport> {
    let (pos, neg) = class_totals(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = vec![point(f64::NEG_INFINITY, pos, neg, pos, neg)];
    // walk upwards: after consuming all samples with score <= v, the rest are above v
    let (mut tp, mut fp) = (pos, neg);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        points.push(point(v, tp, fp, pos, neg));
    }
    points.push(point(f64::INFINITY, 0, 0, pos, neg));
    let auroc = trapezoid(&points);
    Ok(DetectionReport {
        scorer: scorer.to_string(),
        positive_class: positive_class.to_string(),
        auroc,
        points,
    })
}

fn trapezoid(points: &[OperatingPoint]) -> f64 {
    // points run from (1, 1) at -inf down to (0, 0) at +inf
    points
        .windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    Ok(sweep(scores, "", "")?.auroc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// False-positive rate at most the given value; picks the smallest such threshold.
    MaxFpr(f64),
    /// True-positive rate at least the given value; picks the largest such threshold.
    MinTpr(f64),
}

/// Threshold meeting `target` on (validation) scores. Candidates are the
/// sweep thresholds, so the result is `-inf` or one of the observed scores.
pub fn calibrate(scores: &[(f64, bool)], target: Target) -> Result<f64> {
    let report = sweep(scores, "", "")?;
    match target {
        Target::MaxFpr(x) => report
            .points
            .iter()
            .find(|p| p.fpr <= x)
            .map(|p| p.tau)
            .ok_or(UqError::Calibration {
                detail: format!("no threshold reaches FPR <= {x}"),
                best: 0.0,
            }),
        Target::MinTpr(y) => report
            .points
            .iter()
            .rev()
            .find(|p| p.tpr >= y)
            .map(|p| p.tau)
            .ok_or(UqError::Calibration {
                detail: format!("no threshold reaches TPR >= {y}"),
                best: 1.0,
            }),
    }
}

/// Smallest threshold whose false-positive rate on `negatives` alone is at
/// most `max_fpr`. Used when only in-distribution validation data exists.
pub fn calibrate_on_negatives(negatives: &[f64], max_fpr: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(UqError::EmptyInput("no validation scores to calibrate on".into()));
    }
    if !(0.0..=1.0).contains(&max_fpr) {
        return Err(UqError::Parameter(format!("target FPR {max_fpr} outside [0, 1]")));
    }
    let mut sorted = negatives.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    if 1.0 <= max_fpr {
        return Ok(f64::NEG_INFINITY);
    }
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        if (sorted.len() - i) as f64 / n <= max_fpr {
            return Ok(v);
        }
    }
    unreachable!("the largest score always gives FPR 0")
}

/// Pairs misclassification scores with "is misclassified".
pub fn misclassification_labels(scored: &[ScoredSample]) -> Vec<(f64, bool)> {
    scored.iter().map(|s| (s.score, s.misclassified())).collect()
}

/// Pairs in-distribution scores (negatives) with OOD scores (positives).
pub fn ood_labels(in_distribution: &[f64], ood: &[f64]) -> Vec<(f64, bool)> {
    in_distribution
        .iter()
        .map(|&s| (s, false))
        .chain(ood.iter().map(|&s| (s, true)))
        .collect()
}

/// Empirical CDF of reference scores, used to put different scorers on a
/// common `[0, 1]` scale before fusing them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(reference: &[f64]) -> Result<Self> {
        if reference.is_empty() {
            return Err(UqError::EmptyInput("empty reference scores".into()));
        }
        let mut sorted = reference.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    /// Fraction of reference scores `<= s`.
    pub fn eval(&self, s: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= s) as f64 / self.sorted.len() as f64
    }
}

/// Element-wise maximum of CDF-normalized scores: `max_j cdf_j(scores_j[i])`.
pub fn fuse_max(cdfs: &[EmpiricalCdf], scores: &[&[f64]]) -> Result<Vec<f64>> {
    if cdfs.len() != scores.len() || cdfs.is_empty() {
        return Err(UqError::Parameter("one CDF per score list required".into()));
    }
    let n = scores[0].len();
    if scores.iter().any(|s| s.len() != n) {
        return Err(UqError::Dimension("fused score lists differ in length".into()));
    }
    Ok((0..n)
        .map(|i| {
            cdfs.iter()
                .zip(scores)
                .map(|(c, s)| c.eval(s[i]))
                .fold(0.0, f64::max)
        })
        .collect())
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    #[serde(rename = "TPR")]
    pub tpr: f64,
    #[serde(rename = "FPR")]
    pub fpr: f64,
    #[serde(rename = "False-Neg")]
    pub false_neg: usize,
    pub tau: f64,
}

impl SummaryRow {
    pub fn new(method: &str, p: &OperatingPoint) -> Self {
        SummaryRow {
            method: method.to_string(),
            tpr: p.tpr,
            fpr: p.fpr,
            false_neg: p.fn_,
            tau: p.tau,
        }
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    fsutil::write_csv(path, rows)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    fsutil::read_csv(path)
}
