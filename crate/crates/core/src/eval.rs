//! Detection metrics, ROC analysis and the input-size sweep.
//!
//! Positive class is "abnormal". Anomaly scores are `1 - discriminator output`
//! so that higher means more anomalous.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::can::CanLog;
use crate::detector::{Detector, DetectorError, Verdict};
use crate::encoder::{build_images, EncoderConfig, EncoderError, EncodingMode, ImageLabel};
use crate::gan::{train_gan, TrainConfig, TrainError, TrainedGids};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("ROC needs at least one positive and one negative label")]
    SingleClassInput,
    #[error("input sizes must be a non-empty list of values >= 1")]
    InvalidSizes,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub counts: Confusion,
    /// Recall on abnormal images; 0 when there are none.
    pub detection_rate: f64,
    /// 0 when nothing was flagged; see `precision_degenerate`.
    pub precision: f64,
    pub precision_degenerate: bool,
    pub accuracy: f64,
    /// Present when both classes occur and scores were supplied.
    pub auc: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(counts: Confusion) -> Self {
        let Confusion { tp, fp, tn, fn_ } = counts;
        EvalReport {
            counts,
            detection_rate: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            precision_degenerate: tp + fp == 0,
            accuracy: ratio(tp + tn, counts.total()),
            auc: None,
        }
    }

    /// Share of normal images classified normal.
    pub fn normal_rate(&self) -> f64 {
        ratio(self.counts.tn, self.counts.tn + self.counts.fp)
    }
}

/// Counts with `predicted[i]` / `actual[i]` meaning "abnormal".
pub fn confusion(predicted: &[bool], actual: &[bool]) -> Result<EvalReport, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch { predictions: predicted.len(), labels: actual.len() });
    }
    let mut c = Confusion::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(EvalReport::from_counts(c))
}

/// Confusion counts of cascade verdicts plus the AUC of their anomaly scores.
pub fn evaluate(verdicts: &[Verdict], labels: &[ImageLabel]) -> Result<EvalReport, EvalError> {
    let predicted: Vec<bool> = verdicts.iter().map(Verdict::is_anomaly).collect();
    let actual: Vec<bool> = labels.iter().map(|l| l.is_abnormal()).collect();
    let mut report = confusion(&predicted, &actual)?;
    let scores: Vec<f64> = verdicts.iter().map(Verdict::anomaly_score).collect();
    report.auc = roc_auc(&scores, &actual).ok();
    Ok(report)
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize), EvalError> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassInput);
    }
    Ok((pos, neg))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { predictions: scores.len(), labels: labels.len() });
    }
    Ok(())
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score threshold.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Area under the ROC curve by the trapezoid rule; tied scores give the
/// diagonal segment, which is the U-statistic's half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let points = roc_points(scores, labels)?;
    Ok(points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

/// Mann-Whitney U normalised to `[0, 1]`, using mid-ranks for ties.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in points {
        writeln!(out, "{fpr:.6},{tpr:.6}").unwrap();
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Plain-text table with one row per attack.
pub fn report_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Attack".len());
    let mut out = format!("{:<width$}  {:>14}  {:>9}  {:>8}  {:>6}\n", "Attack", "Detection rate", "Precision", "Accuracy", "AUC");
    for (name, r) in rows {
        let precision = if r.precision_degenerate { "n/a".to_string() } else { pct(r.precision) };
        let auc = r.auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
        writeln!(
            out,
            "{name:<width$}  {:>14}  {precision:>9}  {:>8}  {auc:>6}",
            pct(r.detection_rate),
            pct(r.accuracy)
        )
        .unwrap();
    }
    out
}

pub fn report_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("attack,tp,fp,tn,fn,detection_rate,precision,precision_degenerate,accuracy,auc\n");
    for (name, r) in rows {
        let c = r.counts;
        writeln!(
            out,
            "{name},{},{},{},{},{:.6},{:.6},{},{:.6},{}",
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            r.detection_rate,
            r.precision,
            r.precision_degenerate,
            r.accuracy,
            r.auc.map_or_else(String::new, |a| format!("{a:.6}"))
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub input_size: usize,
    pub accuracy: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("input_size,accuracy\n");
    for r in rows {
        writeln!(out, "{},{:.6}", r.input_size, r.accuracy).unwrap();
    }
    out
}

/// Trains the generator pair on `normal` and scores the D2-only detector on
/// the union of `eval_logs`, once per window size. Every size reuses `train.seed`.
pub fn input_size_sweep(
    normal: &CanLog,
    eval_logs: &[&CanLog],
    sizes: &[usize],
    mode: EncodingMode,
    train: &TrainConfig,
    threshold: f64,
) -> Result<Vec<SweepRow>, EvalError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(EvalError::InvalidSizes);
    }
    sizes.iter().map(|&size| {
        let accuracy = train_and_score(normal, eval_logs, EncoderConfig::grouped(size, mode), train, threshold)?;
        Ok(SweepRow { input_size: size, accuracy })
    }).collect()
}

/// One train + evaluate run of the D2-only detector; returns accuracy.
pub fn train_and_score(
    normal: &CanLog,
    eval_logs: &[&CanLog],
    encoder: EncoderConfig,
    train: &TrainConfig,
    threshold: f64,
) -> Result<f64, EvalError> {
    let images = build_images(normal, &encoder)?;
    let run = train_gan(&images, train)?;
    let gids = TrainedGids {
        d1: None,
        d2: run.discriminator,
        g: Some(run.generator),
        encoder,
        detection_threshold: threshold,
        d2_threshold: None,
    };
    let detector = Detector::new(&gids)?;
    let (mut verdicts, mut labels) = (Vec::new(), Vec::new());
    for log in eval_logs {
        let test = build_images(log, &encoder)?;
        verdicts.extend(detector.classify_batch(&test)?);
        labels.extend(test.iter().map(|i| i.label));
    }
    Ok(evaluate(&verdicts, &labels)?.accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let actual: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let r = confusion(&actual, &actual).unwrap();
        assert_eq!((r.detection_rate, r.precision, r.accuracy), (1.0, 1.0, 1.0));
        assert!(!r.precision_degenerate);
    }

    #[test]
    fn all_normal_predictor() {
        let actual: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let r = confusion(&[false; 20], &actual).unwrap();
        assert_eq!(r.detection_rate, 0.0);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, 0.0);
        assert!(r.precision_degenerate);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion(&[true], &[true, false]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn auc_edge_cases() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert_eq!(mann_whitney_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClassInput)));
    }

    #[test]
    fn roc_ends_at_corners() {
        let pts = roc_points(&[0.3, 0.7, 0.7, 0.1], &[false, true, false, true]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(roc_csv(&pts).starts_with("fpr,tpr\n0.000000,0.000000\n"));
    }

    #[test]
    fn table_layout() {
        let r = confusion(&[true, false], &[true, false]).unwrap();
        let t = report_table(&[("DoS".into(), r)]);
        assert!(t.starts_with("Attack  Detection rate  Precision  Accuracy     AUC\n"));
        assert!(t.contains("100.0%"));
        assert!(report_csv(&[("DoS".into(), r)]).ends_with("DoS,1,0,1,0,1.000000,1.000000,false,1.000000,\n"));
    }
}
