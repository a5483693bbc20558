//! The two-stage cascade. A window is anomalous as soon as one discriminator
//! scores it below the threshold; the second stage only sees windows the
//! first one passed.

use std::cell::Cell;
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::can::{CanFrame, Timestamp};
use crate::encoder::{build_images_from_frames, CanImage, EncoderError};
use crate::gan::{signed_matrix, BundleError, TrainedGids};
use crate::nn::{ModelWeights, NnError};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("image is {got:?}, model expects {want:?}")]
    ShapeMismatch { got: [usize; 2], want: [usize; 2] },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Anything that maps a batch of signed image rows to one score per row.
pub trait Scorer {
    fn input_shape(&self) -> [usize; 2];
    fn score_batch(&self, batch: ArrayView2<f32>) -> Result<Vec<f64>, NnError>;
}

impl Scorer for ModelWeights<f32> {
    fn input_shape(&self) -> [usize; 2] {
        ModelWeights::input_shape(self)
    }

    fn score_batch(&self, batch: ArrayView2<f32>) -> Result<Vec<f64>, NnError> {
        Ok(self.predict(batch)?.iter().map(|&s| f64::from(s)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Normal,
    Anomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    FirstDiscriminator,
    SecondDiscriminator,
    None,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Normal => "normal",
            Decision::Anomaly => "anomaly",
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::FirstDiscriminator => "d1",
            Stage::SecondDiscriminator => "d2",
            Stage::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub image_index: usize,
    pub first_frame_ts: Option<Timestamp>,
    pub d1_score: Option<f64>,
    /// Unset when the first stage already fired.
    pub d2_score: Option<f64>,
    pub decision: Decision,
    pub stage: Stage,
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        self.decision == Decision::Anomaly
    }

    /// `1 -` the lowest score the cascade computed. Exceeds `1 - threshold`
    /// exactly when the verdict is an anomaly (shared threshold).
    pub fn anomaly_score(&self) -> f64 {
        let low = match (self.d1_score, self.d2_score) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => 1.0,
        };
        1.0 - low
    }
}

/// The cascade decision for known scores. `d2` is invoked only when the
/// first stage passes the window.
pub fn decide(
    d1_score: Option<f64>,
    d2: impl FnOnce() -> f64,
    (t1, t2): (f64, f64),
) -> (Option<f64>, Option<f64>, Decision, Stage) {
    if let Some(s1) = d1_score {
        if s1 < t1 {
            return (d1_score, None, Decision::Anomaly, Stage::FirstDiscriminator);
        }
    }
    let s2 = d2();
    if s2 < t2 {
        (d1_score, Some(s2), Decision::Anomaly, Stage::SecondDiscriminator)
    } else {
        (d1_score, Some(s2), Decision::Normal, Stage::None)
    }
}

/// Number of windows each stage scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounters {
    pub d1_evaluations: usize,
    pub d2_evaluations: usize,
}

/// Runs the cascade over `batch` (one signed image per row).
pub fn run_cascade<S1: Scorer + ?Sized, S2: Scorer + ?Sized>(
    d1: Option<&S1>,
    d2: &S2,
    thresholds: (f64, f64),
    batch: ArrayView2<f32>,
    counters: &mut EvalCounters,
) -> Result<Vec<(Option<f64>, Option<f64>, Decision, Stage)>, NnError> {
    let n = batch.nrows();
    let d1_scores = match d1 {
        Some(m) => {
            counters.d1_evaluations += n;
            m.score_batch(batch)?.into_iter().map(Some).collect()
        }
        None => vec![None; n],
    };
    let pending: Vec<usize> = (0..n).filter(|&i| d1_scores[i].is_none_or(|s| s >= thresholds.0)).collect();
    let d2_scores = if pending.is_empty() {
        Vec::new()
    } else {
        counters.d2_evaluations += pending.len();
        d2.score_batch(batch.select(ndarray::Axis(0), &pending).view())?
    };
    let mut next = d2_scores.into_iter();
    let out = d1_scores
        .into_iter()
        .map(|s1| decide(s1, || next.next().expect("one D2 score per pending window"), thresholds))
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamStats {
    pub frames: usize,
    pub windows: usize,
    pub elapsed: Duration,
    pub counters: EvalCounters,
}

impl StreamStats {
    pub fn frames_per_second(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.frames as f64 / secs
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    pub verdicts: Vec<Verdict>,
    pub stats: StreamStats,
}

/// Windows are scored in chunks of this many images.
const CHUNK: usize = 256;
/// Windows scored together by `detect_stream`; small enough that a short
/// stream fills whole batches.
const STREAM_CHUNK: usize = 16;

/// Inference over a loaded model; read-only, so one model can serve many detectors.
#[derive(Debug)]
pub struct Detector<'a> {
    model: &'a TrainedGids,
    use_d1: bool,
    counters: Cell<EvalCounters>,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a TrainedGids) -> Result<Self, DetectorError> {
        model.validate()?;
        Ok(Detector { model, use_d1: true, counters: Cell::new(EvalCounters::default()) })
    }

    /// Ignores the first discriminator even if the model has one.
    pub fn d2_only(mut self) -> Self {
        self.use_d1 = false;
        self
    }

    pub fn counters(&self) -> EvalCounters {
        self.counters.get()
    }

    fn image_shape(&self) -> [usize; 2] {
        self.model.d2.input_shape()
    }

    fn score(&self, batch: ArrayView2<f32>, first_index: usize, timestamps: &[Option<Timestamp>]) -> Result<Vec<Verdict>, DetectorError> {
        let mut counters = self.counters.get();
        let d1 = if self.use_d1 { self.model.d1.as_ref() } else { None };
        let raw = run_cascade(d1, &self.model.d2, self.model.thresholds(), batch, &mut counters)?;
        self.counters.set(counters);
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(i, (d1_score, d2_score, decision, stage))| Verdict {
                image_index: first_index + i,
                first_frame_ts: timestamps[i],
                d1_score,
                d2_score,
                decision,
                stage,
            })
            .collect())
    }

    fn check(&self, images: &[CanImage]) -> Result<(), DetectorError> {
        let want = self.image_shape();
        match images.iter().find(|i| [i.rows(), i.cols()] != want) {
            Some(img) => Err(DetectorError::ShapeMismatch { got: [img.rows(), img.cols()], want }),
            None => Ok(()),
        }
    }

    pub fn classify(&self, image: &CanImage) -> Result<Verdict, DetectorError> {
        Ok(self.classify_batch(std::slice::from_ref(image))?.remove(0))
    }

    /// Verdicts indexed by position in `images`.
    pub fn classify_batch(&self, images: &[CanImage]) -> Result<Vec<Verdict>, DetectorError> {
        self.check(images)?;
        let mut out = Vec::with_capacity(images.len());
        for (c, chunk) in images.chunks(CHUNK).enumerate() {
            out.extend(self.score(signed_matrix(chunk).view(), c * CHUNK, &vec![None; chunk.len()])?);
        }
        Ok(out)
    }

    /// Encodes `frames` with the model's encoder and classifies every
    /// complete window; the timer covers both steps.
    pub fn detect_stream(&self, frames: &[CanFrame]) -> Result<StreamReport, DetectorError> {
        let start = Instant::now();
        let before = self.counters.get();
        let cfg = self.model.encoder;
        cfg.validate()?;
        let windows = cfg.image_count(frames.len());
        let mut verdicts = Vec::with_capacity(windows);
        let mut buf = Array2::<f32>::zeros((0, 0));
        let mut first = 0;
        while first < windows {
            let count = STREAM_CHUNK.min(windows - first);
            let lo = first * cfg.stride;
            let hi = (first + count - 1) * cfg.stride + cfg.input_size;
            let images = build_images_from_frames(&frames[lo..hi], &cfg)?;
            debug_assert_eq!(images.len(), count);
            self.check(&images)?;
            if buf.nrows() != count {
                buf = Array2::zeros((count, cfg.pixels_per_image()));
            }
            for (mut row, img) in buf.rows_mut().into_iter().zip(&images) {
                img.write_signed(row.as_slice_mut().expect("standard layout"));
            }
            let ts: Vec<_> = (0..count).map(|k| Some(frames[lo + k * cfg.stride].timestamp)).collect();
            verdicts.extend(self.score(buf.view(), first, &ts)?);
            first += count;
        }
        let after = self.counters.get();
        let stats = StreamStats {
            frames: frames.len(),
            windows,
            elapsed: start.elapsed(),
            counters: EvalCounters {
                d1_evaluations: after.d1_evaluations - before.d1_evaluations,
                d2_evaluations: after.d2_evaluations - before.d2_evaluations,
            },
        };
        Ok(StreamReport { verdicts, stats })
    }
}

fn opt_score(s: Option<f64>) -> String {
    s.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn verdicts_csv(verdicts: &[Verdict]) -> String {
    let mut out = String::from("image_index,first_frame_ts,d1_score,d2_score,stage,decision\n");
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            v.image_index,
            v.first_frame_ts.map_or_else(String::new, |t| t.to_string()),
            opt_score(v.d1_score),
            opt_score(v.d2_score),
            v.stage,
            v.decision
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: (f64, f64) = (0.1, 0.1);

    #[test]
    fn first_stage_short_circuits() {
        let (s1, s2, d, st) = decide(Some(0.05), || panic!("D2 must not run"), T);
        assert_eq!((s1, s2, d, st), (Some(0.05), None, Decision::Anomaly, Stage::FirstDiscriminator));
    }

    #[test]
    fn second_stage_fires() {
        assert_eq!(decide(Some(0.9), || 0.02, T), (Some(0.9), Some(0.02), Decision::Anomaly, Stage::SecondDiscriminator));
    }

    #[test]
    fn both_pass() {
        assert_eq!(decide(Some(0.9), || 0.95, T), (Some(0.9), Some(0.95), Decision::Normal, Stage::None));
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(decide(Some(0.1), || 0.1, T).2, Decision::Normal);
        assert_eq!(decide(None, || 0.05, T).3, Stage::SecondDiscriminator);
    }

    #[test]
    fn csv_leaves_skipped_scores_empty() {
        let v = Verdict {
            image_index: 3,
            first_frame_ts: Some(Timestamp::from_micros(1_500_000)),
            d1_score: Some(0.05),
            d2_score: None,
            decision: Decision::Anomaly,
            stage: Stage::FirstDiscriminator,
        };
        assert_eq!(
            verdicts_csv(&[v]),
            "image_index,first_frame_ts,d1_score,d2_score,stage,decision\n3,1.500000,0.050000,,d1,anomaly\n"
        );
        assert!((v.anomaly_score() - 0.95).abs() < 1e-12);
    }
}
