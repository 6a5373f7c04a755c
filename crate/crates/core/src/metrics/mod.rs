//! Salient-object-detection evaluation: MAE, precision–recall over 256
//! thresholds, max/mean/adaptive F-measure, S-measure, and max/mean/adaptive
//! E-measure.
//!
//! Conventions: thresholds `t_k = k/255`; a pixel is positive when
//! `pred ≥ t`; `β² = 0.3`; the adaptive threshold is `min(2·mean(pred), 1)`.

mod dataset;
mod structure;

pub use dataset::{
    aggregate, evaluate_dataset, read_prediction, write_pr_csv, write_pr_svg, write_report_csv, DatasetEvaluation, EvalOutcome,
    MaxMode, REPORT_HEADER,
};
pub use structure::{s_measure, S_ALPHA};

use crate::error::{shape_err, Error, Result};
use crate::par;

pub const THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
pub const EPS: f64 = 1e-20;

/// `t_k = k/255` for `k = 0..=255`.
pub fn thresholds() -> Vec<f64> {
    (0..THRESHOLDS).map(|k| k as f64 / 255.0).collect()
}

/// A prediction in `[0, 1]` and a binary ground truth of the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyPair {
    height: usize,
    width: usize,
    pred: Vec<f64>,
    gt: Vec<bool>,
}

impl SaliencyPair {
    pub fn new(height: usize, width: usize, pred: Vec<f64>, gt: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if n == 0 || pred.len() != n || gt.len() != n {
            return Err(shape_err!(
                "pair of {height}x{width} needs {n} values, got pred {} / gt {}",
                pred.len(),
                gt.len()
            ));
        }
        if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("prediction value {v} outside [0, 1]")));
        }
        if let Some(v) = gt.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid(format!("ground truth value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            pred,
            gt: gt.into_iter().map(|v| v == 1.0).collect(),
        })
    }

    /// 8-bit maps: prediction as `v/255`, ground truth positive at `v ≥ 128`.
    pub fn from_u8(height: usize, width: usize, pred: &[u8], gt: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            pred.iter().map(|&v| v as f64 / 255.0).collect(),
            gt.iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn gt(&self) -> &[bool] {
        &self.gt
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.gt.iter().filter(|&&g| g).count()
    }

    pub fn mean_pred(&self) -> f64 {
        self.pred.iter().sum::<f64>() / self.len() as f64
    }

    pub fn adaptive_threshold(&self) -> f64 {
        (2.0 * self.mean_pred()).min(1.0)
    }
}

/// Mean absolute error.
pub fn mae(pair: &SaliencyPair) -> f64 {
    pair.pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum::<f64>()
        / pair.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn precision_recall(tp: usize, fp: usize, positives: usize) -> (f64, f64) {
    let tp = tp as f64;
    (tp / (tp + fp as f64 + EPS), tp / (positives as f64 + EPS))
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    (1.0 + BETA2) * precision * recall / (BETA2 * precision + recall + EPS)
}

/// Precision and recall at every `t_k`. With an empty ground truth recall is
/// identically 0.
pub fn pr_curve(pair: &SaliencyPair) -> PrCurve {
    let ts = thresholds();
    // Per pixel, the number of thresholds it clears (t_0 = 0 always).
    let mut fg_hist = vec![0usize; THRESHOLDS + 1];
    let mut bg_hist = vec![0usize; THRESHOLDS + 1];
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        let cleared = ts.partition_point(|&t| p >= t);
        if g {
            fg_hist[cleared] += 1;
        } else {
            bg_hist[cleared] += 1;
        }
    }
    let positives = pair.positives();
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in (0..THRESHOLDS).rev() {
        // pixels clearing more than k thresholds are positive at t_k
        tp += fg_hist[k + 1];
        fp += bg_hist[k + 1];
        let (p, r) = precision_recall(tp, fp, positives);
        precision[k] = p;
        recall[k] = r;
    }
    PrCurve {
        thresholds: ts,
        precision,
        recall,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FMeasures {
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
}

pub fn f_curve(curve: &PrCurve) -> Vec<f64> {
    curve.precision.iter().zip(&curve.recall).map(|(&p, &r)| f_beta(p, r)).collect()
}

/// F-measure of the prediction binarized at the adaptive threshold.
pub fn adaptive_f(pair: &SaliencyPair) -> f64 {
    let t = pair.adaptive_threshold();
    let (mut tp, mut fp) = (0, 0);
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        if p >= t {
            if g {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let (p, r) = precision_recall(tp, fp, pair.positives());
    f_beta(p, r)
}

pub fn f_measures(curve: &PrCurve, pair: &SaliencyPair) -> FMeasures {
    let fs = f_curve(curve);
    let max = fs.iter().copied().fold(0.0, f64::max);
    FMeasures {
        max,
        // a constant curve can otherwise average to one ulp above its max
        mean: (fs.iter().sum::<f64>() / fs.len() as f64).min(max),
        adaptive: adaptive_f(pair),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EMeasures {
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
    /// E at every `t_k`.
    pub curve: Vec<f64>,
}

/// Enhanced-alignment score of a binary map against the ground truth.
pub fn enhanced_alignment(binary: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len();
    let gt_count = gt.iter().filter(|&&g| g).count();
    let b_count = binary.iter().filter(|&&b| b).count();
    // The score of a pixel depends only on its (b, g) pair; tabulate the
    // four cases and sum per pixel in row-major order.
    let mut table = [[0.0f64; 2]; 2];
    for (b, row) in table.iter_mut().enumerate() {
        for (g, cell) in row.iter_mut().enumerate() {
            let (bv, gv) = (b as f64, g as f64);
            *cell = if gt_count == 0 {
                1.0 - bv
            } else if gt_count == n {
                bv
            } else {
                let phi_g = gv - gt_count as f64 / n as f64;
                let phi_b = bv - b_count as f64 / n as f64;
                let xi = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + EPS);
                (xi + 1.0) * (xi + 1.0) / 4.0
            };
        }
    }
    let total: f64 = binary
        .iter()
        .zip(gt)
        .map(|(&b, &g)| table[b as usize][g as usize])
        .fold(0.0, |a, v| a + v);
    (total / (n as f64 - 1.0 + EPS)).clamp(0.0, 1.0)
}

fn binarize(pred: &[f64], t: f64) -> Vec<bool> {
    pred.iter().map(|&p| p >= t).collect()
}

pub fn e_measures(pair: &SaliencyPair) -> EMeasures {
    let ts = thresholds();
    let curve = par::map_slice(&ts, |&t| enhanced_alignment(&binarize(&pair.pred, t), &pair.gt));
    let max = curve.iter().copied().fold(0.0, f64::max);
    EMeasures {
        max,
        mean: (curve.iter().sum::<f64>() / curve.len() as f64).min(max),
        adaptive: enhanced_alignment(&binarize(&pair.pred, pair.adaptive_threshold()), &pair.gt),
        curve,
    }
}

/// The eight reported numbers for one prediction (or a dataset).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub s_alpha: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
    pub max_e: f64,
    pub mean_e: f64,
    pub adp_e: f64,
    pub mae: f64,
}

impl MetricReport {
    pub fn values(&self) -> [f64; 8] {
        [
            self.s_alpha,
            self.max_f,
            self.mean_f,
            self.adp_f,
            self.max_e,
            self.mean_e,
            self.adp_e,
            self.mae,
        ]
    }
}

/// Everything computed for one image; the curves feed dataset aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEvaluation {
    pub report: MetricReport,
    pub pr: PrCurve,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
    /// Ground truth has no positive pixel (recall is identically 0).
    pub empty_gt: bool,
}

pub fn evaluate_pair(pair: &SaliencyPair) -> ImageEvaluation {
    let pr = pr_curve(pair);
    let f = f_measures(&pr, pair);
    let e = e_measures(pair);
    ImageEvaluation {
        report: MetricReport {
            s_alpha: s_measure(pair),
            max_f: f.max,
            mean_f: f.mean,
            adp_f: f.adaptive,
            max_e: e.max,
            mean_e: e.mean,
            adp_e: e.adaptive,
            mae: mae(pair),
        },
        f_curve: f_curve(&pr),
        pr,
        e_curve: e.curve,
        empty_gt: pair.positives() == 0,
    }
}
