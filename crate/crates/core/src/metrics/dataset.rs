//! Dataset-level evaluation and report files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{evaluate_pair, ImageEvaluation, MetricReport, SaliencyPair, THRESHOLDS};
use crate::dataio::{read_gray_u8, read_gt, Manifest};
use crate::error::{Error, Result};
use crate::tensor::kernels::upsample_bilinear;
use crate::tensor::Tensor;

pub const REPORT_HEADER: &str = "name,S_alpha,maxF,meanF,adpF,maxE,meanE,adpE,MAE";
/// Name of the aggregate row in the report CSV.
pub const DATASET_ROW: &str = "_dataset_";

/// How dataset-level maxF/maxE are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxMode {
    /// Average the per-image curves, then take the maximum.
    #[default]
    MeanCurve,
    /// Average the per-image maxima.
    PerImageMax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEvaluation {
    pub report: MetricReport,
    /// Mean precision / recall at every threshold.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
    pub images: usize,
    /// Images whose ground truth has no foreground.
    pub empty_gt: usize,
}

fn mean_curve(curves: impl Iterator<Item = Vec<f64>>, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; THRESHOLDS];
    for c in curves {
        for (a, v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / n as f64).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Arithmetic mean of per-image metrics, with maxF/maxE formed per `mode`.
pub fn aggregate(images: &[ImageEvaluation], mode: MaxMode) -> Result<DatasetEvaluation> {
    let n = images.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mean = |f: fn(&MetricReport) -> f64| images.iter().map(|e| f(&e.report)).sum::<f64>() / n as f64;
    let precision = mean_curve(images.iter().map(|e| e.pr.precision.clone()), n);
    let recall = mean_curve(images.iter().map(|e| e.pr.recall.clone()), n);
    let f_curve = mean_curve(images.iter().map(|e| e.f_curve.clone()), n);
    let e_curve = mean_curve(images.iter().map(|e| e.e_curve.clone()), n);
    let (max_f, max_e) = match mode {
        MaxMode::MeanCurve => (max_of(&f_curve), max_of(&e_curve)),
        MaxMode::PerImageMax => (mean(|r| r.max_f), mean(|r| r.max_e)),
    };
    Ok(DatasetEvaluation {
        report: MetricReport {
            s_alpha: mean(|r| r.s_alpha),
            max_f,
            // rounding in the averages must not lift a mean above its max
            mean_f: mean(|r| r.mean_f).min(max_f),
            adp_f: mean(|r| r.adp_f),
            max_e,
            mean_e: mean(|r| r.mean_e).min(max_e),
            adp_e: mean(|r| r.adp_e),
            mae: mean(|r| r.mae),
        },
        precision,
        recall,
        f_curve,
        e_curve,
        images: n,
        empty_gt: images.iter().filter(|e| e.empty_gt).count(),
    })
}

/// Loads an 8-bit prediction as `v/255`, resized to `size` when it differs.
pub fn read_prediction(path: &Path, size: (usize, usize)) -> Result<Vec<f64>> {
    let (h, w, px) = read_gray_u8(path)?;
    if (h, w) == size {
        return Ok(px.iter().map(|&v| v as f64 / 255.0).collect());
    }
    warn!("{}: prediction is {h}x{w}, ground truth {}x{}; resizing", path.display(), size.0, size.1);
    let t = Tensor::new(vec![1, 1, h, w], px.iter().map(|&v| v as f32 / 255.0).collect())?;
    let r = upsample_bilinear(&t, size.0, size.1)?;
    Ok(r.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect())
}

fn evaluate_row(name: &str, gt_path: &Path, pred_path: &Path) -> Result<ImageEvaluation> {
    if !pred_path.exists() {
        return Err(Error::MissingPrediction {
            name: name.to_string(),
            path: pred_path.to_path_buf(),
        });
    }
    let gt = read_gt(gt_path)?;
    let (h, w) = gt.spatial()?;
    let pred = read_prediction(pred_path, (h, w))?;
    let pair = SaliencyPair::new(h, w, pred, gt.data().iter().map(|&v| v as f64).collect())?;
    Ok(evaluate_pair(&pair))
}

/// Per-image results in manifest order, failures listed separately, and the
/// aggregate over the images that could be evaluated.
#[derive(Debug)]
pub struct EvalOutcome {
    pub images: Vec<(String, ImageEvaluation)>,
    pub failures: Vec<(String, Error)>,
    pub dataset: Option<DatasetEvaluation>,
}

/// Evaluates `pred_dir/<name>.png` against every manifest ground truth.
pub fn evaluate_dataset(manifest: &Manifest, pred_dir: &Path, mode: MaxMode) -> Result<EvalOutcome> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = crate::par::map_slice(&manifest.rows, |row| {
        let pred: PathBuf = pred_dir.join(format!("{}.png", row.name));
        evaluate_row(&row.name, &row.gt, &pred)
    });
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (row, r) in manifest.rows.iter().zip(results) {
        match r {
            Ok(e) => images.push((row.name.clone(), e)),
            Err(e) => failures.push((row.name.clone(), e)),
        }
    }
    let evals: Vec<ImageEvaluation> = images.iter().map(|(_, e)| e.clone()).collect();
    let dataset = if evals.is_empty() { None } else { Some(aggregate(&evals, mode)?) };
    Ok(EvalOutcome {
        images,
        failures,
        dataset,
    })
}

fn report_line(out: &mut String, name: &str, r: &MetricReport) {
    out.push_str(name);
    for v in r.values() {
        write!(out, ",{v:.4}").unwrap();
    }
    out.push('\n');
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One row per image followed by the aggregate row.
pub fn write_report_csv(path: &Path, images: &[(String, ImageEvaluation)], dataset: &DatasetEvaluation) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (name, e) in images {
        report_line(&mut out, name, &e.report);
    }
    report_line(&mut out, DATASET_ROW, &dataset.report);
    write_file(path, &out)
}

pub fn write_pr_csv(path: &Path, precision: &[f64], recall: &[f64]) -> Result<()> {
    let mut out = String::from("threshold,precision,recall\n");
    for (k, (p, r)) in precision.iter().zip(recall).enumerate() {
        writeln!(out, "{:.6},{p:.6},{r:.6}", k as f64 / 255.0).unwrap();
    }
    write_file(path, &out)
}

/// Precision (vertical) against recall (horizontal) as a single polyline.
pub fn write_pr_svg(path: &Path, precision: &[f64], recall: &[f64]) -> Result<()> {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let plot = SIZE - 2.0 * PAD;
    let mut points = String::new();
    for (p, r) in precision.iter().zip(recall) {
        write!(points, "{:.2},{:.2} ", PAD + r * plot, SIZE - PAD - p * plot).unwrap();
    }
    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#).unwrap();
    writeln!(svg, r#"<rect x="{PAD}" y="{PAD}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(svg, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, points.trim_end()).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">Recall</text>"#, SIZE / 2.0, SIZE - 10.0).unwrap();
    writeln!(svg, r#"<text x="14" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 14 {})">Precision</text>"#, SIZE / 2.0, SIZE / 2.0).unwrap();
    svg.push_str("</svg>\n");
    write_file(path, &svg)
}
