use std::fs;

use image::GrayImage;

use biasal::dataio::{Manifest, ManifestRow};
use biasal::metrics::{aggregate, evaluate_dataset, evaluate_pair, MaxMode, SaliencyPair};
use biasal::Error;

fn images() -> Vec<(usize, usize, Vec<u8>, Vec<u8>)> {
    vec![
        (2, 3, vec![255, 200, 0, 30, 128, 90], vec![255, 255, 0, 0, 255, 0]),
        (3, 2, vec![10, 20, 30, 40, 50, 60], vec![0, 0, 0, 0, 0, 0]),
        (2, 2, vec![255, 0, 255, 0], vec![255, 0, 255, 0]),
    ]
}

#[test]
fn aggregation_matches_hand_computation() {
    let evals: Vec<_> = images()
        .iter()
        .map(|(h, w, p, g)| evaluate_pair(&SaliencyPair::from_u8(*h, *w, p, g).unwrap()))
        .collect();
    let mean_of = |f: &dyn Fn(usize) -> f64| (0..3).map(f).sum::<f64>() / 3.0;

    let ds = aggregate(&evals, MaxMode::MeanCurve).unwrap();
    assert_eq!(ds.images, 3);
    assert_eq!(ds.empty_gt, 1);
    for k in [0, 17, 128, 255] {
        let f = mean_of(&|i| evals[i].f_curve[k]);
        assert!((ds.f_curve[k] - f).abs() < 1e-15);
        let p = mean_of(&|i| evals[i].pr.precision[k]);
        assert!((ds.precision[k] - p).abs() < 1e-15);
    }
    let max_curve = ds.f_curve.iter().copied().fold(0.0, f64::max);
    assert_eq!(ds.report.max_f, max_curve);
    assert!((ds.report.mae - mean_of(&|i| evals[i].report.mae)).abs() < 1e-15);
    assert!((ds.report.s_alpha - mean_of(&|i| evals[i].report.s_alpha)).abs() < 1e-15);

    let per = aggregate(&evals, MaxMode::PerImageMax).unwrap();
    assert!((per.report.max_f - mean_of(&|i| evals[i].report.max_f)).abs() < 1e-15);
    assert!(per.report.max_f >= ds.report.max_f);
    assert_eq!(per.report.mae, ds.report.mae);

    assert!(matches!(aggregate(&[], MaxMode::MeanCurve), Err(Error::EmptyDataset)));
}

#[test]
fn dataset_from_files_equals_in_memory_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let pred_dir = dir.path().join("pred");
    fs::create_dir_all(&pred_dir).unwrap();
    let mut rows = Vec::new();
    for (i, (h, w, p, g)) in images().into_iter().enumerate() {
        let name = format!("im{i}");
        let gt_path = dir.path().join(format!("{name}_gt.png"));
        GrayImage::from_raw(w as u32, h as u32, g).unwrap().save(&gt_path).unwrap();
        GrayImage::from_raw(w as u32, h as u32, p).unwrap().save(pred_dir.join(format!("{name}.png"))).unwrap();
        rows.push(ManifestRow {
            name,
            rgb: gt_path.clone(),
            depth: gt_path.clone(),
            gt: gt_path,
        });
    }
    let manifest = Manifest::new(rows).unwrap();
    let outcome = evaluate_dataset(&manifest, &pred_dir, MaxMode::MeanCurve).unwrap();
    assert!(outcome.failures.is_empty());
    let direct: Vec<_> = images()
        .iter()
        .map(|(h, w, p, g)| evaluate_pair(&SaliencyPair::from_u8(*h, *w, p, g).unwrap()))
        .collect();
    for ((_, got), want) in outcome.images.iter().zip(&direct) {
        assert_eq!(got, want);
    }
    let ds = outcome.dataset.unwrap();
    assert_eq!(ds, aggregate(&direct, MaxMode::MeanCurve).unwrap());

    fs::remove_file(pred_dir.join("im1.png")).unwrap();
    let partial = evaluate_dataset(&manifest, &pred_dir, MaxMode::MeanCurve).unwrap();
    assert_eq!(partial.failures.len(), 1);
    assert_eq!(partial.failures[0].0, "im1");
    assert!(matches!(partial.failures[0].1, Error::MissingPrediction { .. }));
}
