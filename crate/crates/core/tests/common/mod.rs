//! Independent oracles shared by the integration tests. They follow the
//! metric definitions directly on 2-D arrays, without reusing any code
//! from the library.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-20;

/// Confusion counts at every threshold k/255, by direct comparison.
pub fn brute_pr(pred: &[f64], gt: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut p = Vec::new();
    let mut r = Vec::new();
    for k in 0..256 {
        let t = k as f64 / 255.0;
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (&x, &g) in pred.iter().zip(gt) {
            let pos = x >= t;
            match (pos, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        p.push(tp / (tp + fp + EPS));
        r.push(tp / (tp + fneg + EPS));
    }
    (p, r)
}

pub fn brute_f(p: f64, r: f64) -> f64 {
    (1.0 + 0.3) * p * r / (0.3 * p + r + EPS)
}

/// Enhanced alignment by a per-pixel loop.
pub fn brute_e(binary: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len();
    let ng = gt.iter().filter(|&&g| g).count();
    let nb = binary.iter().filter(|&&b| b).count();
    let mut sum = 0.0;
    for i in 0..n {
        let b = if binary[i] { 1.0 } else { 0.0 };
        let g = if gt[i] { 1.0 } else { 0.0 };
        let enhanced = if ng == 0 {
            1.0 - b
        } else if ng == n {
            b
        } else {
            let phi_g = g - ng as f64 / n as f64;
            let phi_b = b - nb as f64 / n as f64;
            let xi = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + EPS);
            (xi + 1.0) * (xi + 1.0) / 4.0
        };
        sum += enhanced;
    }
    (sum / (n as f64 - 1.0 + EPS)).clamp(0.0, 1.0)
}

pub fn brute_mae(pred: &[f64], gt: &[bool]) -> f64 {
    let mut s = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        s += (p - g as u8 as f64).abs();
    }
    s / pred.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    // one-pass sum of squares, deliberately unlike the library's two-pass form
    let ss: f64 = v.iter().map(|x| x * x).sum::<f64>() - n * m * m;
    let sd = if v.len() > 1 { (ss.max(0.0) / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

fn object_term(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let (m, sd) = mean_std(v);
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn ssim_block(p: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let x: Vec<f64> = p.iter().flatten().copied().collect();
    let y: Vec<f64> = g.iter().flatten().copied().collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| a * a).sum::<f64>() - n * mx * mx;
    let syy: f64 = y.iter().map(|a| a * a).sum::<f64>() - n * my * my;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - n * mx * my;
    let d = n - 1.0 + EPS;
    let alpha = 4.0 * mx * my * (sxy / d);
    let beta = (mx * mx + my * my) * (sxx / d + syy / d);
    if alpha.abs() > 1e-14 {
        alpha / (beta + EPS)
    } else if beta.abs() <= 1e-14 {
        1.0
    } else {
        0.0
    }
}

fn sub(m: &[Vec<f64>], r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    m[r].iter().map(|row| row[c.clone()].to_vec()).collect()
}

/// Structure measure on 2-D arrays.
pub fn reference_s_measure(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let h = gt.len();
    let w = gt[0].len();
    let flat_p: Vec<f64> = pred.iter().flatten().copied().collect();
    let flat_g: Vec<f64> = gt.iter().flatten().copied().collect();
    let y = flat_g.iter().sum::<f64>() / (h * w) as f64;
    let pm = flat_p.iter().sum::<f64>() / (h * w) as f64;
    let q = if y == 0.0 {
        1.0 - pm
    } else if y == 1.0 {
        pm
    } else {
        let fg: Vec<f64> = flat_p.iter().zip(&flat_g).filter(|(_, &g)| g == 1.0).map(|(&p, _)| p).collect();
        let bg: Vec<f64> = flat_p.iter().zip(&flat_g).filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p).collect();
        let so = y * object_term(&fg) + (1.0 - y) * object_term(&bg);

        let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
        for (r, row) in gt.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    sx += (c + 1) as f64;
                    sy += (r + 1) as f64;
                    cnt += 1.0;
                }
            }
        }
        let cx = (sx / cnt).round() as usize;
        let cy = (sy / cnt).round() as usize;
        let area = (h * w) as f64;
        let mut sr = 0.0;
        for (rr, cc) in [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)] {
            let a = (rr.len() * cc.len()) as f64;
            if a == 0.0 {
                continue;
            }
            sr += a / area * ssim_block(&sub(pred, rr.clone(), cc.clone()), &sub(gt, rr, cc));
        }
        0.5 * so + 0.5 * sr
    };
    q.clamp(0.0, 1.0)
}

/// Random binary mask made of a few rectangles (occasionally empty or full).
pub fn random_gt(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<bool> {
    match rng.random_range(0..20) {
        0 => return vec![false; h * w],
        1 => return vec![true; h * w],
        _ => {}
    }
    let mut m = vec![false; h * w];
    for _ in 0..rng.random_range(1..=3) {
        let r0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..w);
        let r1 = rng.random_range(r0..h) + 1;
        let c1 = rng.random_range(c0..w) + 1;
        for r in r0..r1 {
            for c in c0..c1 {
                m[r * w + c] = true;
            }
        }
    }
    m
}

/// Prediction correlated with `gt` to a random degree, quantized to 8 bits.
pub fn random_pred_u8(rng: &mut ChaCha8Rng, gt: &[bool]) -> Vec<u8> {
    let kind = rng.random_range(0..5);
    let quality: f64 = rng.random();
    gt.iter()
        .map(|&g| {
            let v: f64 = match kind {
                0 => rng.random(),
                1 => rng.random_range(0..2) as f64,
                2 => 0.5,
                _ => {
                    let target = if g { 1.0 } else { 0.0 };
                    (quality * target + (1.0 - quality) * rng.random::<f64>()).clamp(0.0, 1.0)
                }
            };
            (v * 255.0).round() as u8
        })
        .collect()
}

pub fn to_rows(v: &[f64], w: usize) -> Vec<Vec<f64>> {
    v.chunks(w).map(|c| c.to_vec()).collect()
}
