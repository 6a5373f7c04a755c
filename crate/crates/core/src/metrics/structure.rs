//! Structure measure: a blend of object-aware and region-aware similarity.

use super::SaliencyPair;

/// Weight of the object term.
pub const S_ALPHA: f64 = 0.5;
const EPS: f64 = 1e-20;

/// S-measure in `[0, 1]`. A ground truth with no foreground scores
/// `1 − mean(pred)`; an all-foreground one scores `mean(pred)`.
pub fn s_measure(pair: &SaliencyPair) -> f64 {
    let n = pair.len();
    let positives = pair.positives();
    let q = if positives == 0 {
        1.0 - pair.mean_pred()
    } else if positives == n {
        pair.mean_pred()
    } else {
        S_ALPHA * object(pair) + (1.0 - S_ALPHA) * region(pair)
    };
    q.clamp(0.0, 1.0)
}

/// `2x̄ / (x̄² + 1 + σ)` with σ the sample standard deviation.
fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sigma + EPS)
}

fn object(pair: &SaliencyPair) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pair.pred().iter().zip(pair.gt()) {
        if g {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / pair.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// 1-based centroid `(x, y)` of the foreground, rounded half away from zero.
pub(crate) fn centroid(pair: &SaliencyPair) -> (usize, usize) {
    let (h, w) = (pair.height(), pair.width());
    let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
    for (i, &g) in pair.gt().iter().enumerate() {
        if g {
            sx += (i % w + 1) as f64;
            sy += (i / w + 1) as f64;
            count += 1;
        }
    }
    if count == 0 {
        return (((w as f64) / 2.0).round() as usize, ((h as f64) / 2.0).round() as usize);
    }
    ((sx / count as f64).round() as usize, (sy / count as f64).round() as usize)
}

fn region(pair: &SaliencyPair) -> f64 {
    let (h, w) = (pair.height(), pair.width());
    let (x, y) = centroid(pair);
    let n = (h * w) as f64;
    let blocks = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in blocks {
        let area = (r1 - r0) * (c1 - c0);
        if area == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(area);
        let mut g = Vec::with_capacity(area);
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pair.pred()[r * w + c]);
                g.push(if pair.gt()[r * w + c] { 1.0 } else { 0.0 });
            }
        }
        score += area as f64 / n * ssim(&p, &g);
    }
    score
}

fn ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let d = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
