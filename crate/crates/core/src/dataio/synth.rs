//! Seeded synthetic RGB-D saliency data.
//!
//! Each sample has one to three ellipses or rectangles as foreground. The RGB
//! image blends the shapes (with a soft edge) over a striped, noisy
//! background; depth is low and nearly flat on the foreground and higher with
//! a gradient elsewhere, so the foreground is always closer.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Manifest, ManifestRow};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub count: usize,
    /// `(H, W)` of every generated image.
    pub size: (usize, usize),
}

#[derive(Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Self {
        let m = h.min(w);
        let cx = rng.random_range(0.2 * w..0.8 * w);
        let cy = rng.random_range(0.2 * h..0.8 * h);
        let a = rng.random_range(0.1 * m..0.25 * m);
        let b = rng.random_range(0.1 * m..0.25 * m);
        if rng.random_bool(0.5) {
            Shape::Ellipse { cx, cy, rx: a, ry: b }
        } else {
            Shape::Rect { cx, cy, hw: a, hh: b }
        }
    }

    /// Approximate signed distance in pixels (negative inside).
    fn distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let r = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
                (r - 1.0) * rx.min(ry)
            }
            Shape::Rect { cx, cy, hw, hh } => ((x - cx).abs() - hw).max((y - cy).abs() - hh),
        }
    }
}

struct Rendered {
    rgb: RgbImage,
    depth: ImageBuffer<Luma<u16>, Vec<u16>>,
    gt: GrayImage,
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn render(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Rendered {
    loop {
        let shapes: Vec<(Shape, [f64; 3], f64)> = (0..rng.random_range(1..=3))
            .map(|_| (Shape::random(rng, h as f64, w as f64), color(rng), rng.random_range(0.15..0.3)))
            .collect();
        let bg_a = color(rng);
        let bg_b = color(rng);
        let freq = rng.random_range(0.1..0.4);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let far = rng.random_range(0.65..0.8);
        let tilt = rng.random_range(-0.1..0.1);

        let mut rgb = RgbImage::new(w as u32, h as u32);
        let mut depth = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
        let mut gt = GrayImage::new(w as u32, h as u32);
        let mut fg_pixels = 0;
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let stripe = 0.5 + 0.5 * ((px * angle.cos() + py * angle.sin()) * freq).sin();
                let mut c = [0.0; 3];
                for k in 0..3 {
                    c[k] = bg_a[k] * stripe + bg_b[k] * (1.0 - stripe) + rng.random_range(-0.05..0.05);
                }
                let mut d = far + tilt * (py / h as f64 - 0.5) + rng.random_range(-0.02..0.02);
                let mut inside = false;
                for (shape, col, near) in &shapes {
                    let dist = shape.distance(px, py);
                    let alpha = (0.5 - dist / 1.5).clamp(0.0, 1.0);
                    for k in 0..3 {
                        c[k] = c[k] * (1.0 - alpha) + col[k] * alpha;
                    }
                    if dist <= 0.0 {
                        inside = true;
                        d = d.min(near + rng.random_range(-0.01..0.01));
                    }
                }
                fg_pixels += inside as usize;
                let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                rgb.put_pixel(x as u32, y as u32, Rgb([to8(c[0]), to8(c[1]), to8(c[2])]));
                depth.put_pixel(x as u32, y as u32, Luma([(d.clamp(0.0, 1.0) * 65535.0).round() as u16]));
                gt.put_pixel(x as u32, y as u32, Luma([if inside { 255 } else { 0 }]));
            }
        }
        // a shape can in principle fall between pixel centres on tiny images
        if fg_pixels > 0 && fg_pixels < h * w {
            return Rendered { rgb, depth, gt };
        }
    }
}

fn save<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `rgb/`, `depth/`, `gt/` and `manifest.csv` under `dir` and returns
/// the manifest with paths resolved against `dir`.
pub fn synth_generate(options: &SynthOptions, dir: &Path) -> Result<Manifest> {
    let (h, w) = options.size;
    if options.count == 0 || h == 0 || w == 0 {
        return Err(Error::Invalid("synthetic set needs n ≥ 1 and a non-empty size".into()));
    }
    for sub in ["rgb", "depth", "gt"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut relative = Vec::with_capacity(options.count);
    for i in 0..options.count {
        let name = format!("synth_{i:04}");
        let r = render(&mut rng, h, w);
        let row = ManifestRow {
            rgb: PathBuf::from(format!("rgb/{name}.png")),
            depth: PathBuf::from(format!("depth/{name}.png")),
            gt: PathBuf::from(format!("gt/{name}.png")),
            name,
        };
        save(&r.rgb, &dir.join(&row.rgb))?;
        save(&r.depth, &dir.join(&row.depth))?;
        save(&r.gt, &dir.join(&row.gt))?;
        relative.push(row);
    }
    let manifest = Manifest::new(relative)?;
    manifest.save(&dir.join("manifest.csv"))?;
    Manifest::load(&dir.join("manifest.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{read_depth_raw, read_gt};

    fn opts(seed: u64) -> SynthOptions {
        SynthOptions {
            seed,
            count: 3,
            size: (32, 40),
        }
    }

    #[test]
    fn deterministic_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_generate(&opts(7), a.path()).unwrap();
        synth_generate(&opts(7), b.path()).unwrap();
        for row in &ma.rows {
            for p in [&row.rgb, &row.depth, &row.gt] {
                let rel = p.strip_prefix(a.path()).unwrap();
                assert_eq!(std::fs::read(p).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            }
        }
    }

    #[test]
    fn foreground_is_closer() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_generate(&opts(11), dir.path()).unwrap();
        assert_eq!(m.len(), 3);
        for row in &m.rows {
            let gt = read_gt(&row.gt).unwrap();
            let d = read_depth_raw(&row.depth).unwrap();
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
            for (&g, &v) in gt.data().iter().zip(d.data()) {
                if g == 1.0 {
                    fg += v;
                    nf += 1;
                } else {
                    bg += v;
                    nb += 1;
                }
            }
            assert!(nf > 0 && nb > 0);
            assert!(fg / (nf as f32) < bg / (nb as f32));
        }
    }

    #[test]
    fn zero_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = opts(1);
        o.count = 0;
        assert!(synth_generate(&o, dir.path()).is_err());
    }
}
