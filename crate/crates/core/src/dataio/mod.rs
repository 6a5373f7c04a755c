//! Sample ingestion, saliency-map output, synthetic data and checkpoints.
//!
//! Images are read through the `image` crate (PNG and the PNM family).
//! RGB and ground truth are 8-bit; depth may be 8- or 16-bit.

mod checkpoint;
mod synth;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use synth::{synth_generate, SynthOptions};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::kernels::upsample_bilinear;
use crate::tensor::Tensor;

pub const MANIFEST_HEADER: [&str; 4] = ["name", "rgb", "depth", "gt"];

/// One manifest line. Relative paths are resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub name: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if row.name.is_empty() {
                return Err(Error::Invalid("manifest row with an empty name".into()));
            }
            for p in [&row.rgb, &row.depth, &row.gt] {
                if p.as_os_str().is_empty() {
                    return Err(Error::Invalid(format!("{}: empty path", row.name)));
                }
            }
            if !seen.insert(row.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate sample name {:?}", row.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Invalid(format!(
                "{}: manifest header must be {}",
                path.display(),
                MANIFEST_HEADER.join(",")
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rows = Vec::new();
        for record in reader.deserialize() {
            let mut row: ManifestRow = record?;
            for p in [&mut row.rgb, &mut row.depth, &mut row.gt] {
                if p.is_relative() && !p.as_os_str().is_empty() {
                    *p = base.join(&*p);
                }
            }
            rows.push(row);
        }
        Self::new(rows)
    }

    /// Writes the manifest with paths exactly as stored.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A network-ready RGB-D sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub rgb: Tensor<f32>,
    /// `[1, 3, H, W]`, min-max normalized and replicated.
    pub depth: Tensor<f32>,
    /// `[1, 1, H, W]`, values in `{0, 1}`.
    pub gt: Tensor<f32>,
    /// `(H0, W0)` of the source RGB image.
    pub original_size: (usize, usize),
}

fn open(path: &Path) -> Result<DynamicImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Invalid(format!("{}: zero-extent image", path.display())));
    }
    Ok(img)
}

/// Planar `[1, C, H, W]` tensor from interleaved values.
fn planar(h: usize, w: usize, c: usize, interleaved: &[f32]) -> Result<Tensor<f32>> {
    let mut data = vec![0.0; c * h * w];
    for (i, px) in interleaved.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + i] = v;
        }
    }
    Tensor::new(vec![1, c, h, w], data)
}

pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    planar(h, w, 3, &values)
}

/// Single-channel depth as raw sample levels (`0..=255` or `0..=65535`),
/// exact in `f32`, ahead of min-max normalization.
pub fn read_depth_raw(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        DynamicImage::ImageLuma16(ref g) => g.as_raw().iter().map(|&v| v as f32).collect(),
        DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_luma16().as_raw().iter().map(|&v| v as f32).collect()
        }
        _ => img.to_luma8().as_raw().iter().map(|&v| v as f32).collect(),
    };
    Tensor::new(vec![1, 1, h, w], values)
}

/// Per-image min-max normalization; a constant map becomes all zeros.
pub fn normalize_depth(depth: &Tensor<f32>, name: &str) -> Tensor<f32> {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        warn!("{name}: constant depth map, using zeros");
        return Tensor::zeros(depth.shape());
    }
    let range = hi - lo;
    depth.map(|v| (v - lo) / range)
}

/// Ground truth `[1, 1, H, W]` binarized at 0.5.
pub fn read_gt(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.as_raw().iter().map(|&v| binarize(v as f32 / 255.0)).collect();
    Tensor::new(vec![1, 1, h, w], values)
}

/// 8-bit grayscale map as `(H, W, values)`.
pub fn read_gray_u8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw()))
}

fn binarize(v: f32) -> f32 {
    if v >= 0.5 {
        1.0
    } else {
        0.0
    }
}

fn replicate3(x: &Tensor<f32>) -> Result<Tensor<f32>> {
    Tensor::concat_channels(&[x, x, x])
}

pub fn load_sample(row: &ManifestRow, net_size: (usize, usize)) -> Result<Sample> {
    let (nh, nw) = net_size;
    let rgb = read_rgb(&row.rgb)?;
    let original_size = rgb.spatial()?;
    let depth = normalize_depth(&read_depth_raw(&row.depth)?, &row.name);
    let gt = read_gt(&row.gt)?;
    if gt.spatial()? != original_size || depth.spatial()? != original_size {
        warn!("{}: rgb, depth and gt sizes differ; each is resized independently", row.name);
    }
    let gt = upsample_bilinear(&gt, nh, nw)?.map(binarize);
    Ok(Sample {
        name: row.name.clone(),
        rgb: upsample_bilinear(&rgb, nh, nw)?,
        depth: replicate3(&upsample_bilinear(&depth, nh, nw)?)?,
        gt,
        original_size,
    })
}

/// Loads every row in manifest order.
pub fn load_all(manifest: &Manifest, net_size: (usize, usize)) -> Result<Vec<Sample>> {
    crate::par::map_slice(&manifest.rows, |row| load_sample(row, net_size))
        .into_iter()
        .collect()
}

/// `round(v·255)` with halves rounded up, clamped to `[0, 255]`.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Resizes a single-channel map to `original_size` and writes it as an 8-bit
/// grayscale image (format from the file extension).
pub fn save_saliency(map: &Tensor<f32>, original_size: (usize, usize), path: &Path) -> Result<()> {
    let (n, c, _, _) = map.dims4()?;
    if n != 1 || c != 1 {
        return Err(shape_err!("saliency map must be [1, 1, H, W], got {:?}", map.shape()));
    }
    let (h0, w0) = original_size;
    let resized = upsample_bilinear(map, h0, w0)?;
    let pixels: Vec<u8> = resized.data().iter().map(|&v| quantize(v)).collect();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let img = GrayImage::from_raw(w0 as u32, h0 as u32, pixels)
        .ok_or_else(|| shape_err!("cannot form a {h0}x{w0} image"))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    fn write_row(dir: &Path, depth16: &[u16], gt: &[u8], w: u32, h: u32) -> ManifestRow {
        let rgb = ImageBuffer::from_fn(w, h, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 7]));
        rgb.save(dir.join("rgb.png")).unwrap();
        ImageBuffer::<Luma<u16>, _>::from_raw(w, h, depth16.to_vec())
            .unwrap()
            .save(dir.join("depth.png"))
            .unwrap();
        ImageBuffer::<Luma<u8>, _>::from_raw(w, h, gt.to_vec())
            .unwrap()
            .save(dir.join("gt.png"))
            .unwrap();
        ManifestRow {
            name: "a".into(),
            rgb: dir.join("rgb.png"),
            depth: dir.join("depth.png"),
            gt: dir.join("gt.png"),
        }
    }

    #[test]
    fn depth_is_min_max_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let row = write_row(dir.path(), &[500, 1000, 1500, 750], &[200, 100, 0, 255], 2, 2);
        let s = load_sample(&row, (2, 2)).unwrap();
        let d = s.depth.data();
        assert_eq!(&d[..4], &[0.0, 0.5, 1.0, 0.25]);
        assert_eq!(&d[..4], &d[4..8]);
        assert_eq!(s.gt.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.original_size, (2, 2));
        assert_eq!(s.rgb.data()[1], 10.0 / 255.0);
    }

    #[test]
    fn constant_depth_becomes_zero() {
        let dir = tempfile::tempdir().unwrap();
        let row = write_row(dir.path(), &[9; 4], &[0; 4], 2, 2);
        let s = load_sample(&row, (4, 4)).unwrap();
        assert!(s.depth.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.depth.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn resized_gt_is_binary() {
        let dir = tempfile::tempdir().unwrap();
        let gt: Vec<u8> = (0..25).map(|i| if i % 3 == 0 { 255 } else { 0 }).collect();
        let row = write_row(dir.path(), &[1u16; 25], &gt, 5, 5);
        let s = load_sample(&row, (8, 8)).unwrap();
        assert!(s.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn unreadable_file_errors() {
        let row = ManifestRow {
            name: "x".into(),
            rgb: "/nonexistent/rgb.png".into(),
            depth: "/nonexistent/d.png".into(),
            gt: "/nonexistent/g.png".into(),
        };
        assert!(matches!(load_sample(&row, (4, 4)), Err(Error::Image { .. })));
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.5), 255);
    }

    #[test]
    fn save_constant_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/m.png");
        save_saliency(&Tensor::full(&[1, 1, 4, 4], 0.5), (4, 6), &path).unwrap();
        let (h, w, px) = read_gray_u8(&path).unwrap();
        assert_eq!((h, w), (4, 6));
        assert!(px.iter().all(|&v| v == 128));
    }

    #[test]
    fn manifest_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let row = |n: &str| ManifestRow {
            name: n.into(),
            rgb: "r.png".into(),
            depth: "d.png".into(),
            gt: "g.png".into(),
        };
        let m = Manifest::new(vec![row("a"), row("b")]).unwrap();
        let path = dir.path().join("m.csv");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("name,rgb,depth,gt\n"));
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.rows[1].gt, dir.path().join("g.png"));
        assert!(Manifest::new(vec![row("a"), row("a")]).is_err());
        let mut empty = row("c");
        empty.depth = PathBuf::new();
        assert!(Manifest::new(vec![empty]).is_err());
    }
}
