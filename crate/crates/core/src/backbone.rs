//! Two-stream VGG-style encoder.
//!
//! Each stream runs five conv blocks (max-pool between blocks), then an
//! extra group on the pooled block-5 output: two 3×3 ReLU convs producing
//! the level-6 feature, and a 3×3 conv to one channel producing the stream's
//! saliency logits. Level-`i` features of the RGB and depth streams are
//! concatenated into the fused side output `F_i`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::params::{Bound, Conv, Gain, Initializer};
use crate::tensor::{ConvSpec, Element};

/// Number of encoder levels that feed the decoder (five blocks plus the
/// extra group).
pub const LEVELS: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub block_widths: [usize; 5],
    pub block_depths: [usize; 5],
    pub extra_group_width: usize,
    pub toy_scale: bool,
}

impl BackboneConfig {
    /// VGG-16 conv blocks with a 512-wide extra group.
    pub fn full() -> Self {
        Self {
            block_widths: [64, 128, 256, 512, 512],
            block_depths: [2, 2, 3, 3, 3],
            extra_group_width: 512,
            toy_scale: false,
        }
    }

    /// VGG-11 conv blocks, for the lighter-backbone configuration.
    pub fn vgg11() -> Self {
        Self {
            block_depths: [1, 1, 2, 2, 2],
            ..Self::full()
        }
    }

    /// Reduced widths for fast tests and desk-scale training.
    pub fn toy() -> Self {
        Self {
            block_widths: [8, 16, 32, 64, 64],
            block_depths: [1, 1, 2, 2, 2],
            extra_group_width: 64,
            toy_scale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_widths.contains(&0) || self.block_depths.contains(&0) || self.extra_group_width == 0 {
            return Err(config_err!("backbone widths and depths must be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// Channel count of the level-`i` stream feature, `i` in `1..=6`.
    pub fn level_width(&self, level: usize) -> usize {
        if level <= 5 {
            self.block_widths[level - 1]
        } else {
            self.extra_group_width
        }
    }
}

/// One encoder stream (RGB or depth).
#[derive(Clone, Debug)]
pub struct Stream {
    pub blocks: Vec<Vec<Conv>>,
    pub extra: [Conv; 2],
    pub head: Conv,
}

/// Per-level features and the saliency logits of one stream.
#[derive(Clone, Debug)]
pub struct StreamOutputs {
    /// `f_1 ..= f_6`.
    pub features: Vec<Var>,
    /// Single-channel logits at level-6 resolution.
    pub head: Var,
}

impl Stream {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, prefix: &str, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = 3;
        for (b, (&width, &depth)) in config.block_widths.iter().zip(&config.block_depths).enumerate() {
            let mut convs = Vec::with_capacity(depth);
            for d in 0..depth {
                let name = format!("{prefix}.block{}.conv{}", b + 1, d + 1);
                convs.push(init.conv(&name, ConvSpec::same(in_ch, width, 3), Gain::Relu)?);
                in_ch = width;
            }
            blocks.push(convs);
        }
        let e = config.extra_group_width;
        let extra = [
            init.conv(&format!("{prefix}.block6.conv1"), ConvSpec::same(in_ch, e, 3), Gain::Relu)?,
            init.conv(&format!("{prefix}.block6.conv2"), ConvSpec::same(e, e, 3), Gain::Relu)?,
        ];
        let head = init.conv(&format!("{prefix}.head"), ConvSpec::same(e, 1, 3), Gain::Linear)?;
        Ok(Self { blocks, extra, head })
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv> {
        self.blocks.iter().flatten().chain(&self.extra).chain(std::iter::once(&self.head))
    }

    /// Runs the stream on a `[N, 3, H, W]` image with `H`, `W` divisible by 32.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, image: Var) -> Result<StreamOutputs> {
        let (_, c, h, w) = g.value(image).dims4()?;
        if c != 3 {
            return Err(shape_err!("stream input needs 3 channels, got {c}"));
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(shape_err!("stream input {h}x{w} is not divisible by 32"));
        }
        let mut features = Vec::with_capacity(LEVELS);
        let mut x = image;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = g.max_pool2d(x)?;
            }
            for conv in block {
                x = conv.forward_relu(g, p, x)?;
            }
            features.push(x);
        }
        x = g.max_pool2d(x)?;
        for conv in &self.extra {
            x = conv.forward_relu(g, p, x)?;
        }
        features.push(x);
        let head = self.head.forward(g, p, x)?;
        Ok(StreamOutputs { features, head })
    }
}

/// RGB stream plus an optional depth stream.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub rgb: Stream,
    pub depth: Option<Stream>,
}

/// Stream features and their per-level fusion.
#[derive(Clone, Debug)]
pub struct SideFeatures {
    pub rgb: Vec<Var>,
    pub depth: Option<Vec<Var>>,
    /// `F_1 ..= F_6`.
    pub fused: Vec<Var>,
}

impl Backbone {
    pub fn new<T: Element>(init: &mut Initializer<'_, T>, config: &BackboneConfig, with_depth: bool) -> Result<Self> {
        let rgb = Stream::new(init, "rgb", config)?;
        let depth = if with_depth {
            Some(Stream::new(init, "depth", config)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            rgb,
            depth,
        })
    }

    /// Channel count of `F_i`.
    pub fn fused_width(&self, level: usize) -> usize {
        let w = self.config.level_width(level);
        if self.depth.is_some() {
            2 * w
        } else {
            w
        }
    }
}

/// `F_i = [f_i^rgb, f_i^d]` for every level; with no depth stream `F_i = f_i^rgb`.
pub fn fuse_side_outputs<T: Element>(g: &mut Graph<'_, T>, rgb: &[Var], depth: Option<&[Var]>) -> Result<SideFeatures> {
    let fused = match depth {
        Some(depth) => {
            if depth.len() != rgb.len() {
                return Err(shape_err!("{} rgb levels vs {} depth levels", rgb.len(), depth.len()));
            }
            rgb.iter()
                .zip(depth)
                .map(|(&r, &d)| g.concat_channels(&[r, d]))
                .collect::<Result<Vec<_>>>()?
        }
        None => rgb.to_vec(),
    };
    Ok(SideFeatures {
        rgb: rgb.to_vec(),
        depth: depth.map(<[Var]>::to_vec),
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::Tensor;

    fn toy_backbone(seed: u64) -> (Backbone, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut Initializer::new(&mut store, seed), &BackboneConfig::toy(), true).unwrap();
        (bb, store)
    }

    #[test]
    fn toy_ladder_and_fusion() {
        let (bb, store) = toy_backbone(1);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let img = g.constant(Tensor::from_fn(&[1, 3, 64, 64], |i| (i % 7) as f32 / 7.0));
        let dep = g.constant(Tensor::from_fn(&[1, 3, 64, 64], |i| (i % 5) as f32 / 5.0));
        let r = bb.rgb.forward(&mut g, &p, img).unwrap();
        let d = bb.depth.as_ref().unwrap().forward(&mut g, &p, dep).unwrap();
        let sizes: Vec<_> = r.features.iter().map(|&f| g.value(f).spatial().unwrap().0).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8, 4, 2]);
        assert_eq!(g.value(r.head).shape(), &[1, 1, 2, 2]);
        let side = fuse_side_outputs(&mut g, &r.features, Some(&d.features)).unwrap();
        for (lvl, &f) in side.fused.iter().enumerate() {
            let c = g.value(f).shape()[1];
            assert_eq!(c, 2 * BackboneConfig::toy().level_width(lvl + 1));
            assert_eq!(c, bb.fused_width(lvl + 1));
            let half = g.value(f).slice_channels(0, c / 2).unwrap();
            assert_eq!(&half, g.value(r.features[lvl]));
        }
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let (bb, store) = toy_backbone(2);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let img = g.constant(Tensor::zeros(&[1, 3, 64, 64]));
        let out = bb.rgb.forward(&mut g, &p, img).unwrap();
        for f in out.features.iter().chain(std::iter::once(&out.head)) {
            assert!(g.value(*f).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let (bb, store) = toy_backbone(3);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let img = g.constant(Tensor::zeros(&[1, 3, 48, 64]));
        assert!(bb.rgb.forward(&mut g, &p, img).is_err());
    }

    #[test]
    fn streams_are_independent() {
        let (bb, store) = toy_backbone(4);
        let img = Tensor::from_fn(&[1, 3, 64, 64], |i| ((i * 31) % 17) as f32 / 17.0);
        let run = |store: &ParamStore<f32>| {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let x = g.constant(img.clone());
            let out = bb.rgb.forward(&mut g, &p, x).unwrap();
            out.features.iter().map(|&f| g.value(f).clone()).collect::<Vec<_>>()
        };
        let before = run(&store);
        let mut perturbed = store.clone();
        for conv in bb.depth.as_ref().unwrap().convs() {
            perturbed.get_mut(conv.weight).data_mut().iter_mut().for_each(|w| *w += 0.5);
        }
        assert_eq!(before, run(&perturbed));
    }

    #[test]
    fn fusion_rejects_level_mismatch() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let b = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(fuse_side_outputs(&mut g, &[a], Some(&[b])).is_err());
        assert!(fuse_side_outputs(&mut g, &[a, a], Some(&[a])).is_err());
    }
}
