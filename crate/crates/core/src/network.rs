//! Full network: two-stream encoder, coarse prediction from `F_6`, and
//! top-down residual refinement `S_i = R_i + U(S_{i+1})` for levels 5 → 1.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_from_logits, AttentionMode, ResidualKind, ResidualModule, ATTENTION_WIDTH};
use crate::autograd::{Graph, Var};
use crate::backbone::{fuse_side_outputs, Backbone, BackboneConfig, SideFeatures, LEVELS};
use crate::error::{config_err, shape_err, Error, Result};
use crate::params::{Bound, Conv, Gain, Initializer, ParamStore};
use crate::tensor::{ConvSpec, Element, Tensor};

/// Ablation switches: depth stream, foreground-first and background-first
/// branches. With both branches off the residual modules use plain
/// convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub depth_stream: bool,
    pub ff: bool,
    pub bf: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            depth_stream: true,
            ff: true,
            bf: true,
        }
    }
}

impl Ablation {
    pub fn mode(&self) -> AttentionMode {
        AttentionMode::from_flags(self.ff, self.bf)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub backbone: BackboneConfig,
    /// Number of levels, counted from level 5 downwards, that use the
    /// multi-scale module.
    pub mbam_count: usize,
    pub ablation: Ablation,
    pub input_size: (usize, usize),
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    pub fn full() -> Self {
        Self {
            backbone: BackboneConfig::full(),
            mbam_count: 3,
            ablation: Ablation::default(),
            input_size: (224, 224),
        }
    }

    pub fn toy() -> Self {
        Self {
            backbone: BackboneConfig::toy(),
            input_size: (64, 64),
            ..Self::full()
        }
    }

    pub fn with_mbam(mut self, count: usize) -> Self {
        self.mbam_count = count;
        self
    }

    /// The six rows of the bilateral-attention ablation table:
    /// 1 baseline (RGB only, plain convs), 2 +depth, 3 +FF, 4 +BF,
    /// 5 +FF+BF, 6 +multi-scale on the top three levels.
    pub fn ablation_row(row: usize, backbone: BackboneConfig, input_size: (usize, usize)) -> Result<Self> {
        let (depth_stream, ff, bf, mbam_count) = match row {
            1 => (false, false, false, 0),
            2 => (true, false, false, 0),
            3 => (true, true, false, 0),
            4 => (true, false, true, 0),
            5 => (true, true, true, 0),
            6 => (true, true, true, 3),
            _ => return Err(config_err!("ablation rows are 1..=6, got {row}")),
        };
        Ok(Self {
            backbone,
            mbam_count,
            ablation: Ablation { depth_stream, ff, bf },
            input_size,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.mbam_count > 5 {
            return Err(config_err!("mbam_count must be in 0..=5, got {}", self.mbam_count));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(config_err!("input size {h}x{w} must be positive multiples of 32"));
        }
        Ok(())
    }

    /// Module kind at decoder level `i` (1..=5).
    pub fn level_kind(&self, level: usize) -> ResidualKind {
        if level + self.mbam_count > 5 {
            ResidualKind::Mbam
        } else {
            ResidualKind::Bam
        }
    }

    /// Canonical text form (TOML).
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigText(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigText(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every supervised output of one forward pass.
#[derive(Clone, Debug)]
pub struct SaliencyOutputs {
    /// `S_1 ..= S_6` logits; index 0 is the finest.
    pub side: Vec<Var>,
    pub rgb_head: Var,
    pub depth_head: Option<Var>,
    /// `σ(S_1)`.
    pub final_map: Var,
}

impl SaliencyOutputs {
    /// All logit maps that receive deep supervision, side outputs first.
    pub fn supervised(&self) -> Vec<Var> {
        let mut v = self.side.clone();
        v.extend(self.depth_head);
        v.push(self.rgb_head);
        v
    }
}

/// Network structure; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BiaNet {
    pub config: NetConfig,
    pub backbone: Backbone,
    pub initial: [Conv; 2],
    /// Residual modules for levels 1..=5 (index 0 is level 1).
    pub levels: Vec<ResidualModule>,
}

impl BiaNet {
    pub fn new<T: Element>(config: &NetConfig, init: &mut Initializer<'_, T>) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(init, &config.backbone, config.ablation.depth_stream)?;
        let f6 = backbone.fused_width(LEVELS);
        let initial = [
            init.conv("initial.conv1", ConvSpec::same(f6, ATTENTION_WIDTH, 3), Gain::Relu)?,
            init.conv("initial.conv2", ConvSpec::same(ATTENTION_WIDTH, 1, 3), Gain::Linear)?,
        ];
        let mode = config.ablation.mode();
        let mut levels = Vec::with_capacity(5);
        for level in 1..=5 {
            let kind = config.level_kind(level);
            let prefix = match kind {
                ResidualKind::Bam => format!("level{level}.bam"),
                ResidualKind::Mbam => format!("level{level}.mbam"),
            };
            levels.push(ResidualModule::new(init, &prefix, kind, mode, backbone.fused_width(level))?);
        }
        Ok(Self {
            config: config.clone(),
            backbone,
            initial,
            levels,
        })
    }

    /// Coarse logits `S_6` from `F_6`.
    pub fn predict_initial<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, f6: Var) -> Result<Var> {
        let h = self.initial[0].forward_relu(g, p, f6)?;
        self.initial[1].forward(g, p, h)
    }

    /// `S_i = R_i + U(S_{i+1})` at level `level` (1..=5).
    pub fn refine_step<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, level: usize, s_next: Var, feature: Var) -> Result<Var> {
        let module = self
            .levels
            .get(level.wrapping_sub(1))
            .ok_or_else(|| config_err!("decoder levels are 1..=5, got {level}"))?;
        refine_with(g, p, module, s_next, feature)
    }

    pub fn encode<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, rgb: Var, depth: Var) -> Result<(SideFeatures, Var, Option<Var>)> {
        let r = self.backbone.rgb.forward(g, p, rgb)?;
        let d = match &self.backbone.depth {
            Some(stream) => Some(stream.forward(g, p, depth)?),
            None => None,
        };
        let side = fuse_side_outputs(g, &r.features, d.as_ref().map(|d| d.features.as_slice()))?;
        Ok((side, r.head, d.map(|d| d.head)))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, rgb: Var, depth: Var) -> Result<SaliencyOutputs> {
        for (name, v) in [("rgb", rgb), ("depth", depth)] {
            let (_, c, h, w) = g.value(v).dims4()?;
            if (h, w) != self.config.input_size || c != 3 {
                return Err(shape_err!(
                    "{name} input is {c}x{h}x{w}, network expects 3x{}x{}",
                    self.config.input_size.0,
                    self.config.input_size.1
                ));
            }
        }
        let (side, rgb_head, depth_head) = self.encode(g, p, rgb, depth)?;
        let mut s = self.predict_initial(g, p, side.fused[LEVELS - 1])?;
        let mut maps = vec![s];
        for level in (1..=5).rev() {
            s = self.refine_step(g, p, level, s, side.fused[level - 1])?;
            maps.push(s);
        }
        maps.reverse();
        let final_map = g.sigmoid(maps[0])?;
        Ok(SaliencyOutputs {
            side: maps,
            rgb_head,
            depth_head,
            final_map,
        })
    }
}

/// `R + U(s_next)`, sharing the upsampled logits between the attention
/// maps and the skip path.
pub fn refine_with<T: Element>(g: &mut Graph<'_, T>, p: &Bound, module: &ResidualModule, s_next: Var, feature: Var) -> Result<Var> {
    let (h, w) = g.value(feature).spatial()?;
    let (sh, sw) = g.value(s_next).spatial()?;
    if (h, w) != (2 * sh, 2 * sw) {
        return Err(shape_err!("feature {h}x{w} is not one octave above logits {sh}x{sw}"));
    }
    let up = g.upsample_bilinear(s_next, h, w)?;
    let attention = if module.mode == AttentionMode::Plain {
        None
    } else {
        Some(attention_from_logits(g, up)?)
    };
    let residual = module.forward_with_attention(g, p, feature, attention)?;
    g.add(residual, up)
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    pub net: BiaNet,
    pub params: ParamStore<T>,
}

/// Values of every output map of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputValues<T: Element> {
    pub side: Vec<Tensor<T>>,
    pub rgb_head: Tensor<T>,
    pub depth_head: Option<Tensor<T>>,
    pub final_map: Tensor<T>,
}

impl<T: Element> Model<T> {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = BiaNet::new(config, &mut Initializer::new(&mut params, seed))?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.net.config
    }

    pub fn param_count(&self) -> u64 {
        self.params.numel()
    }

    /// Inference on `[N, 3, H, W]` inputs; returns every output map.
    pub fn forward_values(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<OutputValues<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let r = g.constant(rgb.clone());
        let d = g.constant(depth.clone());
        let out = self.net.forward(&mut g, &p, r, d)?;
        Ok(OutputValues {
            side: out.side.iter().map(|&v| g.value(v).clone()).collect(),
            rgb_head: g.value(out.rgb_head).clone(),
            depth_head: out.depth_head.map(|v| g.value(v).clone()),
            final_map: g.value(out.final_map).clone(),
        })
    }

    /// Saliency probabilities `σ(S_1)`.
    pub fn predict(&self, rgb: &Tensor<T>, depth: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_values(rgb, depth)?.final_map)
    }

    /// Sets every residual module's output layer to zero.
    pub fn zero_residual_heads(&mut self) {
        for m in &self.net.levels {
            m.zero_output(&mut self.params);
        }
    }

    /// Sets the coarse predictor's output layer to zero.
    pub fn zero_initial_head(&mut self) {
        for id in self.net.initial[1].param_ids() {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_input(seed: usize) -> Tensor<f32> {
        Tensor::from_fn(&[1, 3, 64, 64], |i| (((i + seed) * 2654435761) % 1000) as f32 / 1000.0)
    }

    #[test]
    fn toy_shape_ladder() {
        let model = Model::<f32>::new(&NetConfig::toy(), 1).unwrap();
        let out = model.forward_values(&toy_input(0), &toy_input(1)).unwrap();
        let sizes: Vec<_> = out.side.iter().map(|t| t.spatial().unwrap()).collect();
        assert_eq!(sizes, vec![(64, 64), (32, 32), (16, 16), (8, 8), (4, 4), (2, 2)]);
        assert_eq!(out.rgb_head.shape(), &[1, 1, 2, 2]);
        assert!(out.depth_head.is_some());
        assert!(out.final_map.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out.final_map.shape(), &[1, 1, 64, 64]);
    }

    #[test]
    fn eight_supervised_outputs() {
        let model = Model::<f32>::new(&NetConfig::toy(), 1).unwrap();
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let r = g.constant(toy_input(0));
        let d = g.constant(toy_input(1));
        let out = model.net.forward(&mut g, &p, r, d).unwrap();
        assert_eq!(out.supervised().len(), 8);
    }

    #[test]
    fn zero_initial_head_gives_neutral_level5_attention() {
        let mut model = Model::<f32>::new(&NetConfig::toy(), 2).unwrap();
        model.zero_initial_head();
        let out = model.forward_values(&toy_input(3), &toy_input(4)).unwrap();
        assert!(out.side[5].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn level_kinds_follow_mbam_count() {
        let cfg = NetConfig::toy().with_mbam(3);
        let kinds: Vec<_> = (1..=5).map(|l| cfg.level_kind(l)).collect();
        use ResidualKind::*;
        assert_eq!(kinds, vec![Bam, Bam, Mbam, Mbam, Mbam]);
        assert!((1..=5).all(|l| cfg.clone().with_mbam(0).level_kind(l) == Bam));
        assert!((1..=5).all(|l| cfg.clone().with_mbam(5).level_kind(l) == Mbam));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let model = Model::<f32>::new(&NetConfig::toy(), 1).unwrap();
        let bad = Tensor::zeros(&[1, 3, 32, 32]);
        assert!(model.predict(&bad, &bad).is_err());
    }

    #[test]
    fn config_text_roundtrip() {
        let cfg = NetConfig::ablation_row(4, BackboneConfig::toy(), (64, 64)).unwrap();
        let text = cfg.to_text().unwrap();
        assert_eq!(NetConfig::from_text(&text).unwrap(), cfg);
        assert_eq!(NetConfig::from_text("mbam_count = 1").unwrap(), NetConfig::full().with_mbam(1));
        assert!(NetConfig::from_text("mbam_count = 9").is_err());
        assert!(NetConfig::from_text("mbam = 1").is_err());
        let mut bad = NetConfig::toy();
        bad.mbam_count = 6;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn depth_off_halves_fused_widths() {
        let cfg = NetConfig::ablation_row(1, BackboneConfig::toy(), (64, 64)).unwrap();
        let model = Model::<f32>::new(&cfg, 1).unwrap();
        assert!(model.net.backbone.depth.is_none());
        assert_eq!(model.net.levels[4].in_channels, 64);
        let out = model.forward_values(&toy_input(0), &toy_input(1)).unwrap();
        assert!(out.depth_head.is_none());
    }
}
