//! Bilateral attention residual modules.
//!
//! The coarser prediction, upsampled and squashed, gives a foreground-first
//! map `A_F = σ(U(S_{i+1}))` and its complement `A_B = 1 − A_F`. Each map
//! weights the side feature in its own branch; the branch outputs are
//! predicted jointly into a single-channel residual.
//!
//! [`ResidualKind::Bam`] reduces the feature to 32 channels with a 1×1 conv
//! and runs one 3×3 ReLU conv per branch. [`ResidualKind::Mbam`] skips the
//! reduction and runs a pyramid per branch: a 1×1 conv and 3×3 convs at
//! dilation 3, 5 and 7 (32 channels each, ReLU), concatenated to 128.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::params::{Bound, Conv, Gain, Initializer, ParamId};
use crate::tensor::{ConvSpec, Element};

/// Channel width of every attention-branch conv.
pub const ATTENTION_WIDTH: usize = 32;

/// Dilation rates of the 3×3 convs in a multi-scale branch.
pub const MBAM_DILATIONS: [usize; 3] = [3, 5, 7];

/// Which attention branches a residual module carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// Foreground-first and background-first branches.
    Bilateral,
    ForegroundOnly,
    BackgroundOnly,
    /// One unweighted branch (plain convolutions, no attention).
    Plain,
}

impl AttentionMode {
    pub fn from_flags(ff: bool, bf: bool) -> Self {
        match (ff, bf) {
            (true, true) => Self::Bilateral,
            (true, false) => Self::ForegroundOnly,
            (false, true) => Self::BackgroundOnly,
            (false, false) => Self::Plain,
        }
    }

    pub fn sides(self) -> &'static [Side] {
        match self {
            Self::Bilateral => &[Side::Foreground, Side::Background],
            Self::ForegroundOnly => &[Side::Foreground],
            Self::BackgroundOnly => &[Side::Background],
            Self::Plain => &[Side::Unweighted],
        }
    }
}

/// The weighting applied at the head of a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Foreground,
    Background,
    Unweighted,
}

impl Side {
    fn tag(self) -> &'static str {
        match self {
            Side::Foreground => "ff",
            Side::Background => "bf",
            Side::Unweighted => "plain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    Bam,
    Mbam,
}

/// Complementary attention maps, both `[N, 1, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionPair {
    pub fg: Var,
    pub bg: Var,
}

/// `A_F = σ(logits)`, `A_B = 1 − A_F` for logits already at the feature
/// resolution.
pub fn attention_from_logits<T: Element>(g: &mut Graph<'_, T>, logits: Var) -> Result<AttentionPair> {
    let c = g.value(logits).dims4()?.1;
    if c != 1 {
        return Err(shape_err!("attention needs single-channel logits, got {c} channels"));
    }
    let fg = g.sigmoid(logits)?;
    let bg = g.one_minus(fg)?;
    Ok(AttentionPair { fg, bg })
}

/// Upsamples the coarser logits `s_next` to `out_size` and derives the pair.
pub fn attention_maps<T: Element>(g: &mut Graph<'_, T>, s_next: Var, out_size: (usize, usize)) -> Result<AttentionPair> {
    let c = g.value(s_next).dims4()?.1;
    if c != 1 {
        return Err(shape_err!("attention needs single-channel logits, got {c} channels"));
    }
    let up = g.upsample_bilinear(s_next, out_size.0, out_size.1)?;
    attention_from_logits(g, up)
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub side: Side,
    /// One conv for a BAM branch; the 1×1 and three dilated convs for MBAM.
    pub convs: Vec<Conv>,
}

impl Branch {
    pub fn width(&self) -> usize {
        self.convs.iter().map(|c| c.spec.out_channels).sum()
    }
}

/// The joint prediction layer: a 3×3 ReLU conv over the concatenated branch
/// features (weights stored per branch), then a 3×3 conv to one channel.
#[derive(Clone, Debug)]
pub struct JointHead {
    pub parts: Vec<ParamId>,
    pub bias: ParamId,
    pub geometry: ConvSpec,
    pub out: Conv,
}

impl JointHead {
    fn new<T: Element>(init: &mut Initializer<'_, T>, prefix: &str, branches: &[Branch]) -> Result<Self> {
        let total: usize = branches.iter().map(Branch::width).sum();
        let fan_in = (total * 9) as f64;
        let std = (2.0 / fan_in).sqrt();
        let mut parts = Vec::with_capacity(branches.len());
        for b in branches {
            let shape = [ATTENTION_WIDTH, b.width(), 3, 3];
            parts.push(init.gaussian(&format!("{prefix}.head.{}.weight", b.side.tag()), &shape, std)?);
        }
        let bias = init.zeros(&format!("{prefix}.head.bias"), &[ATTENTION_WIDTH])?;
        let geometry = ConvSpec::same(total, ATTENTION_WIDTH, 3);
        let out = init.conv(&format!("{prefix}.head.out"), ConvSpec::same(ATTENTION_WIDTH, 1, 3), Gain::Linear)?;
        Ok(Self {
            parts,
            bias,
            geometry,
            out,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, features: &[Var]) -> Result<Var> {
        if features.len() != self.parts.len() {
            return Err(shape_err!("{} branch features for {} head parts", features.len(), self.parts.len()));
        }
        let pairs: Vec<(Var, Var)> = features.iter().zip(&self.parts).map(|(&f, &w)| (f, p.var(w))).collect();
        let hidden = g.conv2d_sum(&pairs, Some(p.var(self.bias)), &self.geometry)?;
        let hidden = g.relu(hidden)?;
        self.out.forward(g, p, hidden)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.parts.clone();
        ids.push(self.bias);
        ids.extend(self.out.param_ids());
        ids
    }
}

/// A BAM or MBAM block for one decoder level.
#[derive(Clone, Debug)]
pub struct ResidualModule {
    pub kind: ResidualKind,
    pub mode: AttentionMode,
    pub in_channels: usize,
    pub reduce: Option<Conv>,
    pub branches: Vec<Branch>,
    pub head: JointHead,
}

impl ResidualModule {
    pub fn new<T: Element>(
        init: &mut Initializer<'_, T>,
        prefix: &str,
        kind: ResidualKind,
        mode: AttentionMode,
        in_channels: usize,
    ) -> Result<Self> {
        if in_channels == 0 {
            return Err(config_err!("residual module needs at least one input channel"));
        }
        let (reduce, branch_in) = match kind {
            ResidualKind::Bam => {
                let spec = ConvSpec::same(in_channels, ATTENTION_WIDTH, 1);
                (Some(init.conv(&format!("{prefix}.reduce"), spec, Gain::Linear)?), ATTENTION_WIDTH)
            }
            ResidualKind::Mbam => (None, in_channels),
        };
        let mut branches = Vec::new();
        for &side in mode.sides() {
            let tag = side.tag();
            let convs = match kind {
                ResidualKind::Bam => vec![init.conv(
                    &format!("{prefix}.{tag}.p"),
                    ConvSpec::same(branch_in, ATTENTION_WIDTH, 3),
                    Gain::Relu,
                )?],
                ResidualKind::Mbam => {
                    let mut convs = vec![init.conv(
                        &format!("{prefix}.{tag}.d1"),
                        ConvSpec::same(branch_in, ATTENTION_WIDTH, 1),
                        Gain::Relu,
                    )?];
                    for (j, &rate) in MBAM_DILATIONS.iter().enumerate() {
                        convs.push(init.conv(
                            &format!("{prefix}.{tag}.d{}", j + 2),
                            ConvSpec::dilated3x3(branch_in, ATTENTION_WIDTH, rate),
                            Gain::Relu,
                        )?);
                    }
                    convs
                }
            };
            branches.push(Branch { side, convs });
        }
        let head = JointHead::new(init, prefix, &branches)?;
        Ok(Self {
            kind,
            mode,
            in_channels,
            reduce,
            branches,
            head,
        })
    }

    /// Kernel shape of every branch conv, as `(kernel, dilation)`.
    pub fn branch_geometry(&self) -> Vec<((usize, usize), (usize, usize))> {
        self.branches
            .first()
            .map(|b| b.convs.iter().map(|c| (c.spec.kernel, c.spec.dilation)).collect())
            .unwrap_or_default()
    }

    /// Residual `R_i` for side feature `f` given an attention pair at the
    /// same resolution. `attention` may be `None` only in plain mode.
    pub fn forward_with_attention<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        p: &Bound,
        feature: Var,
        attention: Option<AttentionPair>,
    ) -> Result<Var> {
        let (_, c, h, w) = g.value(feature).dims4()?;
        if c != self.in_channels {
            return Err(config_err!("residual module expects {} channels, got {c}", self.in_channels));
        }
        if let Some(a) = attention {
            let (ah, aw) = g.value(a.fg).spatial()?;
            if (ah, aw) != (h, w) {
                return Err(shape_err!("attention {ah}x{aw} vs feature {h}x{w}"));
            }
        }
        let base = match &self.reduce {
            Some(conv) => conv.forward(g, p, feature)?,
            None => feature,
        };
        let mut outputs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let weighted = match (branch.side, attention) {
                (Side::Unweighted, _) => base,
                (Side::Foreground, Some(a)) => g.mul(base, a.fg)?,
                (Side::Background, Some(a)) => g.mul(base, a.bg)?,
                (_, None) => return Err(config_err!("attention branch run without attention maps")),
            };
            let feats = branch
                .convs
                .iter()
                .map(|conv| conv.forward_relu(g, p, weighted))
                .collect::<Result<Vec<_>>>()?;
            outputs.push(if feats.len() == 1 {
                feats[0]
            } else {
                g.concat_channels(&feats)?
            });
        }
        self.head.forward(g, p, &outputs)
    }

    /// Residual from the side feature and the coarser logits one octave
    /// below it.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, p: &Bound, feature: Var, s_next: Var) -> Result<Var> {
        let (h, w) = g.value(feature).spatial()?;
        let (sh, sw) = g.value(s_next).spatial()?;
        if (h, w) != (2 * sh, 2 * sw) {
            return Err(shape_err!("feature {h}x{w} is not one octave above logits {sh}x{sw}"));
        }
        let attention = if self.mode == AttentionMode::Plain {
            None
        } else {
            Some(attention_maps(g, s_next, (h, w))?)
        };
        self.forward_with_attention(g, p, feature, attention)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.reduce.iter().flat_map(Conv::param_ids).collect();
        for b in &self.branches {
            ids.extend(b.convs.iter().flat_map(Conv::param_ids));
        }
        ids.extend(self.head.param_ids());
        ids
    }

    /// Zeroes the final one-channel conv so the module outputs `R ≡ 0`.
    pub fn zero_output<T: Element>(&self, store: &mut crate::params::ParamStore<T>) {
        for id in self.head.out.param_ids() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
