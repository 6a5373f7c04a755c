//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op in execution order, so the node list is
//! already topologically sorted and acyclic. Parameters are borrowed rather
//! than copied; several graphs may read the same parameter store at once.

use std::borrow::Cow;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{kernels, ConvSpec, Element, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eltwise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Sum,
}

/// Lower clamp bound on probabilities fed to the cross-entropy; the upper
/// bound is `1 − BCE_CLAMP`.
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Conv {
        parts: Vec<(Var, Var, ConvSpec)>,
        bias: Option<Var>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample(Var),
    Act(Var, Activation),
    Binary(Var, Var, Eltwise, bool),
    OneMinus(Var),
    Concat(Vec<Var>),
    Reduce(Var, Reduce),
    Scale(Var, T),
    Bce {
        pred: Var,
        target: Var,
    },
}

struct Node<'p, T: Element> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Element = f32> {
    nodes: Vec<Node<'p, T>>,
    macs: u64,
}

impl<T: Element> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Element>(t: Tensor<T>, op: &'static str) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op))
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by every convolution recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn leaf_ref(&mut self, value: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        self.conv2d_sum(&[(x, w)], bias, spec)
    }

    /// `Σ_k conv(x_k, w_k) + bias`: a convolution over the channel
    /// concatenation of the `x_k`, with the weight stored per part. Each
    /// part's input width comes from its weight; `geometry` supplies the
    /// kernel, stride, padding and dilation shared by all parts.
    pub fn conv2d_sum(&mut self, parts: &[(Var, Var)], bias: Option<Var>, geometry: &ConvSpec) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err!("conv with no input parts"));
        }
        let mut specs = Vec::with_capacity(parts.len());
        let mut acc: Option<Tensor<T>> = None;
        for &(x, w) in parts {
            let ws = self.value(w).shape();
            if ws.len() != 4 {
                return Err(shape_err!("conv weight must be 4-D, got {ws:?}"));
            }
            let spec = ConvSpec {
                in_channels: ws[1],
                out_channels: ws[0],
                has_bias: false,
                ..*geometry
            };
            let out = kernels::conv2d(self.value(x), self.value(w), None, &spec)?;
            let (n, _, h, wd) = self.value(x).dims4()?;
            self.macs += spec.macs(h, wd)? * n as u64;
            acc = Some(match acc {
                None => out,
                Some(mut a) => {
                    if a.shape() != out.shape() {
                        return Err(shape_err!(
                            "conv parts disagree: {:?} vs {:?}",
                            a.shape(),
                            out.shape()
                        ));
                    }
                    a.data_mut()
                        .iter_mut()
                        .zip(out.data())
                        .for_each(|(p, q)| *p = *p + *q);
                    a
                }
            });
            specs.push((x, w, spec));
        }
        let mut out = acc.expect("at least one part");
        if let Some(b) = bias {
            let (_, co, h, w) = out.dims4()?;
            let bv = self.value(b);
            if bv.shape() != [co] {
                return Err(shape_err!("conv bias shape {:?}, expected [{co}]", bv.shape()));
            }
            let bv = bv.data().to_vec();
            for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
                let b = bv[i % co];
                plane.iter_mut().for_each(|v| *v = *v + b);
            }
        }
        let mut deps: Vec<Var> = parts.iter().flat_map(|&(x, w)| [x, w]).collect();
        deps.extend(bias);
        let rg = self.needs(&deps);
        let out = finite(out, "conv2d")?;
        Ok(self.push(Cow::Owned(out), Op::Conv { parts: specs, bias }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2x2(self.value(x))?;
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::MaxPool { input: x, argmax }, rg))
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = finite(
            kernels::upsample_bilinear(self.value(x), out_h, out_w)?,
            "upsample_bilinear",
        )?;
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Upsample(x), rg))
    }

    pub fn activation(&mut self, x: Var, mode: Activation) -> Result<Var> {
        let out = match mode {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        let out = finite(out, "activation")?;
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Act(x, mode), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Elementwise `a ∘ b`. `b` may also be a one-channel map applied to
    /// every channel of `a`.
    pub fn eltwise(&mut self, a: Var, b: Var, mode: Eltwise) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else {
            let (an, ac, ah, aw) = av.dims4()?;
            let (bn, bc, bh, bw) = bv.dims4()?;
            if (an, ah, aw) != (bn, bh, bw) || bc != 1 || ac == 1 {
                return Err(shape_err!(
                    "eltwise shapes {:?} and {:?} are incompatible",
                    av.shape(),
                    bv.shape()
                ));
            }
            true
        };
        let f = |x: T, y: T| match mode {
            Eltwise::Add => x + y,
            Eltwise::Sub => x - y,
            Eltwise::Mul => x * y,
        };
        let out = if broadcast {
            let (n, c, h, w) = av.dims4()?;
            let plane = h * w;
            let mut data = Vec::with_capacity(av.numel());
            for bn in 0..n {
                let map = &bv.data()[bn * plane..(bn + 1) * plane];
                for ch in 0..c {
                    let src = &av.data()[(bn * c + ch) * plane..(bn * c + ch + 1) * plane];
                    data.extend(src.iter().zip(map).map(|(&x, &y)| f(x, y)));
                }
            }
            Tensor::new(av.shape().to_vec(), data)?
        } else {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        };
        let out = finite(out, "eltwise")?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Binary(a, b, mode, broadcast), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eltwise(a, b, Eltwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eltwise(a, b, Eltwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eltwise(a, b, Eltwise::Mul)
    }

    /// `E − x` with `E` all ones.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| T::one() - v);
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::OneMinus(x), rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&tensors)?;
        let rg = self.needs(parts);
        Ok(self.push(Cow::Owned(out), Op::Concat(parts.to_vec()), rg))
    }

    pub fn reduce(&mut self, x: Var, mode: Reduce) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(shape_err!("reduction over an empty tensor"));
        }
        let s = v.sum();
        let out = match mode {
            Reduce::Sum => s,
            Reduce::Mean => s / T::from_usize(v.numel()).unwrap_or_else(T::one),
        };
        let out = finite(Tensor::scalar(out), "reduce")?;
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Reduce(x, mode), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduce::Mean)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduce::Sum)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = finite(self.value(x).map(|v| v * factor), "scale")?;
        let rg = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Scale(x, factor), rg))
    }

    /// Mean binary cross-entropy of probabilities `pred` against `target`,
    /// with `pred` clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, y) = (self.value(pred), self.value(target));
        if p.shape() != y.shape() {
            return Err(shape_err!("bce shapes {:?} vs {:?}", p.shape(), y.shape()));
        }
        if p.numel() == 0 {
            return Err(shape_err!("bce over an empty tensor"));
        }
        let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
        let total: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&x, &t)| {
                let x = x.as_f64().clamp(lo, hi);
                let t = t.as_f64();
                -(t * x.ln() + (1.0 - t) * (1.0 - x).ln())
            })
            .sum();
        let out = Tensor::scalar(T::from_f(total / p.numel() as f64));
        let out = finite(out, "bce")?;
        let rg = self.needs(&[pred]);
        Ok(self.push(Cow::Owned(out), Op::Bce { pred, target }, rg))
    }

    /// For every ReLU in the graph: its input node and, when that input is a
    /// biased convolution, the bias node. Used to steer gradient checks
    /// away from kinks.
    pub fn relu_inputs(&self) -> Vec<(Var, Option<Var>)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Act(x, Activation::Relu) => {
                    let bias = match &self.nodes[x.0].op {
                        Op::Conv { bias, .. } => *bias,
                        _ => None,
                    };
                    Some((x, bias))
                }
                _ => None,
            })
            .collect()
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar seed, got shape {:?}",
                lv.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.local_grads(node, &g)?;
            grads[idx] = Some(g);
            for (var, delta) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(delta.data())
                        .for_each(|(a, d)| *a = *a + *d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<'p, T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { parts, bias } => {
                let mut res = Vec::with_capacity(parts.len() * 2 + 1);
                let mut bias_grad = None;
                for &(x, w, spec) in parts {
                    let want_x = self.requires_grad(x);
                    let want_w = self.requires_grad(w);
                    let cg = kernels::conv2d_backward(self.value(x), self.value(w), &spec, g, want_x, want_w)?;
                    if let Some(dx) = cg.input {
                        res.push((x, dx));
                    }
                    if let Some(dw) = cg.weight {
                        res.push((w, dw));
                    }
                    bias_grad = Some(cg.bias);
                }
                if let (Some(b), Some(db)) = (bias, bias_grad) {
                    res.push((*b, db));
                }
                res
            }
            Op::MaxPool { input, argmax } => {
                let shape = self.value(*input).shape().to_vec();
                vec![(*input, kernels::max_pool2x2_backward(&shape, argmax, g)?)]
            }
            Op::Upsample(x) => {
                let shape = self.value(*x).shape().to_vec();
                vec![(*x, kernels::upsample_bilinear_backward(&shape, g)?)]
            }
            Op::Act(x, mode) => {
                let y = &node.value;
                let d: Vec<T> = match mode {
                    Activation::Relu => y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
                        .collect(),
                };
                vec![(*x, Tensor::new(g.shape().to_vec(), d)?)]
            }
            Op::Binary(a, b, mode, broadcast) => self.binary_grads(*a, *b, *mode, *broadcast, g)?,
            Op::OneMinus(x) => vec![(*x, g.map(|v| -v))],
            Op::Concat(parts) => {
                let mut start = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    res.push((p, g.slice_channels(start, c)?));
                    start += c;
                }
                res
            }
            Op::Reduce(x, mode) => {
                let xv = self.value(*x);
                let gv = g.data()[0];
                let fill = match mode {
                    Reduce::Sum => gv,
                    Reduce::Mean => gv / T::from_usize(xv.numel()).unwrap_or_else(T::one),
                };
                vec![(*x, Tensor::full(xv.shape(), fill))]
            }
            Op::Scale(x, factor) => vec![(*x, g.map(|v| v * *factor))],
            Op::Bce { pred, target } => {
                let (p, y) = (self.value(*pred), self.value(*target));
                let n = T::from_usize(p.numel()).unwrap_or_else(T::one);
                let (lo, hi) = (T::from_f(BCE_CLAMP), T::from_f(1.0 - BCE_CLAMP));
                let scale = g.data()[0] / n;
                let d: Vec<T> = p
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&x, &t)| {
                        if x > lo && x < hi {
                            scale * ((T::one() - t) / (T::one() - x) - t / x)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*pred, Tensor::new(p.shape().to_vec(), d)?)]
            }
        };
        Ok(out)
    }

    fn binary_grads(&self, a: Var, b: Var, mode: Eltwise, broadcast: bool, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let (av, bv) = (self.value(a), self.value(b));
        if !broadcast {
            let (ga, gb) = match mode {
                Eltwise::Add => (g.clone(), g.clone()),
                Eltwise::Sub => (g.clone(), g.map(|v| -v)),
                Eltwise::Mul => {
                    let ga = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    let gb = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    (
                        Tensor::new(g.shape().to_vec(), ga)?,
                        Tensor::new(g.shape().to_vec(), gb)?,
                    )
                }
            };
            return Ok(vec![(a, ga), (b, gb)]);
        }
        let (n, c, h, w) = av.dims4()?;
        let plane = h * w;
        let mut ga = Vec::with_capacity(av.numel());
        let mut gb = vec![T::zero(); bv.numel()];
        for bn in 0..n {
            let map = &bv.data()[bn * plane..(bn + 1) * plane];
            let gb_plane = &mut gb[bn * plane..(bn + 1) * plane];
            for ch in 0..c {
                let off = (bn * c + ch) * plane;
                let gp = &g.data()[off..off + plane];
                let ap = &av.data()[off..off + plane];
                match mode {
                    Eltwise::Add | Eltwise::Sub => {
                        ga.extend_from_slice(gp);
                        for (acc, &gv) in gb_plane.iter_mut().zip(gp) {
                            *acc = if mode == Eltwise::Add { *acc + gv } else { *acc - gv };
                        }
                    }
                    Eltwise::Mul => {
                        ga.extend(gp.iter().zip(map).map(|(&gv, &m)| gv * m));
                        for ((acc, &gv), &x) in gb_plane.iter_mut().zip(gp).zip(ap) {
                            *acc = *acc + gv * x;
                        }
                    }
                }
            }
        }
        Ok(vec![
            (a, Tensor::new(av.shape().to_vec(), ga)?),
            (b, Tensor::new(bv.shape().to_vec(), gb)?),
        ])
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `v` when the loss does not
    /// depend on it.
    pub fn wrt(&self, graph: &Graph<'_, T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[2, 3], |i| i as f64), true);
        let m = g.mean(x).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0 / 6.0));
    }

    #[test]
    fn sigmoid_mean_gradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 1, 2, 2]), true);
        let s = g.sigmoid(x).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.5));
        let m = g.mean(s).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.25 / 4.0));
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(vec![2], vec![-3.0, 3.0]).unwrap(), false);
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 3.0]);
    }

    #[test]
    fn non_scalar_seed_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[3]), true);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::ones(&[2]), true);
        let unused = g.input(Tensor::ones(&[3]), true);
        let m = g.sum(x).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(&g, unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_broadcast_multiply() {
        let mut g = Graph::<f64>::new();
        let feat = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64 + 1.0);
        let map = Tensor::new(vec![1, 1, 2, 2], vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        let a = g.input(feat.clone(), true);
        let b = g.input(map.clone(), true);
        let y = g.mul(a, b).unwrap();
        for c in 0..2 {
            for p in 0..4 {
                assert_eq!(g.value(y).data()[c * 4 + p], feat.data()[c * 4 + p] * map.data()[p]);
            }
        }
        let ones = g.constant(Tensor::ones(&[1, 2, 2, 2]));
        assert_eq!(g.mul(a, ones).map(|v| g.value(v).clone()).unwrap(), feat);
        let bad = g.input(Tensor::ones(&[1, 3, 2, 2]), false);
        assert!(g.mul(a, bad).is_err());
    }

    #[test]
    fn bce_known_values() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::new(vec![2], vec![0.9, 0.2]).unwrap(), true);
        let y = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let l = g.bce(p, y).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((g.value(l).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.164252).abs() < 1e-6);

        let half = g.input(Tensor::full(&[4], 0.5), false);
        let yy = g.constant(Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let l = g.bce(half, yy).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let perfect = g.input(Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]).unwrap(), false);
        let l = g.bce(perfect, yy).unwrap();
        assert!(g.value(l).data()[0] <= 1.2e-7);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[2], f32::MAX), false);
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
