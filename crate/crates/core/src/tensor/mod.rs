//! Dense tensors, convolution geometry, and the raw kernels the autodiff
//! graph is built on.

mod element;
pub mod kernels;

use std::fmt;

pub use element::Element;

use crate::error::{config_err, shape_err, Result};

/// Dense row-major N-D array. Image-like data uses `(N, C, H, W)` order.
///
/// Gradient bookkeeping lives on the [`Graph`](crate::autograd::Graph) node
/// that wraps a tensor, not on the tensor itself.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// `(N, C, H, W)` extents, or an error for non-4D tensors.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!("expected a 4-D tensor, got shape {:?}", self.shape)),
        }
    }

    /// Spatial extent `(H, W)` of a 4-D tensor.
    pub fn spatial(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.dims4()?;
        Ok((h, w))
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().fold(T::zero(), |a, b| a + b)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).unwrap_or_else(T::one)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    /// Channels `start..start + len` of a 4-D tensor, as a new tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if start + len > c || len == 0 {
            return Err(shape_err!("channel slice {start}..{} out of 0..{c}", start + len));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Self {
            shape: vec![n, len, h, w],
            data,
        })
    }

    /// Channel-wise concatenation of 4-D tensors sharing `N`, `H`, `W`.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let (n, _, h, w) = first.dims4()?;
        let mut total = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err!(
                    "concat mismatch: {:?} vs {:?}",
                    first.shape,
                    p.shape
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                let base = b * pc * plane;
                data.extend_from_slice(&p.data[base..base + pc * plane]);
            }
        }
        Ok(Self {
            shape: vec![n, total, h, w],
            data,
        })
    }
}

/// Geometry of one 2-D convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square `k×k` kernel, stride 1, biased, padded to preserve spatial size.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            padding: (k / 2, k / 2),
            dilation: (1, 1),
            has_bias: true,
        }
    }

    /// 3×3 kernel at dilation `rate`, padded by `rate` so the output keeps
    /// the input's spatial size.
    pub fn dilated3x3(in_channels: usize, out_channels: usize, rate: usize) -> Self {
        Self {
            padding: (rate, rate),
            dilation: (rate, rate),
            ..Self::same(in_channels, out_channels, 3)
        }
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    /// `k²·Ci·Co (+ Co)`.
    pub fn param_count(&self) -> u64 {
        let w = (self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels) as u64;
        w + if self.has_bias {
            self.out_channels as u64
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
        ];
        if extents.contains(&0) {
            return Err(config_err!("conv extents must be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// `floor((H + 2p − d·(k−1) − 1)/s) + 1` per axis; errors when < 1.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let axis = |len: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            (padded >= span).then(|| (padded - span) / s + 1)
        };
        match (
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0),
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(config_err!(
                "conv {self:?} yields a non-positive output for a {h}x{w} input"
            )),
        }
    }

    /// Multiply-accumulates for one image of the given input size.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (ho, wo) = self.output_size(h, w)?;
        Ok((self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels) as u64
            * (ho * wo) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_numel() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn concat_then_slice_roundtrip() {
        let a = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 5, 2, 2], |i| -(i as f32));
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 8, 2, 2]);
        assert_eq!(c.slice_channels(0, 3).unwrap(), a);
        assert_eq!(c.slice_channels(3, 5).unwrap(), b);
        let d = Tensor::<f32>::zeros(&[2, 1, 3, 2]);
        assert!(Tensor::concat_channels(&[&a, &d]).is_err());
    }

    #[test]
    fn output_size_formula() {
        let s = ConvSpec::same(3, 8, 3);
        assert_eq!(s.output_size(7, 5).unwrap(), (7, 5));
        let d = ConvSpec::dilated3x3(3, 8, 7);
        assert_eq!(d.output_size(2, 2).unwrap(), (2, 2));
        let strided = ConvSpec::same(1, 1, 3).with_stride(2, 2);
        assert_eq!(strided.output_size(7, 8).unwrap(), (4, 4));
        let valid = ConvSpec::same(1, 1, 5).with_padding(0, 0);
        assert!(valid.output_size(3, 3).is_err());
        let mut zero = ConvSpec::same(1, 1, 3);
        zero.stride = (0, 1);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn vgg_block_param_count() {
        assert_eq!(ConvSpec::same(3, 64, 3).param_count(), 1792);
        assert_eq!(ConvSpec::same(512, 512, 3).param_count(), 2_359_808);
        assert_eq!(ConvSpec::same(64, 32, 1).without_bias().param_count(), 2048);
    }
}
