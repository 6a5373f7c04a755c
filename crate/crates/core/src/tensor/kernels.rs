//! Forward and backward kernels over raw tensors. Nothing here records
//! graph state; [`crate::autograd`] wires these into differentiable ops.

use super::{ConvSpec, Element, Tensor};
use crate::error::{config_err, shape_err, Result};
use crate::par;

const GEMM_COL_BLOCK: usize = 1024;

#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
// SAFETY: every parallel writer receives a disjoint column block of C.
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

impl<T> SendPtr<T> {
    fn get(self) -> *mut T {
        self.0
    }
}

/// `C (m×n) = op(A)·op(B) (+ C)`, all row-major. `A` is stored `k×m` when
/// `a_t`; `B` is stored `n×k` when `b_t`. Large products are split into
/// fixed-width column blocks so the result does not depend on thread count.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|x| *x = T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let blocks = n.div_ceil(GEMM_COL_BLOCK);
    let cptr = SendPtr(c.as_mut_ptr());
    let run = |blk: usize| {
        let j0 = blk * GEMM_COL_BLOCK;
        let width = GEMM_COL_BLOCK.min(n - j0);
        let b_off = if b_t { j0 * k } else { j0 };
        // SAFETY: bounds asserted above; blocks write disjoint columns of C.
        unsafe {
            T::gemm_raw(
                m,
                k,
                width,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr().add(b_off),
                rsb,
                csb,
                cptr.get().add(j0),
                n as isize,
                accumulate,
            );
        }
    };
    if blocks == 1 {
        run(0);
    } else {
        par::map_indices(blocks, run);
    }
}

fn check_conv_operands<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return Err(config_err!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        ));
    }
    if w.shape() != spec.weight_shape() {
        return Err(config_err!(
            "conv weight shape {:?} does not match {:?}",
            w.shape(),
            spec.weight_shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(config_err!(
                "conv bias shape {:?} does not match [{}]",
                b.shape(),
                spec.out_channels
            ));
        }
    }
    let (ho, wo) = spec.output_size(h, wd)?;
    Ok((n, h, wd, ho, wo))
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == (1, 1) && spec.stride == (1, 1) && spec.padding == (0, 0)
}

/// Unfolds one `C×H×W` image into a `(C·kh·kw) × (Ho·Wo)` patch matrix.
fn im2col<T: Element>(img: &[T], h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let (kh, kw) = spec.kernel;
    let rows = spec.in_channels * kh * kw;
    let plane_out = ho * wo;
    let mut col = vec![T::zero(); rows * plane_out];
    par::for_each_chunk_mut(&mut col, plane_out, |row, dst| {
        let ch = row / (kh * kw);
        let ki = (row / kw) % kh;
        let kj = row % kw;
        let src = &img[ch * h * w..(ch + 1) * h * w];
        for oy in 0..ho {
            let iy = (oy * spec.stride.0 + ki * spec.dilation.0) as isize - spec.padding.0 as isize;
            let out_row = &mut dst[oy * wo..(oy + 1) * wo];
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
            for (ox, o) in out_row.iter_mut().enumerate() {
                let ix = (ox * spec.stride.1 + kj * spec.dilation.1) as isize - spec.padding.1 as isize;
                if ix >= 0 && ix < w as isize {
                    *o = src_row[ix as usize];
                }
            }
        }
    });
    col
}

/// Folds a patch-matrix gradient back onto a `C×H×W` image gradient.
fn col2im<T: Element>(col: &[T], h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, out: &mut [T]) {
    let (kh, kw) = spec.kernel;
    let plane_out = ho * wo;
    par::for_each_chunk_mut(out, h * w, |ch, dst| {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &col[row * plane_out..(row + 1) * plane_out];
                for oy in 0..ho {
                    let iy = (oy * spec.stride.0 + ki * spec.dilation.0) as isize
                        - spec.padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride.1 + kj * spec.dilation.1) as isize
                            - spec.padding.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] =
                                dst[iy as usize * w + ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    });
}

/// Zero-padded cross-correlation.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, h, wd, ho, wo) = check_conv_operands(x, w, bias, spec)?;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let k = ci * spec.kernel.0 * spec.kernel.1;
    let plane_out = ho * wo;
    let mut out = vec![T::zero(); n * co * plane_out];
    for b in 0..n {
        let img = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let dst = &mut out[b * co * plane_out..(b + 1) * co * plane_out];
        if is_pointwise(spec) {
            gemm(co, k, plane_out, w.data(), false, img, false, dst, false);
        } else {
            let col = im2col(img, h, wd, spec, ho, wo);
            gemm(co, k, plane_out, w.data(), false, &col, false, dst, false);
        }
        if let Some(bias) = bias {
            for (c, plane) in dst.chunks_mut(plane_out).enumerate() {
                let bv = bias.data()[c];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Gradients of [`conv2d`] w.r.t. input and weight (each only when asked)
/// plus the bias gradient.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_weight: bool,
) -> Result<ConvGrads<T>> {
    let (n, h, wd, ho, wo) = check_conv_operands(x, w, None, spec)?;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, ho, wo] {
        return Err(shape_err!("conv grad shape {:?}", grad_out.shape()));
    }
    let k = ci * spec.kernel.0 * spec.kernel.1;
    let plane_out = ho * wo;
    let mut dx = want_input.then(|| vec![T::zero(); x.numel()]);
    let mut dw = want_weight.then(|| vec![T::zero(); w.numel()]);
    let mut db = vec![T::zero(); co];
    for b in 0..n {
        let g = &grad_out.data()[b * co * plane_out..(b + 1) * co * plane_out];
        for (c, plane) in g.chunks(plane_out).enumerate() {
            db[c] = db[c] + plane.iter().copied().fold(T::zero(), |a, v| a + v);
        }
        let img = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let pointwise = is_pointwise(spec);
        if let Some(dw) = dw.as_mut() {
            // dW (Co×K) += G (Co×P) · colᵀ (P×K)
            if pointwise {
                gemm(co, plane_out, k, g, false, img, true, dw, true);
            } else {
                let col = im2col(img, h, wd, spec, ho, wo);
                gemm(co, plane_out, k, g, false, &col, true, dw, true);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[b * ci * h * wd..(b + 1) * ci * h * wd];
            // dcol (K×P) = Wᵀ (K×Co) · G (Co×P)
            if pointwise {
                gemm(k, co, plane_out, w.data(), true, g, false, dst, false);
            } else {
                let mut dcol = vec![T::zero(); k * plane_out];
                gemm(k, co, plane_out, w.data(), true, g, false, &mut dcol, false);
                col2im(&dcol, h, wd, spec, ho, wo, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        weight: dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
        bias: Tensor::new(vec![co], db)?,
    })
}

/// 2×2 stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat in-plane index of the winning input (first maximum in
/// row-major order on ties).
pub fn max_pool2x2<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(config_err!("max-pool needs even extents, got {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = n * c;
    let results = par::map_indices(planes, |p| {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let mut vals = Vec::with_capacity(ho * wo);
        let mut idx = Vec::with_capacity(ho * wo);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                vals.push(src[best]);
                idx.push(best as u32);
            }
        }
        (vals, idx)
    });
    let mut data = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for (v, i) in results {
        data.extend(v);
        argmax.extend(i);
    }
    Ok((Tensor::new(vec![n, c, ho, wo], data)?, argmax))
}

pub fn max_pool2x2_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err!("max-pool input must be 4-D")),
    };
    let plane_out = (h / 2) * (w / 2);
    let mut dx = vec![T::zero(); n * c * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |p, dst| {
        let g = &grad_out.data()[p * plane_out..(p + 1) * plane_out];
        let a = &argmax[p * plane_out..(p + 1) * plane_out];
        for (gv, &ai) in g.iter().zip(a) {
            dst[ai as usize] = dst[ai as usize] + *gv;
        }
    });
    Tensor::new(input_shape.to_vec(), dx)
}

/// Source taps for one output coordinate along an axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-center sampling: `src = (dst + 0.5)·(in/out) − 0.5`, clamped
/// to `[0, in − 1]`.
fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: s - lo as f64,
            }
        })
        .collect()
}

pub fn upsample_bilinear<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(shape_err!("bilinear resize {h}x{w} -> {out_h}x{out_w}"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    par::for_each_chunk_mut(&mut out, out_h * out_w, |p, dst| {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::from_f(ty.frac);
            let gy = T::one() - fy;
            let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
            let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::from_f(tx.frac);
                let gx = T::one() - fx;
                let top = gx * r0[tx.lo] + fx * r0[tx.hi];
                let bottom = gx * r1[tx.lo] + fx * r1[tx.hi];
                dst[oy * out_w + ox] = gy * top + fy * bottom;
            }
        }
    });
    Tensor::new(vec![n, c, out_h, out_w], out)
}

pub fn upsample_bilinear_backward<T: Element>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(shape_err!("bilinear input must be 4-D")),
    };
    let (_, _, out_h, out_w) = grad_out.dims4()?;
    if (out_h, out_w) == (h, w) {
        return Ok(grad_out.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut dx = vec![T::zero(); n * c * h * w];
    par::for_each_chunk_mut(&mut dx, h * w, |p, dst| {
        let g = &grad_out.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, ty) in ty.iter().enumerate() {
            let fy = T::from_f(ty.frac);
            let gy = T::one() - fy;
            for (ox, tx) in tx.iter().enumerate() {
                let fx = T::from_f(tx.frac);
                let gx = T::one() - fx;
                let gv = g[oy * out_w + ox];
                let top = gy * gv;
                let bottom = fy * gv;
                let (a, b) = (ty.lo * w, ty.hi * w);
                dst[a + tx.lo] = dst[a + tx.lo] + gx * top;
                dst[a + tx.hi] = dst[a + tx.hi] + fx * top;
                dst[b + tx.lo] = dst[b + tx.lo] + gx * bottom;
                dst[b + tx.hi] = dst[b + tx.hi] + fx * bottom;
            }
        }
    });
    Tensor::new(input_shape.to_vec(), dx)
}
