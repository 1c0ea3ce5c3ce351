//! Forward and backward kernels. The [`Tensor`]-level functions here are the
//! pure forward ops; the `*_backward` kernels are driven by the tape.

use super::tensor::{Scalar, Tensor};
use super::KERNEL_SIZE;
use crate::error::{Error, Result};

/// Probabilities fed to [`bce_loss`] are clamped to `[eps, 1 - eps]`.
pub const BCE_EPSILON: f64 = 1e-7;

/// Output spatial extent of a 3×3 convolution, or `None` if it collapses.
pub fn conv_output_extent(extent: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if stride == 0 || padded < KERNEL_SIZE {
        return None;
    }
    Some((padded - KERNEL_SIZE) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn infer(input: &[usize], kernels: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let &[height, width, in_channels] = input else {
            return Err(Error::InvalidShape(format!(
                "conv2d input must be H×W×C, got {input:?}"
            )));
        };
        let &[kh, kw, k_in, out_channels] = kernels else {
            return Err(Error::InvalidShape(format!(
                "conv2d kernels must be 3×3×C_in×C_out, got {kernels:?}"
            )));
        };
        if kh != KERNEL_SIZE || kw != KERNEL_SIZE {
            return Err(Error::InvalidShape(format!(
                "conv2d kernels must be 3×3, got {kh}×{kw}"
            )));
        }
        if k_in != in_channels {
            return Err(Error::InvalidShape(format!(
                "input has {in_channels} channels, kernels expect {k_in}"
            )));
        }
        if bias != [out_channels] {
            return Err(Error::InvalidShape(format!(
                "conv2d bias must be [{out_channels}], got {bias:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("conv2d stride must be positive".into()));
        }
        let out_height = conv_output_extent(height, stride, padding);
        let out_width = conv_output_extent(width, stride, padding);
        let (Some(out_height), Some(out_width)) = (out_height, out_width) else {
            return Err(Error::InvalidShape(format!(
                "{height}×{width} input with padding {padding} is smaller than the kernel"
            )));
        };
        Ok(Self {
            height,
            width,
            in_channels,
            out_channels,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_height, self.out_width, self.out_channels]
    }

    /// Input row/column for output index `o` and kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.padding).filter(|&i| i < extent)
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * *x;
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail: T = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .fold(T::zero(), |s, (x, y)| s + *x * *y);
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    acc.iter().fold(tail, |s, v| s + *v)
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeometry, input: &[T], kernels: &[T], bias: &[T], out: &mut [T]) {
    let (cin, cout) = (g.in_channels, g.out_channels);
    for oy in 0..g.out_height {
        for ox in 0..g.out_width {
            let o = &mut out[(oy * g.out_width + ox) * cout..][..cout];
            o.copy_from_slice(bias);
            for ky in 0..KERNEL_SIZE {
                let Some(iy) = g.source(oy, ky, g.height) else {
                    continue;
                };
                for kx in 0..KERNEL_SIZE {
                    let Some(ix) = g.source(ox, kx, g.width) else {
                        continue;
                    };
                    let x = &input[(iy * g.width + ix) * cin..][..cin];
                    let k = &kernels[(ky * KERNEL_SIZE + kx) * cin * cout..][..cin * cout];
                    for (ci, &xv) in x.iter().enumerate() {
                        axpy(xv, &k[ci * cout..][..cout], o);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    kernels: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_kernels: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let (cin, cout) = (g.in_channels, g.out_channels);
    if let Some(gb) = grad_bias {
        for go in grad_out.chunks_exact(cout) {
            gb.iter_mut().zip(go).for_each(|(b, g)| *b += *g);
        }
    }
    if grad_input.is_none() && grad_kernels.is_none() {
        return;
    }
    for oy in 0..g.out_height {
        for ox in 0..g.out_width {
            let go = &grad_out[(oy * g.out_width + ox) * cout..][..cout];
            for ky in 0..KERNEL_SIZE {
                let Some(iy) = g.source(oy, ky, g.height) else {
                    continue;
                };
                for kx in 0..KERNEL_SIZE {
                    let Some(ix) = g.source(ox, kx, g.width) else {
                        continue;
                    };
                    let tap = (ky * KERNEL_SIZE + kx) * cin * cout;
                    let base = (iy * g.width + ix) * cin;
                    if let Some(gk) = grad_kernels.as_deref_mut() {
                        let x = &input[base..][..cin];
                        let gk = &mut gk[tap..][..cin * cout];
                        for (ci, &xv) in x.iter().enumerate() {
                            axpy(xv, go, &mut gk[ci * cout..][..cout]);
                        }
                    }
                    if let Some(gx) = grad_input.as_deref_mut() {
                        let k = &kernels[tap..][..cin * cout];
                        let gx = &mut gx[base..][..cin];
                        for (ci, gxv) in gx.iter_mut().enumerate() {
                            *gxv += dot(&k[ci * cout..][..cout], go);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn dense_shapes(input: &[usize], weights: &[usize], bias: &[usize]) -> Result<(usize, usize)> {
    let &[n, m] = weights else {
        return Err(Error::InvalidShape(format!(
            "dense weights must be N×M, got {weights:?}"
        )));
    };
    let len: usize = input.iter().product();
    if len != n {
        return Err(Error::InvalidShape(format!(
            "dense input has {len} values, weights expect {n}"
        )));
    }
    if bias != [m] {
        return Err(Error::InvalidShape(format!("dense bias must be [{m}], got {bias:?}")));
    }
    Ok((n, m))
}

pub(crate) fn dense_forward<T: Scalar>(input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let m = bias.len();
    out.copy_from_slice(bias);
    for (&x, row) in input.iter().zip(weights.chunks_exact(m)) {
        axpy(x, row, out);
    }
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weights: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let m = grad_out.len();
    if let Some(gb) = grad_bias {
        gb.iter_mut().zip(grad_out).for_each(|(b, g)| *b += *g);
    }
    if let Some(gw) = grad_weights {
        for (&x, row) in input.iter().zip(gw.chunks_exact_mut(m)) {
            axpy(x, grad_out, row);
        }
    }
    if let Some(gx) = grad_input {
        for (gxv, row) in gx.iter_mut().zip(weights.chunks_exact(m)) {
            *gxv += dot(row, grad_out);
        }
    }
}

#[inline]
pub(crate) fn elu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_clamp<T: Scalar>(p: T) -> T {
    let eps = T::from_f64_lossy(BCE_EPSILON);
    p.max(eps).min(T::one() - eps)
}

pub(crate) fn check_label<T: Scalar>(target: T) -> Result<()> {
    if target == T::zero() || target == T::one() {
        Ok(())
    } else {
        Err(Error::InvalidLabel(target.to_f64_lossy()))
    }
}

pub(crate) fn bce_value<T: Scalar>(p: T, target: T) -> T {
    let p = bce_clamp(p);
    -(target * p.ln() + (T::one() - target) * (T::one() - p).ln())
}

/// Derivative of the clamped BCE with respect to the unclamped probability.
pub(crate) fn bce_derivative<T: Scalar>(p: T, target: T) -> T {
    let eps = T::from_f64_lossy(BCE_EPSILON);
    if p < eps || p > T::one() - eps {
        return T::zero();
    }
    -(target / p) + (T::one() - target) / (T::one() - p)
}

/// Cross-correlation of an `H×W×C_in` input with `3×3×C_in×C_out` kernels.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::infer(input.shape(), kernels.shape(), bias.shape(), stride, padding)?;
    let shape = g.output_shape();
    let mut out = vec![T::zero(); shape.iter().product()];
    conv2d_forward(&g, input.values(), kernels.values(), bias.values(), &mut out);
    Tensor::new(shape, out)
}

/// Affine map `x·W + b` for `W` of shape `N×M`; the input is flattened.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, m) = dense_shapes(input.shape(), weights.shape(), bias.shape())?;
    let mut out = vec![T::zero(); m];
    dense_forward(input.values(), weights.values(), bias.values(), &mut out);
    Tensor::new(vec![m], out)
}

pub fn elu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let values = x.values().iter().map(|&v| elu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), values).expect("shape preserved")
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let values = x.values().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), values).expect("shape preserved")
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidShape(format!(
            "mse between {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(mse_value(pred.values(), target.values()))
}

pub(crate) fn mse_value<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let sum = pred
        .iter()
        .zip(target)
        .fold(T::zero(), |s, (p, t)| s + (*p - *t) * (*p - *t));
    sum / T::from_usize(pred.len()).expect("length fits")
}

/// Binary cross entropy of a probability against a 0/1 target.
pub fn bce_loss<T: Scalar>(pred: T, target: T) -> Result<T> {
    check_label(target)?;
    Ok(bce_value(pred, target))
}
