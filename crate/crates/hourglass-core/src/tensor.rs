//! Dense row-major tensors with explicit per-operation adjoints.
//!
//! Values are stored as 32-bit floats in the shipped models; every operation
//! is generic over [`Scalar`] so the same forward code can be re-run in
//! 64-bit shadow mode by [`grad_check`], which makes central finite
//! differences trustworthy at 1e-3 relative tolerance.
//!
//! There is no taped autodiff: each operation exposes a matching
//! `*_backward` function (or method) that maps the output gradient to input
//! and parameter gradients. The operation set is small and fixed, and the
//! explicit adjoints are individually verified against finite differences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::{Float, NumCast};
use rand_core::RngCore;

use crate::error::Error;
use crate::Result;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Element type of a [`Tensor`]: `f32` in production, `f64` in gradient
/// checks.
pub trait Scalar: Float + Default + core::fmt::Debug + core::fmt::Display + 'static {
    fn from_f64(x: f64) -> Self {
        NumCast::from(x).expect("float-to-float cast is total")
    }

    /// Widening conversion; named to avoid clashing with
    /// `ToPrimitive::to_f64`.
    fn as_f64(self) -> f64 {
        NumCast::from(self).expect("float-to-float cast is total")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major tensor with an optional gradient buffer of the same
/// shape.
///
/// Tensors are immutable after construction except for gradient
/// accumulation and optimizer updates on parameters; inference over a
/// shared tensor from several threads is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); len], grad: None }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data, grad: None })
    }

    /// Tensor with entries drawn uniformly from `(lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut dyn RngCore) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| uniform_in(rng, lo, hi)).collect();
        Tensor { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Number of rows when the tensor is viewed as `rows × last-dim`.
    pub fn leading_len(&self) -> usize {
        if self.shape.is_empty() {
            0
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Size of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    /// Row `i` of the `rows × last-dim` view.
    pub fn row(&self, i: usize) -> &[T] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let d = self.last_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone(), grad: None })
    }

    /// 2-D transpose.
    pub fn transposed(&self) -> Self {
        assert_eq!(self.rank(), 2, "transpose requires a 2-D tensor");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise add of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data, grad: None })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ---- gradient buffer ----------------------------------------------

    pub fn enable_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, creating it if absent.
    pub fn accumulate_grad(&mut self, delta: &Tensor<T>) {
        assert_eq!(self.shape, delta.shape, "gradient shape must match value shape");
        self.enable_grad();
        let g = self.grad.as_mut().unwrap();
        for (gi, di) in g.iter_mut().zip(&delta.data) {
            *gi = *gi + *di;
        }
    }

    /// One plain gradient-descent step: `value -= lr * grad`.
    pub fn sgd_step(&mut self, lr: T) {
        if let Some(g) = &self.grad {
            for (v, gi) in self.data.iter_mut().zip(g.iter()) {
                *v = *v - lr * *gi;
            }
        }
    }
}

/// Uniform sample in `(lo, hi)` built from one `u32` draw; portable and
/// identical across platforms for a given RNG stream.
pub fn uniform_in<T: Scalar>(rng: &mut dyn RngCore, lo: f64, hi: f64) -> T {
    let u = (rng.next_u32() as f64 + 0.5) / 4_294_967_296.0;
    T::from_f64(lo + (hi - lo) * u)
}

/// Extracts plane `idx` of the middle dimension from a rank-3 tensor:
/// `A×B×C → A×C`.
pub fn slice_dim1<T: Scalar>(x: &Tensor<T>, idx: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 3);
    let (a, b, c) = (x.shape[0], x.shape[1], x.shape[2]);
    debug_assert!(idx < b);
    let mut out = Tensor::zeros(&[a, c]);
    for i in 0..a {
        out.data[i * c..(i + 1) * c].copy_from_slice(&x.data[(i * b + idx) * c..(i * b + idx + 1) * c]);
    }
    out
}

/// Writes `slab` (`A×C`) back as plane `idx` of the middle dimension of a
/// rank-3 tensor.
pub fn set_slice_dim1<T: Scalar>(x: &mut Tensor<T>, idx: usize, slab: &Tensor<T>) {
    assert_eq!(x.rank(), 3);
    let (a, b, c) = (x.shape[0], x.shape[1], x.shape[2]);
    debug_assert_eq!(slab.shape(), &[a, c]);
    for i in 0..a {
        x.data[(i * b + idx) * c..(i * b + idx + 1) * c].copy_from_slice(&slab.data[i * c..(i + 1) * c]);
    }
}

/// Adds `slab` (`A×C`) into plane `idx` of the middle dimension.
pub fn add_slice_dim1<T: Scalar>(x: &mut Tensor<T>, idx: usize, slab: &Tensor<T>) {
    assert_eq!(x.rank(), 3);
    let (a, b, c) = (x.shape[0], x.shape[1], x.shape[2]);
    debug_assert_eq!(slab.shape(), &[a, c]);
    for i in 0..a {
        let dst = &mut x.data[(i * b + idx) * c..(i * b + idx + 1) * c];
        let src = &slab.data[i * c..(i + 1) * c];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + *s;
        }
    }
}

/// Column block `[start, start+width)` of a 2-D tensor as a new tensor.
pub fn col_slice<T: Scalar>(x: &Tensor<T>, start: usize, width: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 2);
    let (rows, cols) = (x.shape[0], x.shape[1]);
    debug_assert!(start + width <= cols);
    let mut out = Tensor::zeros(&[rows, width]);
    for i in 0..rows {
        out.data[i * width..(i + 1) * width]
            .copy_from_slice(&x.data[i * cols + start..i * cols + start + width]);
    }
    out
}

/// Writes a `rows×width` block into columns `[start, start+width)`.
pub fn set_col_slice<T: Scalar>(x: &mut Tensor<T>, start: usize, block: &Tensor<T>) {
    assert_eq!(x.rank(), 2);
    let (rows, cols) = (x.shape[0], x.shape[1]);
    let width = block.shape[1];
    debug_assert_eq!(block.shape[0], rows);
    debug_assert!(start + width <= cols);
    for i in 0..rows {
        x.data[i * cols + start..i * cols + start + width]
            .copy_from_slice(&block.data[i * width..(i + 1) * width]);
    }
}

// ---- matmul -------------------------------------------------------------

/// Matrix product of a `M×K` and a `K×N` tensor.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul requires 2-D operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`matmul`]: gradients with respect to both operands.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    debug_assert_eq!(grad_out.shape(), &[m, n]);
    // dA = g · Bᵀ
    let mut grad_a = Tensor::zeros(&[m, k]);
    for i in 0..m {
        for p in 0..k {
            let mut acc = T::zero();
            let grow = &grad_out.data[i * n..(i + 1) * n];
            let brow = &b.data[p * n..(p + 1) * n];
            for j in 0..n {
                acc = acc + grow[j] * brow[j];
            }
            grad_a.data[i * k + p] = acc;
        }
    }
    // dB = Aᵀ · g
    let mut grad_b = Tensor::zeros(&[k, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.data[i * k + p];
            let grow = &grad_out.data[i * n..(i + 1) * n];
            let brow = &mut grad_b.data[p * n..(p + 1) * n];
            for j in 0..n {
                brow[j] = brow[j] + av * grow[j];
            }
        }
    }
    (grad_a, grad_b)
}

// ---- softmax ------------------------------------------------------------

/// Row-wise softmax over the last dimension, stabilized by row-max
/// subtraction. NaN inputs propagate to NaN outputs.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.last_dim();
    assert!(d >= 1, "softmax requires at least one column");
    let mut out = x.clone();
    out.grad = None;
    for i in 0..x.leading_len() {
        let row = out.row_mut(i);
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Adjoint of [`softmax_rows`] given the forward output `y`.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(y.shape(), grad_out.shape());
    let mut grad = Tensor::zeros(y.shape());
    for i in 0..y.leading_len() {
        let yr = y.row(i);
        let gr = grad_out.row(i);
        let mut dot = T::zero();
        for (yv, gv) in yr.iter().zip(gr) {
            dot = dot + *yv * *gv;
        }
        let out = grad.row_mut(i);
        for j in 0..yr.len() {
            out[j] = yr[j] * (gr[j] - dot);
        }
    }
    grad
}

// ---- layer norm -----------------------------------------------------------

/// Row-wise layer normalization over the last dimension followed by an
/// affine transform: zero mean, unit variance (epsilon 1e-5), then
/// `gain ⊙ x̂ + shift`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gain.len() != d || shift.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm affine length {} / {} does not match last dim {}",
            gain.len(),
            shift.len(),
            d
        )));
    }
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.leading_len() {
        let row = x.row(i);
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let inv_std = (var + eps).sqrt().recip();
        let orow = out.row_mut(i);
        for j in 0..d {
            orow[j] = gain.data[j] * ((row[j] - mean) * inv_std) + shift.data[j];
        }
    }
    Ok(out)
}

/// Adjoint of [`layer_norm`]; returns `(grad_x, grad_gain, grad_shift)`.
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = x.last_dim();
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_gain = Tensor::zeros(&[d]);
    let mut grad_shift = Tensor::zeros(&[d]);
    let mut normed = vec![T::zero(); d];
    let mut gh = vec![T::zero(); d];
    for i in 0..x.leading_len() {
        let row = x.row(i);
        let grow = grad_out.row(i);
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let inv_std = (var + eps).sqrt().recip();
        for j in 0..d {
            normed[j] = (row[j] - mean) * inv_std;
            gh[j] = grow[j] * gain.data[j];
            grad_gain.data[j] = grad_gain.data[j] + grow[j] * normed[j];
            grad_shift.data[j] = grad_shift.data[j] + grow[j];
        }
        let mut gh_mean = T::zero();
        let mut ghn_mean = T::zero();
        for j in 0..d {
            gh_mean = gh_mean + gh[j];
            ghn_mean = ghn_mean + gh[j] * normed[j];
        }
        gh_mean = gh_mean * inv_d;
        ghn_mean = ghn_mean * inv_d;
        let orow = grad_x.row_mut(i);
        for j in 0..d {
            orow[j] = (gh[j] - gh_mean - normed[j] * ghn_mean) * inv_std;
        }
    }
    (grad_x, grad_gain, grad_shift)
}

// ---- gelu ---------------------------------------------------------------

const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC_COEF: f64 = 0.044_715;

/// GELU activation (tanh approximation). Smooth everywhere, which keeps
/// finite-difference gradient checks well conditioned.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let c = T::from_f64(GELU_SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC_COEF);
    let half = T::from_f64(0.5);
    let one = T::one();
    let mut out = x.clone();
    out.grad = None;
    for v in out.data.iter_mut() {
        let u = c * (*v + a * *v * *v * *v);
        *v = half * *v * (one + u.tanh());
    }
    out
}

/// Adjoint of [`gelu`] given the forward input `x`.
pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let c = T::from_f64(GELU_SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC_COEF);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let one = T::one();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let v = x.data[i];
        let u = c * (v + a * v * v * v);
        let t = u.tanh();
        let sech2 = one - t * t;
        let du = c * (one + three * a * v * v);
        let dy = half * (one + t) + half * v * sech2 * du;
        grad.data[i] = grad_out.data[i] * dy;
    }
    grad
}

// ---- linear layer ---------------------------------------------------------

/// Affine projection `y = x·W + b` with `W: d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    /// Xavier-uniform weight, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut dyn RngCore) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        LinearLayer {
            weight: Tensor::uniform(&[d_in, d_out], -bound, bound, rng),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        LinearLayer { weight: Tensor::zeros(&[d_in, d_out]), bias: Tensor::zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies the projection to the last dimension; leading dimensions are
    /// carried through unchanged.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d_in = self.d_in();
        if x.last_dim() != d_in {
            return Err(Error::Shape(format!(
                "linear layer expects last dim {}, got {:?}",
                d_in,
                x.shape()
            )));
        }
        let rows = x.leading_len();
        let flat = x.reshaped(&[rows, d_in])?;
        let mut out = matmul(&flat, &self.weight)?;
        let d_out = self.d_out();
        for i in 0..rows {
            let row = out.row_mut(i);
            for j in 0..d_out {
                row[j] = row[j] + self.bias.data()[j];
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        out.reshaped(&shape)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let rows = x.leading_len();
        let flat_x = x.reshaped(&[rows, self.d_in()]).expect("cached input reshapes");
        let flat_g = grad_out.reshaped(&[rows, self.d_out()]).expect("gradient reshapes");
        let (grad_x, grad_w) = matmul_backward(&flat_x, &self.weight, &flat_g);
        let mut grad_b = Tensor::zeros(&[self.d_out()]);
        for i in 0..rows {
            let row = flat_g.row(i);
            for j in 0..row.len() {
                grad_b.data_mut()[j] = grad_b.data_mut()[j] + row[j];
            }
        }
        self.weight.accumulate_grad(&grad_w);
        self.bias.accumulate_grad(&grad_b);
        grad_x.reshaped(x.shape()).expect("input gradient reshapes")
    }

    pub fn param_count(&self) -> u64 {
        (self.weight.len() + self.bias.len()) as u64
    }

    pub fn cast<U: Scalar>(&self) -> LinearLayer<U> {
        LinearLayer { weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

// ---- gradient checking ------------------------------------------------------

/// Compares analytic gradients against 64-bit central finite differences.
///
/// `loss` must be a deterministic scalar function of `params`; `analytic`
/// holds the gradients under test, one tensor per parameter. Returns the
/// maximum of `|analytic − fd| / max(1, |fd|)` over all parameter elements.
pub fn grad_check<F>(
    mut loss: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel = 0.0f64;
    for p in 0..work.len() {
        assert_eq!(params[p].shape(), analytic[p].shape());
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = loss(&work);
            work[p].data_mut()[i] = orig - step;
            let down = loss(&work);
            work[p].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(String::from(
                    "loss is non-finite during finite-difference probe",
                )));
            }
            let fd = (up - down) / (2.0 * step);
            let rel = (analytic[p].data()[i] - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
