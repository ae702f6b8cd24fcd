//! Forward and backward kernels on plain tensors.
//!
//! Both the eager executor and the tape call into these functions, so a
//! forward value never depends on whether it was recorded.

use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(padding: usize, stride: usize) -> Self {
        Self { padding, stride }
    }

    /// Output side of a convolution over `size` inputs with kernel `k`.
    pub fn conv_out(&self, size: usize, k: usize) -> Option<usize> {
        if self.stride == 0 || size + 2 * self.padding < k {
            return None;
        }
        Some((size + 2 * self.padding - k) / self.stride + 1)
    }

    /// Output side of the transposed convolution (no output padding).
    pub fn transpose_out(&self, size: usize, k: usize) -> Option<usize> {
        if self.stride == 0 || size == 0 {
            return None;
        }
        ((size - 1) * self.stride + k).checked_sub(2 * self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Scale(f32),
    Sigmoid,
    Exp,
    Log,
    Square,
    Relu,
    Clamp(f32, f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// `C = A·B + beta·C` with arbitrary element strides, via `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * rsc..i * rsc + n] {
                *v *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

struct Patch {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeometry,
}

impl Patch {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input index feeding output pixel `(oy, ox)` through tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.geom.stride + ky).checked_sub(self.geom.padding)?;
        let x = (ox * self.geom.stride + kx).checked_sub(self.geom.padding)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col(&self, input: &[f32]) -> Vec<f32> {
        let mut cols = vec![0.0; self.rows() * self.cols()];
        let (k, s, p) = (self.k, self.geom.stride, self.geom.padding);
        for c in 0..self.channels {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * self.cols()..(row + 1) * self.cols()];
                    for oy in 0..self.ho {
                        let Some(y) = (oy * s + ky).checked_sub(p).filter(|&y| y < self.h) else {
                            continue;
                        };
                        let src = &plane[y * self.w..(y + 1) * self.w];
                        let drow = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            if let Some(x) = (ox * s + kx).checked_sub(p).filter(|&x| x < self.w) {
                                *d = src[x];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], out: &mut [f32]) {
        let k = self.k;
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * self.cols()..(row + 1) * self.cols()];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                out[(c * self.h + y) * self.w + x] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), AutodiffError> {
    if t.rank() != rank {
        return Err(AutodiffError::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

struct ConvDims {
    out_ch: usize,
    patch: Patch,
}

fn conv_dims(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<ConvDims, AutodiffError> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", weight, 4)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weight.shape();
    if ws[1] != c || ws[2] != ws[3] {
        return Err(AutodiffError::shape(
            "conv2d",
            format!("weights {ws:?} do not fit input {:?}", input.shape()),
        ));
    }
    if bias.shape() != [ws[0]] {
        return Err(AutodiffError::shape(
            "conv2d",
            format!("bias {:?} for {} filters", bias.shape(), ws[0]),
        ));
    }
    let k = ws[2];
    let (ho, wo) = geom
        .conv_out(h, k)
        .zip(geom.conv_out(w, k))
        .ok_or_else(|| AutodiffError::shape("conv2d", format!("{k}x{k} kernel does not fit {h}x{w}")))?;
    Ok(ConvDims {
        out_ch: ws[0],
        patch: Patch {
            channels: c,
            h,
            w,
            k,
            ho,
            wo,
            geom,
        },
    })
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane.max(1)).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums(g: &[f32], channels: usize) -> Tensor {
    let plane = g.len() / channels.max(1);
    Tensor::from_vec(g.chunks(plane.max(1)).map(|c| c.iter().sum()).collect())
}

/// Cross-correlation of `[C,H,W]` with `[O,C,k,k]` plus per-channel bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor, AutodiffError> {
    let ConvDims { out_ch, patch } = conv_dims(input, weight, bias, geom)?;
    let cols = patch.im2col(input.data());
    let n = patch.cols();
    let mut out = vec![0.0; out_ch * n];
    gemm(
        out_ch,
        patch.rows(),
        n,
        weight.data(),
        (patch.rows(), 1),
        &cols,
        (n, 1),
        0.0,
        &mut out,
        n,
    );
    add_channel_bias(&mut out, bias.data(), n);
    Tensor::new(vec![out_ch, patch.ho, patch.wo], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`]; the input gradient is skipped unless requested.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
    need_input: bool,
) -> Result<ConvGrads, AutodiffError> {
    let bias = Tensor::zeros(&[weight.shape()[0]]);
    let ConvDims { out_ch, patch } = conv_dims(input, weight, &bias, geom)?;
    let n = patch.cols();
    let rows = patch.rows();
    let cols = patch.im2col(input.data());
    let mut gw = vec![0.0; out_ch * rows];
    gemm(out_ch, n, rows, grad_out.data(), (n, 1), &cols, (1, n), 0.0, &mut gw, rows);
    let grad_input = need_input.then(|| conv2d_input_grad(&patch, out_ch, weight, grad_out));
    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::new(weight.shape().to_vec(), gw).expect("weight-shaped"),
        bias: channel_sums(grad_out.data(), out_ch),
    })
}

fn conv2d_input_grad(patch: &Patch, out_ch: usize, weight: &Tensor, grad_out: &Tensor) -> Tensor {
    let (rows, n) = (patch.rows(), patch.cols());
    let mut gcols = vec![0.0; rows * n];
    gemm(rows, out_ch, n, weight.data(), (1, rows), grad_out.data(), (n, 1), 0.0, &mut gcols, n);
    let mut gx = vec![0.0; patch.channels * patch.h * patch.w];
    patch.col2im(&gcols, &mut gx);
    Tensor::new(vec![patch.channels, patch.h, patch.w], gx).expect("input-shaped")
}

/// Gradient of [`conv2d`] with respect to its input only.
pub fn conv2d_backward_input(
    input_shape: &[usize],
    weight: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor, AutodiffError> {
    let probe = Tensor::zeros(input_shape);
    let bias = Tensor::zeros(&[weight.shape()[0]]);
    let ConvDims { out_ch, patch } = conv_dims(&probe, weight, &bias, geom)?;
    if grad_out.shape() != [out_ch, patch.ho, patch.wo] {
        return Err(AutodiffError::shape(
            "conv2d_backward_input",
            format!("gradient {:?} vs output {:?}", grad_out.shape(), [out_ch, patch.ho, patch.wo]),
        ));
    }
    Ok(conv2d_input_grad(&patch, out_ch, weight, grad_out))
}

fn transpose_dims(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<(usize, Patch), AutodiffError> {
    expect_rank("conv_transpose2d", input, 3)?;
    expect_rank("conv_transpose2d", weight, 4)?;
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weight.shape();
    if ws[0] != ci || ws[2] != ws[3] || bias.shape() != [ws[1]] {
        return Err(AutodiffError::shape(
            "conv_transpose2d",
            format!(
                "weights {ws:?} / bias {:?} do not fit input {:?}",
                bias.shape(),
                input.shape()
            ),
        ));
    }
    let (co, k) = (ws[1], ws[2]);
    let (ho, wo) = geom
        .transpose_out(h, k)
        .zip(geom.transpose_out(w, k))
        .filter(|&(ho, wo)| geom.conv_out(ho, k) == Some(h) && geom.conv_out(wo, k) == Some(w))
        .ok_or_else(|| {
            AutodiffError::shape("conv_transpose2d", format!("{k}x{k} kernel does not fit {h}x{w}"))
        })?;
    // The patch describes the forward conv from the (larger) output back to the input.
    Ok((
        ci,
        Patch {
            channels: co,
            h: ho,
            w: wo,
            k,
            ho: h,
            wo: w,
            geom,
        },
    ))
}

/// Transposed convolution of `[Ci,H,W]` with `[Ci,Co,k,k]` plus bias `[Co]`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: ConvGeometry,
) -> Result<Tensor, AutodiffError> {
    let (ci, patch) = transpose_dims(input, weight, bias, geom)?;
    let (rows, n) = (patch.rows(), patch.cols());
    let mut cols = vec![0.0; rows * n];
    gemm(rows, ci, n, weight.data(), (1, rows), input.data(), (n, 1), 0.0, &mut cols, n);
    let mut out = vec![0.0; patch.channels * patch.h * patch.w];
    patch.col2im(&cols, &mut out);
    add_channel_bias(&mut out, bias.data(), patch.h * patch.w);
    Tensor::new(vec![patch.channels, patch.h, patch.w], out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
    need_input: bool,
) -> Result<ConvGrads, AutodiffError> {
    let bias = Tensor::zeros(&[weight.shape()[1]]);
    let (ci, patch) = transpose_dims(input, weight, &bias, geom)?;
    let (rows, n) = (patch.rows(), patch.cols());
    let gcols = patch.im2col(grad_out.data());
    let mut gw = vec![0.0; ci * rows];
    gemm(ci, n, rows, input.data(), (n, 1), &gcols, (1, n), 0.0, &mut gw, rows);
    let grad_input = need_input.then(|| {
        let mut gx = vec![0.0; ci * n];
        gemm(ci, rows, n, weight.data(), (rows, 1), &gcols, (n, 1), 0.0, &mut gx, n);
        Tensor::new(input.shape().to_vec(), gx).expect("input-shaped")
    });
    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::new(weight.shape().to_vec(), gw).expect("weight-shaped"),
        bias: channel_sums(grad_out.data(), patch.channels),
    })
}

/// Non-overlapping `k`x`k` block sums over `[C,H,W]`.
pub fn sum_pool(input: &Tensor, k: usize) -> Result<Tensor, AutodiffError> {
    expect_rank("sum_pool", input, 3)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(AutodiffError::shape(
            "sum_pool",
            format!("{h}x{w} not divisible by {k}"),
        ));
    }
    if k == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let src = &input.data()[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut out[(ch * oh + y / k) * ow..(ch * oh + y / k + 1) * ow];
            for (x, &v) in src.iter().enumerate() {
                dst[x / k] += v;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn sum_pool_backward(input_shape: &[usize], grad_out: &Tensor, k: usize) -> Tensor {
    if k == 1 {
        return grad_out.clone();
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / k, w / k);
    let g = grad_out.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let row = &g[(ch * oh + y / k) * ow..(ch * oh + y / k + 1) * ow];
            out.extend((0..w).map(|x| row[x / k]));
        }
    }
    Tensor::new(input_shape.to_vec(), out).expect("input-shaped")
}

/// `W·x + b` for `x: [N]`, `W: [M,N]`, `b: [M]`.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, AutodiffError> {
    let n = input.len();
    if weight.rank() != 2 || weight.shape()[1] != n || bias.shape() != [weight.shape()[0]] {
        return Err(AutodiffError::shape(
            "affine",
            format!(
                "weights {:?} / bias {:?} do not fit input of {n}",
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(n.max(1))
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f32>() + b)
        .collect();
    Ok(Tensor::from_vec(out))
}

pub struct AffineGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn affine_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> AffineGrads {
    let n = input.len();
    let x = input.data();
    let g = grad_out.data();
    let mut gw = Vec::with_capacity(weight.len());
    for &gi in g {
        gw.extend(x.iter().map(|&xj| gi * xj));
    }
    let grad_input = need_input.then(|| {
        let mut gx = vec![0.0; n];
        for (row, &gi) in weight.data().chunks_exact(n.max(1)).zip(g) {
            for (acc, &w) in gx.iter_mut().zip(row) {
                *acc += w * gi;
            }
        }
        Tensor::new(input.shape().to_vec(), gx).expect("input-shaped")
    });
    AffineGrads {
        input: grad_input,
        weight: Tensor::new(weight.shape().to_vec(), gw).expect("weight-shaped"),
        bias: Tensor::new(weight.shape()[..1].to_vec(), g.to_vec()).expect("bias-shaped"),
    }
}

/// Heaviside step: 1 where `u >= threshold`.
pub fn spike(u: &Tensor, threshold: f32) -> Tensor {
    u.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Derivative of the fast sigmoid `x / (1 + slope|x|)` at `x = u - threshold`.
#[inline]
pub fn surrogate_derivative(u: f32, threshold: f32, slope: f32) -> f32 {
    let d = 1.0 + slope * (u - threshold).abs();
    1.0 / (d * d)
}

/// Smooth stand-in for [`spike`] whose derivative is [`surrogate_derivative`].
pub fn fast_sigmoid(u: &Tensor, threshold: f32, slope: f32) -> Tensor {
    u.map(|v| {
        let x = v - threshold;
        x / (1.0 + slope * x.abs())
    })
}

pub fn surrogate_backward(u: &Tensor, grad_out: &Tensor, threshold: f32, slope: f32) -> Tensor {
    u.zip_map(grad_out, |v, g| g * surrogate_derivative(v, threshold, slope))
}

pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn unary(op: Unary, x: &Tensor) -> Tensor {
    match op {
        Unary::Scale(k) => x.map(|v| k * v),
        Unary::Sigmoid => x.map(sigmoid_scalar),
        Unary::Exp => x.map(f32::exp),
        Unary::Log => x.map(f32::ln),
        Unary::Square => x.map(|v| v * v),
        Unary::Relu => x.map(|v| v.max(0.0)),
        Unary::Clamp(lo, hi) => x.map(|v| v.clamp(lo, hi)),
    }
}

/// Gradient of [`unary`] given its input `x` and output `y`.
pub fn unary_backward(op: Unary, x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    match op {
        Unary::Scale(k) => g.map(|v| k * v),
        Unary::Sigmoid => y.zip_map(g, |y, g| g * y * (1.0 - y)),
        Unary::Exp => y.zip_map(g, |y, g| g * y),
        Unary::Log => x.zip_map(g, |x, g| g / x),
        Unary::Square => x.zip_map(g, |x, g| 2.0 * x * g),
        Unary::Relu => x.zip_map(g, |x, g| if x > 0.0 { g } else { 0.0 }),
        Unary::Clamp(lo, hi) => x.zip_map(g, |x, g| if (lo..=hi).contains(&x) { g } else { 0.0 }),
    }
}

fn broadcast_shape(op: Binary, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, AutodiffError> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(AutodiffError::shape(
            "elementwise",
            format!("{op:?} of {:?} and {:?}", a.shape(), b.shape()),
        ))
    }
}

fn apply_binary(op: Binary, a: f32, b: f32) -> f32 {
    match op {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
    }
}

/// Elementwise binary op; a one-element operand broadcasts.
pub fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
    let shape = broadcast_shape(op, a, b)?;
    let data = if a.len() == b.len() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| apply_binary(op, x, y)).collect()
    } else if b.is_scalar() {
        let y = b.data()[0];
        a.data().iter().map(|&x| apply_binary(op, x, y)).collect()
    } else {
        let x = a.data()[0];
        b.data().iter().map(|&y| apply_binary(op, x, y)).collect()
    };
    Tensor::new(shape, data)
}

/// Gradients of [`binary`] with respect to `a` and `b`, reduced for broadcasts.
pub fn binary_backward(op: Binary, a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let pick = |t: &Tensor, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
    let n = g.len();
    let (mut ga, mut gb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, &gi) in g.data().iter().enumerate() {
        let (da, db) = match op {
            Binary::Add => (gi, gi),
            Binary::Sub => (gi, -gi),
            Binary::Mul => (gi * pick(b, i), gi * pick(a, i)),
        };
        ga.push(da);
        gb.push(db);
    }
    let reduce = |t: &Tensor, v: Vec<f32>| {
        if t.len() == v.len() {
            Tensor::new(t.shape().to_vec(), v).expect("operand-shaped")
        } else {
            Tensor::new(t.shape().to_vec(), vec![v.iter().sum()]).expect("scalar-shaped")
        }
    };
    (reduce(a, ga), reduce(b, gb))
}

/// `a·x + (1 - a)·y`, the leaky trace update.
pub fn mix(x: &Tensor, y: &Tensor, a: f32) -> Result<Tensor, AutodiffError> {
    if x.shape() != y.shape() {
        return Err(AutodiffError::shape(
            "mix",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    Ok(x.zip_map(y, |x, y| a * x + (1.0 - a) * y))
}

/// Selects `indices` from the flattened input into a 1-D tensor.
pub fn gather(x: &Tensor, indices: &[usize]) -> Result<Tensor, AutodiffError> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
        return Err(AutodiffError::shape(
            "gather",
            format!("index {bad} out of range for {} values", x.len()),
        ));
    }
    Ok(Tensor::from_vec(indices.iter().map(|&i| x.data()[i]).collect()))
}

pub fn gather_backward(input_shape: &[usize], indices: &[usize], g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(input_shape);
    for (&i, &v) in indices.iter().zip(g.data()) {
        out.data_mut()[i] += v;
    }
    out
}

/// `logsumexp(logits) - logits[target]`, i.e. softmax cross-entropy.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<Tensor, AutodiffError> {
    if target >= logits.len() {
        return Err(AutodiffError::shape(
            "softmax_cross_entropy",
            format!("target {target} with {} logits", logits.len()),
        ));
    }
    let l = logits.data();
    let max = l.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + l.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
    Ok(Tensor::scalar(lse - l[target]))
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let l = logits.data();
    let max = l.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let e: Vec<f32> = l.iter().map(|&v| (v - max).exp()).collect();
    let s: f32 = e.iter().sum();
    Tensor::new(logits.shape().to_vec(), e.iter().map(|v| v / s).collect()).expect("same shape")
}

/// Mean over classes of the logistic binary cross-entropy.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor, AutodiffError> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(AutodiffError::shape(
            "bce_with_logits",
            format!("{:?} logits vs {:?} targets", logits.shape(), targets.shape()),
        ));
    }
    let total: f32 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
        .sum();
    Ok(Tensor::scalar(total / logits.len() as f32))
}
