use super::ops::{self, Binary, ConvGeometry, Unary};
use super::{AutodiffError, ParamId, Tensor};

/// The op set shared by eager evaluation and tape recording.
///
/// Model code is written once against this trait. [`Eager`] computes values
/// directly; [`Tape`](super::Tape) computes the same values through the same
/// kernels and also records the graph for [`Tape::backward`](super::Tape::backward).
pub trait Graph {
    type Value: Clone;

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;
    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn param(&mut self, id: ParamId, t: &Tensor) -> Self::Value;
    /// Same value, but no gradient flows back through the result.
    fn detach(&mut self, v: &Self::Value) -> Self::Value;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
        geom: ConvGeometry,
    ) -> Result<Self::Value, AutodiffError>;
    fn conv_transpose2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
        geom: ConvGeometry,
    ) -> Result<Self::Value, AutodiffError>;
    fn sum_pool(&mut self, x: &Self::Value, k: usize) -> Result<Self::Value, AutodiffError>;
    fn affine(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: &Self::Value,
    ) -> Result<Self::Value, AutodiffError>;
    /// Hard threshold forward, fast-sigmoid surrogate backward.
    fn spike(&mut self, u: &Self::Value, threshold: f32, slope: f32) -> Self::Value;
    /// The smooth surrogate itself, forward and backward.
    fn fast_sigmoid(&mut self, u: &Self::Value, threshold: f32, slope: f32) -> Self::Value;
    fn unary(&mut self, op: Unary, x: &Self::Value) -> Self::Value;
    fn binary(
        &mut self,
        op: Binary,
        a: &Self::Value,
        b: &Self::Value,
    ) -> Result<Self::Value, AutodiffError>;
    fn mix(&mut self, x: &Self::Value, y: &Self::Value, a: f32)
        -> Result<Self::Value, AutodiffError>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value, AutodiffError>;
    fn gather(&mut self, x: &Self::Value, indices: &[usize]) -> Result<Self::Value, AutodiffError>;
    fn sum(&mut self, x: &Self::Value) -> Self::Value;
    fn mean(&mut self, x: &Self::Value) -> Self::Value;
    fn softmax_cross_entropy(
        &mut self,
        logits: &Self::Value,
        target: usize,
    ) -> Result<Self::Value, AutodiffError>;
    fn bce_with_logits(
        &mut self,
        logits: &Self::Value,
        targets: &Tensor,
    ) -> Result<Self::Value, AutodiffError>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError> {
        self.binary(Binary::Add, a, b)
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError> {
        self.binary(Binary::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value, AutodiffError> {
        self.binary(Binary::Mul, a, b)
    }

    fn scale(&mut self, x: &Self::Value, k: f32) -> Self::Value {
        self.unary(Unary::Scale(k), x)
    }

    /// Contiguous 1-D slice `[start, end)` of the flattened input.
    fn slice(
        &mut self,
        x: &Self::Value,
        start: usize,
        end: usize,
    ) -> Result<Self::Value, AutodiffError> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather(x, &idx)
    }
}

/// Direct evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, _id: ParamId, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn detach(&mut self, v: &Tensor) -> Tensor {
        v.clone()
    }

    fn conv2d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
        geom: ConvGeometry,
    ) -> Result<Tensor, AutodiffError> {
        ops::conv2d(x, w, b, geom)
    }

    fn conv_transpose2d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        b: &Tensor,
        geom: ConvGeometry,
    ) -> Result<Tensor, AutodiffError> {
        ops::conv_transpose2d(x, w, b, geom)
    }

    fn sum_pool(&mut self, x: &Tensor, k: usize) -> Result<Tensor, AutodiffError> {
        ops::sum_pool(x, k)
    }

    fn affine(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        ops::affine(x, w, b)
    }

    fn spike(&mut self, u: &Tensor, threshold: f32, _slope: f32) -> Tensor {
        ops::spike(u, threshold)
    }

    fn fast_sigmoid(&mut self, u: &Tensor, threshold: f32, slope: f32) -> Tensor {
        ops::fast_sigmoid(u, threshold, slope)
    }

    fn unary(&mut self, op: Unary, x: &Tensor) -> Tensor {
        ops::unary(op, x)
    }

    fn binary(&mut self, op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        ops::binary(op, a, b)
    }

    fn mix(&mut self, x: &Tensor, y: &Tensor, a: f32) -> Result<Tensor, AutodiffError> {
        ops::mix(x, y, a)
    }

    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        x.clone().reshape(shape)
    }

    fn gather(&mut self, x: &Tensor, indices: &[usize]) -> Result<Tensor, AutodiffError> {
        ops::gather(x, indices)
    }

    fn sum(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(x.sum())
    }

    fn mean(&mut self, x: &Tensor) -> Tensor {
        Tensor::scalar(x.sum() / x.len() as f32)
    }

    fn softmax_cross_entropy(&mut self, logits: &Tensor, target: usize) -> Result<Tensor, AutodiffError> {
        ops::softmax_cross_entropy(logits, target)
    }

    fn bce_with_logits(&mut self, logits: &Tensor, targets: &Tensor) -> Result<Tensor, AutodiffError> {
        ops::bce_with_logits(logits, targets)
    }
}
