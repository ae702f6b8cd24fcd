use std::collections::{BTreeMap, HashMap};

use super::graph::Graph;
use super::ops::{self, Binary, ConvGeometry, Unary};
use super::{AutodiffError, ParamId, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    SumPool { x: Var, k: usize },
    Affine { x: Var, w: Var, b: Var },
    Spike { u: Var, threshold: f32, slope: f32 },
    FastSigmoid { u: Var, threshold: f32, slope: f32 },
    Unary { x: Var, op: Unary },
    Binary { a: Var, b: Var, op: Binary },
    Mix { x: Var, y: Var, a: f32 },
    Reshape { x: Var },
    Gather { x: Var, indices: Vec<usize> },
    Sum { x: Var },
    Mean { x: Var },
    SoftmaxCrossEntropy { logits: Var, target: usize },
    BceWithLogits { logits: Var, targets: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients for parameters and leaves after [`Tape::backward`].
///
/// Absent entries mean the gradient is zero.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    /// Adds `other`'s parameter gradients into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (&id, g) in &other.params {
            match self.params.get_mut(&id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.params.insert(id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, k: f32) {
        for g in self.params.values_mut() {
            g.scale_assign(k);
        }
    }

    pub fn insert_param(&mut self, id: ParamId, g: Tensor) {
        self.params.insert(id, g);
    }

    pub fn retain_params(&mut self, keep: impl Fn(ParamId) -> bool) {
        self.params.retain(|&id, _| keep(id));
    }
}

/// Records a forward computation for one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes so the tape can record a fresh graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// A differentiable input that is not a registered parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a scalar `loss`. A tape supports one sweep per
    /// recording; call [`Tape::reset`] before reuse.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if !self.val(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.val(loss).shape().to_vec()));
        }
        self.consumed = true;
        let loss_val = self.val(loss);

        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::new(loss_val.shape().to_vec(), vec![1.0]).expect("scalar"));
        let mut grads = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor| {
                if self.nodes[v.0].needs_grad {
                    match &mut adj[v.0] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    grads.leaves.insert(Var(i), g);
                }
                Op::Param(id) => match grads.params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.params.insert(*id, g);
                    }
                },
                &Op::Conv2d { x, w, b, geom } => {
                    let r = ops::conv2d_backward(self.val(x), self.val(w), &g, geom, self.grad(x))?;
                    if let Some(gx) = r.input {
                        send(x, gx);
                    }
                    send(w, r.weight);
                    send(b, r.bias);
                }
                &Op::ConvTranspose2d { x, w, b, geom } => {
                    let r = ops::conv_transpose2d_backward(
                        self.val(x),
                        self.val(w),
                        &g,
                        geom,
                        self.grad(x),
                    )?;
                    if let Some(gx) = r.input {
                        send(x, gx);
                    }
                    send(w, r.weight);
                    send(b, r.bias);
                }
                &Op::SumPool { x, k } => {
                    send(x, ops::sum_pool_backward(self.val(x).shape(), &g, k));
                }
                &Op::Affine { x, w, b } => {
                    let r = ops::affine_backward(self.val(x), self.val(w), &g, self.grad(x));
                    if let Some(gx) = r.input {
                        send(x, gx);
                    }
                    send(w, r.weight);
                    send(b, r.bias);
                }
                &Op::Spike { u, threshold, slope } | &Op::FastSigmoid { u, threshold, slope } => {
                    send(u, ops::surrogate_backward(self.val(u), &g, threshold, slope));
                }
                &Op::Unary { x, op } => {
                    send(x, ops::unary_backward(op, self.val(x), &node.value, &g));
                }
                &Op::Binary { a, b, op } => {
                    let (ga, gb) = ops::binary_backward(op, self.val(a), self.val(b), &g);
                    send(a, ga);
                    send(b, gb);
                }
                &Op::Mix { x, y, a } => {
                    send(x, g.map(|v| a * v));
                    send(y, g.map(|v| (1.0 - a) * v));
                }
                &Op::Reshape { x } => {
                    send(x, g.reshape(self.val(x).shape())?);
                }
                Op::Gather { x, indices } => {
                    send(*x, ops::gather_backward(self.val(*x).shape(), indices, &g));
                }
                &Op::Sum { x } => {
                    send(x, Tensor::full(self.val(x).shape(), g.data()[0]));
                }
                &Op::Mean { x } => {
                    let xv = self.val(x);
                    send(x, Tensor::full(xv.shape(), g.data()[0] / xv.len() as f32));
                }
                &Op::SoftmaxCrossEntropy { logits, target } => {
                    let mut p = ops::softmax(self.val(logits));
                    p.data_mut()[target] -= 1.0;
                    p.scale_assign(g.data()[0]);
                    send(logits, p);
                }
                Op::BceWithLogits { logits, targets } => {
                    let l = self.val(*logits);
                    let k = g.data()[0] / l.len() as f32;
                    send(*logits, l.zip_map(targets, |l, t| k * (ops::sigmoid_scalar(l) - t)));
                }
            }
        }
        Ok(grads)
    }
}

impl Graph for Tape {
    type Value = Var;

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    fn param(&mut self, id: ParamId, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(id), true)
    }

    fn detach(&mut self, v: &Var) -> Var {
        let t = self.val(*v).clone();
        self.push(t, Op::Constant, false)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, geom: ConvGeometry) -> Result<Var, AutodiffError> {
        let out = ops::conv2d(self.val(*x), self.val(*w), self.val(*b), geom)?;
        let ng = self.grad(*x) || self.grad(*w) || self.grad(*b);
        Ok(self.push(out, Op::Conv2d { x: *x, w: *w, b: *b, geom }, ng))
    }

    fn conv_transpose2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: &Var,
        geom: ConvGeometry,
    ) -> Result<Var, AutodiffError> {
        let out = ops::conv_transpose2d(self.val(*x), self.val(*w), self.val(*b), geom)?;
        let ng = self.grad(*x) || self.grad(*w) || self.grad(*b);
        Ok(self.push(out, Op::ConvTranspose2d { x: *x, w: *w, b: *b, geom }, ng))
    }

    fn sum_pool(&mut self, x: &Var, k: usize) -> Result<Var, AutodiffError> {
        let out = ops::sum_pool(self.val(*x), k)?;
        let ng = self.grad(*x);
        Ok(self.push(out, Op::SumPool { x: *x, k }, ng))
    }

    fn affine(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var, AutodiffError> {
        let out = ops::affine(self.val(*x), self.val(*w), self.val(*b))?;
        let ng = self.grad(*x) || self.grad(*w) || self.grad(*b);
        Ok(self.push(out, Op::Affine { x: *x, w: *w, b: *b }, ng))
    }

    fn spike(&mut self, u: &Var, threshold: f32, slope: f32) -> Var {
        let out = ops::spike(self.val(*u), threshold);
        let ng = self.grad(*u);
        self.push(out, Op::Spike { u: *u, threshold, slope }, ng)
    }

    fn fast_sigmoid(&mut self, u: &Var, threshold: f32, slope: f32) -> Var {
        let out = ops::fast_sigmoid(self.val(*u), threshold, slope);
        let ng = self.grad(*u);
        self.push(out, Op::FastSigmoid { u: *u, threshold, slope }, ng)
    }

    fn unary(&mut self, op: Unary, x: &Var) -> Var {
        let out = ops::unary(op, self.val(*x));
        let ng = self.grad(*x);
        self.push(out, Op::Unary { x: *x, op }, ng)
    }

    fn binary(&mut self, op: Binary, a: &Var, b: &Var) -> Result<Var, AutodiffError> {
        let out = ops::binary(op, self.val(*a), self.val(*b))?;
        let ng = self.grad(*a) || self.grad(*b);
        Ok(self.push(out, Op::Binary { a: *a, b: *b, op }, ng))
    }

    fn mix(&mut self, x: &Var, y: &Var, a: f32) -> Result<Var, AutodiffError> {
        let out = ops::mix(self.val(*x), self.val(*y), a)?;
        let ng = self.grad(*x) || self.grad(*y);
        Ok(self.push(out, Op::Mix { x: *x, y: *y, a }, ng))
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.val(*x).clone().reshape(shape)?;
        let ng = self.grad(*x);
        Ok(self.push(out, Op::Reshape { x: *x }, ng))
    }

    fn gather(&mut self, x: &Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let out = ops::gather(self.val(*x), indices)?;
        let ng = self.grad(*x);
        Ok(self.push(
            out,
            Op::Gather {
                x: *x,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let out = Tensor::scalar(self.val(*x).sum());
        let ng = self.grad(*x);
        self.push(out, Op::Sum { x: *x }, ng)
    }

    fn mean(&mut self, x: &Var) -> Var {
        let xv = self.val(*x);
        let out = Tensor::scalar(xv.sum() / xv.len() as f32);
        let ng = self.grad(*x);
        self.push(out, Op::Mean { x: *x }, ng)
    }

    fn softmax_cross_entropy(&mut self, logits: &Var, target: usize) -> Result<Var, AutodiffError> {
        let out = ops::softmax_cross_entropy(self.val(*logits), target)?;
        let ng = self.grad(*logits);
        Ok(self.push(out, Op::SoftmaxCrossEntropy { logits: *logits, target }, ng))
    }

    fn bce_with_logits(&mut self, logits: &Var, targets: &Tensor) -> Result<Var, AutodiffError> {
        let out = ops::bce_with_logits(self.val(*logits), targets)?;
        let ng = self.grad(*logits);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits: *logits,
                targets: targets.clone(),
            },
            ng,
        ))
    }
}
