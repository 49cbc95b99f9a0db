//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, which is already a topological order. [`Graph::backward`] walks the
//! record once in reverse and accumulates gradients by summation, so a value
//! consumed twice receives the sum of both path gradients.

pub mod kernels;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use kernels::ConvGeometry;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every differentiable operation the tape knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Exp,
    Log,
    MatMul,
    BatchMatMul,
    TransposeLast2,
    Permute,
    Reshape,
    BiasAdd,
    Conv2d,
    MaxPool2d,
    Softmax,
    CrossEntropy,
    CrossEntropyPerSample,
    Sum,
    MeanAxis,
    WeightedSum,
    GradientReversal,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Exp,
        OpKind::Log,
        OpKind::MatMul,
        OpKind::BatchMatMul,
        OpKind::TransposeLast2,
        OpKind::Permute,
        OpKind::Reshape,
        OpKind::BiasAdd,
        OpKind::Conv2d,
        OpKind::MaxPool2d,
        OpKind::Softmax,
        OpKind::CrossEntropy,
        OpKind::CrossEntropyPerSample,
        OpKind::Sum,
        OpKind::MeanAxis,
        OpKind::WeightedSum,
        OpKind::GradientReversal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "batch_matmul",
            OpKind::TransposeLast2 => "transpose_last2",
            OpKind::Permute => "permute",
            OpKind::Reshape => "reshape",
            OpKind::BiasAdd => "bias_add",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::Softmax => "softmax",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::CrossEntropyPerSample => "cross_entropy_per_sample",
            OpKind::Sum => "sum",
            OpKind::MeanAxis => "mean_axis",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::GradientReversal => "gradient_reversal",
        }
    }
}

/// Element-wise operation selector for [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Exp,
    Log,
}

/// Second operand of [`Graph::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<T> {
    None,
    Var(Var),
    Scalar(T),
}

/// A user-supplied backward rule, used for fixtures and experiments that need
/// an operation the tape does not provide.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &str;

    /// Gradients for each input given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, upstream: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    BiasAdd(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geometry: ConvGeometry,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var, usize),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
    },
    CrossEntropyPerSample {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
    },
    Sum(Var),
    MeanAxis(Var, usize),
    WeightedSum(Var, Vec<T>),
    GradientReversal(Var, T),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    leaf: bool,
}

/// Tape of recorded operations. Confined to a single thread.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn bad_shape(op: &'static str, shape: &[usize], reason: impl Into<alloc::string::String>) -> Error {
    Error::InvalidShape {
        op,
        shape: shape.to_vec(),
        reason: reason.into(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable input whose gradient is reported by `backward`.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            leaf: true,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.0].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
            leaf: false,
        });
        Var(nodes.len() - 1)
    }

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        self.nodes.borrow()[a.0].value.map(f)
    }

    /// Element-wise dispatch. Binary kinds accept a same-shape tensor or a
    /// scalar; there is no other broadcasting.
    pub fn elementwise(&self, kind: Elementwise, a: Var, b: Operand<T>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Add, Operand::Var(b)) => self.add(a, b),
            (Elementwise::Add, Operand::Scalar(c)) => self.add_scalar(a, c),
            (Elementwise::Sub, Operand::Var(b)) => self.sub(a, b),
            (Elementwise::Sub, Operand::Scalar(c)) => self.add_scalar(a, -c),
            (Elementwise::Mul, Operand::Var(b)) => self.mul(a, b),
            (Elementwise::Mul | Elementwise::Scale, Operand::Scalar(c)) => Ok(self.scale(a, c)),
            (Elementwise::Relu, Operand::None) => Ok(self.relu(a)),
            (Elementwise::Exp, Operand::None) => Ok(self.exp(a)),
            (Elementwise::Log, Operand::None) => Ok(self.log(a)),
            (kind, _) => Err(Error::param(
                "operand",
                format!("{kind:?} does not accept this operand"),
            )),
        }
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same_shape("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same_shape("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same_shape("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        let v = self.unary(a, |x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Result<Var> {
        let v = self.unary(a, |x| x + c);
        Ok(self.push(v, Op::AddScalar(a), &[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x.exp_portable());
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&self, a: Var) -> Var {
        let v = self.unary(a, |x| x.ln_portable());
        self.push(v, Op::Log(a), &[a])
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(mismatch("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            Tensor::from_parts(vec![m, n], kernels::matmul(ta.data(), tb.data(), m, k, n))
        };
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[B×m×k] · b[B×k×n]` per batch entry.
    pub fn batch_matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(mismatch("batch_matmul", sa, sb));
            }
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut data = Vec::with_capacity(batch * m * n);
            for i in 0..batch {
                data.extend(kernels::matmul(
                    &ta.data()[i * m * k..(i + 1) * m * k],
                    &tb.data()[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            Tensor::from_parts(vec![batch, m, n], data)
        };
        Ok(self.push(v, Op::BatchMatMul(a, b), &[a, b]))
    }

    pub fn transpose_last2(&self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(bad_shape("transpose_last2", &self.shape(a), "rank must be at least 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        let v = self.permuted(a, &perm);
        Ok(self.push(v, Op::TransposeLast2(a), &[a]))
    }

    fn permuted(&self, a: Var, perm: &[usize]) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let t = &nodes[a.0].value;
        let (shape, data) = kernels::permute(t.data(), t.shape(), perm);
        Tensor::from_parts(shape, data)
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(bad_shape("permute", &shape, format!("{perm:?} is not a permutation")));
        }
        let v = self.permuted(a, perm);
        Ok(self.push(v, Op::Permute(a, perm.to_vec()), &[a]))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn bias_add(&self, x: Var, bias: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (tx, tb) = (&nodes[x.0].value, &nodes[bias.0].value);
            let n = *tx.shape().last().unwrap_or(&0);
            if tb.rank() != 1 || tb.numel() != n {
                return Err(mismatch("bias_add", tx.shape(), tb.shape()));
            }
            let data = tx
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(tb.data()).map(|(&a, &b)| a + b))
                .collect();
            Tensor::from_parts(tx.shape().to_vec(), data)
        };
        Ok(self.push(v, Op::BiasAdd(x, bias), &[x, bias]))
    }

    /// `input[N×C×H×W] ⋆ kernel[F×C×kh×kw]` with zero padding.
    pub fn conv2d(&self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (v, geometry) = {
            let nodes = self.nodes.borrow();
            let (ti, tk) = (&nodes[input.0].value, &nodes[kernel.0].value);
            let (si, sk) = (ti.shape(), tk.shape());
            if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
                return Err(mismatch("conv2d", si, sk));
            }
            if stride == 0 {
                return Err(Error::param("stride", "must be positive"));
            }
            if sk[2] > si[2] + 2 * padding || sk[3] > si[3] + 2 * padding {
                return Err(bad_shape(
                    "conv2d",
                    sk,
                    format!("kernel larger than padded input {si:?} (padding {padding})"),
                ));
            }
            let geometry = ConvGeometry {
                batch: si[0],
                channels: si[1],
                height: si[2],
                width: si[3],
                filters: sk[0],
                kernel_h: sk[2],
                kernel_w: sk[3],
                stride,
                padding,
            };
            let data = geometry.forward(ti.data(), tk.data());
            let shape = vec![si[0], sk[0], geometry.out_h(), geometry.out_w()];
            (Tensor::from_parts(shape, data), geometry)
        };
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernel,
                geometry,
            },
            &[input, kernel],
        ))
    }

    /// 2×2 stride-2 max pooling over the trailing two axes of an `N×C×H×W` value.
    pub fn max_pool2d(&self, input: Var) -> Result<Var> {
        let (v, argmax) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[input.0].value;
            let s = t.shape();
            if s.len() != 4 || s[2] < 2 || s[3] < 2 {
                return Err(bad_shape("max_pool2d", s, "expected N×C×H×W with H, W ≥ 2"));
            }
            let (data, argmax) = kernels::max_pool2(t.data(), s[0] * s[1], s[2], s[3]);
            (Tensor::from_parts(vec![s[0], s[1], s[2] / 2, s[3] / 2], data), argmax)
        };
        Ok(self.push(v, Op::MaxPool2d { input, argmax }, &[input]))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(bad_shape("softmax", &shape, format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let data = kernels::softmax(self.value(a).data(), outer, len, inner);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(a, axis), &[a]))
    }

    fn class_probs(&self, logits: Var, targets: &[usize]) -> Result<(usize, usize, Vec<T>)> {
        let shape = self.shape(logits);
        if shape.len() != 2 {
            return Err(bad_shape("cross_entropy", &shape, "logits must be N×C"));
        }
        let (n, c) = (shape[0], shape[1]);
        if targets.len() != n {
            return Err(mismatch("cross_entropy", &shape, &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::LabelOutOfRange { label: bad, count: c });
        }
        Ok((n, c, kernels::softmax(self.value(logits).data(), n, c, 1)))
    }

    fn per_sample_nll(&self, logits: Var, targets: &[usize], c: usize) -> Vec<T> {
        // log-sum-exp form keeps large margins finite.
        let value = self.value(logits);
        targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = &value.data()[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&z| (z - max).exp_portable()).sum::<T>().ln_portable() + max;
                lse - row[t]
            })
            .collect()
    }

    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c, probs) = self.class_probs(logits, targets)?;
        let losses = self.per_sample_nll(logits, targets, c);
        let mean = losses.iter().copied().sum::<T>() / T::from_usize(n);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Per-sample `−log softmax(logits)[target]` as a length-N vector.
    pub fn cross_entropy_per_sample(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c, probs) = self.class_probs(logits, targets)?;
        let losses = self.per_sample_nll(logits, targets, c);
        Ok(self.push(
            Tensor::from_parts(vec![n], losses),
            Op::CrossEntropyPerSample {
                logits,
                probs,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(bad_shape("mean_axis", &shape, format!("axis {axis} out of range")));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        {
            let value = self.value(a);
            let x = value.data();
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] = out[o * inner + i] + x[(o * len + j) * inner + i];
                    }
                }
            }
        }
        let denom = T::from_usize(len);
        out.iter_mut().for_each(|v| *v = *v / denom);
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::MeanAxis(a, axis), &[a]))
    }

    /// `Σ_i w_i·a_i` with constant weights (no gradient flows into `w`).
    pub fn weighted_sum(&self, a: Var, weights: &[T]) -> Result<Var> {
        let total = {
            let value = self.value(a);
            if value.numel() != weights.len() {
                return Err(mismatch("weighted_sum", value.shape(), &[weights.len()]));
            }
            value.data().iter().zip(weights).map(|(&x, &w)| x * w).sum::<T>()
        };
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(a, weights.to_vec()), &[a]))
    }

    /// Identity forward; multiplies the upstream gradient by `−lambda` on the
    /// way back.
    pub fn gradient_reversal(&self, a: Var, lambda: T) -> Result<Var> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::param(
                "lambda",
                format!("gradient reversal needs a finite non-negative coefficient, got {lambda}"),
            ));
        }
        let v = self.value(a).clone();
        Ok(self.push(v, Op::GradientReversal(a, lambda), &[a]))
    }

    /// Records a value computed outside the tape together with its backward rule.
    pub fn custom(&self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(output, Op::Custom(inputs.to_vec(), op), inputs)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::ones(root_value.shape()));
        }
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || node.leaf {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            backward_node(&nodes, node, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        let mut map = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if !node.requires_grad {
                continue;
            }
            match grads[i].take() {
                Some(g) => {
                    map.insert(Var(i), g);
                }
                None if node.leaf => {
                    map.insert(Var(i), Tensor::zeros(node.value.shape()));
                }
                None => {}
            }
        }
        Ok(Gradients { map })
    }
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    debug_assert_eq!(g.shape(), nodes[v.0].value.shape());
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(shape: &[usize], a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(shape.to_vec(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
}

fn backward_node<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let shape = g.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let ga = zip_map(shape, g.data(), val(*b).data(), |x, y| x * y);
            let gb = zip_map(shape, g.data(), val(*a).data(), |x, y| x * y);
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * *c)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Relu(a) => {
            let ga = zip_map(shape, g.data(), val(*a).data(), |x, y| {
                if y > T::zero() {
                    x
                } else {
                    T::zero()
                }
            });
            accumulate(nodes, grads, *a, ga);
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, zip_map(shape, g.data(), node.value.data(), |x, y| x * y)),
        Op::Log(a) => accumulate(nodes, grads, *a, zip_map(shape, g.data(), val(*a).data(), |x, y| x / y)),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let ga = kernels::matmul_a_bt(g.data(), tb.data(), m, k, n);
            let gb = kernels::matmul_at_b(ta.data(), g.data(), m, k, n);
            accumulate(nodes, grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
            accumulate(nodes, grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
        }
        Op::BatchMatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (batch, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
            let mut ga = Vec::with_capacity(ta.numel());
            let mut gb = Vec::with_capacity(tb.numel());
            for i in 0..batch {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let ai = &ta.data()[i * m * k..(i + 1) * m * k];
                let bi = &tb.data()[i * k * n..(i + 1) * k * n];
                ga.extend(kernels::matmul_a_bt(gi, bi, m, k, n));
                gb.extend(kernels::matmul_at_b(ai, gi, m, k, n));
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
            accumulate(nodes, grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
        }
        Op::TransposeLast2(a) => {
            let rank = shape.len();
            let mut perm: Vec<usize> = (0..rank).collect();
            perm.swap(rank - 2, rank - 1);
            let (s, d) = kernels::permute(g.data(), shape, &perm);
            accumulate(nodes, grads, *a, Tensor::from_parts(s, d));
        }
        Op::Permute(a, perm) => {
            let inv = kernels::inverse_permutation(perm);
            let (s, d) = kernels::permute(g.data(), shape, &inv);
            accumulate(nodes, grads, *a, Tensor::from_parts(s, d));
        }
        Op::Reshape(a) => {
            let target = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::from_parts(target, g.data().to_vec()));
        }
        Op::BiasAdd(x, b) => {
            accumulate(nodes, grads, *x, g.clone());
            let n = val(*b).numel();
            let mut gb = vec![T::zero(); n];
            for row in g.data().chunks(n) {
                for (acc, &v) in gb.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            accumulate(nodes, grads, *b, Tensor::from_parts(vec![n], gb));
        }
        Op::Conv2d {
            input,
            kernel,
            geometry,
        } => {
            let (ti, tk) = (val(*input), val(*kernel));
            let (gi, gk) = geometry.backward(ti.data(), tk.data(), g.data());
            accumulate(nodes, grads, *input, Tensor::from_parts(ti.shape().to_vec(), gi));
            accumulate(nodes, grads, *kernel, Tensor::from_parts(tk.shape().to_vec(), gk));
        }
        Op::MaxPool2d { input, argmax } => {
            let ti = val(*input);
            let mut gi = vec![T::zero(); ti.numel()];
            for (&src, &v) in argmax.iter().zip(g.data()) {
                gi[src] = gi[src] + v;
            }
            accumulate(nodes, grads, *input, Tensor::from_parts(ti.shape().to_vec(), gi));
        }
        Op::Softmax(a, axis) => {
            let (outer, len, inner) = kernels::axis_split(shape, *axis);
            let ga = kernels::softmax_backward(node.value.data(), g.data(), outer, len, inner);
            accumulate(nodes, grads, *a, Tensor::from_parts(shape.to_vec(), ga));
        }
        Op::CrossEntropy { logits, probs, targets } => {
            let n = targets.len();
            let c = probs.len() / n;
            let scale = g.item() / T::from_usize(n);
            let mut ga: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                ga[i * c + t] = (probs[i * c + t] - T::one()) * scale;
            }
            accumulate(nodes, grads, *logits, Tensor::from_parts(vec![n, c], ga));
        }
        Op::CrossEntropyPerSample { logits, probs, targets } => {
            let n = targets.len();
            let c = probs.len() / n;
            let mut ga = Vec::with_capacity(probs.len());
            for (i, &t) in targets.iter().enumerate() {
                let gi = g.data()[i];
                for j in 0..c {
                    let onehot = if j == t { T::one() } else { T::zero() };
                    ga.push((probs[i * c + j] - onehot) * gi);
                }
            }
            accumulate(nodes, grads, *logits, Tensor::from_parts(vec![n, c], ga));
        }
        Op::Sum(a) => {
            let s = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::full(&s, g.item()));
        }
        Op::MeanAxis(a, axis) => {
            let s = val(*a).shape().to_vec();
            let (outer, len, inner) = kernels::axis_split(&s, *axis);
            let denom = T::from_usize(len);
            let mut ga = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        ga[(o * len + j) * inner + i] = g.data()[o * inner + i] / denom;
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(s, ga));
        }
        Op::WeightedSum(a, w) => {
            let s = val(*a).shape().to_vec();
            let up = g.item();
            accumulate(nodes, grads, *a, Tensor::from_parts(s, w.iter().map(|&wi| wi * up).collect()));
        }
        Op::GradientReversal(a, lambda) => {
            let neg = -*lambda;
            accumulate(nodes, grads, *a, g.map(|x| neg * x));
        }
        Op::Custom(inputs, op) => {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
            let local = op.backward(&values, &node.value, g);
            for (&v, gv) in inputs.iter().zip(local) {
                accumulate(nodes, grads, v, gv);
            }
        }
    }
}

/// Gradients produced by one backward sweep, keyed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    map: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.map.get(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.map.iter().map(|(&v, t)| (v, t))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.map.remove(&v)
    }
}
