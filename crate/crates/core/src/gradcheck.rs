//! Finite-difference verification of tape gradients.
//!
//! [`grad_check`] evaluates the tape gradient of a scalar function in the
//! requested precision and compares it against central differences of the
//! same function evaluated in `f64`. [`run_suite`] applies it to every
//! registered [`OpKind`] and to the composite layers.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{CustomOp, Graph, OpKind, Var};
use crate::error::Result;
use crate::nn::{AttentionBlock, Bound, ConvBlock, Linear, ParamId};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-2;

pub const F32_TOLERANCE: f64 = 1e-4;
pub const F64_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// A scalar-valued function that can be recorded on a tape of either precision.
pub trait ScalarFunction {
    fn name(&self) -> &str;

    fn eval<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var]) -> Result<Var>;

    /// Forward function whose true derivative the tape gradient must match.
    /// Differs from `eval` only for ops with a prescribed non-derivative
    /// backward rule, such as gradient reversal.
    fn eval_reference<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var]) -> Result<Var> {
        self.eval(g, inputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub precision: &'static str,
    pub max_rel_error: f64,
    /// (input index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn eval_f64<F: ScalarFunction + ?Sized>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f.eval_reference(&g, &vars)?;
    let value = g.value(out).item();
    Ok(value)
}

/// Compares tape gradients in precision `T` against `f64` central differences.
pub fn grad_check<T: Scalar, F: ScalarFunction + ?Sized>(
    f: &F,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.cast())).collect();
    let root = f.eval(&g, &vars)?;
    let grads = g.backward(root)?;

    let mut worst = (0, 0);
    let mut max_rel_error = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let tape: Vec<f64> = match grads.get(*var) {
            Some(t) => t.to_f64_vec(),
            None => vec![0.0; inputs[i].numel()],
        };
        for (j, &analytic) in tape.iter().enumerate() {
            let original = probe[i].data()[j];
            probe[i].data_mut()[j] = original + epsilon;
            let plus = eval_f64(f, &probe)?;
            probe[i].data_mut()[j] = original - epsilon;
            let minus = eval_f64(f, &probe)?;
            probe[i].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic, numeric);
            // NaN compares false, so keep it explicitly.
            if err > max_rel_error || err.is_nan() {
                max_rel_error = err;
                worst = (i, j);
            }
        }
    }
    Ok(GradCheckReport {
        name: f.name().to_string(),
        precision: T::NAME,
        max_rel_error,
        worst,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Composite layers checked alongside the primitive ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    SelfAttention,
    ConvBlock,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::Linear, LayerKind::SelfAttention, LayerKind::ConvBlock];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "layer:linear",
            LayerKind::SelfAttention => "layer:self_attention",
            LayerKind::ConvBlock => "layer:conv_block",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Op(OpKind),
    Layer(LayerKind),
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Op(op) => op.name(),
            Target::Layer(layer) => layer.name(),
        }
    }

    pub fn all() -> Vec<Target> {
        OpKind::ALL
            .iter()
            .map(|&op| Target::Op(op))
            .chain(LayerKind::ALL.iter().map(|&l| Target::Layer(l)))
            .collect()
    }
}

/// One random evaluation point of a [`Target`].
#[derive(Debug, Clone, Copy)]
pub struct CheckCase {
    pub target: Target,
    pub seed: u64,
}

const ATTENTION_WIDTH: usize = 8;
const ATTENTION_HEADS: usize = 2;

impl CheckCase {
    fn rng(&self, salt: u64) -> rng::StreamRng {
        rng::stream(self.seed, self.target.name(), salt, 0)
    }

    fn uniform(&self, shape: &[usize], lo: f64, hi: f64, salt: u64) -> Tensor<f64> {
        let mut r = self.rng(salt);
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect())
    }

    /// Values bounded away from zero, for kinked ops.
    fn away_from_zero(&self, shape: &[usize], salt: u64) -> Tensor<f64> {
        let mut r = self.rng(salt);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let m: f64 = r.random_range(0.1..1.0);
                if r.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Distinct values spaced 0.05 apart, so pooling maxima are unambiguous.
    fn distinct(&self, shape: &[usize], salt: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut values: Vec<f64> = (0..n).map(|i| -1.0 + 0.05 * i as f64).collect();
        values.shuffle(&mut self.rng(salt));
        Tensor::from_parts(shape.to_vec(), values)
    }

    fn targets(&self, n: usize, classes: usize) -> Vec<usize> {
        let mut r = self.rng(99);
        (0..n).map(|_| r.random_range(0..classes)).collect()
    }

    pub fn inputs(&self) -> Vec<Tensor<f64>> {
        let u = |shape: &[usize], salt| self.uniform(shape, -1.0, 1.0, salt);
        match self.target {
            Target::Op(op) => match op {
                OpKind::Add | OpKind::Sub | OpKind::Mul => vec![u(&[3, 4], 1), u(&[3, 4], 2)],
                OpKind::Scale | OpKind::AddScalar | OpKind::Exp | OpKind::Sum | OpKind::WeightedSum => {
                    vec![u(&[3, 4], 1)]
                }
                OpKind::GradientReversal => vec![u(&[3, 4], 1)],
                OpKind::Relu => vec![self.away_from_zero(&[3, 4], 1)],
                OpKind::Log => vec![self.uniform(&[3, 4], 0.5, 2.0, 1)],
                OpKind::MatMul => vec![u(&[3, 4], 1), u(&[4, 2], 2)],
                OpKind::BatchMatMul => vec![u(&[2, 3, 4], 1), u(&[2, 4, 2], 2)],
                OpKind::TransposeLast2 | OpKind::Permute | OpKind::Reshape | OpKind::MeanAxis => {
                    vec![u(&[2, 3, 4], 1)]
                }
                OpKind::BiasAdd => vec![u(&[3, 4], 1), u(&[4], 2)],
                OpKind::Conv2d => vec![u(&[2, 3, 6, 6], 1), u(&[2, 3, 3, 3], 2)],
                OpKind::MaxPool2d => vec![self.distinct(&[1, 2, 4, 4], 1)],
                OpKind::Softmax => vec![u(&[3, 5], 1)],
                OpKind::CrossEntropy | OpKind::CrossEntropyPerSample => {
                    vec![self.uniform(&[4, 5], -2.0, 2.0, 1)]
                }
            },
            Target::Layer(LayerKind::Linear) => vec![u(&[3, 4], 1), u(&[4, 5], 2), u(&[5], 3)],
            Target::Layer(LayerKind::SelfAttention) => {
                let w = ATTENTION_WIDTH;
                let mut v = vec![u(&[2, 3, w], 1)];
                for salt in 2..6 {
                    v.push(self.uniform(&[w, w], -0.5, 0.5, salt));
                }
                for salt in 6..10 {
                    v.push(self.uniform(&[w], -0.2, 0.2, salt));
                }
                v
            }
            Target::Layer(LayerKind::ConvBlock) => {
                vec![u(&[2, 2, 6, 6], 1), u(&[3, 2, 3, 3], 2), u(&[3], 3)]
            }
        }
    }

    fn reduce<T: Scalar>(&self, g: &Graph<T>, out: Var) -> Result<Var> {
        let shape = g.shape(out);
        let w: Vec<T> = self.uniform(&shape, -1.0, 1.0, 50).cast::<T>().into_data();
        g.weighted_sum(out, &w)
    }
}

impl ScalarFunction for CheckCase {
    fn name(&self) -> &str {
        self.target.name()
    }

    fn eval<T: Scalar>(&self, g: &Graph<T>, x: &[Var]) -> Result<Var> {
        let c = |v: f64| T::from_f64(v);
        let out = match self.target {
            Target::Op(op) => match op {
                OpKind::Add => g.add(x[0], x[1])?,
                OpKind::Sub => g.sub(x[0], x[1])?,
                OpKind::Mul => g.mul(x[0], x[1])?,
                OpKind::Scale => g.scale(x[0], c(1.7)),
                OpKind::AddScalar => {
                    // The constant shift is invisible to a linear reduction.
                    let shifted = g.add_scalar(x[0], c(0.3))?;
                    g.mul(shifted, shifted)?
                }
                OpKind::Relu => g.relu(x[0]),
                OpKind::Exp => g.exp(x[0]),
                OpKind::Log => g.log(x[0]),
                OpKind::MatMul => g.matmul(x[0], x[1])?,
                OpKind::BatchMatMul => g.batch_matmul(x[0], x[1])?,
                OpKind::TransposeLast2 => g.transpose_last2(x[0])?,
                OpKind::Permute => g.permute(x[0], &[2, 0, 1])?,
                OpKind::Reshape => {
                    let r = g.reshape(x[0], &[4, 6])?;
                    // Reshape is linear; square it so position matters.
                    g.mul(r, r)?
                }
                OpKind::BiasAdd => g.bias_add(x[0], x[1])?,
                OpKind::Conv2d => g.conv2d(x[0], x[1], 2, 1)?,
                OpKind::MaxPool2d => g.max_pool2d(x[0])?,
                OpKind::Softmax => g.softmax(x[0], 1)?,
                OpKind::CrossEntropy => return g.cross_entropy(x[0], &self.targets(4, 5)),
                OpKind::CrossEntropyPerSample => g.cross_entropy_per_sample(x[0], &self.targets(4, 5))?,
                OpKind::Sum => {
                    let sq = g.mul(x[0], x[0])?;
                    return Ok(g.sum(sq));
                }
                OpKind::MeanAxis => g.mean_axis(x[0], 1)?,
                OpKind::WeightedSum => return self.reduce(g, x[0]),
                OpKind::GradientReversal => g.gradient_reversal(x[0], c(0.7))?,
            },
            Target::Layer(LayerKind::Linear) => {
                let layer = Linear {
                    weight: ParamId::new(1),
                    bias: Some(ParamId::new(2)),
                    in_features: 4,
                    out_features: 5,
                };
                layer.forward(g, &Bound::from_vars(x.to_vec()), x[0])?
            }
            Target::Layer(LayerKind::SelfAttention) => {
                let id = ParamId::new;
                let block = AttentionBlock {
                    num_heads: ATTENTION_HEADS,
                    head_dim: ATTENTION_WIDTH / ATTENTION_HEADS,
                    query: id(1),
                    key: id(2),
                    value: id(3),
                    output: id(4),
                    biases: Some([id(5), id(6), id(7), id(8)]),
                };
                block.forward(g, &Bound::from_vars(x.to_vec()), x[0])?.tokens
            }
            Target::Layer(LayerKind::ConvBlock) => {
                let block = ConvBlock {
                    kernel: ParamId::new(1),
                    bias: Some(ParamId::new(2)),
                    in_channels: 2,
                    filters: 3,
                    kernel_size: 3,
                    padding: 1,
                };
                block.forward(g, &Bound::from_vars(x.to_vec()), x[0])?.pooled
            }
        };
        self.reduce(g, out)
    }

    fn eval_reference<T: Scalar>(&self, g: &Graph<T>, x: &[Var]) -> Result<Var> {
        match self.target {
            Target::Op(OpKind::GradientReversal) => {
                let out = g.scale(x[0], T::from_f64(-0.7));
                self.reduce(g, out)
            }
            _ => self.eval(g, x),
        }
    }
}

/// Identity forward whose backward doubles the gradient: a deliberately
/// wrong rule for negative controls.
struct CorruptedIdentity;

impl<T: Scalar> CustomOp<T> for CorruptedIdentity {
    fn name(&self) -> &str {
        "corrupted_identity"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, upstream: &Tensor<T>) -> Vec<Tensor<T>> {
        let two = T::one() + T::one();
        vec![upstream.map(|v| v * two)]
    }
}

/// Wraps a function so that its output passes through a corrupted backward rule.
pub struct Faulty<F>(pub F);

impl<F: ScalarFunction> ScalarFunction for Faulty<F> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn eval<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var]) -> Result<Var> {
        let out = self.0.eval(g, inputs)?;
        let value = g.value(out).clone();
        Ok(g.custom(&[out], value, Box::new(CorruptedIdentity)))
    }

    fn eval_reference<T: Scalar>(&self, g: &Graph<T>, inputs: &[Var]) -> Result<Var> {
        self.0.eval_reference(g, inputs)
    }
}

/// Worst result per target across all points, in both precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub f32: GradCheckReport,
    pub f64: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.f32.passed && self.f64.passed
    }
}

fn worse(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    if b.max_rel_error > a.max_rel_error || b.max_rel_error.is_nan() || !b.passed {
        b
    } else {
        a
    }
}

fn check_target<F: ScalarFunction>(f: &F, inputs: &[Tensor<f64>]) -> Result<(GradCheckReport, GradCheckReport)> {
    Ok((
        grad_check::<f32, _>(f, inputs, DEFAULT_EPSILON, F32_TOLERANCE)?,
        grad_check::<f64, _>(f, inputs, DEFAULT_EPSILON, F64_TOLERANCE)?,
    ))
}

/// Runs every registered target at `points` random points. `fault` names a
/// target whose backward rule is deliberately corrupted.
pub fn run_suite(points: usize, fault: Option<&str>) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::new();
    for target in Target::all() {
        let mut acc: Option<(GradCheckReport, GradCheckReport)> = None;
        for point in 0..points.max(1) {
            let case = CheckCase {
                target,
                seed: point as u64,
            };
            let inputs = case.inputs();
            let (r32, r64) = if fault == Some(target.name()) {
                check_target(&Faulty(case), &inputs)?
            } else {
                check_target(&case, &inputs)?
            };
            acc = Some(match acc {
                None => (r32, r64),
                Some((a32, a64)) => (worse(a32, r32), worse(a64, r64)),
            });
        }
        let (f32, f64) = acc.expect("at least one point");
        entries.push(SuiteEntry {
            name: target.name(),
            f32,
            f64,
        });
    }
    Ok(entries)
}


#[cfg(test)]
mod suite_tests {
    use super::*;

    #[test]
    fn full_suite_passes_at_ten_points() {
        let entries = run_suite(10, None).unwrap();
        for e in &entries {
            std::println!("{:28} f32 {:.3e}  f64 {:.3e}", e.name, e.f32.max_rel_error, e.f64.max_rel_error);
        }
        assert!(entries.iter().all(|e| e.passed()));
    }

    #[test]
    fn injected_fault_is_reported_by_name() {
        let entries = run_suite(1, Some("relu")).unwrap();
        let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
        assert_eq!(failed, vec!["relu"]);
    }
}
