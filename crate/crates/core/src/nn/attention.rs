use alloc::format;
use alloc::vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{Scalar, Tensor};

use super::params::{kaiming_uniform, Bound, ParamGroup, ParamId, ParamStore};

/// Multi-head scaled dot-product self-attention over `N×T×D` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub num_heads: usize,
    pub head_dim: usize,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    /// Query, key, value and output biases, when enabled.
    pub biases: Option<[ParamId; 4]>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// Transformed tokens, `N×T×D`.
    pub tokens: Var,
    /// Per-head attention weights, `N×H×T×T`; every row sums to one.
    pub maps: Var,
}

impl AttentionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        width: usize,
        num_heads: usize,
        bias: bool,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if num_heads == 0 || width == 0 || width % num_heads != 0 {
            return Err(Error::param(
                "num_heads",
                format!("width {width} is not divisible into {num_heads} heads"),
            ));
        }
        let mut proj = |suffix: &str, store: &mut ParamStore<T>| {
            store.add(format!("{name}.{suffix}"), group, kaiming_uniform(&[width, width], width, rng))
        };
        let query = proj("query", store)?;
        let key = proj("key", store)?;
        let value = proj("value", store)?;
        let output = proj("output", store)?;
        let biases = if bias {
            let mut ids = [query; 4];
            for (slot, suffix) in ids.iter_mut().zip(["query_bias", "key_bias", "value_bias", "output_bias"]) {
                *slot = store.add(format!("{name}.{suffix}"), group, Tensor::zeros(&[width]))?;
            }
            Some(ids)
        } else {
            None
        };
        Ok(AttentionBlock {
            num_heads,
            head_dim: width / num_heads,
            query,
            key,
            value,
            output,
            biases,
        })
    }

    pub fn width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    fn project<T: Scalar>(&self, g: &Graph<T>, bound: &Bound, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let y = g.matmul(x, bound[w])?;
        match b {
            Some(b) => g.bias_add(y, bound[b]),
            None => Ok(y),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, bound: &Bound, tokens: Var) -> Result<AttentionOutput> {
        let shape = g.shape(tokens);
        let width = self.width();
        if shape.len() != 3 || shape[2] != width || shape[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "self_attention",
                lhs: shape,
                rhs: vec![0, 0, width],
            });
        }
        let (n, t, h, hd) = (shape[0], shape[1], self.num_heads, self.head_dim);
        let bias = |i: usize| self.biases.map(|b| b[i]);

        let flat = g.reshape(tokens, &[n * t, width])?;
        let split_heads = |x: Var| -> Result<Var> {
            let x = g.reshape(x, &[n, t, h, hd])?;
            let x = g.permute(x, &[0, 2, 1, 3])?;
            g.reshape(x, &[n * h, t, hd])
        };
        let q = split_heads(self.project(g, bound, flat, self.query, bias(0))?)?;
        let k = split_heads(self.project(g, bound, flat, self.key, bias(1))?)?;
        let v = split_heads(self.project(g, bound, flat, self.value, bias(2))?)?;

        let kt = g.transpose_last2(k)?;
        let scores = g.batch_matmul(q, kt)?;
        let scaled = g.scale(scores, T::one() / T::from_usize(hd).sqrt());
        let weights = g.softmax(scaled, 2)?;
        let mixed = g.batch_matmul(weights, v)?;

        let merged = g.reshape(mixed, &[n, h, t, hd])?;
        let merged = g.permute(merged, &[0, 2, 1, 3])?;
        let merged = g.reshape(merged, &[n * t, width])?;
        let out = self.project(g, bound, merged, self.output, bias(3))?;
        Ok(AttentionOutput {
            tokens: g.reshape(out, &[n, t, width])?,
            maps: g.reshape(weights, &[n, h, t, t])?,
        })
    }
}
