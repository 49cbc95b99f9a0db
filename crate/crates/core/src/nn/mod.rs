//! Layers assembled into the feature extractor and the two heads.
//!
//! Layers only hold [`ParamId`]s; the tensors live in a [`ParamStore`] and
//! are bound onto a fresh [`Graph`] for every forward pass.

mod attention;
mod params;

use alloc::format;
use alloc::vec;

pub use attention::{AttentionBlock, AttentionOutput};
pub use params::{kaiming_uniform, Bound, Param, ParamGroup, ParamId, ParamStore};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer: `x·W + b` with `W: in×out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            kaiming_uniform(&[in_features, out_features], in_features, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), group, Tensor::zeros(&[out_features]))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: shape,
                rhs: vec![self.in_features, self.out_features],
            });
        }
        let y = g.matmul(x, bound[self.weight])?;
        match self.bias {
            Some(b) => g.bias_add(y, bound[b]),
            None => Ok(y),
        }
    }
}

/// `conv2d → relu → 2×2 max-pool`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub padding: usize,
}

/// Activations of one [`ConvBlock`]; `activation` is the post-relu,
/// pre-pool map that Grad-CAM reads.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlockOutput {
    pub activation: Var,
    pub pooled: Var,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_channels: usize,
        filters: usize,
        kernel_size: usize,
        padding: usize,
        bias: bool,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel_size * kernel_size;
        let kernel = store.add(
            format!("{name}.kernel"),
            group,
            kaiming_uniform(&[filters, in_channels, kernel_size, kernel_size], fan_in, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), group, Tensor::zeros(&[filters]))?)
        } else {
            None
        };
        Ok(ConvBlock {
            kernel,
            bias,
            in_channels,
            filters,
            kernel_size,
            padding,
        })
    }

    /// Spatial size after the block for an `h×w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = h + 2 * self.padding + 1 - self.kernel_size;
        let ow = w + 2 * self.padding + 1 - self.kernel_size;
        (oh / 2, ow / 2)
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, bound: &Bound, x: Var) -> Result<ConvBlockOutput> {
        let mut y = g.conv2d(x, bound[self.kernel], 1, self.padding)?;
        if let Some(b) = self.bias {
            // Channel bias via an explicit NHWC round trip.
            let nhwc = g.permute(y, &[0, 2, 3, 1])?;
            let biased = g.bias_add(nhwc, bound[b])?;
            y = g.permute(biased, &[0, 3, 1, 2])?;
        }
        let activation = g.relu(y);
        let pooled = g.max_pool2d(activation)?;
        Ok(ConvBlockOutput { activation, pooled })
    }
}

/// Identity forward, `−λ·g` backward.
pub fn gradient_reversal<T: Scalar>(g: &Graph<T>, x: Var, lambda: T) -> Result<Var> {
    g.gradient_reversal(x, lambda)
}
