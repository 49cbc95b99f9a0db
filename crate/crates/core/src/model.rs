//! The two-headed network.
//!
//! ```text
//! class path:   x ─ G_f ─ flatten ─ G_y ─ class logits
//! domain path:  x ─ G_f ─ GRL(λ) ─ tokens ─ attention ─ mean ─ MLP ─ domain logits
//! ```
//!
//! The class path never reads a domain-head parameter, so inference is the
//! same whether or not the domain head exists.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{AttentionBlock, Bound, ConvBlock, Linear, ParamGroup, ParamStore};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum Extractor {
    /// Conv blocks (`conv k×k, pad k/2 → relu → pool`), one per entry.
    Conv {
        filters: Vec<usize>,
        #[cfg_attr(feature = "serde", serde(default = "default_kernel"))]
        kernel_size: usize,
        #[cfg_attr(feature = "serde", serde(default = "default_true"))]
        bias: bool,
    },
    /// Flatten, then `linear → relu` per hidden width. The output is split
    /// into `tokens` equal tokens for the domain head.
    Mlp {
        hidden: Vec<usize>,
        #[cfg_attr(feature = "serde", serde(default = "default_true"))]
        bias: bool,
        #[cfg_attr(feature = "serde", serde(default = "default_one"))]
        tokens: usize,
    },
}

#[cfg(feature = "serde")]
fn default_kernel() -> usize {
    3
}

#[cfg(feature = "serde")]
fn default_true() -> bool {
    true
}

#[cfg(feature = "serde")]
fn default_one() -> usize {
    1
}

#[cfg(feature = "serde")]
fn default_domain_hidden() -> Vec<usize> {
    vec![64]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct AttentionConfig {
    pub heads: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct DomainHeadConfig {
    pub attention: Option<AttentionConfig>,
    #[cfg_attr(feature = "serde", serde(default = "default_domain_hidden"))]
    pub hidden: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub bias: bool,
}

impl Default for DomainHeadConfig {
    fn default() -> Self {
        DomainHeadConfig {
            attention: Some(AttentionConfig { heads: 2, bias: true }),
            hidden: vec![64],
            bias: true,
        }
    }
}

/// How the per-domain coefficients `a_d` of the domain loss are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Weighting {
    /// `a_d = 1`.
    #[default]
    Uniform,
    /// `a = K·softmax(s)`, `s_d` the mean attention peak of the batch's
    /// domain-`d` samples. Held constant during backward.
    Attention,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ModelConfig {
    /// `[C, H, W]`.
    pub input: [usize; 3],
    pub class_count: usize,
    pub domain_count: usize,
    pub extractor: Extractor,
    /// Hidden widths of the label head (`linear → relu` each) before its
    /// output layer.
    #[cfg_attr(feature = "serde", serde(default))]
    pub label_hidden: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub label_bias: bool,
    pub domain_head: Option<DomainHeadConfig>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub weighting: Weighting,
}

impl ModelConfig {
    /// Two conv blocks (16, 32) on the input, linear label head, 2-head
    /// attention over the 32-wide spatial tokens, `linear(64) → relu →
    /// linear(K)` domain head.
    pub fn small_cnn(input: [usize; 3], class_count: usize, domain_count: usize) -> Self {
        ModelConfig {
            input,
            class_count,
            domain_count,
            extractor: Extractor::Conv {
                filters: vec![16, 32],
                kernel_size: 3,
                bias: true,
            },
            label_hidden: Vec::new(),
            label_bias: true,
            domain_head: Some(DomainHeadConfig::default()),
            weighting: Weighting::Uniform,
        }
    }

    /// Width and count of the tokens the domain head sees, and the flat
    /// feature width the label head sees.
    fn feature_geometry(&self) -> Result<(usize, usize, usize)> {
        let [c, h, w] = self.input;
        match &self.extractor {
            Extractor::Conv {
                filters, kernel_size, ..
            } => {
                if *kernel_size % 2 == 0 || *kernel_size == 0 {
                    return Err(Error::param("kernel_size", "must be odd"));
                }
                let (mut fh, mut fw, mut ch) = (h, w, c);
                for &f in filters {
                    if fh < 2 || fw < 2 || f == 0 {
                        return Err(Error::param(
                            "filters",
                            format!("{} conv blocks do not fit a {h}×{w} input", filters.len()),
                        ));
                    }
                    fh /= 2;
                    fw /= 2;
                    ch = f;
                }
                Ok((ch, fh * fw, ch * fh * fw))
            }
            Extractor::Mlp { hidden, tokens, .. } => {
                let width = hidden.last().copied().unwrap_or(c * h * w);
                if *tokens == 0 || width % tokens != 0 {
                    return Err(Error::param(
                        "tokens",
                        format!("feature width {width} does not split into {tokens} tokens"),
                    ));
                }
                Ok((width / tokens, *tokens, width))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::param("input", "extents must be positive"));
        }
        if self.class_count == 0 {
            return Err(Error::param("class_count", "must be positive"));
        }
        if self.domain_count < 2 {
            return Err(Error::param("domain_count", "need at least two domains"));
        }
        let (token_width, _, _) = self.feature_geometry()?;
        if let Some(head) = &self.domain_head {
            if let Some(att) = head.attention {
                if att.heads == 0 || token_width % att.heads != 0 {
                    return Err(Error::param(
                        "heads",
                        format!("token width {token_width} is not divisible into {} heads", att.heads),
                    ));
                }
            }
        }
        if self.weighting == Weighting::Attention
            && self.domain_head.as_ref().and_then(|h| h.attention).is_none()
        {
            return Err(Error::param("weighting", "attention weighting needs an attention block"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FeatureLayers {
    Conv(Vec<ConvBlock>),
    Mlp(Vec<Linear>),
}

#[derive(Debug, Clone, PartialEq)]
struct DomainHead {
    attention: Option<AttentionBlock>,
    layers: Vec<Linear>,
}

/// Parameters and layer layout of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdldaModel<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    features: FeatureLayers,
    label_head: Vec<Linear>,
    domain_head: Option<DomainHead>,
    token_width: usize,
    token_count: usize,
}

/// Values recorded by [`AdldaModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub class_logits: Var,
    pub domain_logits: Option<Var>,
    /// `a`, length K, summing to K.
    pub domain_weights: Vec<f64>,
    /// Tokens fed to the domain head, `N×T×W` (after the GRL).
    pub features: Var,
    /// Per-head attention maps, `N×H×T×T`.
    pub attention_maps: Option<Var>,
    /// Post-relu, pre-pool activation of the last conv block.
    pub last_conv_activation: Option<Var>,
}

/// Class-path values only.
#[derive(Debug, Clone, Copy)]
pub struct ClassOutputs {
    pub logits: Var,
    pub features: Var,
    pub last_conv_activation: Option<Var>,
}

fn mlp<T: Scalar>(g: &Graph<T>, bound: &Bound, layers: &[Linear], mut x: Var, relu_last: bool) -> Result<Var> {
    for (i, layer) in layers.iter().enumerate() {
        x = layer.forward(g, bound, x)?;
        if relu_last || i + 1 < layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

fn linear_stack<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    group: ParamGroup,
    widths: &[usize],
    bias: bool,
    rng: &mut rng::StreamRng,
) -> Result<Vec<Linear>> {
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(store, &format!("{prefix}.{i}"), group, w[0], w[1], bias, rng))
        .collect()
}

impl<T: Scalar> AdldaModel<T> {
    /// Initializes every parameter from named streams of `seed`. Feature,
    /// label and domain parameters come from separate streams and are
    /// registered in that order, so the domain head never shifts the others.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (token_width, token_count, flat) = config.feature_geometry()?;
        let [c, h, w] = config.input;

        let mut r = rng::stream(seed, rng::INIT_FEATURE, 0, 0);
        let features = match &config.extractor {
            Extractor::Conv {
                filters,
                kernel_size,
                bias,
            } => {
                let mut blocks = Vec::new();
                let mut in_ch = c;
                for (i, &f) in filters.iter().enumerate() {
                    blocks.push(ConvBlock::new(
                        &mut store,
                        &format!("features.conv{i}"),
                        ParamGroup::Feature,
                        in_ch,
                        f,
                        *kernel_size,
                        kernel_size / 2,
                        *bias,
                        &mut r,
                    )?);
                    in_ch = f;
                }
                FeatureLayers::Conv(blocks)
            }
            Extractor::Mlp { hidden, bias, .. } => {
                let mut widths = vec![c * h * w];
                widths.extend_from_slice(hidden);
                FeatureLayers::Mlp(linear_stack(&mut store, "features.fc", ParamGroup::Feature, &widths, *bias, &mut r)?)
            }
        };

        let mut r = rng::stream(seed, rng::INIT_LABEL_HEAD, 0, 0);
        let mut widths = vec![flat];
        widths.extend_from_slice(&config.label_hidden);
        widths.push(config.class_count);
        let label_head = linear_stack(&mut store, "label.fc", ParamGroup::Label, &widths, config.label_bias, &mut r)?;

        let domain_head = match &config.domain_head {
            None => None,
            Some(head) => {
                let mut r = rng::stream(seed, rng::INIT_DOMAIN_HEAD, 0, 0);
                let attention = match head.attention {
                    Some(att) => Some(AttentionBlock::new(
                        &mut store,
                        "domain.attention",
                        ParamGroup::Domain,
                        token_width,
                        att.heads,
                        att.bias,
                        &mut r,
                    )?),
                    None => None,
                };
                let mut widths = vec![token_width];
                widths.extend_from_slice(&head.hidden);
                widths.push(config.domain_count);
                let layers = linear_stack(&mut store, "domain.fc", ParamGroup::Domain, &widths, head.bias, &mut r)?;
                Some(DomainHead { attention, layers })
            }
        };

        Ok(AdldaModel {
            config,
            store,
            features,
            label_head,
            domain_head,
            token_width,
            token_count,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn has_domain_head(&self) -> bool {
        self.domain_head.is_some()
    }

    pub fn conv_block_count(&self) -> usize {
        match &self.features {
            FeatureLayers::Conv(b) => b.len(),
            FeatureLayers::Mlp(_) => 0,
        }
    }

    /// A copy without the domain head; every other parameter keeps its value.
    pub fn without_domain_head(&self) -> Result<Self> {
        let mut config = self.config.clone();
        config.domain_head = None;
        config.weighting = Weighting::Uniform;
        let mut stripped = AdldaModel::new(config, 0)?;
        for (id, p) in self.store.iter() {
            if p.group != ParamGroup::Domain {
                stripped.store.get_mut(id).value = p.value.clone();
            }
        }
        Ok(stripped)
    }

    /// Overwrites parameters by name; every parameter must be present with
    /// its declared shape and no extra names are accepted.
    pub fn load_params(&mut self, params: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<()> {
        let mut seen = vec![false; self.store.len()];
        for (name, value) in params {
            let id = self
                .store
                .find(&name)
                .ok_or_else(|| Error::param(name.clone(), "parameter not part of this architecture"))?;
            self.store.set(&name, value)?;
            seen[id.index()] = true;
        }
        if let Some((id, _)) = self.store.iter().find(|(id, _)| !seen[id.index()]) {
            return Err(Error::param(self.store.get(id).name.clone(), "missing from the parameter set"));
        }
        Ok(())
    }

    fn check_input(&self, g: &Graph<T>, images: Var) -> Result<usize> {
        let shape = g.shape(images);
        if shape.len() != 4 || shape[1..] != self.config.input[..] || shape[0] == 0 {
            let [c, h, w] = self.config.input;
            return Err(Error::ShapeMismatch {
                op: "model_input",
                lhs: shape,
                rhs: vec![0, c, h, w],
            });
        }
        Ok(shape[0])
    }

    /// `G_f`: returns the flat features and the last conv activation.
    fn extract(&self, g: &Graph<T>, bound: &Bound, images: Var) -> Result<(Var, Option<Var>)> {
        let n = self.check_input(g, images)?;
        match &self.features {
            FeatureLayers::Conv(blocks) => {
                let mut x = images;
                let mut last = None;
                for block in blocks {
                    let out = block.forward(g, bound, x)?;
                    last = Some(out.activation);
                    x = out.pooled;
                }
                let shape = g.shape(x);
                Ok((g.reshape(x, &[n, shape[1..].iter().product()])?, last))
            }
            FeatureLayers::Mlp(layers) => {
                let [c, h, w] = self.config.input;
                let flat = g.reshape(images, &[n, c * h * w])?;
                Ok((mlp(g, bound, layers, flat, true)?, None))
            }
        }
    }

    fn tokens(&self, g: &Graph<T>, flat: Var) -> Result<Var> {
        let n = g.shape(flat)[0];
        match &self.features {
            // Each spatial position becomes one token of its channel vector.
            FeatureLayers::Conv(_) => {
                let x = g.reshape(flat, &[n, self.token_width, self.token_count])?;
                g.permute(x, &[0, 2, 1])
            }
            FeatureLayers::Mlp(_) => g.reshape(flat, &[n, self.token_count, self.token_width]),
        }
    }

    /// Class path only; never reads a domain-head parameter.
    pub fn forward_class(&self, g: &Graph<T>, bound: &Bound, images: Var) -> Result<ClassOutputs> {
        let (features, last) = self.extract(g, bound, images)?;
        Ok(ClassOutputs {
            logits: mlp(g, bound, &self.label_head, features, false)?,
            features,
            last_conv_activation: last,
        })
    }

    /// Both paths on one tape, the domain path behind `GRL(λ)`.
    pub fn forward(&self, g: &Graph<T>, bound: &Bound, images: Var, domain_labels: &[usize], lambda: T) -> Result<ForwardOutputs> {
        let class = self.forward_class(g, bound, images)?;
        let domain = if self.domain_head.is_some() {
            let reversed = g.gradient_reversal(class.features, lambda)?;
            self.domain_head_forward(g, bound, reversed, domain_labels)?
        } else {
            DomainOutputs {
                logits: None,
                weights: vec![1.0; self.config.domain_count],
                tokens: self.tokens(g, class.features)?,
                maps: None,
            }
        };
        Ok(ForwardOutputs {
            class_logits: class.logits,
            domain_logits: domain.logits,
            domain_weights: domain.weights,
            features: domain.tokens,
            attention_maps: domain.maps,
            last_conv_activation: class.last_conv_activation,
        })
    }

    /// Domain path only: `G_f → GRL(λ) → G_d`.
    pub fn forward_domain(&self, g: &Graph<T>, bound: &Bound, images: Var, domain_labels: &[usize], lambda: T) -> Result<DomainOutputs> {
        let (features, _) = self.extract(g, bound, images)?;
        let reversed = g.gradient_reversal(features, lambda)?;
        self.domain_head_forward(g, bound, reversed, domain_labels)
    }

    /// `G_d` applied to flat features `N×F` (no reversal).
    pub fn domain_head_forward(&self, g: &Graph<T>, bound: &Bound, features: Var, domain_labels: &[usize]) -> Result<DomainOutputs> {
        let k = self.config.domain_count;
        let tokens = self.tokens(g, features)?;
        let Some(head) = &self.domain_head else {
            return Ok(DomainOutputs {
                logits: None,
                weights: vec![1.0; k],
                tokens,
                maps: None,
            });
        };
        let (attended, maps) = match &head.attention {
            Some(block) => {
                let out = block.forward(g, bound, tokens)?;
                (out.tokens, Some(out.maps))
            }
            None => (tokens, None),
        };
        let pooled = g.mean_axis(attended, 1)?;
        let logits = mlp(g, bound, &head.layers, pooled, false)?;
        let weights = match (self.config.weighting, maps) {
            (Weighting::Attention, Some(maps)) => attention_weights(&g.value(maps), domain_labels, k)?,
            _ => vec![1.0; k],
        };
        Ok(DomainOutputs {
            logits: Some(logits),
            weights,
            tokens,
            maps,
        })
    }
}

/// Values recorded by the domain path.
#[derive(Debug, Clone)]
pub struct DomainOutputs {
    pub logits: Option<Var>,
    pub weights: Vec<f64>,
    pub tokens: Var,
    pub maps: Option<Var>,
}

/// Per-sample attention score: the largest weight of each query row,
/// averaged over heads and rows.
pub fn attention_scores<T: Scalar>(maps: &Tensor<T>) -> Result<Vec<f64>> {
    let s = maps.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(Error::InvalidShape {
            op: "attention_scores",
            shape: s.to_vec(),
            reason: "expected N×H×T×T maps".into(),
        });
    }
    let (n, t) = (s[0], s[3]);
    let per_sample = s[1] * t;
    Ok((0..n)
        .map(|i| {
            let rows = &maps.data()[i * per_sample * t..(i + 1) * per_sample * t];
            let total: f64 = rows
                .chunks(t)
                .map(|row| row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max))
                .sum();
            total / per_sample as f64
        })
        .collect())
}

/// `a = K·softmax(s)` where `s_d` is the mean score of the domain-`d`
/// samples; absent domains take the mean of the present ones.
pub fn attention_weights<T: Scalar>(maps: &Tensor<T>, domain_labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let scores = attention_scores(maps)?;
    if scores.len() != domain_labels.len() {
        return Err(Error::param("domain_labels", "one label per sample required"));
    }
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&s, &d) in scores.iter().zip(domain_labels) {
        if d >= k {
            return Err(Error::LabelOutOfRange { label: d, count: k });
        }
        sums[d] += s;
        counts[d] += 1;
    }
    let present: Vec<f64> = (0..k).filter(|&d| counts[d] > 0).map(|d| sums[d] / counts[d] as f64).collect();
    let fallback = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let s: Vec<f64> = (0..k)
        .map(|d| if counts[d] > 0 { sums[d] / counts[d] as f64 } else { fallback })
        .collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| math::exp(v - max)).collect();
    let z: f64 = e.iter().sum();
    Ok(e.iter().map(|v| k as f64 * v / z).collect())
}

/// Loss scalars recorded on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// `L_Y + L_D'`.
    pub total: Var,
    pub class_loss: Var,
    /// `L_D'`; absent without a domain head.
    pub domain_loss: Option<Var>,
}

/// Per-sample coefficients `a_{d_i} / (K·n_{d_i})`, so that the weighted sum
/// of per-sample cross-entropies is `(1/K)·Σ_d a_d·mean_{i∈d} ce_i`.
pub fn domain_sample_weights(domain_labels: &[usize], weights: &[f64]) -> Result<Vec<f64>> {
    let k = weights.len();
    let mut counts = vec![0usize; k];
    for &d in domain_labels {
        if d >= k {
            return Err(Error::LabelOutOfRange { label: d, count: k });
        }
        counts[d] += 1;
    }
    Ok(domain_labels
        .iter()
        .map(|&d| weights[d] / (k as f64 * counts[d] as f64))
        .collect())
}

/// `L_Y = CE(class logits, y)`, `L_D' = (1/K)·Σ_d a_d·mean CE over domain d`
/// (absent domains add nothing), `total = L_Y + L_D'`. The adversarial sign
/// on `θ_f` comes from the GRL inside [`AdldaModel::forward`].
pub fn adlda_loss<T: Scalar>(
    g: &Graph<T>,
    outputs: &ForwardOutputs,
    class_labels: &[usize],
    domain_labels: &[usize],
) -> Result<LossVars> {
    let class_loss = g.cross_entropy(outputs.class_logits, class_labels)?;
    let Some(domain_logits) = outputs.domain_logits else {
        return Ok(LossVars {
            total: class_loss,
            class_loss,
            domain_loss: None,
        });
    };
    if domain_labels.len() != class_labels.len() {
        return Err(Error::param("domain_labels", "one domain label per sample required"));
    }
    let per_sample = g.cross_entropy_per_sample(domain_logits, domain_labels)?;
    let coeffs: Vec<T> = domain_sample_weights(domain_labels, &outputs.domain_weights)?
        .into_iter()
        .map(T::from_f64)
        .collect();
    let domain_loss = g.weighted_sum(per_sample, &coeffs)?;
    Ok(LossVars {
        total: g.add(class_loss, domain_loss)?,
        class_loss,
        domain_loss: Some(domain_loss),
    })
}
