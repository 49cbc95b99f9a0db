//! Training: one backward pass and one SGD step per batch.
//!
//! With the GRL inside the domain path, a single gradient of
//! `L_Y + L_D'` already holds
//!
//! ```text
//! θ_y:  ∂L_Y/∂θ_y
//! θ_d:  ∂L_D'/∂θ_d
//! θ_f:  ∂L_Y/∂θ_f − λ·∂L_D'/∂θ_f
//! ```
//!
//! so the update is plain `θ ← θ − η·g` (or its momentum form).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::augment::{label_and_augment, label_and_augment_all, AugmentKey, DomainLabeledSample, Partition};
use crate::autodiff::Graph;
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{adlda_loss, AdldaModel};
use crate::nn::ParamGroup;
use crate::rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// `λ_max·(2/(1+e^{−10p}) − 1)`, `p = epoch/total`.
    Warmup,
}

pub fn lambda_at(schedule: LambdaSchedule, epoch: usize, total_epochs: usize, lambda_max: f64) -> f64 {
    match schedule {
        LambdaSchedule::Constant => lambda_max,
        LambdaSchedule::Warmup => {
            let p = if total_epochs == 0 {
                1.0
            } else {
                epoch.min(total_epochs) as f64 / total_epochs as f64
            };
            lambda_max * (2.0 / (1.0 + math::exp(-10.0 * p)) - 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Learning rate η.
    pub eta: f64,
    /// DArate λ.
    pub lambda_max: f64,
    pub lambda_schedule: LambdaSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Train on every family's variant of each image instead of one draw.
    pub emit_all_variants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.01,
            lambda_max: 0.1,
            lambda_schedule: LambdaSchedule::Constant,
            epochs: 10,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
            eval_every: 1,
            emit_all_variants: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::param("eta", "must be finite and >= 0"));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(Error::param("lambda_max", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be positive"));
        }
        Ok(())
    }
}

/// SGD with optional heavy-ball momentum: `v ← μv + g; θ ← θ − ηv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub eta: T,
    pub momentum: T,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(eta: T, momentum: T) -> Self {
        Sgd {
            eta,
            momentum,
            velocity: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub class_loss: f64,
    /// `L_D'`; absent without a domain head.
    pub domain_loss: Option<f64>,
    pub lambda: f64,
    /// Scalars written by the update; equals the trainable scalar count.
    pub updated_scalars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOptions {
    /// Drop the gradient of one parameter group before the update.
    pub zero_grads_of: Option<ParamGroup>,
}

fn stack_batch<T: Scalar>(batch: &[DomainLabeledSample<T>]) -> Result<(Tensor<T>, Vec<usize>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::param("batch", "must not be empty"));
    }
    let images: Vec<&Tensor<T>> = batch.iter().map(|s| &s.image).collect();
    Ok((
        Tensor::stack(&images)?,
        batch.iter().map(|s| s.class_label).collect(),
        batch.iter().map(|s| s.domain_label).collect(),
    ))
}

/// Forward, one backward pass of `L_Y + L_D'`, one optimizer step.
pub fn train_step<T: Scalar>(
    model: &mut AdldaModel<T>,
    optimizer: &mut Sgd<T>,
    batch: &[DomainLabeledSample<T>],
    lambda: f64,
    step: usize,
    options: StepOptions,
) -> Result<StepReport> {
    let (images, y, d) = stack_batch(batch)?;
    let g = Graph::new();
    let bound = model.params().bind(&g);
    let x = g.constant(images);
    let out = model.forward(&g, &bound, x, &d, T::from_f64(lambda))?;
    let loss = adlda_loss(&g, &out, &y, &d)?;
    let class_loss = g.value(loss.class_loss).item().as_f64();
    let domain_loss = loss.domain_loss.map(|v| g.value(v).item().as_f64());
    if !class_loss.is_finite() || !domain_loss.unwrap_or(0.0).is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            class_loss,
            domain_loss: domain_loss.unwrap_or(0.0),
        });
    }
    let mut grads = g.backward(loss.total)?;

    let store = model.params_mut();
    optimizer.velocity.resize(store.len(), None);
    let (eta, mu) = (optimizer.eta, optimizer.momentum);
    let mut updated = 0;
    for (id, param) in store.iter_mut() {
        if !param.trainable {
            continue;
        }
        let mut grad = grads
            .take(bound[id])
            .unwrap_or_else(|| Tensor::zeros(param.value.shape()));
        if options.zero_grads_of == Some(param.group) {
            grad = Tensor::zeros(param.value.shape());
        }
        let direction = if mu == T::zero() {
            grad
        } else {
            let v = optimizer.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(param.value.shape()));
            for (vi, gi) in v.data_mut().iter_mut().zip(grad.data()) {
                *vi = mu * *vi + *gi;
            }
            v.clone()
        };
        for (w, step) in param.value.data_mut().iter_mut().zip(direction.data()) {
            *w = *w - eta * *step;
        }
        updated += param.value.numel();
    }
    Ok(StepReport {
        class_loss,
        domain_loss,
        lambda,
        updated_scalars: updated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Samples per forward pass during evaluation; results do not depend on it.
pub const EVAL_CHUNK: usize = 256;

/// Lowest index among the maxima.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Class accuracy and mean `L_Y` on clean images, class path only.
pub fn evaluate<T: Scalar>(model: &AdldaModel<T>, dataset: &Dataset<T>) -> Result<Evaluation> {
    let n = dataset.len();
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (images, labels) = dataset.gather(chunk);
        let g = Graph::new();
        let bound = model.params().bind(&g);
        let x = g.constant(images);
        let logits = model.forward_class(&g, &bound, x)?.logits;
        let per = g.cross_entropy_per_sample(logits, &labels)?;
        let values = g.value(logits);
        let classes = values.shape()[1];
        for (row, &y) in values.data().chunks(classes).zip(&labels) {
            correct += usize::from(argmax(row) == y);
        }
        loss += g.value(per).data().iter().map(|v| v.as_f64()).sum::<f64>();
    }
    Ok(Evaluation {
        accuracy: correct as f64 / n as f64,
        mean_loss: loss / n as f64,
    })
}

/// Fraction of samples whose domain label the domain head recovers.
pub fn domain_accuracy<T: Scalar>(model: &AdldaModel<T>, samples: &[DomainLabeledSample<T>]) -> Result<Option<f64>> {
    if !model.has_domain_head() || samples.is_empty() {
        return Ok(None);
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (images, _, d) = stack_batch(chunk)?;
        let g = Graph::new();
        let bound = model.params().bind(&g);
        let x = g.constant(images);
        let out = model.forward_domain(&g, &bound, x, &d, T::zero())?;
        let logits = g.value(out.logits.expect("domain head present"));
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks(k).zip(&d) {
            correct += usize::from(argmax(row) == label);
        }
    }
    Ok(Some(correct as f64 / samples.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean over the epoch's samples; absent for the initial row.
    pub train_ly: Option<f64>,
    pub train_ld: Option<f64>,
    pub test_acc: f64,
    pub test_loss: f64,
    pub test_domain_acc: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "epoch,train_ly,train_ld,test_acc,test_domain_acc,wall_ms";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl Metrics {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// CSV with [`METRICS_HEADER`]; floats use the shortest round-trip
    /// decimal form and missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                cell(r.train_ly),
                cell(r.train_ld),
                r.test_acc,
                cell(r.test_domain_acc),
                r.wall_ms
            );
        }
        out
    }
}

/// Callbacks and instrumentation for [`fit`].
#[derive(Default)]
pub struct FitHooks<'a, T> {
    pub step_options: StepOptions,
    /// Called after every step with the global step index.
    pub on_step: Option<&'a mut dyn FnMut(usize, &AdldaModel<T>)>,
    /// Milliseconds since some fixed origin; `wall_ms` stays 0 without it.
    pub clock: Option<&'a dyn Fn() -> u64>,
}

/// Runs `config.epochs` epochs of augment → train_step, evaluating before
/// the first epoch, every `eval_every` epochs and after the last.
pub fn fit<T: Scalar>(
    model: &mut AdldaModel<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    partition: &Partition,
    config: &TrainConfig,
    hooks: FitHooks<'_, T>,
) -> Result<Metrics> {
    config.validate()?;
    if partition.domain_count() != model.config().domain_count {
        return Err(Error::param(
            "partition",
            format!(
                "{} augmentation families for a {}-domain model",
                partition.domain_count(),
                model.config().domain_count
            ),
        ));
    }
    if config.batch_size > train.len() {
        return Err(Error::param("batch_size", format!("{} exceeds the {} training samples", config.batch_size, train.len())));
    }
    let FitHooks {
        step_options,
        mut on_step,
        clock,
    } = hooks;
    let now = || clock.map(|c| c()).unwrap_or(0);
    let start = now();

    let train_images: Vec<Tensor<T>> = (0..train.len()).map(|i| train.image(i)).collect();
    let test_images: Vec<Tensor<T>> = (0..test.len()).map(|i| test.image(i)).collect();
    let eval_key = AugmentKey {
        seed: config.seed,
        stream: rng::EVAL_AUGMENT,
        epoch: 0,
    };
    let augmented_test = if model.has_domain_head() {
        label_and_augment(
            test_images.iter().zip(test.labels()).enumerate().map(|(i, (x, &y))| (i, x, y)),
            partition,
            eval_key,
        )?
    } else {
        Vec::new()
    };
    drop(test_images);

    let mut metrics = Metrics::default();
    let mut evaluate_row = |model: &AdldaModel<T>, epoch: usize, ly: Option<f64>, ld: Option<f64>, wall: u64| -> Result<()> {
        let eval = evaluate(model, test)?;
        metrics.rows.push(MetricsRow {
            epoch,
            train_ly: ly,
            train_ld: ld,
            test_acc: eval.accuracy,
            test_loss: eval.mean_loss,
            test_domain_acc: domain_accuracy(model, &augmented_test)?,
            wall_ms: wall,
        });
        Ok(())
    };
    evaluate_row(model, 0, None, None, 0)?;

    let mut optimizer = Sgd::new(T::from_f64(config.eta), T::from_f64(config.momentum));
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let lambda = lambda_at(config.lambda_schedule, epoch - 1, config.epochs, config.lambda_max);
        let key = AugmentKey::training(config.seed, epoch as u64);
        let (mut ly_sum, mut ld_sum, mut seen) = (0.0, 0.0, 0usize);
        let mut has_ld = false;
        for batch in batch_indices(train.len(), config.batch_size, config.seed, epoch as u64)? {
            let sources = batch.iter().map(|&i| (i, &train_images[i], train.labels()[i]));
            let samples = if config.emit_all_variants {
                label_and_augment_all(sources, partition, key)?
            } else {
                label_and_augment(sources, partition, key)?
            };
            let report = train_step(model, &mut optimizer, &samples, lambda, step, step_options)?;
            ly_sum += report.class_loss * samples.len() as f64;
            if let Some(ld) = report.domain_loss {
                ld_sum += ld * samples.len() as f64;
                has_ld = true;
            }
            seen += samples.len();
            if let Some(cb) = on_step.as_mut() {
                cb(step, model);
            }
            step += 1;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let ld = has_ld.then(|| ld_sum / seen as f64);
            evaluate_row(model, epoch, Some(ly_sum / seen as f64), ld, now().saturating_sub(start))?;
        }
    }
    Ok(metrics)
}

/// Identity-only partition with `k` domains: every sample stays clean.
pub fn clean_partition(template: &Partition) -> Result<Partition> {
    let mut p = vec![0.0; template.domain_count()];
    p[0] = 1.0;
    template.with_probabilities(p)
}
