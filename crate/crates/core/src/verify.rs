//! Closed-form single-step oracle for the three update rules.
//!
//! The toy network has nine scalars, all without biases:
//!
//! ```text
//! h   = relu(w_f·x)                      feature extractor (θ_f)
//! z_j = u_j·h                            label head, j ∈ {0,1} (θ_y)
//! e   = o·v·h                            one-token attention: the map is 1
//! r_j = c_j·e                            domain head, j ∈ {0,1} (θ_d ∋ q,k,v,o,c)
//! ```
//!
//! The updates are written out by hand from those formulas and compared
//! with what [`train_step`](crate::train::train_step) produces.

use alloc::vec;
use alloc::vec::Vec;

use crate::augment::DomainLabeledSample;
use crate::error::Result;
use crate::math;
use crate::model::{AdldaModel, AttentionConfig, DomainHeadConfig, Extractor, ModelConfig, Weighting};
use crate::train::{train_step, Sgd, StepOptions};
use crate::tensor::Tensor;

/// Inputs and starting point of one oracle step.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCase {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub d: Vec<usize>,
    pub w_f: f64,
    pub u: [f64; 2],
    pub q: f64,
    pub k: f64,
    pub v: f64,
    pub o: f64,
    pub c: [f64; 2],
    pub eta: f64,
    pub lambda: f64,
}

impl ToyCase {
    pub fn standard(lambda: f64) -> Self {
        ToyCase {
            x: vec![0.9, 0.35, 0.6, 0.15],
            y: vec![0, 1, 1, 0],
            d: vec![0, 1, 0, 0],
            w_f: 1.3,
            u: [0.7, -0.4],
            q: 0.5,
            k: -0.3,
            v: 0.9,
            o: 1.1,
            c: [-0.6, 0.8],
            eta: 0.1,
            lambda,
        }
    }

    /// Parameter values in the order of [`ToyCase::names`].
    pub fn values(&self) -> [f64; 9] {
        [self.w_f, self.u[0], self.u[1], self.q, self.k, self.v, self.o, self.c[0], self.c[1]]
    }

    pub fn names() -> [&'static str; 9] {
        [
            "features.fc.0.weight",
            "label.fc.0.weight[0]",
            "label.fc.0.weight[1]",
            "domain.attention.query",
            "domain.attention.key",
            "domain.attention.value",
            "domain.attention.output",
            "domain.fc.0.weight[0]",
            "domain.fc.0.weight[1]",
        ]
    }
}

fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let (ea, eb) = (math::exp(a - m), math::exp(b - m));
    [ea / (ea + eb), eb / (ea + eb)]
}

/// The three update rules evaluated by hand.
pub fn hand_update(case: &ToyCase) -> [f64; 9] {
    let n = case.x.len() as f64;
    let k_domains = 2.0;
    let counts = [0, 1].map(|j| case.d.iter().filter(|&&d| d == j).count() as f64);

    let (mut g_u, mut g_wf_y) = ([0.0; 2], 0.0);
    let (mut g_c, mut g_o, mut g_v, mut g_wf_d) = ([0.0; 2], 0.0, 0.0, 0.0);
    for i in 0..case.x.len() {
        let pre = case.w_f * case.x[i];
        let active = if pre > 0.0 { 1.0 } else { 0.0 };
        let h = pre.max(0.0);

        // L_Y = mean_i CE(u·h_i, y_i)
        let p = softmax2(case.u[0] * h, case.u[1] * h);
        let dz = [0, 1].map(|j| (p[j] - f64::from(u8::from(case.y[i] == j))) / n);
        g_u[0] += dz[0] * h;
        g_u[1] += dz[1] * h;
        g_wf_y += (dz[0] * case.u[0] + dz[1] * case.u[1]) * active * case.x[i];

        // L_D' = Σ_i a_{d_i}/(K·n_{d_i}) · CE(c·e_i, d_i), a = 1
        let weight = 1.0 / (k_domains * counts[case.d[i]]);
        let e = case.o * case.v * h;
        let q = softmax2(case.c[0] * e, case.c[1] * e);
        let dr = [0, 1].map(|j| weight * (q[j] - f64::from(u8::from(case.d[i] == j))));
        g_c[0] += dr[0] * e;
        g_c[1] += dr[1] * e;
        let de = dr[0] * case.c[0] + dr[1] * case.c[1];
        g_o += de * case.v * h;
        g_v += de * case.o * h;
        g_wf_d += de * case.o * case.v * active * case.x[i];
    }
    let eta = case.eta;
    [
        case.w_f - eta * (g_wf_y - case.lambda * g_wf_d),
        case.u[0] - eta * g_u[0],
        case.u[1] - eta * g_u[1],
        // A single token's attention map is constant, so q and k get no gradient.
        case.q,
        case.k,
        case.v - eta * g_v,
        case.o - eta * g_o,
        case.c[0] - eta * g_c[0],
        case.c[1] - eta * g_c[1],
    ]
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        input: [1, 1, 1],
        class_count: 2,
        domain_count: 2,
        extractor: Extractor::Mlp {
            hidden: vec![1],
            bias: false,
            tokens: 1,
        },
        label_hidden: Vec::new(),
        label_bias: false,
        domain_head: Some(DomainHeadConfig {
            attention: Some(AttentionConfig { heads: 1, bias: false }),
            hidden: Vec::new(),
            bias: false,
        }),
        weighting: Weighting::Uniform,
    }
}

/// The toy model with `case`'s parameter values.
pub fn toy_model(case: &ToyCase) -> Result<AdldaModel<f64>> {
    let mut model = AdldaModel::new(toy_config(), 0)?;
    let t = |v: &[f64], shape: &[usize]| Tensor::from_f64(shape, v);
    let store = model.params_mut();
    store.set("features.fc.0.weight", t(&[case.w_f], &[1, 1])?)?;
    store.set("label.fc.0.weight", t(&case.u, &[1, 2])?)?;
    store.set("domain.attention.query", t(&[case.q], &[1, 1])?)?;
    store.set("domain.attention.key", t(&[case.k], &[1, 1])?)?;
    store.set("domain.attention.value", t(&[case.v], &[1, 1])?)?;
    store.set("domain.attention.output", t(&[case.o], &[1, 1])?)?;
    store.set("domain.fc.0.weight", t(&case.c, &[1, 2])?)?;
    Ok(model)
}

fn flat_values(model: &AdldaModel<f64>) -> [f64; 9] {
    let get = |name: &str| model.params().get(model.params().find(name).expect("toy parameter")).value.data().to_vec();
    let (wf, u, c) = (get("features.fc.0.weight"), get("label.fc.0.weight"), get("domain.fc.0.weight"));
    [
        wf[0],
        u[0],
        u[1],
        get("domain.attention.query")[0],
        get("domain.attention.key")[0],
        get("domain.attention.value")[0],
        get("domain.attention.output")[0],
        c[0],
        c[1],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub lambda: f64,
    pub parameter_count: usize,
    pub stepped: [f64; 9],
    pub expected: [f64; 9],
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// One momentum-free [`train_step`] on the toy model against [`hand_update`].
pub fn single_step_check(case: &ToyCase) -> Result<OracleReport> {
    let mut model = toy_model(case)?;
    let batch: Vec<DomainLabeledSample<f64>> = (0..case.x.len())
        .map(|i| {
            Ok(DomainLabeledSample {
                image: Tensor::from_f64(&[1, 1, 1], &[case.x[i]])?,
                class_label: case.y[i],
                domain_label: case.d[i],
                source_index: i,
            })
        })
        .collect::<Result<_>>()?;
    let mut sgd = Sgd::new(case.eta, 0.0);
    train_step(&mut model, &mut sgd, &batch, case.lambda, 0, StepOptions::default())?;
    let stepped = flat_values(&model);
    let expected = hand_update(case);
    let max_abs_error = stepped
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(OracleReport {
        lambda: case.lambda,
        parameter_count: model.params().trainable_scalars(),
        stepped,
        expected,
        max_abs_error,
        tolerance: ORACLE_TOLERANCE,
        passed: max_abs_error <= ORACLE_TOLERANCE && max_abs_error.is_finite(),
    })
}

/// The λ grid used by the command-line check.
pub const ORACLE_LAMBDAS: [f64; 3] = [0.0, 0.3, 1.0];
