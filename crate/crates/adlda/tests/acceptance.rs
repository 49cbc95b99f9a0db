//! One PASS/FAIL line per acceptance criterion, tolerances pinned below.
//!
//! Exits 0 so `cargo test` stays green while reporting honest failures; set
//! `ADLDA_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use adlda::commands::{run_demo, train_model, Condition, DemoRow};
use adlda::config::{DatasetSpec, FileDataset, ModelSpec, RunConfig};
use adlda::datasets::{self, Loaded};
use adlda::parallel;
use adlda::stats::{mean, PairedDiff};
use adlda_core::augment::Partition;
use adlda_core::autodiff::Graph;
use adlda_core::cam::{box_mass_fraction, cam_from_parts, grad_cam, heatmap_to_ppm, Heatmap};
use adlda_core::data::{cifar, mnist, Split};
use adlda_core::gradcheck::{run_suite, F32_TOLERANCE, F64_TOLERANCE};
use adlda_core::model::{AdldaModel, AttentionConfig, DomainHeadConfig, Extractor, ModelConfig, Weighting};
use adlda_core::nn::ParamGroup;
use adlda_core::train::{fit, FitHooks, TrainConfig};
use adlda_core::verify::{single_step_check, ToyCase};
use adlda_core::{Error, FormatError, Tensor};
use rand::Rng;

const GRADCHECK_POINTS: usize = 10;
const GRADCHECK_BUDGET_S: f64 = 60.0;
const ORACLE_TOLERANCE: f64 = 1e-10;
const ORACLE_LAMBDAS: [f64; 3] = [0.0, 0.3, 1.0];
const ORACLE_MAX_PARAMS: usize = 10;
const GRL_LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];
const DEMO_MIN_SEEDS: usize = 5;
const DEMO_BUDGET_S: f64 = 300.0;
const CIFAR_ENV: &str = "ADLDA_CIFAR10_DIR";
const CIFAR_TRAIN: usize = 5000;
const CIFAR_TEST: usize = 1000;
const CIFAR_SEEDS: [u64; 3] = [0, 1, 2];
const CIFAR_LAMBDAS: [f64; 4] = [0.05, 0.1, 0.3, 0.5];
const CIFAR_BUDGET_S_PER_SEED: f64 = 1800.0;
const CAM_ORACLE_TOLERANCE: f64 = 1e-5;
const CAM_LAMBDAS: [f64; 4] = [0.0, 0.1, 0.5, 1.0];
const CAM_IMAGES: usize = 8;
const CAM_SCALES: [f64; 4] = [1e-3, 0.5, 3.0, 1e3];

const SYNTH_CONFIG: &str = include_str!("../../../configs/synth_demo.json");
const OBJECTS_CONFIG: &str = include_str!("../../../configs/objects.json");
const CIFAR_CONFIG: &str = include_str!("../../../configs/cifar10_subset.json");

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn artifacts_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("artifact dir");
    dir
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let suite = run_suite(GRADCHECK_POINTS, None).map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let worst32 = suite.iter().map(|s| s.f32.max_rel_error).fold(0.0, f64::max);
    let worst64 = suite.iter().map(|s| s.f64.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = suite.iter().filter(|s| !s.passed()).map(|s| s.name).collect();
    ensure(F32_TOLERANCE == 1e-4 && F64_TOLERANCE == 1e-7, "tolerances drifted")?;
    let detail = format!(
        "{} ops x {GRADCHECK_POINTS} points, worst rel err f32 {worst32:.2e} (< 1e-4), f64 {worst64:.2e} (< 1e-7), {secs:.1} s",
        suite.len()
    );
    ensure(failed.is_empty(), format!("{detail}; failing: {failed:?}"))?;
    ensure(secs < GRADCHECK_BUDGET_S, format!("{detail}; over the {GRADCHECK_BUDGET_S} s budget"))?;
    Ok(detail)
}

fn oracle() -> Outcome {
    let mut parts = Vec::new();
    for lambda in ORACLE_LAMBDAS {
        let r = single_step_check(&ToyCase::standard(lambda)).map_err(e)?;
        ensure(r.parameter_count <= ORACLE_MAX_PARAMS, format!("toy model has {} parameters", r.parameter_count))?;
        ensure(
            r.max_abs_error <= ORACLE_TOLERANCE,
            format!("λ={lambda}: max abs error {:.2e} > {ORACLE_TOLERANCE:e}", r.max_abs_error),
        )?;
        parts.push(format!("λ={lambda}: {:.1e}", r.max_abs_error));
    }
    Ok(format!("{} params, float64, max abs err {} (≤ 1e-10)", ToyCase::names().len(), parts.join(", ")))
}

fn grl_for<T: adlda_core::Scalar>(seed: u64) -> Result<(), String> {
    let mut r = adlda_core::rng::stream(seed, "acceptance:grl", 0, 0);
    let x: Vec<f64> = (0..24).map(|_| r.random_range(-3.0..3.0)).collect();
    let w: Vec<T> = (0..24).map(|_| T::from_f64(r.random_range(-2.0..2.0))).collect();
    let x = Tensor::<T>::from_f64(&[4, 6], &x).map_err(e)?;
    for lambda in GRL_LAMBDAS {
        let lam = T::from_f64(lambda);
        let g = Graph::new();
        let xv = g.param(x.clone());
        let y = g.gradient_reversal(xv, lam).map_err(e)?;
        let same = g.value(y).data().iter().zip(x.data()).all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits());
        ensure(same, format!("forward not bitwise identity at λ={lambda}"))?;
        let loss = g.weighted_sum(y, &w).map_err(e)?;
        let grads = g.backward(loss).map_err(e)?;
        let gx = grads.get(xv).ok_or("missing gradient")?;
        for (gi, wi) in gx.data().iter().zip(&w) {
            let want = -lam * *wi;
            ensure(gi.as_f64().to_bits() == want.as_f64().to_bits(), format!("λ={lambda}: {gi:?} != {want:?}"))?;
        }

        let g = Graph::new();
        let xv = g.param(x.clone());
        let once = g.gradient_reversal(xv, lam).map_err(e)?;
        let twice = g.gradient_reversal(once, lam).map_err(e)?;
        let loss = g.weighted_sum(twice, &w).map_err(e)?;
        let grads = g.backward(loss).map_err(e)?;
        for (gi, wi) in grads.get(xv).ok_or("missing gradient")?.data().iter().zip(&w) {
            let want = lam * lam * *wi;
            ensure(gi.as_f64().to_bits() == want.as_f64().to_bits(), format!("double λ={lambda}: {gi:?} != {want:?}"))?;
            if lambda > 0.0 && *wi != T::zero() {
                ensure((gi.as_f64() > 0.0) == (wi.as_f64() > 0.0), "double reversal did not restore the sign")?;
            }
        }
    }
    Ok(())
}

fn grl() -> Outcome {
    for seed in 0..4 {
        grl_for::<f32>(seed)?;
        grl_for::<f64>(seed)?;
    }
    Ok("forward bitwise identity; backward == −λ·upstream bitwise for λ ∈ {0, 0.5, 1} (f32, f64); GRL∘GRL gives +λ²·upstream".into())
}

fn objects() -> Result<(RunConfig, Loaded, Partition), String> {
    let config = RunConfig::parse(OBJECTS_CONFIG.as_bytes()).map_err(e)?;
    let data = datasets::load(&config.dataset).map_err(e)?;
    let partition = config.augmentation.partition().map_err(e)?;
    Ok((config, data, partition))
}

/// Bits of every feature and label parameter after each step.
fn class_trajectory(model: AdldaModel<f32>, data: &Loaded, partition: &Partition, train: &TrainConfig) -> Result<Vec<Vec<u32>>, String> {
    let mut model = model;
    let mut steps = Vec::new();
    let mut record = |_: usize, m: &AdldaModel<f32>| {
        steps.push(
            m.params()
                .iter()
                .filter(|(_, p)| p.group != ParamGroup::Domain)
                .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()))
                .collect(),
        );
    };
    let hooks = FitHooks { on_step: Some(&mut record), ..FitHooks::default() };
    fit(&mut model, &data.train, &data.test, partition, train, hooks).map_err(e)?;
    Ok(steps)
}

fn isolation() -> Outcome {
    let (config, data, partition) = objects()?;
    let seed = config.seed;
    let train = TrainConfig { lambda_max: 0.0, ..config.train.with_seed(seed) };
    let base = config.model.resolve(data.train.image_shape(), data.train.class_count(), partition.domain_count());
    let wide_head = DomainHeadConfig { attention: Some(AttentionConfig { heads: 4, bias: false }), hidden: vec![16, 16], bias: true };
    let mut variants: Vec<(&str, AdldaModel<f32>)> = vec![
        ("no head", AdldaModel::new(ModelConfig { domain_head: None, ..base.clone() }, seed).map_err(e)?),
        ("default head", AdldaModel::new(base.clone(), seed).map_err(e)?),
        ("wide head", AdldaModel::new(ModelConfig { domain_head: Some(wide_head), ..base.clone() }, seed).map_err(e)?),
        ("attention weighting", AdldaModel::new(ModelConfig { weighting: Weighting::Attention, ..base.clone() }, seed).map_err(e)?),
    ];
    let mut reinit = AdldaModel::new(base.clone(), seed).map_err(e)?;
    let donor = AdldaModel::<f32>::new(base.clone(), seed + 1000).map_err(e)?;
    for ((_, p), (_, d)) in reinit.params_mut().iter_mut().zip(donor.params().iter()) {
        if p.group == ParamGroup::Domain {
            p.value = d.value.clone();
        }
    }
    variants.push(("re-initialized head", reinit));

    let mut reference: Option<Vec<Vec<u32>>> = None;
    for (name, model) in variants.iter().cloned() {
        let t = class_trajectory(model, &data, &partition, &train)?;
        match &reference {
            None => reference = Some(t),
            Some(r) => ensure(*r == t, format!("class trajectory of `{name}` differs from `no head`"))?,
        }
    }
    let steps = reference.map_or(0, |r| r.len());
    Ok(format!(
        "{} variants x {steps} SGD steps ({} epochs, {} train images), feature+label parameters bitwise equal",
        variants.len(),
        train.epochs,
        data.train.len()
    ))
}

struct DemoResult {
    rows: Vec<DemoRow>,
    secs: f64,
}

impl DemoResult {
    fn losses(&self, c: Condition) -> Vec<f64> {
        self.rows.iter().filter(|r| r.condition == c).map(|r| r.clean_test_loss).collect()
    }
}

fn demo() -> Result<DemoResult, String> {
    let config = RunConfig::parse(SYNTH_CONFIG.as_bytes()).map_err(e)?;
    let start = Instant::now();
    let data = datasets::load(&config.dataset).map_err(e)?;
    let rows = run_demo(&config, &data, &config.demo.seeds).map_err(e)?;
    Ok(DemoResult { rows, secs: start.elapsed().as_secs_f64() })
}

fn eq1(demo: &Result<DemoResult, String>) -> Outcome {
    let d = demo.as_ref().map_err(Clone::clone)?;
    let (a, b) = (d.losses(Condition::Clean), d.losses(Condition::Augmented));
    let diff = PairedDiff::of(&b, &a);
    let detail = format!(
        "{} seeds, mean clean-test loss a={:.5} b={:.5}, b−a={:.5} (SE {:.5}), {:.1} s",
        a.len(), mean(&a), mean(&b), diff.mean, diff.std_err, d.secs
    );
    ensure(a.len() >= DEMO_MIN_SEEDS, format!("{detail}; fewer than {DEMO_MIN_SEEDS} seeds"))?;
    ensure(diff.exceeds_two_se(), format!("{detail}; not > 2 SE"))?;
    ensure(d.secs < DEMO_BUDGET_S, format!("{detail}; over budget"))?;
    Ok(detail)
}

fn cifar_half() -> Result<String, String> {
    let dir = std::env::var_os(CIFAR_ENV).ok_or(format!("CIFAR-10 not available (set {CIFAR_ENV} to the binary batch directory)"))?;
    let mut raw: serde_json::Value = serde_json::from_str(CIFAR_CONFIG).map_err(e)?;
    raw["dataset"]["path"] = serde_json::Value::String(dir.to_string_lossy().into_owned());
    let mut config = RunConfig::parse(&serde_json::to_vec(&raw).map_err(e)?).map_err(e)?;
    config.dataset = DatasetSpec::Cifar10(FileDataset {
        path: dir.into(),
        train_subset: Some(CIFAR_TRAIN),
        test_subset: Some(CIFAR_TEST),
        subset_seed: 0,
    });
    config.model = ModelSpec::default();
    let start = Instant::now();
    let data = datasets::load(&config.dataset).map_err(e)?;
    let partition = Partition::standard();
    let jobs: Vec<(f64, u64)> = std::iter::once(0.0).chain(CIFAR_LAMBDAS).flat_map(|l| CIFAR_SEEDS.map(|s| (l, s))).collect();
    let accs = parallel::map(&jobs, parallel::thread_cap(), |&(l, s)| {
        train_model(&config, &data, &partition, l, s).map(|(_, m)| m.last().unwrap().test_acc)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(e)?;
    let per_seed = start.elapsed().as_secs_f64() / CIFAR_SEEDS.len() as f64;
    let mean_of = |lambda: f64| mean(&jobs.iter().zip(&accs).filter(|((l, _), _)| *l == lambda).map(|(_, a)| *a).collect::<Vec<_>>());
    let baseline = mean_of(0.0);
    let (best_l, best) = CIFAR_LAMBDAS.iter().map(|&l| (l, mean_of(l))).fold((0.0, f64::MIN), |m, x| if x.1 > m.1 { x } else { m });
    let detail = format!("CIFAR λ=0 acc {baseline:.4}, best λ={best_l} acc {best:.4}, {per_seed:.0} s/seed");
    ensure(best >= baseline, format!("{detail}; no λ matches the baseline"))?;
    ensure(per_seed < CIFAR_BUDGET_S_PER_SEED, format!("{detail}; over budget"))?;
    Ok(detail)
}

fn benefit(demo: &Result<DemoResult, String>) -> Outcome {
    let synthetic = demo.as_ref().map_err(Clone::clone).and_then(|d| {
        let (b, c) = (d.losses(Condition::Augmented), d.losses(Condition::Adversarial));
        let diff = PairedDiff::of(&b, &c);
        let detail = format!("synthetic c={:.5} vs b={:.5}, b−c={:.5} (SE {:.5})", mean(&c), mean(&b), diff.mean, diff.std_err);
        if diff.exceeds_two_se() {
            Ok(detail)
        } else {
            Err(format!("{detail}, not > 2 SE"))
        }
    });
    let cifar = cifar_half();
    match (&cifar, &synthetic) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        _ => Err(format!(
            "{}; {}",
            cifar.unwrap_or_else(|x| x),
            synthetic.unwrap_or_else(|x| x)
        )),
    }
}

/// 3×3 zero-padded box sum of a single-channel image, divided by its max.
fn box_sum_oracle(x: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for xx in 0..side {
            let mut s = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(side) {
                for xc in xx.saturating_sub(1)..(xx + 2).min(side) {
                    s += x[yy * side + xc];
                }
            }
            out[y * side + xx] = s;
        }
    }
    let peak = out.iter().cloned().fold(0.0, f64::max);
    out.into_iter().map(|v| v / peak).collect()
}

fn single_filter_error() -> Result<f64, String> {
    let side = 8;
    let config = ModelConfig {
        input: [1, side, side],
        class_count: 2,
        domain_count: 2,
        extractor: Extractor::Conv { filters: vec![1], kernel_size: 3, bias: false },
        label_hidden: Vec::new(),
        label_bias: false,
        domain_head: None,
        weighting: Weighting::Uniform,
    };
    let mut model = AdldaModel::<f32>::new(config, 0).map_err(e)?;
    let flat = (side / 2) * (side / 2);
    let head: Vec<f64> = (0..flat * 2).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    model.params_mut().set("features.conv0.kernel", Tensor::ones(&[1, 1, 3, 3])).map_err(e)?;
    model.params_mut().set("label.fc.0.weight", Tensor::from_f64(&[flat, 2], &head).map_err(e)?).map_err(e)?;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = adlda_core::rng::stream(seed, "acceptance:cam", 0, 0);
        let x: Vec<f64> = (0..side * side).map(|_| r.random::<f64>()).collect();
        let heat = grad_cam(&model, &Tensor::from_f64(&[1, side, side], &x).map_err(e)?, 0).map_err(e)?;
        for (a, b) in heat.values.iter().zip(box_sum_oracle(&x, side)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn heatmap_ok(h: &Heatmap, side: usize) -> Result<(), String> {
    ensure((h.height, h.width) == (side, side), "heatmap not at input resolution")?;
    ensure(h.values.iter().all(|v| (0.0..=1.0).contains(v)), "heatmap value outside [0, 1]")?;
    let peak = h.max();
    ensure(peak == 0.0 || (peak - 1.0).abs() < 1e-12, format!("heatmap max {peak} is neither 0 nor 1"))
}

fn last_conv_parts(model: &AdldaModel<f32>, image: &Tensor<f32>, class: usize) -> Result<(Tensor<f32>, Tensor<f32>), String> {
    let [c, h, w] = model.config().input;
    let g = Graph::new();
    let bound = model.params().bind(&g);
    let x = g.constant(image.reshape(&[1, c, h, w]).map_err(e)?);
    let out = model.forward_class(&g, &bound, x).map_err(e)?;
    let act = out.last_conv_activation.ok_or("no conv activation")?;
    let mut sel = vec![0.0f32; model.config().class_count];
    sel[class] = 1.0;
    let logit = g.weighted_sum(out.logits, &sel).map_err(e)?;
    let grads = g.backward(logit).map_err(e)?;
    let shape = g.shape(act);
    let s = [shape[1], shape[2], shape[3]];
    let a = g.value(act).reshape(&s).map_err(e)?;
    let gr = grads.get(act).map(|t| t.reshape(&s)).transpose().map_err(e)?.unwrap_or_else(|| Tensor::zeros(&s));
    Ok((a, gr))
}

fn gradcam() -> Outcome {
    let oracle_err = single_filter_error()?;
    ensure(oracle_err <= CAM_ORACLE_TOLERANCE, format!("single-filter oracle error {oracle_err:.2e}"))?;

    let (config, data, partition) = objects()?;
    let boxes = data.test_boxes.clone().ok_or("objects fixture without boxes")?;
    let side = data.test.image_shape()[1];
    let out = artifacts_dir();
    let mut masses = Vec::new();
    let mut first_model = None;
    for lambda in CAM_LAMBDAS {
        let (model, _) = train_model(&config, &data, &partition, lambda, config.seed).map_err(e)?;
        let mut mass = Vec::new();
        for i in 0..CAM_IMAGES {
            let image = data.test.image(i);
            let heat = grad_cam(&model, &image, data.test.labels()[i]).map_err(e)?;
            heatmap_ok(&heat, side)?;
            mass.push(box_mass_fraction(&heat, &boxes[i]));
            let ppm = heatmap_to_ppm(&heat, &image, config.cam.alpha).map_err(e)?;
            std::fs::write(out.join(format!("cam_lambda{lambda}_{i}.ppm")), ppm).map_err(e)?;
        }
        masses.push(format!("λ={lambda}: {:.3}", mean(&mass)));
        first_model.get_or_insert(model);
    }

    let model = first_model.expect("at least one λ");
    for i in 0..CAM_IMAGES {
        let (a, g) = last_conv_parts(&model, &data.test.image(i), data.test.labels()[i])?;
        let base = cam_from_parts(&a, &g, side, side).map_err(e)?;
        for c in CAM_SCALES {
            let scaled = cam_from_parts(&a.map(|v| v * c as f32), &g, side, side).map_err(e)?;
            ensure(scaled.argmax() == base.argmax(), format!("argmax moved under scale {c} on image {i}"))?;
        }
    }
    Ok(format!(
        "oracle err {oracle_err:.1e} (≤ 1e-5); {} heatmaps in [0,1], max 1, {side}x{side}; argmax stable under scales {CAM_SCALES:?}; box mass {} (overlays in {})",
        CAM_IMAGES * CAM_LAMBDAS.len(),
        masses.join(", "),
        out.display()
    ))
}

fn formats() -> Outcome {
    let mut r = adlda_core::rng::stream(0, "acceptance:formats", 0, 0);
    let mut bytes = Vec::new();
    for i in 0..7 {
        bytes.push((i % 10) as u8);
        bytes.extend((0..cifar::PIXELS).map(|_| r.random::<u8>()));
    }
    let records = cifar::parse(&bytes).map_err(e)?;
    ensure(cifar::serialize(&records) == bytes, "CIFAR parse→serialize differs")?;
    let ds = records.to_dataset::<f32>(Split::Test).map_err(e)?;
    ensure(cifar::serialize(&cifar::CifarRecords::from_dataset(&ds).map_err(e)?) == bytes, "CIFAR dataset round trip differs")?;

    let images = mnist::encode_images(2, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110]);
    let labels = mnist::encode_labels(&[1, 2, 3]);
    mnist::load::<f32>(&images, &labels, Split::Train).map_err(e)?;
    let fmt = |r: adlda_core::Result<_>| match r {
        Err(Error::Format(f)) => Ok(f),
        other => Err(format!("expected a format error, got {:?}", other.map(|_: adlda_core::data::Dataset<f32>| ()))),
    };
    let mut bad_magic = images.clone();
    bad_magic[3] = 0x01;
    let mut bad_label_magic = labels.clone();
    bad_label_magic[3] = 0x03;
    let short_labels = mnist::encode_labels(&[1, 2]);
    let truncated = &images[..images.len() - 1];
    let errs = [
        fmt(mnist::load::<f32>(&bad_magic, &labels, Split::Train))?,
        fmt(mnist::load::<f32>(&images, &bad_label_magic, Split::Train))?,
        fmt(mnist::load::<f32>(&images, &short_labels, Split::Train))?,
        fmt(mnist::load::<f32>(truncated, &labels, Split::Train))?,
    ];
    ensure(matches!(errs[0], FormatError::IdxMagic { file: "images", .. }), format!("{:?}", errs[0]))?;
    ensure(matches!(errs[1], FormatError::IdxMagic { file: "labels", .. }), format!("{:?}", errs[1]))?;
    ensure(matches!(errs[2], FormatError::IdxCountMismatch { .. }), format!("{:?}", errs[2]))?;
    ensure(matches!(errs[3], FormatError::IdxTruncated { .. }), format!("{:?}", errs[3]))?;
    for i in 0..errs.len() {
        for j in i + 1..errs.len() {
            ensure(errs[i] != errs[j], "MNIST errors are not distinct")?;
        }
    }

    let (config, data, partition) = objects()?;
    let run = || -> Result<(String, Vec<u8>), String> {
        let (model, metrics) = train_model(&config, &data, &partition, config.train.lambda_max, 3).map_err(e)?;
        let image = data.test.image(0);
        let heat = grad_cam(&model, &image, 0).map_err(e)?;
        Ok((metrics.to_csv(), heatmap_to_ppm(&heat, &image, 0.5).map_err(e)?))
    };
    let (csv1, ppm1) = run()?;
    let (csv2, ppm2) = run()?;
    ensure(csv1 == csv2, "metrics CSV differs between identical runs")?;
    ensure(ppm1 == ppm2, "PPM differs between identical runs")?;
    let mut summary = String::new();
    let _ = write!(
        summary,
        "CIFAR round trip of {} records byte-identical; 4 distinct MNIST errors; metrics CSV ({} B) and PPM ({} B) identical across runs",
        records.len(),
        csv1.len(),
        ppm1.len()
    );
    Ok(summary)
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    })
}

fn main() {
    let demo = catch_unwind(AssertUnwindSafe(demo)).unwrap_or_else(|_| Err("synthetic demo panicked".into()));

    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("gradient correctness", Box::new(gradients)),
        ("train_step oracle", Box::new(oracle)),
        ("gradient reversal contract", Box::new(grl)),
        ("λ=0 baseline isolation", Box::new(isolation)),
        ("augmentation harm on synthetic data", Box::new(|| eq1(&demo))),
        ("adversarial benefit at desk scale", Box::new(|| benefit(&demo))),
        ("Grad-CAM properties", Box::new(gradcam)),
        ("format fidelity", Box::new(formats)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = guarded(check);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} PASS {name}: {d} [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {d} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 && std::env::var("ADLDA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
