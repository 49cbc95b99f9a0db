//! Command bodies. Each returns data for the caller to print and an error
//! that maps to an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use adlda_core::augment::Partition;
use adlda_core::cam::{box_mass_fraction, grad_cam, heatmap_to_ppm};
use adlda_core::gradcheck::{run_suite, SuiteEntry};
use adlda_core::model::AdldaModel;
use adlda_core::train::{clean_partition, evaluate, fit, Evaluation, FitHooks, Metrics, MetricsRow};
use adlda_core::verify::{single_step_check, OracleReport, ToyCase, ORACLE_LAMBDAS};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointManifest};
use crate::config::{DatasetSpec, RunConfig};
use crate::datasets::{self, Loaded};
use crate::parallel;
use crate::stats::{self, PairedDiff};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEMO_FILE: &str = "synth_demo.csv";
pub const DEMO_HEADER: &str = "condition,seed,clean_test_loss,clean_test_acc";
/// Random points per op in the gradient check.
pub const GRADCHECK_POINTS: usize = 10;

/// First 16 hex digits of `sha256(config bytes ‖ seed as u64 LE)`.
pub fn runid(config_bytes: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config_bytes);
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// A parsed config together with the bytes its run ids hash.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub bytes: Vec<u8>,
    pub config: RunConfig,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, CliError> {
        let config = RunConfig::parse(&bytes)?;
        Ok(ConfigFile { bytes, config })
    }

    /// `--out` wins over the config's `out_dir`, which defaults to `runs`.
    pub fn out_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub epoch: usize,
    pub train_ly: Option<f64>,
    pub train_ld: Option<f64>,
    pub test_acc: f64,
    pub test_loss: f64,
    pub test_domain_acc: Option<f64>,
}

impl From<&MetricsRow> for FinalMetrics {
    fn from(r: &MetricsRow) -> Self {
        FinalMetrics {
            epoch: r.epoch,
            train_ly: r.train_ly,
            train_ld: r.train_ld,
            test_acc: r.test_acc,
            test_loss: r.test_loss,
            test_domain_acc: r.test_domain_acc,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub runid: &'a str,
    pub command: &'static str,
    pub seed: u64,
    pub code_version: &'static str,
    pub config: &'a RunConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub metrics: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub runid: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Metrics,
}

impl TrainOutcome {
    pub fn final_row(&self) -> &MetricsRow {
        self.metrics.last().expect("fit writes an initial row")
    }
}

/// Builds the model for `seed` and trains it on already-loaded data.
pub fn train_model(
    config: &RunConfig,
    data: &Loaded,
    partition: &Partition,
    lambda: f64,
    seed: u64,
) -> Result<(AdldaModel<f32>, Metrics), CliError> {
    let model_config = config
        .model
        .resolve(data.train.image_shape(), data.train.class_count(), partition.domain_count());
    let mut model = AdldaModel::new(model_config, seed)?;
    let train = adlda_core::train::TrainConfig {
        lambda_max: lambda,
        ..config.train.with_seed(seed)
    };
    let metrics = fit(&mut model, &data.train, &data.test, partition, &train, FitHooks::default())?;
    Ok((model, metrics))
}

/// One training run with its three artifacts under `<out>/<runid>/`.
pub fn train_run(file: &ConfigFile, data: &Loaded, seed: u64, out_root: &Path) -> Result<TrainOutcome, CliError> {
    let config = &file.config;
    let started = unix_now();
    let id = runid(&file.bytes, seed);
    let dir = out_root.join(&id);
    let partition = config.augmentation.partition()?;
    let (model, metrics) = train_model(config, data, &partition, config.train.lambda_max, seed)?;

    write(&dir.join(METRICS_FILE), metrics.to_csv().as_bytes())?;
    let checkpoint = Checkpoint::from_model(
        CheckpointManifest {
            runid: id.clone(),
            seed,
            lambda: config.train.lambda_max,
            epoch: config.train.epochs,
            model: model.config().clone(),
        },
        &model,
    );
    write(&dir.join(CHECKPOINT_FILE), &checkpoint.encode())?;
    let last = FinalMetrics::from(metrics.last().expect("initial row"));
    let manifest = RunManifest {
        runid: &id,
        command: "train",
        seed,
        code_version: env!("CARGO_PKG_VERSION"),
        config,
        started_unix: started,
        finished_unix: unix_now(),
        metrics: serde_json::to_value(&last).expect("metrics serialize"),
    };
    write(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(TrainOutcome { runid: id, seed, dir, metrics })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub runs: Vec<TrainOutcome>,
    /// Written only for more than one seed.
    pub summary_path: Option<PathBuf>,
    pub text: String,
}

/// `train`: one run per seed (the config's seed when `seeds` is `None`).
pub fn cmd_train(file: &ConfigFile, seeds: Option<&[u64]>, out: Option<&Path>) -> Result<TrainSummary, CliError> {
    let seeds = seeds.map_or_else(|| vec![file.config.seed], <[u64]>::to_vec);
    if seeds.is_empty() {
        return Err(CliError::Invalid("--seeds: empty list".into()));
    }
    let root = file.out_root(out);
    let data = datasets::load(&file.config.dataset)?;
    let runs = parallel::map(&seeds, parallel::thread_cap(), |&s| train_run(file, &data, s, &root))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = String::from("seed,runid,test_acc,test_loss\n");
    for r in &runs {
        let row = r.final_row();
        let _ = writeln!(text, "{},{},{},{}", r.seed, r.runid, row.test_acc, row.test_loss);
    }
    let acc: Vec<f64> = runs.iter().map(|r| r.final_row().test_acc).collect();
    let loss: Vec<f64> = runs.iter().map(|r| r.final_row().test_loss).collect();
    let _ = writeln!(
        text,
        "mean±std(n={}),,{}±{},{}±{}",
        runs.len(),
        stats::mean(&acc),
        stats::std_dev(&acc),
        stats::mean(&loss),
        stats::std_dev(&loss)
    );
    let summary_path = if runs.len() > 1 {
        let ids: Vec<u8> = runs.iter().flat_map(|r| r.runid.bytes()).collect();
        let path = root.join(format!("summary_{}.csv", runid(&ids, 0)));
        write(&path, text.as_bytes())?;
        Some(path)
    } else {
        None
    };
    Ok(TrainSummary { runs, summary_path, text })
}

fn check_geometry(model: &AdldaModel<f32>, spec: &DatasetSpec) -> Result<(), CliError> {
    let (input, classes) = spec.geometry();
    let c = model.config();
    if c.input != input || c.class_count != classes {
        return Err(CliError::Invalid(format!(
            "checkpoint expects input {:?} with {} classes, dataset has {:?} with {}",
            c.input, c.class_count, input, classes
        )));
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// `eval`: class-path accuracy and mean loss on the config's test split.
pub fn cmd_eval(file: &ConfigFile, checkpoint: &Path) -> Result<Evaluation, CliError> {
    let model = read_checkpoint(checkpoint)?.class_model()?;
    check_geometry(&model, &file.config.dataset)?;
    let data = datasets::load(&file.config.dataset)?;
    Ok(evaluate(&model, &data.test)?)
}

#[derive(Debug, Clone)]
pub struct CamOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// `runid,darate,image,class,box_mass`.
    pub table: String,
}

/// `cam`: one overlay per (image, checkpoint) plus one side-by-side grid
/// per image, checkpoints ordered by DArate.
pub fn cmd_cam(
    file: &ConfigFile,
    checkpoints: &[PathBuf],
    darates: Option<&[f64]>,
    images: &[usize],
    classes: Option<&[usize]>,
    out: Option<&Path>,
) -> Result<CamOutput, CliError> {
    if checkpoints.is_empty() || images.is_empty() {
        return Err(CliError::Invalid("cam needs at least one checkpoint and one image".into()));
    }
    if let Some(c) = classes {
        if c.len() != images.len() {
            return Err(CliError::Invalid("--classes must have one entry per image".into()));
        }
    }
    let mut loaded = checkpoints
        .iter()
        .map(|p| read_checkpoint(p))
        .collect::<Result<Vec<_>, _>>()?;
    loaded.sort_by(|a, b| a.manifest.lambda.total_cmp(&b.manifest.lambda));
    if let Some(wanted) = darates {
        for &d in wanted {
            if !loaded.iter().any(|c| c.manifest.lambda == d) {
                return Err(CliError::Invalid(format!("no checkpoint for DArate {d}")));
            }
        }
        loaded.retain(|c| wanted.contains(&c.manifest.lambda));
    }
    let data = datasets::load(&file.config.dataset)?;
    for &i in images {
        if i >= data.test.len() {
            return Err(CliError::Invalid(format!("image index {i} out of range (test split has {})", data.test.len())));
        }
    }
    let models = loaded
        .iter()
        .map(|c| {
            let m = c.class_model()?;
            check_geometry(&m, &file.config.dataset)?;
            Ok((c.manifest.runid.clone(), c.manifest.lambda, m))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = file.out_root(out).join(runid(&file.bytes, file.config.seed));
    let alpha = file.config.cam.alpha;
    let mut files = Vec::new();
    let mut table = String::from("runid,darate,image,class,box_mass\n");
    for (slot, &index) in images.iter().enumerate() {
        let image = data.test.image(index);
        let class = classes.map_or(data.test.labels()[index], |c| c[slot]);
        let mut overlays = Vec::new();
        for (id, lambda, model) in &models {
            let heat = grad_cam(model, &image, class)?;
            let ppm = heatmap_to_ppm(&heat, &image, alpha)?;
            let mass = data
                .test_boxes
                .as_ref()
                .map(|b| box_mass_fraction(&heat, &b[index]).to_string())
                .unwrap_or_default();
            let _ = writeln!(table, "{id},{lambda},{index},{class},{mass}");
            let path = dir.join(format!("cam_{id}_{index}.ppm"));
            write(&path, &ppm)?;
            files.push(path);
            overlays.push(ppm);
        }
        let grid = dir.join(format!("grid_{index}.ppm"));
        write(&grid, &hconcat_ppm(&overlays)?)?;
        files.push(grid);
    }
    write(&dir.join("cam.csv"), table.as_bytes())?;
    Ok(CamOutput { dir, files, table })
}

/// Side-by-side concatenation of same-height P6 images.
pub fn hconcat_ppm(images: &[Vec<u8>]) -> Result<Vec<u8>, CliError> {
    let parsed = images.iter().map(|b| parse_ppm(b)).collect::<Result<Vec<_>, _>>()?;
    let height = parsed.first().map_or(0, |p| p.1);
    if parsed.iter().any(|p| p.1 != height) {
        return Err(CliError::Invalid("grid images differ in height".into()));
    }
    let width: usize = parsed.iter().map(|p| p.0).sum();
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for y in 0..height {
        for (w, _, px) in &parsed {
            out.extend_from_slice(&px[y * w * 3..(y + 1) * w * 3]);
        }
    }
    Ok(out)
}

/// `(width, height, pixels)` of a P6 file with the header layout written here.
pub fn parse_ppm(bytes: &[u8]) -> Result<(usize, usize, &[u8]), CliError> {
    let bad = || CliError::Invalid("malformed PPM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        pos += 1;
        if pos > bytes.len() {
            return Err(bad());
        }
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    let px = &bytes[pos..];
    if px.len() != w * h * 3 {
        return Err(bad());
    }
    Ok((w, h, px))
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub suite: Vec<SuiteEntry>,
    pub oracle: Vec<OracleReport>,
    pub text: String,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.suite.iter().all(SuiteEntry::passed) && self.oracle.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut names: Vec<String> = self.suite.iter().filter(|e| !e.passed()).map(|e| e.name.to_string()).collect();
        names.extend(self.oracle.iter().filter(|r| !r.passed).map(|r| format!("train_step oracle (λ={})", r.lambda)));
        names
    }
}

/// `gradcheck`: finite differences for every registered op, then the
/// single-step oracle. `fault` corrupts one op's backward rule.
pub fn cmd_gradcheck(fault: Option<&str>) -> Result<GradcheckOutcome, CliError> {
    let suite = run_suite(GRADCHECK_POINTS, fault)?;
    if let Some(f) = fault {
        if !suite.iter().any(|e| e.name == f) {
            return Err(CliError::Invalid(format!("unknown op `{f}`")));
        }
    }
    let oracle = ORACLE_LAMBDAS
        .iter()
        .map(|&l| single_step_check(&ToyCase::standard(l)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::from("op,f32_max_rel_error,f64_max_rel_error,status\n");
    for e in &suite {
        let status = if e.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(text, "{},{:e},{:e},{status}", e.name, e.f32.max_rel_error, e.f64.max_rel_error);
    }
    for r in &oracle {
        let status = if r.passed { "ok" } else { "FAIL" };
        let _ = writeln!(text, "train_step_oracle(lambda={}),,{:e},{status}", r.lambda, r.max_abs_error);
    }
    Ok(GradcheckOutcome { suite, oracle, text })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Condition {
    /// Clean data only.
    Clean,
    /// Augmented, λ = 0.
    Augmented,
    /// Augmented, λ > 0.
    Adversarial,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Clean, Condition::Augmented, Condition::Adversarial];

    pub fn label(self) -> &'static str {
        match self {
            Condition::Clean => "a",
            Condition::Augmented => "b",
            Condition::Adversarial => "c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRow {
    pub condition: Condition,
    pub seed: u64,
    pub clean_test_loss: f64,
    pub clean_test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub rows: Vec<DemoRow>,
    pub csv: String,
    /// `loss(b) − loss(a)`.
    pub augmented_vs_clean: PairedDiff,
    /// `loss(b) − loss(c)`.
    pub augmented_vs_adversarial: PairedDiff,
    pub dir: PathBuf,
}

impl DemoOutcome {
    pub fn losses(&self, condition: Condition) -> Vec<f64> {
        self.rows.iter().filter(|r| r.condition == condition).map(|r| r.clean_test_loss).collect()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for c in Condition::ALL {
            let l = self.losses(c);
            let _ = writeln!(s, "condition {}: mean clean-test loss {:.6} ± {:.6} (n={})", c.label(), stats::mean(&l), stats::std_dev(&l), l.len());
        }
        for (name, d) in [("b − a", self.augmented_vs_clean), ("b − c", self.augmented_vs_adversarial)] {
            let verdict = if d.exceeds_two_se() { "> 2 SE" } else { "≤ 2 SE" };
            let _ = writeln!(s, "{name}: {:.6} (SE {:.6}, {verdict})", d.mean, d.std_err);
        }
        s
    }
}

/// Runs the three conditions for every seed on already-loaded data.
pub fn run_demo(config: &RunConfig, data: &Loaded, seeds: &[u64]) -> Result<Vec<DemoRow>, CliError> {
    let augmented = config.augmentation.partition()?;
    let clean = clean_partition(&augmented)?;
    let jobs: Vec<(Condition, u64)> = seeds.iter().flat_map(|&s| Condition::ALL.map(|c| (c, s))).collect();
    let results = parallel::map(&jobs, parallel::thread_cap(), |&(condition, seed)| {
        let (partition, lambda) = match condition {
            Condition::Clean => (&clean, 0.0),
            Condition::Augmented => (&augmented, 0.0),
            Condition::Adversarial => (&augmented, config.demo.lambda),
        };
        let (_, metrics) = train_model(config, data, partition, lambda, seed)?;
        let last = metrics.last().expect("initial row");
        Ok(DemoRow {
            condition,
            seed,
            clean_test_loss: last.test_loss,
            clean_test_acc: last.test_acc,
        })
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>, CliError>>()?;
    rows.sort_by_key(|r| (r.condition, seeds.iter().position(|&s| s == r.seed)));
    Ok(rows)
}

/// `synth-demo`: conditions (a) clean, (b) augmented λ=0, (c) augmented
/// with the demo λ, trained from the same initialization per seed.
pub fn cmd_synth_demo(file: &ConfigFile, seeds: Option<&[u64]>, out: Option<&Path>) -> Result<DemoOutcome, CliError> {
    let config = &file.config;
    if !matches!(config.dataset, DatasetSpec::Synthetic(_)) {
        return Err(CliError::Invalid("config error at `dataset.kind`: synth-demo needs a synthetic dataset".into()));
    }
    let seeds = seeds.map_or_else(|| config.demo.seeds.clone(), <[u64]>::to_vec);
    if seeds.is_empty() {
        return Err(CliError::Invalid("--seeds: empty list".into()));
    }
    let started = unix_now();
    let data = datasets::load(&config.dataset)?;
    let rows = run_demo(config, &data, &seeds)?;
    let mut csv = format!("{DEMO_HEADER}\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.condition.label(), r.seed, r.clean_test_loss, r.clean_test_acc);
    }
    let by = |c: Condition| rows.iter().filter(|r| r.condition == c).map(|r| r.clean_test_loss).collect::<Vec<_>>();
    let (a, b, c) = (by(Condition::Clean), by(Condition::Augmented), by(Condition::Adversarial));
    let seed_key = seeds.iter().fold(0u64, |acc, s| acc.wrapping_mul(31).wrapping_add(*s));
    let dir = file.out_root(out).join(runid(&file.bytes, seed_key));
    let outcome = DemoOutcome {
        augmented_vs_clean: PairedDiff::of(&b, &a),
        augmented_vs_adversarial: PairedDiff::of(&b, &c),
        rows,
        csv,
        dir: dir.clone(),
    };
    write(&dir.join(DEMO_FILE), outcome.csv.as_bytes())?;
    let summary = serde_json::json!({
        "mean_loss": {"a": stats::mean(&a), "b": stats::mean(&b), "c": stats::mean(&c)},
        "b_minus_a": {"mean": outcome.augmented_vs_clean.mean, "std_err": outcome.augmented_vs_clean.std_err},
        "b_minus_c": {"mean": outcome.augmented_vs_adversarial.mean, "std_err": outcome.augmented_vs_adversarial.std_err},
        "seeds": seeds,
    });
    let id = dir.file_name().unwrap().to_string_lossy().into_owned();
    let manifest = RunManifest {
        runid: &id,
        command: "synth-demo",
        seed: seed_key,
        code_version: env!("CARGO_PKG_VERSION"),
        config,
        started_unix: started,
        finished_unix: unix_now(),
        metrics: summary,
    };
    write(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(outcome)
}
