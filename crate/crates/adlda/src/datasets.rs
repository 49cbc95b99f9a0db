//! Materializes the configured dataset.

use std::fs;
use std::path::Path;

use adlda_core::data::objects::BoundingBox;
use adlda_core::data::{cifar, mnist, Dataset, Split};

use crate::config::{DatasetSpec, FileDataset, ObjectsDataset, SyntheticDataset};
use crate::CliError;

/// Train and test splits; `boxes` holds the test objects' locations when known.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub train: Dataset<f32>,
    pub test: Dataset<f32>,
    pub test_boxes: Option<Vec<BoundingBox>>,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn load_cifar10(dir: &Path) -> Result<(Dataset<f32>, Dataset<f32>), CliError> {
    let parse = |name: &str| -> Result<cifar::CifarRecords, CliError> {
        let path = dir.join(name);
        cifar::parse(&read(&path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    };
    let mut train = cifar::CifarRecords::default();
    for name in cifar::TRAIN_FILES {
        train.extend(parse(name)?);
    }
    let test = parse(cifar::TEST_FILE)?;
    Ok((train.to_dataset(Split::Train)?, test.to_dataset(Split::Test)?))
}

pub fn load_mnist(dir: &Path) -> Result<(Dataset<f32>, Dataset<f32>), CliError> {
    let split = |images: &str, labels: &str, split: Split| -> Result<Dataset<f32>, CliError> {
        let (ip, lp) = (dir.join(images), dir.join(labels));
        mnist::load(&read(&ip)?, &read(&lp)?, split).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))
    };
    Ok((
        split(mnist::TRAIN_IMAGES, mnist::TRAIN_LABELS, Split::Train)?,
        split(mnist::TEST_IMAGES, mnist::TEST_LABELS, Split::Test)?,
    ))
}

fn subset(ds: Dataset<f32>, n: Option<usize>, seed: u64) -> Result<Dataset<f32>, CliError> {
    match n {
        Some(n) if n < ds.len() => Ok(ds.seeded_subset(n, seed)?),
        _ => Ok(ds),
    }
}

pub fn load(spec: &DatasetSpec) -> Result<Loaded, CliError> {
    let (train, test, test_boxes) = match spec {
        DatasetSpec::Synthetic(SyntheticDataset { spec }) => {
            let (train, test) = adlda_core::data::synthetic::make(spec)?;
            (train, test, None)
        }
        DatasetSpec::Objects(ObjectsDataset { spec }) => {
            let train = spec.make(Split::Train)?;
            let test = spec.make(Split::Test)?;
            (train.dataset, test.dataset, Some(test.boxes))
        }
        DatasetSpec::Cifar10(FileDataset { path, train_subset, test_subset, subset_seed }) => {
            let (train, test) = load_cifar10(path)?;
            (subset(train, *train_subset, *subset_seed)?, subset(test, *test_subset, *subset_seed)?, None)
        }
        DatasetSpec::Mnist(FileDataset { path, train_subset, test_subset, subset_seed }) => {
            let (train, test) = load_mnist(path)?;
            (subset(train, *train_subset, *subset_seed)?, subset(test, *test_subset, *subset_seed)?, None)
        }
    };
    Ok(Loaded { train, test, test_boxes })
}
