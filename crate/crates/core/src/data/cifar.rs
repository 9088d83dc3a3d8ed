use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte followed by 32×32 R, G and B planes.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Parses one CIFAR-10 binary batch file.
pub fn read_cifar10_batch(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_batch(path, &bytes)
}

fn parse_batch(path: &Path, bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::format(
            path,
            format!(
                "length {} is not a positive multiple of {CIFAR_RECORD_LEN}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(
                path,
                format!("record {i} has label byte {}", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
    }
    let features = Tensor::new(vec![n, 3, 32, 32], pixels)?;
    Dataset::new(
        path.file_stem().map_or("cifar10".into(), |s| s.to_string_lossy().into_owned()),
        features,
        labels,
        10,
    )
}

/// Loads the five training batches (50,000 images) and the test batch
/// (10,000 images) from a `cifar-10-batches-bin` directory.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train: Option<Dataset> = None;
    for f in TRAIN_FILES {
        let batch = read_cifar10_batch(&dir.join(f))?;
        train = Some(match train {
            None => batch,
            Some(acc) => acc.concat(&batch)?,
        });
    }
    let train = train.expect("five batches");
    let test = read_cifar10_batch(&dir.join(TEST_FILE))?;
    Ok((
        Dataset::new("cifar10-train", train.features().clone(), train.labels().to_vec(), 10)?,
        Dataset::new("cifar10-test", test.features().clone(), test.labels().to_vec(), 10)?,
    ))
}

/// Writes a dataset of 3×32×32 images with values in [0,1] as a CIFAR-10
/// batch file. Pixels are rounded to the nearest byte.
pub fn write_cifar10_batch(path: &Path, data: &Dataset) -> Result<()> {
    if data.sample_shape() != [3, 32, 32] || data.num_classes() > 10 {
        return Err(Error::Shape(format!(
            "CIFAR batches hold 3x32x32 images with at most 10 classes, got {:?}",
            data.sample_shape()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_LEN);
    for (i, &label) in data.labels().iter().enumerate() {
        out.push(label as u8);
        out.extend(
            data.features()
                .row(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
