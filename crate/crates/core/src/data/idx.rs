use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsigned-byte 3-D array (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte 1-D array (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// 32-bit float 2-D array, used for synthetic feature matrices.
pub const IDX_F32_MATRIX_MAGIC: u32 = 0x0000_0D02;

const MNIST_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

struct Header {
    magic: u32,
    dims: Vec<usize>,
    body: usize,
}

fn header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(Error::format(path, "file too short for an IDX header"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic >> 16 != 0 {
        return Err(Error::format(path, format!("bad IDX magic 0x{magic:08x}")));
    }
    let rank = (magic & 0xff) as usize;
    let body = 4 + 4 * rank;
    if bytes.len() < body {
        return Err(Error::format(path, "truncated IDX dimensions"));
    }
    let dims = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    Ok(Header { magic, dims, body })
}

fn expect_magic(path: &Path, h: &Header, allowed: &[u32]) -> Result<()> {
    if allowed.contains(&h.magic) {
        Ok(())
    } else {
        Err(Error::format(
            path,
            format!("unexpected IDX magic 0x{:08x}", h.magic),
        ))
    }
}

fn payload<'a>(path: &Path, bytes: &'a [u8], h: &Header, elem: usize) -> Result<&'a [u8]> {
    let want = h.dims.iter().product::<usize>() * elem;
    let got = bytes.len() - h.body;
    if got != want {
        return Err(Error::format(
            path,
            format!("header announces {want} payload bytes, file has {got}"),
        ));
    }
    Ok(&bytes[h.body..])
}

fn read_features(path: &Path, strict_images: bool) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = header(path, &bytes)?;
    if strict_images {
        expect_magic(path, &h, &[IDX_IMAGES_MAGIC])?;
    } else {
        expect_magic(path, &h, &[IDX_IMAGES_MAGIC, IDX_F32_MATRIX_MAGIC, 0x0000_0802])?;
    }
    if h.dims.first().copied().unwrap_or(0) == 0 || h.dims.contains(&0) {
        return Err(Error::format(path, "empty IDX array"));
    }
    let values = if h.magic == IDX_F32_MATRIX_MAGIC {
        payload(path, &bytes, &h, 4)?
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes")))
            .collect()
    } else {
        payload(path, &bytes, &h, 1)?
            .iter()
            .map(|&p| p as f32 / 255.0)
            .collect()
    };
    Ok((h.dims, values))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = header(path, &bytes)?;
    expect_magic(path, &h, &[IDX_LABELS_MAGIC])?;
    Ok(payload(path, &bytes, &h, 1)?.iter().map(|&l| l as usize).collect())
}

fn assemble(
    name: &str,
    images: &Path,
    labels_path: &Path,
    strict: bool,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (dims, values) = read_features(images, strict)?;
    let labels = read_labels(labels_path)?;
    if dims[0] != labels.len() {
        return Err(Error::format(
            labels_path,
            format!(
                "{} labels but {} holds {} samples",
                labels.len(),
                images.display(),
                dims[0]
            ),
        ));
    }
    let classes = match num_classes {
        Some(c) => c,
        None => labels.iter().max().map_or(1, |&m| m + 1),
    };
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::format(labels_path, format!("label {bad} out of range")));
    }
    let width: usize = dims[1..].iter().product();
    let features = Tensor::new(vec![dims[0], width], values)?;
    Dataset::new(name, features, labels, classes)
}

/// Loads MNIST train (60,000) and test (10,000) sets from IDX files; images
/// are flattened to 784 features in [0,1].
pub fn load_mnist_idx(dir: &Path) -> Result<(Dataset, Dataset)> {
    let [(tr_img, tr_lab), (te_img, te_lab)] = MNIST_FILES;
    let train = assemble("mnist-train", &dir.join(tr_img), &dir.join(tr_lab), true, Some(10))?;
    let test = assemble("mnist-test", &dir.join(te_img), &dir.join(te_lab), true, Some(10))?;
    Ok((train, test))
}

/// Loads a generic feature/label IDX pair. Byte features are scaled by 1/255;
/// float features are taken as-is. The class count is `num_classes` when
/// given, otherwise one more than the largest label.
pub fn load_idx_pair(
    name: &str,
    features: &Path,
    labels: &Path,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    assemble(name, features, labels, false, num_classes)
}

fn encode_header(magic: u32, dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out
}

/// Writes features in [0,1] as an unsigned-byte IDX image file
/// (`n × rows × cols`); values are rounded to the nearest byte.
pub fn write_idx_u8(path: &Path, data: &Dataset, rows: usize, cols: usize) -> Result<()> {
    if data.features().row_len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} features per sample do not form {rows}x{cols} images",
            data.features().row_len()
        )));
    }
    let mut out = encode_header(IDX_IMAGES_MAGIC, &[data.len(), rows, cols]);
    out.extend(
        data.features()
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the feature matrix as a big-endian float32 IDX file (`n × d`).
pub fn write_idx_f32(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = encode_header(
        IDX_F32_MATRIX_MAGIC,
        &[data.len(), data.features().row_len()],
    );
    for v in data.features().data() {
        out.extend(v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, data: &Dataset) -> Result<()> {
    if data.num_classes() > 256 {
        return Err(Error::InvalidArgument("IDX labels hold at most 256 classes".into()));
    }
    let mut out = encode_header(IDX_LABELS_MAGIC, &[data.len()]);
    out.extend(data.labels().iter().map(|&l| l as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
