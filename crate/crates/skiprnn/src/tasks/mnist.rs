//! IDX-format MNIST loader and the sequential-pixel batch builder.
//!
//! Images are flattened row-major into 784-step sequences of single pixels
//! scaled to [0, 1]. The 60,000 official training images are partitioned
//! 55,000/5,000 into train/validation by a fixed seeded permutation
//! ([`SPLIT_SEED`]), so every run sees the same split regardless of its own
//! seed. SHA-256 checksums of the raw files are recorded at load time.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::{Batch, Targets};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const SEQ_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const TRAIN_TOTAL: usize = 60_000;
pub const TRAIN_SPLIT: usize = 55_000;
pub const VAL_SPLIT: usize = 5_000;
pub const TEST_TOTAL: usize = 10_000;

/// Fixed seed for the train/validation partition and the desk-profile
/// subset. Independent of the experiment seed so all runs compare on the
/// same data.
pub const SPLIT_SEED: u64 = 0x534b_4950;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone)]
pub struct MnistData {
    images: Vec<u8>,
    labels: Vec<u8>,
    test_images: Vec<u8>,
    test_labels: Vec<u8>,
    /// Indices into the 60k pool, 55,000 entries.
    pub train_indices: Vec<u32>,
    /// Indices into the 60k pool, 5,000 entries.
    pub val_indices: Vec<u32>,
    /// (file name, sha256 hex) for provenance logging.
    pub checksums: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Index into the 60k training pool (train or validation indices).
    Pool,
    Test,
}

fn read_be_u32(bytes: &[u8], offset: usize, file: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Data(format!(
            "{}: truncated header (need {end} bytes, have {})",
            file.display(),
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse an IDX image file: magic, count, 28x28 dims, raw bytes.
pub fn parse_idx_images(bytes: &[u8], file: &Path) -> Result<(usize, Vec<u8>)> {
    let magic = read_be_u32(bytes, 0, file)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x} is not the image magic {IMAGE_MAGIC:#010x}",
            file.display()
        )));
    }
    let count = read_be_u32(bytes, 4, file)? as usize;
    let rows = read_be_u32(bytes, 8, file)? as usize;
    let cols = read_be_u32(bytes, 12, file)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Data(format!(
            "{}: expected 28x28 images, got {rows}x{cols}",
            file.display()
        )));
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for {count} images, found {}",
            file.display(),
            bytes.len()
        )));
    }
    Ok((count, bytes[16..].to_vec()))
}

/// Parse an IDX label file: magic, count, raw bytes.
pub fn parse_idx_labels(bytes: &[u8], file: &Path) -> Result<(usize, Vec<u8>)> {
    let magic = read_be_u32(bytes, 0, file)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!(
            "{}: magic {magic:#010x} is not the label magic {LABEL_MAGIC:#010x}",
            file.display()
        )));
    }
    let count = read_be_u32(bytes, 4, file)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for {count} labels, found {}",
            file.display(),
            bytes.len()
        )));
    }
    for (i, &l) in bytes[8..].iter().enumerate() {
        if l > 9 {
            return Err(Error::Data(format!(
                "{}: label {l} at index {i} out of range",
                file.display()
            )));
        }
    }
    Ok((count, bytes[8..].to_vec()))
}

impl MnistData {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| {
                Error::Data(format!("cannot read {}: {e}", path.display()))
            })?;
            Ok((path, bytes))
        };
        let (ti_path, ti_bytes) = read(TRAIN_IMAGES)?;
        let (tl_path, tl_bytes) = read(TRAIN_LABELS)?;
        let (si_path, si_bytes) = read(TEST_IMAGES)?;
        let (sl_path, sl_bytes) = read(TEST_LABELS)?;

        let checksums = vec![
            (TRAIN_IMAGES.to_string(), sha256_hex(&ti_bytes)),
            (TRAIN_LABELS.to_string(), sha256_hex(&tl_bytes)),
            (TEST_IMAGES.to_string(), sha256_hex(&si_bytes)),
            (TEST_LABELS.to_string(), sha256_hex(&sl_bytes)),
        ];

        let (n_img, images) = parse_idx_images(&ti_bytes, &ti_path)?;
        let (n_lab, labels) = parse_idx_labels(&tl_bytes, &tl_path)?;
        if n_img != n_lab {
            return Err(Error::Data(format!(
                "training images ({n_img}) and labels ({n_lab}) disagree"
            )));
        }
        if n_img != TRAIN_TOTAL {
            return Err(Error::Data(format!(
                "expected the official {TRAIN_TOTAL}-image training set, got {n_img}"
            )));
        }
        let (n_test_img, test_images) = parse_idx_images(&si_bytes, &si_path)?;
        let (n_test_lab, test_labels) = parse_idx_labels(&sl_bytes, &sl_path)?;
        if n_test_img != n_test_lab {
            return Err(Error::Data(format!(
                "test images ({n_test_img}) and labels ({n_test_lab}) disagree"
            )));
        }
        if n_test_img != TEST_TOTAL {
            return Err(Error::Data(format!(
                "expected the official {TEST_TOTAL}-image test set, got {n_test_img}"
            )));
        }

        // Fixed seeded partition of the training pool.
        let mut order: Vec<u32> = (0..TRAIN_TOTAL as u32).collect();
        let mut rng = Rng::from_seed(SPLIT_SEED);
        rng.shuffle(&mut order);
        let train_indices = order[..TRAIN_SPLIT].to_vec();
        let val_indices = order[TRAIN_SPLIT..].to_vec();

        Ok(MnistData {
            images,
            labels,
            test_images,
            test_labels,
            train_indices,
            val_indices,
            checksums,
        })
    }

    pub fn test_len(&self) -> usize {
        TEST_TOTAL
    }

    /// Deterministic desk-profile subset: the first `n` entries of a
    /// seeded shuffle of the training split.
    pub fn desk_subset(&self, n: usize) -> Vec<u32> {
        let mut order = self.train_indices.clone();
        let mut rng = Rng::from_seed(SPLIT_SEED ^ 0xdeb5);
        rng.shuffle(&mut order);
        order.truncate(n);
        order
    }

    pub fn image(&self, split: Split, idx: u32) -> &[u8] {
        let (pool, i) = match split {
            Split::Pool => (&self.images, idx as usize),
            Split::Test => (&self.test_images, idx as usize),
        };
        &pool[i * SEQ_LEN..(i + 1) * SEQ_LEN]
    }

    pub fn label(&self, split: Split, idx: u32) -> usize {
        match split {
            Split::Pool => self.labels[idx as usize] as usize,
            Split::Test => self.test_labels[idx as usize] as usize,
        }
    }

    /// Assemble a pixel-sequence batch: 784 steps of [B x 1] inputs
    /// scaled to [0, 1].
    pub fn batch(&self, split: Split, indices: &[u32]) -> Batch {
        let b = indices.len();
        let rows: Vec<&[u8]> = indices.iter().map(|&i| self.image(split, i)).collect();
        let step_inputs = (0..SEQ_LEN)
            .map(|t| {
                let data: Vec<f64> = rows.iter().map(|img| img[t] as f64 / 255.0).collect();
                Tensor::from_vec(b, 1, data)
            })
            .collect();
        let labels = indices.iter().map(|&i| self.label(split, i)).collect();
        Batch {
            step_inputs,
            targets: Targets::Class(labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_image_file(count: u32) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&count.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend_from_slice(&28u32.to_be_bytes());
        bytes.extend(std::iter::repeat(7u8).take(count as usize * SEQ_LEN));
        bytes
    }

    fn tiny_label_file(count: u32) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&count.to_be_bytes());
        bytes.extend((0..count).map(|i| (i % 10) as u8));
        bytes
    }

    #[test]
    fn parses_valid_idx() {
        let img = tiny_image_file(3);
        let (n, data) = parse_idx_images(&img, Path::new("x")).unwrap();
        assert_eq!(n, 3);
        assert_eq!(data.len(), 3 * 784);
        let lab = tiny_label_file(3);
        let (n, data) = parse_idx_labels(&lab, Path::new("x")).unwrap();
        assert_eq!(n, 3);
        assert_eq!(data, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut img = tiny_image_file(1);
        img[3] = 0x99;
        assert!(matches!(
            parse_idx_images(&img, Path::new("x")),
            Err(Error::Data(_))
        ));
        let mut lab = tiny_label_file(1);
        lab[3] = 0x42;
        assert!(matches!(
            parse_idx_labels(&lab, Path::new("x")),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn rejects_truncation() {
        let mut img = tiny_image_file(2);
        img.truncate(img.len() - 10);
        assert!(matches!(
            parse_idx_images(&img, Path::new("x")),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn pixel_scaling_full_range() {
        assert_eq!(255u8 as f64 / 255.0, 1.0);
        assert_eq!(0u8 as f64 / 255.0, 0.0);
    }

    // Tests against the real files run in the integration suite when the
    // data directory is present.
}
