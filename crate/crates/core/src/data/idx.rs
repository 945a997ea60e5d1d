//! Big-endian IDX files (the classic MNIST container).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AglaError, Result};
use crate::scalar::Scalar;

use super::tabular::split_by_class;
use super::TaskStream;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| AglaError::Format {
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let got = be_u32(bytes, 0)?;
    if got != want {
        return Err(AglaError::Format {
            offset: 0,
            message: format!("magic 0x{got:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize) -> Result<()> {
    let have = bytes.len() - header;
    if have != expected {
        return Err(AglaError::Format {
            offset: (header + have.min(expected)) as u64,
            message: format!("header declares {expected} payload bytes, file has {have}"),
        });
    }
    Ok(())
}

/// Returns `(images, pixels_per_image)` with pixels still as bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<u8>>, usize)> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let per = rows * cols;
    check_payload(bytes, 16, n * per)?;
    if per == 0 {
        return Err(AglaError::Format {
            offset: 8,
            message: "zero-sized images".into(),
        });
    }
    Ok((bytes[16..].chunks_exact(per).map(<[u8]>::to_vec).collect(), per))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, n)?;
    Ok(bytes[8..].to_vec())
}

/// How IDX samples become tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdxSplit {
    pub classes_per_task: usize,
    /// Held-out fraction per class when no separate test files are given.
    pub test_fraction: f64,
    /// Optional cap on training samples per class (desk-scale runs).
    pub max_train_per_class: Option<usize>,
}

impl Default for IdxSplit {
    fn default() -> Self {
        IdxSplit {
            classes_per_task: 2,
            test_fraction: 0.2,
            max_train_per_class: None,
        }
    }
}

fn read_pair<S: Scalar>(images: &Path, labels: &Path) -> Result<Vec<(Vec<S>, i64)>> {
    let (imgs, _) = parse_idx_images(&fs::read(images)?)?;
    let labs = parse_idx_labels(&fs::read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(AglaError::Format {
            offset: 4,
            message: format!("{} images but {} labels", imgs.len(), labs.len()),
        });
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .map(|(px, l)| (px.into_iter().map(|p| S::of(p as f64 / 255.0)).collect(), l as i64))
        .collect())
}

/// Loads an IDX image/label pair (plus an optional test pair) and cuts the
/// classes, in ascending label order, into tasks of `classes_per_task`.
pub fn load_idx_dataset<S: Scalar>(
    images: &Path,
    labels: &Path,
    test: Option<(&Path, &Path)>,
    split: &IdxSplit,
) -> Result<TaskStream<S>> {
    let train = read_pair(images, labels)?;
    let test = match test {
        Some((i, l)) => Some(read_pair(i, l)?),
        None => None,
    };
    split_by_class(train, test, split.classes_per_task, split.test_fraction, split.max_train_per_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn images_file(n: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_images_and_labels() {
        let (imgs, per) = parse_idx_images(&images_file(2, 1, 2, &[0, 255, 10, 20])).unwrap();
        assert_eq!(per, 2);
        assert_eq!(imgs, vec![vec![0, 255], vec![10, 20]]);
        let mut l = LABELS_MAGIC.to_be_bytes().to_vec();
        l.extend_from_slice(&3u32.to_be_bytes());
        l.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&l).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let err = parse_idx_images(&images_file(3, 1, 2, &[0, 1, 2, 3])).unwrap_err();
        assert!(matches!(err, AglaError::Format { offset: 20, .. }), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut b = images_file(1, 1, 1, &[0]);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(AglaError::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_labels(&b[..2]), Err(AglaError::Format { .. })));
    }

    #[test]
    fn loads_ten_classes_into_five_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let n = 40u32;
        let pixels: Vec<u8> = (0..n).flat_map(|i| [255u8, (i % 7) as u8]).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, images_file(n, 1, 2, &pixels)).unwrap();
        let mut lb = LABELS_MAGIC.to_be_bytes().to_vec();
        lb.extend_from_slice(&n.to_be_bytes());
        lb.extend_from_slice(&labels);
        fs::write(&lp, lb).unwrap();
        let s: TaskStream<f64> = load_idx_dataset(&ip, &lp, None, &IdxSplit::default()).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.original_label(2), 2);
        assert_eq!(s.task(1).classes, vec![2, 3]);
        assert_eq!(s.task(0).train[0].x[0], 1.0);
        assert_eq!(s.task(0).train.len() + s.task(0).test.len(), 8);
    }
}
