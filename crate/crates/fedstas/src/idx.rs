//! Reader for the IDX format used by MNIST.
//!
//! Layout (all integers big-endian): a 4-byte magic `0x00000803` for images or `0x00000801`
//! for labels, then one `u32` per dimension (`count, rows, cols` or `count`), then the
//! unsigned-byte payload.

use std::fs;
use std::path::Path;

use fedstas_core::model::Example;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated file: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    let slice = bytes.get(at..at + 4).ok_or(IdxError::Truncated {
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { found, expected });
    }
    Ok(())
}

/// Decoded image file: `count` images of `rows * cols` pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<f64>>,
}

pub fn parse_images(bytes: &[u8]) -> Result<Images, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let needed = 16 + count * size;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    let pixels = bytes[16..needed]
        .chunks_exact(size.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(Images { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Pairs an image file with its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Example>, IdxError> {
    let images = parse_images(&read(images_path)?)?;
    let labels = parse_labels(&read(labels_path)?)?;
    if images.pixels.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.pixels.len(),
            labels: labels.len(),
        });
    }
    Ok(images
        .pixels
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (features, label))| Example {
            index,
            features,
            label: usize::from(label),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = IMAGE_MAGIC.to_be_bytes().to_vec();
        for d in [count, rows, cols] {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn parses_two_image_fixture() {
        let bytes = image_file(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        let images = parse_images(&bytes).unwrap();
        assert_eq!((images.rows, images.cols), (2, 2));
        assert_eq!(images.pixels[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(images.pixels[1][3], 4.0 / 255.0);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut bytes = image_file(2, 2, 2, &[0; 8]);
        bytes[3] = 0x01;
        assert!(matches!(
            parse_images(&bytes),
            Err(IdxError::BadMagic { .. })
        ));
        let bytes = image_file(2, 2, 2, &[0; 7]);
        assert!(matches!(
            parse_images(&bytes),
            Err(IdxError::Truncated {
                needed: 24,
                found: 23
            })
        ));
        assert!(matches!(
            parse_labels(&[0, 0, 8]),
            Err(IdxError::Truncated { .. })
        ));
    }
}
