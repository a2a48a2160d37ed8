//! IDX container: big-endian magic, big-endian `u32` dimensions, then an
//! unsigned-byte payload. Files ending in `.gz` are decompressed on read.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{FeatureMeta, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gzip(path) {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

/// Reads an IDX file and checks its magic number.
pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let bytes = read_bytes(path)?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 {
        return Err(fail("file shorter than the 4-byte magic number".into()));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(fail(format!(
            "magic number {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(fail(format!("truncated header: {ndim} dimensions declared")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let payload: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < payload {
        return Err(fail(format!(
            "truncated payload: dimensions {dims:?} need {payload} bytes, found {available}"
        )));
    }
    if available > payload {
        return Err(fail(format!(
            "{} trailing bytes after the payload",
            available - payload
        )));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Writes an unsigned-byte IDX file (gzip when the path ends in `.gz`).
pub fn write_idx(path: &Path, magic: u32, dims: &[usize], data: &[u8]) -> Result<()> {
    assert_eq!(dims.len(), (magic & 0xff) as usize, "magic/dimension count");
    assert_eq!(dims.iter().product::<usize>(), data.len(), "payload size");
    let mut bytes = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    bytes.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend_from_slice(data);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if is_gzip(path) {
        let mut enc = flate2::write::GzEncoder::new(file, flate2::Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(&bytes)
    };
    result.map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]` by `/255`;
/// classes are the digits `0..10` in ascending order.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read_idx(images_path, IDX_IMAGES_MAGIC)?;
    let labels = read_idx(labels_path, IDX_LABELS_MAGIC)?;
    let n_images = images.dims[0];
    let n_labels = labels.dims[0];
    if n_images != n_labels {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            reason: format!("{n_labels} labels for {n_images} images in {}", images_path.display()),
        });
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            reason: format!("label {bad} outside 0..=9"),
        });
    }
    let pixels = images.dims[1..].iter().product::<usize>();
    if n_images == 0 || pixels == 0 {
        return Err(Error::Format {
            path: images_path.to_path_buf(),
            reason: "no images".into(),
        });
    }
    let features: Vec<f64> = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let meta = (0..pixels)
        .map(|i| FeatureMeta::Numeric {
            name: format!("px{i}"),
        })
        .collect();
    LabeledDataset::new(
        Tensor::matrix(n_images, pixels, features),
        labels.data.iter().map(|&l| l as usize).collect(),
        (0..10).map(|d| d.to_string()).collect(),
        meta,
        images_path.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, n_images: usize, n_labels: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let img: Vec<u8> = (0..n_images * 784).map(|i| (i % 251) as u8).collect();
        let lab: Vec<u8> = (0..n_labels).map(|i| (i % 10) as u8).collect();
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        write_idx(&ip, IDX_IMAGES_MAGIC, &[n_images, 28, 28], &img).unwrap();
        write_idx(&lp, IDX_LABELS_MAGIC, &[n_labels], &lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn four_image_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 4);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.features().shape(), &[4, 784]);
        assert_eq!(ds.features().data()[0], 0.0);
        assert_eq!(ds.features().data()[1], 1.0 / 255.0);
        assert_eq!(ds.class_count(), 10);
        assert_eq!(ds.labels(), &[0, 1, 2, 3]);
    }

    #[test]
    fn pixels_round_trip_through_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 3, 3);
        let raw = read_idx(&ip, IDX_IMAGES_MAGIC).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        let back: Vec<u8> = ds.features().data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, raw.data);
    }

    #[test]
    fn gzip_files_are_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = (0..20).collect();
        let p = dir.path().join("x.idx.gz");
        write_idx(&p, IDX_LABELS_MAGIC, &[20], &data).unwrap();
        assert_eq!(read_idx(&p, IDX_LABELS_MAGIC).unwrap().data, data);
    }

    #[test]
    fn wrong_label_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path(), 2, 2);
        let bad = dir.path().join("bad-labels.idx");
        std::fs::write(&bad, [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 1, 2]).unwrap();
        match load_idx(&ip, &bad) {
            Err(Error::Format { path, reason }) => {
                assert_eq!(path, bad);
                assert!(reason.contains("magic"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 4, 3);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.idx");
        let mut bytes = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&p, bytes).unwrap();
        let err = read_idx(&p, IDX_LABELS_MAGIC).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
