//! IDX reader/writer: big-endian magic, u32 big-endian dimensions, raw bytes.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetError, Result, Sample};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX payload, returning `(dims, data)`.
fn parse<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(DatasetError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let body: usize = dims.iter().product();
    if bytes.len() < header + body {
        return Err(DatasetError::Truncated {
            path: path.to_path_buf(),
            expected: header + body,
            actual: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..header + body]))
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; the class
/// count is one more than the largest label seen.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;
    let (dims, pixels) = parse(&image_bytes, images_path, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse(&label_bytes, labels_path, IDX_LABELS_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(DatasetError::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let shape = dims[1..].to_vec();
    let width: usize = shape.iter().product();
    let samples: Vec<Sample> = pixels
        .chunks_exact(width.max(1))
        .zip(labels)
        .map(|(px, &y)| Sample {
            x: px.iter().map(|&p| p as f64 / 255.0).collect(),
            y: y as usize,
        })
        .collect();
    let class_count = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let name = images_path
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, samples, class_count, shape)
}

/// Writes `images` (values already in 0..=255) and labels as an IDX pair.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: u32,
    cols: u32,
    images: &[Vec<u8>],
    labels: &[u8],
) -> std::io::Result<()> {
    let mut img = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture_decodes_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        // hand-built bytes: image 0 all 0x00, image 1 all 0xFF
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 0, 0, 0, 255, 255, 255, 255]);
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 3, 1]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.input_shape, vec![2, 2]);
        assert_eq!(d.samples[0].x, vec![0.0; 4]);
        assert_eq!(d.samples[1].x, vec![1.0; 4]);
        assert_eq!((d.samples[0].y, d.samples[1].y), (3, 1));
        assert_eq!(d.class_count, 4);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ip, &lp, 1, 1, &[vec![1], vec![2]], &[0, 1, 1]).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DatasetError::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ip, &lp, 2, 2, &[vec![1, 2, 3, 4]], &[0]).unwrap();
        // swap roles: labels file read as images
        assert!(matches!(load_idx(&lp, &ip), Err(DatasetError::BadMagic { found: 0x801, .. })));
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DatasetError::Truncated { .. })));
        std::fs::write(&ip, &bytes[..6]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(DatasetError::Truncated { .. })));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lp),
            Err(DatasetError::Io { .. })
        ));
    }
}
