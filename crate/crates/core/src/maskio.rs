//! Binary mask export: magic `GSSMASK1`, little-endian u32 dimension triple
//! (classes, frames, frequencies), then class-major, frame-major,
//! frequency-minor f32 values. Class names go to a sidecar text file
//! (`<path>.classes`), one per line.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use thiserror::Error;

use crate::gss::MaskSet;

pub const MASK_MAGIC: &[u8; 8] = b"GSSMASK1";

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("mask i/o failed for {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("bad mask file {path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path, e: std::io::Error) -> MaskIoError {
    MaskIoError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".classes");
    PathBuf::from(os)
}

pub fn write_masks(path: &Path, masks: &MaskSet) -> Result<(), MaskIoError> {
    let (k, t, f) = (
        masks.classes().len(),
        masks.frames(),
        masks.frequencies(),
    );
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(MASK_MAGIC).map_err(|e| io_err(path, e))?;
    for dim in [k as u32, t as u32, f as u32] {
        file.write_all(&dim.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
    }
    let mut buf = Vec::with_capacity(k * t * f * 4);
    for v in masks.gamma().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    file.write_all(&buf).map_err(|e| io_err(path, e))?;

    let sidecar = sidecar_path(path);
    let names = masks.classes().join("\n") + "\n";
    std::fs::write(&sidecar, names).map_err(|e| io_err(&sidecar, e))?;
    Ok(())
}

pub fn read_masks(path: &Path) -> Result<MaskSet, MaskIoError> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MASK_MAGIC {
        return Err(MaskIoError::Format {
            path: path.display().to_string(),
            reason: "bad magic bytes".into(),
        });
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        file.read_exact(&mut b).map_err(|e| io_err(path, e))?;
        *d = u32::from_le_bytes(b);
    }
    let (k, t, f) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let mut data = vec![0u8; k * t * f * 4];
    file.read_exact(&mut data).map_err(|e| io_err(path, e))?;
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let gamma = Array3::from_shape_vec((k, t, f), values).map_err(|e| MaskIoError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;

    let sidecar = sidecar_path(path);
    let names = std::fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let classes: Vec<String> = names.lines().map(|l| l.to_string()).collect();
    if classes.len() != k {
        return Err(MaskIoError::Format {
            path: sidecar.display().to_string(),
            reason: format!("{} class names for {} classes", classes.len(), k),
        });
    }
    Ok(MaskSet::new(gamma, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn masks_round_trip_through_file() {
        let gamma = Array3::from_shape_fn((3, 5, 7), |(k, t, f)| {
            ((k + 1) * (t + 2) + f) as f64 / 100.0
        });
        let masks = MaskSet::new(gamma, vec!["p1".into(), "p2".into(), "noise".into()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.mask");
        write_masks(&path, &masks).unwrap();

        // header layout: magic then dims
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..8], MASK_MAGIC);
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(raw[16..20].try_into().unwrap()), 7);
        assert_eq!(raw.len(), 20 + 3 * 5 * 7 * 4);

        let back = read_masks(&path).unwrap();
        assert_eq!(back.classes(), masks.classes());
        for (a, b) in back.gamma().iter().zip(masks.gamma().iter()) {
            assert!((a - b).abs() < 1e-6, "f32 round trip within precision");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mask");
        std::fs::write(&path, b"NOTAMASK0000").unwrap();
        assert!(matches!(
            read_masks(&path),
            Err(MaskIoError::Format { .. })
        ));
    }
}
