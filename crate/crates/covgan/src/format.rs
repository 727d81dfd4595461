//! CCV1 dataset files.
//!
//! Layout: `b"CCV1"`, header length as `u32` LE, UTF-8 JSON header, then
//! `count` records of `2NK` signature floats followed by `2M²` image floats,
//! all `f32` LE.

use std::path::Path;

use covgan_core::dataset::{grid_points, CovImage, DatasetRecord, GridConfig};
use covgan_core::scene::Scene;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::atomic_write;

pub const MAGIC: &[u8; 4] = b"CCV1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected CCV1")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    /// Stable short identifier per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic => "bad_magic",
            FormatError::Truncated { .. } => "truncated",
            FormatError::Dimension(_) => "dimension_mismatch",
            FormatError::Header(_) => "bad_header",
            FormatError::Io(_) => "io",
        }
    }
}

/// Grid that produced the records, in record order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub bounds: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub m: usize,
    pub n_bs: usize,
    pub k_sub: usize,
    pub count: usize,
    pub norm_sig: f64,
    pub norm_cov: f64,
    /// One-based.
    pub target_bs: usize,
    /// Hex SHA-256 of the canonical scene text.
    pub scene_digest: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
}

impl DatasetHeader {
    pub fn signature_len(&self) -> usize {
        2 * self.n_bs * self.k_sub
    }

    pub fn image_len(&self) -> usize {
        2 * self.m * self.m
    }

    pub fn record_bytes(&self) -> u64 {
        4 * (self.signature_len() + self.image_len()) as u64
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.m == 0 || self.n_bs == 0 || self.k_sub == 0 {
            return Err(FormatError::Header("m, n_bs and k_sub must be positive".into()));
        }
        if !(self.norm_sig > 0.0 && self.norm_sig.is_finite() && self.norm_cov > 0.0 && self.norm_cov.is_finite()) {
            return Err(FormatError::Header("normalization constants must be positive and finite".into()));
        }
        if self.target_bs == 0 || self.target_bs > self.n_bs {
            return Err(FormatError::Header(format!("target_bs {} outside 1..={}", self.target_bs, self.n_bs)));
        }
        if self.scene_digest.len() != 64 || hex::decode(&self.scene_digest).is_err() {
            return Err(FormatError::Header("scene_digest must be 32 hex-encoded bytes".into()));
        }
        if let Some(g) = self.grid {
            if g.nx * g.ny != self.count {
                return Err(FormatError::Dimension(format!("grid {}x{} does not match count {}", g.nx, g.ny, self.count)));
            }
        }
        Ok(())
    }

    /// Positions of the records, reconstructed from the grid.
    pub fn user_positions(&self, scene: &Scene) -> Option<Vec<[f64; 2]>> {
        let g = self.grid?;
        grid_points(&GridConfig { nx: g.nx, ny: g.ny, bounds: g.bounds, seed: self.seed }, scene).ok()
    }

    pub fn json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("header serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

fn check_records(h: &DatasetHeader, records: &[DatasetRecord]) -> Result<(), FormatError> {
    if records.len() != h.count {
        return Err(FormatError::Dimension(format!("header count {} but {} records", h.count, records.len())));
    }
    for (i, r) in records.iter().enumerate() {
        if r.signature.len() != h.signature_len() {
            return Err(FormatError::Dimension(format!(
                "record {i}: signature length {} != {}",
                r.signature.len(),
                h.signature_len()
            )));
        }
        if r.image.m != h.m || r.image.pixels.len() != h.image_len() {
            return Err(FormatError::Dimension(format!("record {i}: image is not {}x{}x2", h.m, h.m)));
        }
    }
    Ok(())
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>, FormatError> {
    ds.header.validate()?;
    check_records(&ds.header, &ds.records)?;
    let json = ds.header.json();
    let len = u32::try_from(json.len()).map_err(|_| FormatError::Header("header too large".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + ds.records.len() * ds.header.record_bytes() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for r in &ds.records {
        for v in r.signature.iter().chain(&r.image.pixels) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

/// Parses only the header; returns it with the offset of the first record.
pub fn decode_header(bytes: &[u8]) -> Result<(DatasetHeader, usize), FormatError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            FormatError::Truncated { expected: 8, found: bytes.len() as u64 }
        } else {
            FormatError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(FormatError::Truncated { expected: 8, found: bytes.len() as u64 });
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let start = 8 + len;
    if bytes.len() < start {
        return Err(FormatError::Truncated { expected: start as u64, found: bytes.len() as u64 });
    }
    let header: DatasetHeader =
        serde_json::from_slice(&bytes[8..start]).map_err(|e| FormatError::Header(e.to_string()))?;
    header.validate()?;
    Ok((header, start))
}

/// Decodes a file image. `user_xy` is reconstructed from the header grid
/// when `scene` is given, and left at the origin otherwise.
pub fn decode(bytes: &[u8], scene: Option<&Scene>) -> Result<Dataset, FormatError> {
    let (header, start) = decode_header(bytes)?;
    let expected = start as u64 + header.count as u64 * header.record_bytes();
    let found = bytes.len() as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FormatError::Dimension(format!("{} trailing bytes after {} records", found - expected, header.count)));
    }
    let positions = scene.and_then(|s| header.user_positions(s));
    let (sig_len, img_len) = (header.signature_len(), header.image_len());
    let rec_len = header.record_bytes() as usize;
    let records = bytes[start..]
        .chunks_exact(rec_len)
        .enumerate()
        .map(|(i, chunk)| {
            let v = read_f32s(chunk);
            DatasetRecord {
                signature: v[..sig_len].to_vec(),
                image: CovImage { m: header.m, pixels: v[sig_len..sig_len + img_len].to_vec() },
                user_xy: positions.as_ref().map_or([0.0, 0.0], |p| p[i]),
                target_bs: header.target_bs - 1,
            }
        })
        .collect();
    Ok(Dataset { header, records })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), FormatError> {
    let bytes = encode(ds)?;
    atomic_write(path, &bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path, scene: Option<&Scene>) -> Result<Dataset, FormatError> {
    decode(&std::fs::read(path)?, scene)
}

pub fn read_header(path: &Path) -> Result<DatasetHeader, FormatError> {
    // Headers are small; read just enough of the file.
    use std::io::Read;
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 8];
    let n = f.read(&mut head)?;
    let mut buf = head[..n].to_vec();
    if n == 8 && &head[..4] == MAGIC {
        let len = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
        let mut rest = vec![0u8; len];
        let got = f.read(&mut rest)?;
        buf.extend_from_slice(&rest[..got]);
    }
    Ok(decode_header(&buf)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(count: usize) -> DatasetHeader {
        DatasetHeader {
            m: 2,
            n_bs: 1,
            k_sub: 1,
            count,
            norm_sig: 3.5,
            norm_cov: 0.25,
            target_bs: 1,
            scene_digest: "ab".repeat(32),
            seed: 42,
            grid: None,
        }
    }

    fn dataset(count: usize) -> Dataset {
        let records = (0..count)
            .map(|i| DatasetRecord {
                signature: vec![i as f32 * 0.1, -1.0],
                image: CovImage { m: 2, pixels: (0..8).map(|p| (p as f32 - 3.3) / (i + 1) as f32).collect() },
                user_xy: [0.0, 0.0],
                target_bs: 0,
            })
            .collect();
        Dataset { header: header(count), records }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = dataset(3);
        let bytes = encode(&ds).unwrap();
        assert_eq!(&bytes[..4], b"CCV1");
        let back = decode(&bytes, None).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn record_layout() {
        let ds = dataset(1);
        let bytes = encode(&ds).unwrap();
        let start = bytes.len() - 40;
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, start - 8);
        let floats = read_f32s(&bytes[start..]);
        assert_eq!(floats[..2], ds.records[0].signature[..]);
        assert_eq!(floats[2..], ds.records[0].image.pixels[..]);
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = encode(&dataset(3)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad, None).unwrap_err().code(), "bad_magic");

        let short = &bytes[..bytes.len() - 40];
        assert_eq!(decode(short, None).unwrap_err().code(), "truncated");
        assert_eq!(decode(&bytes[..6], None).unwrap_err().code(), "truncated");

        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert_eq!(decode(&bytes, None).unwrap_err().code(), "dimension_mismatch");

        let mut ds = dataset(2);
        ds.records[1].signature.pop();
        assert_eq!(encode(&ds).unwrap_err().code(), "dimension_mismatch");
    }

    #[test]
    fn count_larger_than_records_on_disk_is_truncated() {
        let four = encode(&dataset(4)).unwrap();
        let (_, start) = decode_header(&four).unwrap();
        let mut five = encode(&Dataset { header: header(5), records: dataset(5).records }).unwrap();
        let (_, start5) = decode_header(&five).unwrap();
        five.truncate(start5 + (four.len() - start));
        assert!(matches!(decode(&five, None), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn header_validation() {
        let mut h = header(1);
        h.norm_cov = 0.0;
        assert!(matches!(h.validate(), Err(FormatError::Header(_))));
        let mut h = header(1);
        h.target_bs = 2;
        assert!(matches!(h.validate(), Err(FormatError::Header(_))));
        let mut h = header(1);
        h.scene_digest = "zz".into();
        assert!(matches!(h.validate(), Err(FormatError::Header(_))));
    }
}
