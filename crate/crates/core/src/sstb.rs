//! The `SSTB` tensor container and the series file layout built on it.
//!
//! Layout (little-endian):
//!
//! | bytes          | content                                  |
//! |----------------|------------------------------------------|
//! | 0..6           | magic `53 53 54 42 31 00` (`"SSTB1\0"`)  |
//! | 6              | dtype code, `1` = float32                |
//! | 7              | rank                                     |
//! | 8..8+4·rank    | dims, `u32` each                         |
//! | rest           | row-major payload                        |
//!
//! A series is stored as one rank-3 `[T, H, W]` tensor. Its sidecar
//! `<path>.meta.json` names the mask file (a rank-2 tensor of 0/1 values next
//! to the series), the space tag, normalization statistics, fill value and day
//! indices.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SstError};
use crate::grid::{Grid, Mask, NormStats, SpaceTag, SstSeries, FILL_VALUE};

pub const MAGIC: [u8; 6] = *b"SSTB1\0";
pub const DTYPE_F32: u8 = 1;
const HEADER_FIXED: usize = 8;

pub fn encode(dims: &[usize], data: &[f32]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), data.len(), "dims do not match payload");
    assert!(dims.len() <= u8::MAX as usize);
    let mut out = Vec::with_capacity(HEADER_FIXED + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&u32::try_from(d).expect("dimension exceeds u32").to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    if bytes.len() < HEADER_FIXED || bytes[..6] != MAGIC {
        return Err(SstError::UnrecognizedContainer);
    }
    if bytes[6] != DTYPE_F32 {
        return Err(SstError::UnsupportedDtype(bytes[6]));
    }
    let rank = bytes[7] as usize;
    let header = HEADER_FIXED + 4 * rank;
    if bytes.len() < header {
        return Err(SstError::TruncatedPayload {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let expected = header + 4 * count;
    if bytes.len() < expected {
        return Err(SstError::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(SstError::HeaderMismatch(format!(
            "header {dims:?} describes {expected} bytes but file has {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(dims, data))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    decode(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub format: String,
    pub mask_path: String,
    pub space_tag: SpaceTag,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub fill_value: f64,
    pub day_indices: Vec<i64>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    suffixed(path, ".meta.json")
}

fn mask_path(path: &Path) -> PathBuf {
    suffixed(path, ".mask.sstb")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_series(series: &SstSeries, path: &Path) -> Result<()> {
    let (h, w) = (series.height(), series.width());
    let mut data = Vec::with_capacity(series.len() * h * w);
    for f in series.frames() {
        data.extend(f.values().iter().map(|&v| v as f32));
    }
    write_tensor(path, &[series.len(), h, w], &data)?;

    let mask_file = mask_path(path);
    let mask_data: Vec<f32> = series.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    write_tensor(&mask_file, &[h, w], &mask_data)?;

    let meta = SeriesMeta {
        format: "SSTB1".into(),
        mask_path: mask_file
            .file_name()
            .expect("mask path has a file name")
            .to_string_lossy()
            .into_owned(),
        space_tag: series.space(),
        mu: series.norm_stats().map(|s| s.mu),
        sigma: series.norm_stats().map(|s| s.sigma),
        fill_value: FILL_VALUE,
        day_indices: series.days().to_vec(),
    };
    fs::write(meta_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_series(path: &Path) -> Result<SstSeries> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 3 {
        return Err(SstError::HeaderMismatch(format!(
            "series must be rank 3 [T, H, W], header has rank {}",
            dims.len()
        )));
    }
    let (t, h, w) = (dims[0], dims[1], dims[2]);
    let meta_file = meta_path(path);
    let meta: SeriesMeta = serde_json::from_str(&fs::read_to_string(&meta_file)?)?;
    if meta.day_indices.len() != t {
        return Err(SstError::HeaderMismatch(format!(
            "header has {t} frames, metadata lists {} days",
            meta.day_indices.len()
        )));
    }
    let mask_file = path
        .parent()
        .map(|d| d.join(&meta.mask_path))
        .unwrap_or_else(|| PathBuf::from(&meta.mask_path));
    let (mdims, mdata) = read_tensor(&mask_file)?;
    if mdims != [h, w] {
        return Err(SstError::HeaderMismatch(format!(
            "mask dims {mdims:?} do not match series raster {h}x{w}"
        )));
    }
    let mask = Arc::new(
        Mask::from_shape_vec((h, w), mdata.iter().map(|&v| v != 0.0).collect())
            .expect("mask dims checked"),
    );
    let stats = match (meta.mu, meta.sigma) {
        (Some(mu), Some(sigma)) => Some(NormStats::new(mu, sigma).map_err(|_| SstError::Metadata {
            path: meta_file.clone(),
            reason: "sigma must be positive".into(),
        })?),
        (None, None) => None,
        _ => {
            return Err(SstError::Metadata {
                path: meta_file,
                reason: "mu and sigma must be given together".into(),
            })
        }
    };
    let frames = data
        .chunks_exact(h * w)
        .map(|chunk| {
            let values = Array2::from_shape_vec((h, w), chunk.iter().map(|&v| f64::from(v)).collect())
                .expect("frame dims checked");
            Grid::new(values, mask.clone(), meta.space_tag)
        })
        .collect::<Result<Vec<_>>>()?;
    SstSeries::with_stats(frames, meta.day_indices, stats)
}
