//! Gridded SST fields, time series of fields, z-score normalization and
//! bilinear regridding.
//!
//! Land pixels (`mask = false`) never take part in statistics; they carry
//! [`FILL_VALUE`] in both physical and normalized space.

use std::ops::Range;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SstError};

/// Ocean mask: `true` marks an ocean pixel.
pub type Mask = Array2<bool>;

/// Sentinel stored at land pixels.
pub const FILL_VALUE: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTag {
    PhysicalCelsius,
    Normalized,
}

/// One 2-D SST field on a regular raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    values: Array2<f64>,
    mask: Arc<Mask>,
    space: SpaceTag,
}

impl Grid {
    /// Builds a grid, overwriting land pixels with [`FILL_VALUE`].
    pub fn new(mut values: Array2<f64>, mask: Arc<Mask>, space: SpaceTag) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(SstError::ShapeMismatch(format!(
                "values {:?} vs mask {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        if values.is_empty() {
            return Err(SstError::InvalidGrid("zero-sized grid".into()));
        }
        for (v, &ocean) in values.iter_mut().zip(mask.iter()) {
            if ocean {
                if !v.is_finite() {
                    return Err(SstError::InvalidGrid("non-finite ocean value".into()));
                }
            } else {
                *v = FILL_VALUE;
            }
        }
        Ok(Grid {
            values,
            mask,
            space,
        })
    }

    /// Grid with every pixel ocean.
    pub fn all_ocean(values: Array2<f64>, space: SpaceTag) -> Result<Self> {
        let mask = Arc::new(Mask::from_elem(values.dim(), true));
        Grid::new(values, mask, space)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.mask
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn fill_value(&self) -> f64 {
        FILL_VALUE
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_ocean(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Ocean values in row-major order.
    pub fn ocean_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
    }

    /// Same mask, new values.
    pub fn with_values(&self, values: Array2<f64>, space: SpaceTag) -> Result<Self> {
        Grid::new(values, self.mask.clone(), space)
    }

    fn map_ocean(&self, space: SpaceTag, f: impl Fn(f64) -> f64) -> Grid {
        let mut values = self.values.clone();
        for (v, &ocean) in values.iter_mut().zip(self.mask.iter()) {
            if ocean {
                *v = f(*v);
            }
        }
        Grid {
            values,
            mask: self.mask.clone(),
            space,
        }
    }
}

/// Global z-score statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(SstError::DegenerateField);
        }
        Ok(NormStats { mu, sigma })
    }
}

/// Time-ordered daily fields sharing one raster and mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SstSeries {
    frames: Vec<Grid>,
    days: Vec<i64>,
    norm_stats: Option<NormStats>,
}

impl SstSeries {
    pub fn new(frames: Vec<Grid>, days: Vec<i64>) -> Result<Self> {
        SstSeries::with_stats(frames, days, None)
    }

    pub fn with_stats(frames: Vec<Grid>, days: Vec<i64>, norm_stats: Option<NormStats>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| SstError::InvalidGrid("series needs at least one frame".into()))?;
        if days.len() != frames.len() {
            return Err(SstError::Misaligned(format!(
                "{} frames but {} day indices",
                frames.len(),
                days.len()
            )));
        }
        for f in &frames[1..] {
            if f.values.dim() != first.values.dim() {
                return Err(SstError::ShapeMismatch("frames differ in shape".into()));
            }
            if !Arc::ptr_eq(&f.mask, &first.mask) && f.mask != first.mask {
                return Err(SstError::Misaligned("frames differ in mask".into()));
            }
            if f.space != first.space {
                return Err(SstError::Misaligned("frames differ in space tag".into()));
            }
        }
        if days.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(SstError::Misaligned("day indices must advance by exactly one".into()));
        }
        // share a single mask allocation
        let mask = first.mask.clone();
        let frames = frames
            .into_iter()
            .map(|f| Grid { mask: mask.clone(), ..f })
            .collect();
        Ok(SstSeries {
            frames,
            days,
            norm_stats,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Grid] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Grid {
        &self.frames[i]
    }

    pub fn days(&self) -> &[i64] {
        &self.days
    }

    pub fn mask(&self) -> &Arc<Mask> {
        &self.frames[0].mask
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn space(&self) -> SpaceTag {
        self.frames[0].space
    }

    pub fn norm_stats(&self) -> Option<NormStats> {
        self.norm_stats
    }

    pub fn n_ocean(&self) -> usize {
        self.frames[0].n_ocean()
    }

    /// Position of a day index within the series.
    pub fn position_of(&self, day: i64) -> Option<usize> {
        let offset = day - self.days[0];
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    /// Contiguous sub-series by frame position.
    pub fn slice(&self, range: Range<usize>) -> Result<SstSeries> {
        if range.start >= range.end || range.end > self.len() {
            return Err(SstError::SeriesTooShort(format!(
                "cannot take frames {range:?} of a {}-frame series",
                self.len()
            )));
        }
        Ok(SstSeries {
            frames: self.frames[range.clone()].to_vec(),
            days: self.days[range].to_vec(),
            norm_stats: self.norm_stats,
        })
    }

    /// Chronological split: the first `fraction` of days, then the rest.
    pub fn split_train_test(&self, fraction: f64) -> Result<(SstSeries, SstSeries)> {
        let cut = train_len(self.len(), fraction);
        Ok((self.slice(0..cut)?, self.slice(cut..self.len())?))
    }

    /// Replaces all frames, keeping days; frames must share this series' shape.
    pub fn with_frames(&self, frames: Vec<Grid>) -> Result<SstSeries> {
        SstSeries::with_stats(frames, self.days.clone(), self.norm_stats)
    }
}

/// Number of leading frames assigned to training by a chronological split.
pub fn train_len(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Mean and population standard deviation over every ocean pixel of every frame.
pub fn compute_norm_stats(series: &SstSeries) -> Result<NormStats> {
    if series.space() != SpaceTag::PhysicalCelsius {
        return Err(SstError::DoubleNormalization);
    }
    let n_ocean = series.n_ocean();
    if n_ocean == 0 {
        return Err(SstError::EmptyOceanDomain);
    }
    let count = (n_ocean * series.len()) as f64;
    let sum: f64 = series.frames.iter().flat_map(|f| f.ocean_values()).sum();
    let mu = sum / count;
    let ss: f64 = series
        .frames
        .iter()
        .flat_map(|f| f.ocean_values())
        .map(|v| (v - mu) * (v - mu))
        .sum();
    let sigma = (ss / count).sqrt();
    if sigma == 0.0 {
        return Err(SstError::DegenerateField);
    }
    NormStats::new(mu, sigma)
}

/// z = (x − μ)/σ on ocean pixels.
pub fn normalize(series: &SstSeries, stats: NormStats) -> Result<SstSeries> {
    if series.space() == SpaceTag::Normalized {
        return Err(SstError::DoubleNormalization);
    }
    let frames = series
        .frames
        .iter()
        .map(|f| normalize_grid(f, stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(SstSeries {
        frames,
        days: series.days.clone(),
        norm_stats: Some(stats),
    })
}

/// x = z·σ + μ on ocean pixels.
pub fn denormalize(series: &SstSeries, stats: NormStats) -> Result<SstSeries> {
    if series.space() != SpaceTag::Normalized {
        return Err(SstError::NotNormalized);
    }
    let frames = series
        .frames
        .iter()
        .map(|f| denormalize_grid(f, stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(SstSeries {
        frames,
        days: series.days.clone(),
        norm_stats: Some(stats),
    })
}

pub fn normalize_grid(grid: &Grid, stats: NormStats) -> Result<Grid> {
    if grid.space == SpaceTag::Normalized {
        return Err(SstError::DoubleNormalization);
    }
    Ok(grid.map_ocean(SpaceTag::Normalized, |x| (x - stats.mu) / stats.sigma))
}

pub fn denormalize_grid(grid: &Grid, stats: NormStats) -> Result<Grid> {
    if grid.space != SpaceTag::Normalized {
        return Err(SstError::NotNormalized);
    }
    Ok(grid.map_ocean(SpaceTag::PhysicalCelsius, |z| z * stats.sigma + stats.mu))
}

/// Bilinear resampling with corner-aligned unit-square coordinates.
///
/// The mask is resampled by nearest neighbour. Ocean outputs interpolate only
/// over ocean source pixels (weights renormalized), so every output value is a
/// convex combination of input ocean values.
pub fn regrid_bilinear(grid: &Grid, out_h: usize, out_w: usize) -> Result<Grid> {
    if out_h < 2 || out_w < 2 {
        return Err(SstError::InvalidGrid(format!(
            "regrid target {out_h}x{out_w} must be at least 2x2"
        )));
    }
    let (h, w) = (grid.height(), grid.width());
    let coord = |i: usize, n_out: usize, n_in: usize| -> f64 {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    };
    let mut mask = Mask::from_elem((out_h, out_w), false);
    let mut values = Array2::from_elem((out_h, out_w), FILL_VALUE);
    for i in 0..out_h {
        let y = coord(i, out_h, h);
        let y0 = (y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for j in 0..out_w {
            let x = coord(j, out_w, w);
            let x0 = (x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let nearest = ((y.round() as usize).min(h - 1), (x.round() as usize).min(w - 1));
            if !grid.mask[nearest] {
                continue;
            }
            mask[(i, j)] = true;
            let taps = [
                ((y0, x0), (1.0 - fy) * (1.0 - fx)),
                ((y0, x1), (1.0 - fy) * fx),
                ((y1, x0), fy * (1.0 - fx)),
                ((y1, x1), fy * fx),
            ];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (idx, wt) in taps {
                if grid.mask[idx] && wt > 0.0 {
                    acc += wt * grid.values[idx];
                    wsum += wt;
                }
            }
            values[(i, j)] = if wsum > 0.0 { acc / wsum } else { grid.values[nearest] };
        }
    }
    Grid::new(values, Arc::new(mask), grid.space)
}
