//! RMSE, R² and difference maps over ocean pixels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SstError};
use crate::grid::{Grid, SstSeries};

/// Scores for one forecast lead time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub day_offset: usize,
    pub rmse: f64,
    pub r2: f64,
}

/// Serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_celsius: f64,
    pub r2: f64,
    pub per_horizon: Vec<HorizonMetrics>,
    pub n_pixels: usize,
    pub run_id: String,
}

fn check_frames(pred: &Grid, truth: &Grid) -> Result<()> {
    if pred.values().dim() != truth.values().dim() {
        return Err(SstError::Misaligned(format!(
            "frame shapes {:?} vs {:?}",
            pred.values().dim(),
            truth.values().dim()
        )));
    }
    if pred.mask() != truth.mask() {
        return Err(SstError::Misaligned("masks differ".into()));
    }
    if pred.space() != truth.space() {
        return Err(SstError::Misaligned("space tags differ".into()));
    }
    Ok(())
}

fn check_series(pred: &SstSeries, truth: &SstSeries) -> Result<()> {
    if pred.days() != truth.days() {
        return Err(SstError::Misaligned("day indices differ".into()));
    }
    check_frames(pred.frame(0), truth.frame(0))
}

/// Ocean-pixel (pred, truth) pairs over aligned frame lists.
pub fn paired_values<'a>(
    pred: &'a [Grid],
    truth: &'a [Grid],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(SstError::Misaligned(format!(
            "{} predicted frames vs {} truth frames",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        check_frames(p, t)?;
    }
    Ok(pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.ocean_values().zip(t.ocean_values())))
}

pub fn rmse_frames(pred: &[Grid], truth: &[Grid]) -> Result<f64> {
    let (mut ss, mut n) = (0.0, 0usize);
    for (p, t) in paired_values(pred, truth)? {
        ss += (p - t) * (p - t);
        n += 1;
    }
    if n == 0 {
        return Err(SstError::EmptyOceanDomain);
    }
    Ok((ss / n as f64).sqrt())
}

pub fn r2_frames(pred: &[Grid], truth: &[Grid]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = paired_values(pred, truth)?.collect();
    if pairs.is_empty() {
        return Err(SstError::EmptyOceanDomain);
    }
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let ss_tot: f64 = pairs.iter().map(|&(_, t)| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(SstError::UndefinedR2);
    }
    let ss_res: f64 = pairs.iter().map(|&(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean squared error over every ocean pixel of every frame.
pub fn rmse(pred: &SstSeries, truth: &SstSeries) -> Result<f64> {
    check_series(pred, truth)?;
    rmse_frames(pred.frames(), truth.frames())
}

/// Coefficient of determination pooled over all ocean pixels and frames.
pub fn r2(pred: &SstSeries, truth: &SstSeries) -> Result<f64> {
    check_series(pred, truth)?;
    r2_frames(pred.frames(), truth.frames())
}

/// R² of each frame separately (diagnostic export).
pub fn r2_per_frame(pred: &SstSeries, truth: &SstSeries) -> Result<Vec<f64>> {
    check_series(pred, truth)?;
    pred.frames()
        .iter()
        .zip(truth.frames())
        .map(|(p, t)| r2_frames(std::slice::from_ref(p), std::slice::from_ref(t)))
        .collect()
}

/// Signed `pred − truth`, land left at the fill value.
pub fn difference_map(pred: &Grid, truth: &Grid) -> Result<Grid> {
    check_frames(pred, truth)?;
    let diff: Array2<f64> = pred.values() - truth.values();
    pred.with_values(diff, pred.space())
}

/// Mean over ocean pixels of one grid.
pub fn ocean_mean(grid: &Grid) -> f64 {
    let n = grid.n_ocean();
    grid.ocean_values().sum::<f64>() / n.max(1) as f64
}
