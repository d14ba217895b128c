//! Forecast scoring against truth and file exports (scatter CSV, PPM
//! difference maps).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SstError};
use crate::grid::{denormalize_grid, Grid, SpaceTag, SstSeries};
use crate::metrics::{self, HorizonMetrics, MetricsReport};
use crate::predictor::{forecast_normalized, Predictor};
use crate::prior::PriorNetwork;

/// Colour scale half-range of rendered difference maps, °C.
pub const DIFF_RANGE: f64 = 2.0;
const LAND_RGB: [u8; 3] = [128, 128, 128];

/// Forecast origins (series positions) whose whole horizon falls in `test_start..len`.
pub fn test_origins(len: usize, test_start: usize, horizon: usize) -> Vec<usize> {
    if len < horizon {
        return Vec::new();
    }
    (test_start..=len - horizon).collect()
}

/// Physical forecasts grouped by lead day plus their scores.
#[derive(Clone, Debug)]
pub struct ForecastEval {
    pub report: MetricsReport,
    /// `by_lead[k][o]`: lead `k + 1` for origin `o`.
    pub by_lead: Vec<Vec<Grid>>,
    pub truth_by_lead: Vec<Vec<Grid>>,
}

/// Scores `model` on `inputs` (normalized), optionally passing each
/// forecast through `post` before denormalization.
pub fn evaluate_forecasts(
    model: &Predictor,
    inputs: &SstSeries,
    truth: &SstSeries,
    origins: &[usize],
    horizon: usize,
    post: Option<&PriorNetwork>,
    run_id: &str,
) -> Result<ForecastEval> {
    if truth.space() != SpaceTag::PhysicalCelsius {
        return Err(SstError::Misaligned("truth must be in physical units".into()));
    }
    if inputs.days() != truth.days() {
        return Err(SstError::Misaligned("input and truth days differ".into()));
    }
    if origins.is_empty() {
        return Err(SstError::SeriesTooShort("no forecast origins in the test range".into()));
    }
    let stats = inputs.norm_stats().ok_or(SstError::NotNormalized)?;
    let per_origin = forecast_normalized(model, inputs, origins, horizon)?;
    let mut by_lead: Vec<Vec<Grid>> = vec![Vec::with_capacity(origins.len()); horizon];
    for f in per_origin {
        for (k, g) in f.into_iter().enumerate() {
            by_lead[k].push(g);
        }
    }
    if let Some(prior) = post {
        for lead in &mut by_lead {
            let days: Vec<i64> = (0..lead.len() as i64).collect();
            let s = SstSeries::with_stats(std::mem::take(lead), days, Some(stats))?;
            *lead = prior.enhance(&s)?.frames().to_vec();
        }
    }
    let by_lead: Vec<Vec<Grid>> = by_lead
        .iter()
        .map(|l| l.iter().map(|g| denormalize_grid(g, stats)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let truth_by_lead: Vec<Vec<Grid>> = (0..horizon)
        .map(|k| origins.iter().map(|&o| truth.frame(o + k).clone()).collect())
        .collect();
    let mut per_horizon = Vec::with_capacity(horizon);
    for k in 0..horizon {
        per_horizon.push(HorizonMetrics {
            day_offset: k + 1,
            rmse: metrics::rmse_frames(&by_lead[k], &truth_by_lead[k])?,
            r2: metrics::r2_frames(&by_lead[k], &truth_by_lead[k])?,
        });
    }
    let all_pred: Vec<Grid> = by_lead.concat();
    let all_truth: Vec<Grid> = truth_by_lead.concat();
    let report = MetricsReport {
        rmse_celsius: metrics::rmse_frames(&all_pred, &all_truth)?,
        r2: metrics::r2_frames(&all_pred, &all_truth)?,
        per_horizon,
        n_pixels: truth.n_ocean(),
        run_id: run_id.to_string(),
    };
    Ok(ForecastEval {
        report,
        by_lead,
        truth_by_lead,
    })
}

/// Scores a predicted series against truth over all of its frames.
pub fn report_for_series(pred: &SstSeries, truth: &SstSeries, run_id: &str) -> Result<MetricsReport> {
    let rmse = metrics::rmse(pred, truth)?;
    let r2 = metrics::r2(pred, truth)?;
    Ok(MetricsReport {
        rmse_celsius: rmse,
        r2,
        per_horizon: vec![HorizonMetrics { day_offset: 1, rmse, r2 }],
        n_pixels: truth.n_ocean(),
        run_id: run_id.to_string(),
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes `truth,pred` rows for every `stride`-th ocean pixel pair; returns the row count.
pub fn scatter_export(pred: &[Grid], truth: &[Grid], path: &Path, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(SstError::Constraint {
            key: "scatter_stride".into(),
            reason: "must be >= 1".into(),
        });
    }
    let mut out = format!("# stride={stride}\ntruth,pred\n");
    let mut rows = 0;
    for (p, t) in metrics::paired_values(pred, truth)?.step_by(stride) {
        writeln!(out, "{t},{p}").expect("string write");
        rows += 1;
    }
    ensure_parent(path)?;
    fs::write(path, out)?;
    Ok(rows)
}

/// Blue (−range) through white (0) to red (+range), clipped.
pub fn diverging_rgb(v: f64, range: f64) -> [u8; 3] {
    let x = (v / range).clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if x >= 0.0 {
        [255, fade(x), fade(x)]
    } else {
        [fade(-x), fade(-x), 255]
    }
}

/// Binary PPM (P6) rendering of a °C difference map; land is grey.
pub fn difference_ppm(diff: &Grid) -> Vec<u8> {
    let (h, w) = (diff.height(), diff.width());
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for ((i, j), &v) in diff.values().indexed_iter() {
        let rgb = if diff.mask()[[i, j]] {
            diverging_rgb(v, DIFF_RANGE)
        } else {
            LAND_RGB
        };
        bytes.extend_from_slice(&rgb);
    }
    bytes
}

pub fn write_difference_ppm(diff: &Grid, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, difference_ppm(diff))?;
    Ok(())
}
