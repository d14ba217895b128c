#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sst_core::gan::GanArch;
use sst_core::grid::{Grid, Mask, SpaceTag, SstSeries};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mask with roughly `land` of the pixels set to land, never all land.
pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, land: f64) -> Mask {
    let mut m = Mask::from_shape_fn((h, w), |_| !rng.random_bool(land));
    m[(0, 0)] = true;
    m
}

pub fn random_series(rng: &mut ChaCha8Rng, frames: usize, h: usize, w: usize, land: f64) -> SstSeries {
    let mask = Arc::new(random_mask(rng, h, w, land));
    let grids = (0..frames)
        .map(|_| {
            let v = Array2::from_shape_fn((h, w), |_| rng.random_range(15.0..30.0));
            Grid::new(v, mask.clone(), SpaceTag::PhysicalCelsius).unwrap()
        })
        .collect();
    SstSeries::new(grids, (0..frames as i64).collect()).unwrap()
}

/// All ocean values of a series in frame-major, row-major order.
pub fn ocean_values(s: &SstSeries) -> Vec<f64> {
    s.frames()
        .iter()
        .flat_map(|f| {
            f.values()
                .iter()
                .zip(f.mask().iter())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// 16x16 raster, two up-sampling stages, small latent.
pub fn toy_arch() -> GanArch {
    GanArch {
        latent_dim: 4,
        grid_h: 16,
        grid_w: 16,
        channels: vec![2, 2, 1],
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
