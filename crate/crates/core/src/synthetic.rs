//! Paired synthetic "observed" and "numerical model" SST series.
//!
//! Truth is a seasonal superposition of Gaussian warm/cold pools over a
//! north–south gradient, plus a bounded slowly-varying drift. The model
//! counterpart degrades truth with a phase lag, Gaussian smoothing and a
//! smooth additive bias field: systematic errors, not white noise.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SstError};
use crate::grid::{Grid, Mask, SpaceTag, SstSeries};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPattern {
    /// Random low-wavenumber field with unit RMS over the ocean.
    #[default]
    Smooth,
    /// Spatially constant unit field.
    Flat,
}

/// How the synthetic numerical model departs from truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    /// RMS of the additive bias field, °C.
    pub additive_field_scale: f64,
    /// Gaussian smoothing standard deviation, pixels.
    pub smoothing_radius: f64,
    /// Temporal lag of the model dynamics, days.
    pub phase_lag_days: f64,
    pub pattern: BiasPattern,
}

impl BiasSpec {
    pub const NONE: BiasSpec = BiasSpec {
        additive_field_scale: 0.0,
        smoothing_radius: 0.0,
        phase_lag_days: 0.0,
        pattern: BiasPattern::Smooth,
    };

    pub fn new(additive_field_scale: f64, smoothing_radius: f64, phase_lag_days: f64) -> Self {
        BiasSpec {
            additive_field_scale,
            smoothing_radius,
            phase_lag_days,
            pattern: BiasPattern::Smooth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("additive_field_scale", self.additive_field_scale),
            ("smoothing_radius", self.smoothing_radius),
            ("phase_lag_days", self.phase_lag_days),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SstError::Constraint {
                    key: key.into(),
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec::new(0.8, 1.5, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub height: usize,
    pub width: usize,
    pub n_days: usize,
    pub n_modes: usize,
    pub seasonal_period: f64,
    pub base_temp: f64,
    pub amplitude: f64,
    /// Drift magnitude as a fraction of `amplitude`.
    pub drift: f64,
    pub land_fraction: f64,
    pub bias: BiasSpec,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            height: 32,
            width: 32,
            n_days: 400,
            n_modes: 4,
            seasonal_period: 365.0,
            base_temp: 26.0,
            amplitude: 3.0,
            drift: 0.1,
            land_fraction: 0.15,
            bias: BiasSpec::default(),
            seed: 7,
        }
    }
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| -> Result<()> {
            Err(SstError::Constraint {
                key: key.into(),
                reason,
            })
        };
        if self.height < 2 || self.width < 2 {
            return fail("height/width", "raster must be at least 2x2".into());
        }
        if self.n_days < 2 {
            return fail("n_days", format!("need at least 2 days, got {}", self.n_days));
        }
        if self.n_modes < 1 {
            return fail("n_modes", "need at least one mode".into());
        }
        if !(self.seasonal_period > 0.0) {
            return fail("seasonal_period", "must be positive".into());
        }
        if !(self.amplitude > 0.0) {
            return fail("amplitude", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return fail("drift", "must lie in [0, 1]".into());
        }
        if !(0.0..0.9).contains(&self.land_fraction) {
            return fail("land_fraction", "must lie in [0, 0.9)".into());
        }
        self.bias.validate()
    }

    /// Upper bound of the drift contribution at each pixel, °C.
    pub fn drift_bound(&self) -> Array2<f64> {
        let modes = Modes::draw(self);
        let mut bound = Array2::zeros((self.height, self.width));
        for bump in &modes.bumps {
            bound += bump;
        }
        bound * (self.amplitude * self.drift)
    }
}

struct Modes {
    bumps: Vec<Array2<f64>>,
    weights: Vec<f64>,
    phases: Vec<f64>,
}

impl Modes {
    fn draw(s: &SyntheticScenario) -> Modes {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let (h, w) = (s.height as f64, s.width as f64);
        let mut bumps = Vec::with_capacity(s.n_modes);
        let mut weights = Vec::with_capacity(s.n_modes);
        let mut phases = Vec::with_capacity(s.n_modes);
        for _ in 0..s.n_modes {
            let cy = rng.random_range(0.1..0.9) * h;
            let cx = rng.random_range(0.1..0.9) * w;
            let width = rng.random_range(0.12..0.3) * h.min(w);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            weights.push(sign * rng.random_range(0.6..1.0));
            phases.push(rng.random_range(0.0..2.0 * PI));
            bumps.push(Array2::from_shape_fn((s.height, s.width), |(i, j)| {
                let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                (-d2 / (2.0 * width * width)).exp()
            }));
        }
        Modes {
            bumps,
            weights,
            phases,
        }
    }
}

/// Pseudo-coastline: the `land_fraction` of pixels furthest along a wavy
/// south-east gradient become land.
fn coastline_mask(s: &SyntheticScenario, rng: &mut ChaCha8Rng) -> Mask {
    let (h, w) = (s.height, s.width);
    let phase = rng.random_range(0.0..2.0 * PI);
    let score = |i: usize, j: usize| {
        let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
        y + x + 0.12 * (2.0 * PI * 2.0 * y + phase).sin()
    };
    let mut order: Vec<(f64, usize)> = (0..h * w).map(|k| (score(k / w, k % w), k)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let n_land = (s.land_fraction * (h * w) as f64).round() as usize;
    let mut mask = Mask::from_elem((h, w), true);
    for &(_, k) in order.iter().take(n_land) {
        mask[(k / w, k % w)] = false;
    }
    mask
}

pub fn generate_truth(s: &SyntheticScenario) -> Result<SstSeries> {
    s.validate()?;
    let modes = Modes::draw(s);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(0x5EED));
    let mask = Arc::new(coastline_mask(s, &mut rng));

    const RHO: f64 = 0.9;
    let mut state: Vec<f64> = (0..s.n_modes).map(|_| rng.sample(StandardNormal)).collect();
    let gradient = Array2::from_shape_fn((s.height, s.width), |(i, _)| {
        0.8 * (0.5 - i as f64 / (s.height - 1) as f64)
    });

    let mut frames = Vec::with_capacity(s.n_days);
    for day in 0..s.n_days {
        if day > 0 {
            for a in state.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *a = RHO * *a + (1.0 - RHO * RHO).sqrt() * xi;
            }
        }
        let season = 2.0 * PI * day as f64 / s.seasonal_period;
        let mut field = gradient.clone();
        for k in 0..s.n_modes {
            let coeff = modes.weights[k] * (season + modes.phases[k]).cos() + s.drift * state[k].tanh();
            field.scaled_add(coeff, &modes.bumps[k]);
        }
        let values = field.mapv(|v| s.base_temp + s.amplitude * v);
        frames.push(Grid::new(values, mask.clone(), SpaceTag::PhysicalCelsius)?);
    }
    SstSeries::new(frames, (0..s.n_days as i64).collect())
}

/// Degrades `truth` by, in order: phase lag, Gaussian smoothing, additive bias.
pub fn generate_model_counterpart(truth: &SstSeries, bias: &BiasSpec, seed: u64) -> Result<SstSeries> {
    bias.validate()?;
    if truth.space() != SpaceTag::PhysicalCelsius {
        return Err(SstError::DoubleNormalization);
    }
    let mask = truth.mask().clone();
    let n = truth.len();
    let pattern = bias_pattern(truth.height(), truth.width(), &mask, bias.pattern, seed);

    let mut frames = Vec::with_capacity(n);
    for p in 0..n {
        let mut values = if bias.phase_lag_days > 0.0 {
            let src = (p as f64 - bias.phase_lag_days).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = src - lo as f64;
            let a = truth.frame(lo).values();
            let b = truth.frame(hi).values();
            a * (1.0 - frac) + b * frac
        } else {
            truth.frame(p).values().clone()
        };
        if bias.smoothing_radius > 0.0 {
            values = masked_gaussian_blur(&values, &mask, bias.smoothing_radius);
        }
        if bias.additive_field_scale > 0.0 {
            values.scaled_add(bias.additive_field_scale, &pattern);
        }
        frames.push(Grid::new(values, mask.clone(), SpaceTag::PhysicalCelsius)?);
    }
    SstSeries::new(frames, truth.days().to_vec())
}

/// Truth and model series for a scenario; the model uses a seed derived from the scenario's.
pub fn generate_pair(s: &SyntheticScenario) -> Result<(SstSeries, SstSeries)> {
    let truth = generate_truth(s)?;
    let model = generate_model_counterpart(&truth, &s.bias, s.seed.wrapping_mul(31).wrapping_add(1))?;
    Ok((truth, model))
}

fn bias_pattern(h: usize, w: usize, mask: &Mask, kind: BiasPattern, seed: u64) -> Array2<f64> {
    match kind {
        BiasPattern::Flat => Array2::from_elem((h, w), 1.0),
        BiasPattern::Smooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.3..1.5),
                        rng.random_range(0.3..1.5),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let raw = Array2::from_shape_fn((h, w), |(i, j)| {
                let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
                0.5 + waves
                    .iter()
                    .map(|&(ky, kx, ph)| (2.0 * PI * (ky * y + kx * x) + ph).cos())
                    .sum::<f64>()
            });
            let (ss, count) = raw
                .iter()
                .zip(mask.iter())
                .filter(|(_, &m)| m)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v * v, c + 1));
            let rms = (ss / count.max(1) as f64).sqrt();
            if rms > 0.0 {
                raw / rms
            } else {
                raw
            }
        }
    }
}

/// Normalized convolution: blur of `v·m` divided by blur of `m`, so land never
/// leaks into ocean pixels.
fn masked_gaussian_blur(values: &Array2<f64>, mask: &Mask, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let m = mask.mapv(|o| if o { 1.0 } else { 0.0 });
    let num = separable_blur(&(values * &m), &kernel, radius);
    let den = separable_blur(&m, &kernel, radius);
    Array2::from_shape_fn(values.dim(), |idx| {
        if mask[idx] && den[idx] > 0.0 {
            num[idx] / den[idx]
        } else {
            values[idx]
        }
    })
}

fn separable_blur(x: &Array2<f64>, kernel: &[f64], radius: isize) -> Array2<f64> {
    let (h, w) = x.dim();
    let pass = |src: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let d = k as isize - radius;
                let (ii, jj) = if along_rows {
                    (i as isize, j as isize + d)
                } else {
                    (i as isize + d, j as isize)
                };
                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                    acc += kv * src[(ii as usize, jj as usize)];
                }
            }
            acc
        })
    };
    pass(&pass(x, true), false)
}
