//! Stacked ConvLSTM forecaster with peephole connections and a 1×1
//! convolution readout. Multi-day forecasts feed each prediction back as
//! the next input.

use std::path::Path;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sst_autograd::{Adam, AdamConfig, ConvGeom, Tape, Tensor, Var};

use crate::error::{Result, SstError};
use crate::grid::{denormalize_grid, Grid, NormStats, SpaceTag, SstSeries};
use crate::nn::{self, TrainLog};
use crate::params::ParamSet;

pub const HORIZONS: [usize; 3] = [1, 3, 7];

/// Lookback selected for each supported horizon.
pub fn default_lookback(horizon: usize) -> Option<usize> {
    match horizon {
        1 => Some(5),
        3 => Some(7),
        7 => Some(10),
        _ => None,
    }
}

/// Gate order inside the stacked kernels and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// `H` and `C` for one layer, each `[B, hidden, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(batch: usize, hidden: usize, height: usize, width: usize) -> Self {
        let shape = [batch, hidden, height, width];
        ConvLstmState {
            h: Tensor::zeros(&shape),
            c: Tensor::zeros(&shape),
        }
    }
}

/// One layer's weights. Input and hidden kernels stack the four gates along
/// the output-channel axis in [`Gate`] order; peepholes act elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmWeights {
    /// `[4·hidden, in, k, k]`
    pub w_x: Tensor,
    /// `[4·hidden, hidden, k, k]`
    pub w_h: Tensor,
    /// `[4·hidden]`
    pub bias: Tensor,
    /// `[hidden, H, W]` each
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
}

impl ConvLstmWeights {
    pub fn zeros(c_in: usize, hidden: usize, kernel: usize, height: usize, width: usize) -> Self {
        let peep = Tensor::zeros(&[hidden, height, width]);
        ConvLstmWeights {
            w_x: Tensor::zeros(&[4 * hidden, c_in, kernel, kernel]),
            w_h: Tensor::zeros(&[4 * hidden, hidden, kernel, kernel]),
            bias: Tensor::zeros(&[4 * hidden]),
            w_ci: peep.clone(),
            w_cf: peep.clone(),
            w_co: peep,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w_x.shape()[2]
    }

    /// Bias entries of one gate.
    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden();
        let g = gate as usize;
        &mut self.bias.data_mut()[g * h..(g + 1) * h]
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [&self.w_x, &self.w_h, &self.bias, &self.w_ci, &self.w_cf, &self.w_co]
    }
}

/// Tape handles for one layer, in the order of [`ConvLstmWeights::tensors`].
#[derive(Clone, Copy)]
pub struct CellVars<'t> {
    pub w_x: Var<'t>,
    pub w_h: Var<'t>,
    pub bias: Var<'t>,
    pub w_ci: Var<'t>,
    pub w_cf: Var<'t>,
    pub w_co: Var<'t>,
}

impl<'t> CellVars<'t> {
    pub fn from_slice(p: &[Var<'t>]) -> Self {
        CellVars {
            w_x: p[0],
            w_h: p[1],
            bias: p[2],
            w_ci: p[3],
            w_cf: p[4],
            w_co: p[5],
        }
    }
}

/// One cell update. `h`/`c` of `None` stand for an all-zero state.
///
/// ```text
/// i = σ(W_xi*X + W_hi*H + W_ci∘C_{t−1} + b_i)
/// f = σ(W_xf*X + W_hf*H + W_cf∘C_{t−1} + b_f)
/// C_t = f∘C_{t−1} + i∘tanh(W_xc*X + W_hc*H + b_c)
/// o = σ(W_xo*X + W_ho*H + W_co∘C_t + b_o)
/// H_t = o∘tanh(C_t)
/// ```
pub fn cell_step<'t>(w: &CellVars<'t>, x: Var<'t>, h: Option<Var<'t>>, c: Option<Var<'t>>) -> (Var<'t>, Var<'t>) {
    let k = w.w_x.shape()[2];
    let hidden = w.w_h.shape()[1];
    let batch = x.shape()[0];
    let geom = ConvGeom::same(k);
    let mut z = x.conv2d(w.w_x, geom);
    if let Some(h) = h {
        z = z.add(h.conv2d(w.w_h, geom));
    }
    let z = z.add_channel_bias(w.bias);
    let zi = z.slice_channels(0, hidden);
    let zf = z.slice_channels(hidden, hidden);
    let zc = z.slice_channels(2 * hidden, hidden);
    let zo = z.slice_channels(3 * hidden, hidden);
    let candidate = zc.tanh();
    let c_new = match c {
        Some(c) => {
            let i = zi.add(w.w_ci.expand_batch(batch).mul(c)).sigmoid();
            let f = zf.add(w.w_cf.expand_batch(batch).mul(c)).sigmoid();
            f.mul(c).add(i.mul(candidate))
        }
        None => zi.sigmoid().mul(candidate),
    };
    let o = zo.add(w.w_co.expand_batch(batch).mul(c_new)).sigmoid();
    (o.mul(c_new.tanh()), c_new)
}

/// Tensor-level cell update for inspection and tests.
pub fn convlstm_cell(state: &ConvLstmState, x: &Tensor, w: &ConvLstmWeights) -> Result<ConvLstmState> {
    let xs = x.shape();
    let hs = state.h.shape();
    if xs.len() != 4 || hs.len() != 4 || state.c.shape() != hs {
        return Err(SstError::ShapeMismatch("cell tensors must be [B, C, H, W]".into()));
    }
    if xs[0] != hs[0] || xs[2..] != hs[2..] || hs[1] != w.hidden() || xs[1] != w.w_x.shape()[1] {
        return Err(SstError::ShapeMismatch(format!(
            "input {xs:?} / state {hs:?} do not fit weights with {} hidden channels",
            w.hidden()
        )));
    }
    if w.w_ci.shape() != [w.hidden(), hs[2], hs[3]] || w.kernel() % 2 == 0 {
        return Err(SstError::ShapeMismatch("peephole shape or kernel size invalid".into()));
    }
    Ok(nn::with_tape(|tape| {
        let vars: Vec<Var> = w.tensors().iter().map(|t| tape.var((*t).clone())).collect();
        let cv = CellVars::from_slice(&vars);
        let (h, c) = cell_step(&cv, tape.var(x.clone()), Some(tape.var(state.h.clone())), Some(tape.var(state.c.clone())));
        ConvLstmState {
            h: (*h.value()).clone(),
            c: (*c.value()).clone(),
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub layers: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::for_horizon(1)
    }
}

impl PredictorConfig {
    pub fn for_horizon(horizon: usize) -> Self {
        PredictorConfig {
            lookback: default_lookback(horizon).unwrap_or(5),
            horizon,
            layers: 2,
            hidden_channels: 32,
            kernel: 3,
            epochs: 30,
            minibatch: 16,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: &str| {
            Err(SstError::Constraint {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.lookback == 0 {
            return fail("lookback", "must be >= 1");
        }
        if !HORIZONS.contains(&self.horizon) {
            return fail("horizon", "must be one of 1, 3, 7");
        }
        if self.layers == 0 {
            return fail("layers", "must be >= 1");
        }
        if self.hidden_channels == 0 {
            return fail("hidden_channels", "must be >= 1");
        }
        if self.kernel % 2 == 0 {
            return fail("kernel", "must be odd");
        }
        if self.minibatch == 0 {
            return fail("minibatch", "must be >= 1");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail("lr", "must be finite and >= 0");
        }
        Ok(())
    }
}

/// Architecture recorded with predictor checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorArch {
    pub lookback: usize,
    pub horizon: usize,
    pub layers: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub norm_stats: Option<NormStats>,
}

const PER_LAYER: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    arch: PredictorArch,
    mask: Tensor,
    params: ParamSet,
}

impl Predictor {
    /// Small random kernels, forget bias +1, zero peepholes and readout bias.
    pub fn init(cfg: &PredictorConfig, grid_h: usize, grid_w: usize, mask: &Tensor, norm_stats: Option<NormStats>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, k) = (cfg.hidden_channels, cfg.kernel);
        let mut params = ParamSet::new();
        for l in 0..cfg.layers {
            let c_in = if l == 0 { 1 } else { h };
            let fan = ((c_in + h) * k * k) as f64;
            let std = 1.0 / fan.sqrt();
            params.push(format!("l{l}.w_x"), nn::gaussian(&mut rng, &[4 * h, c_in, k, k], std));
            params.push(format!("l{l}.w_h"), nn::gaussian(&mut rng, &[4 * h, h, k, k], std));
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            params.push(format!("l{l}.bias"), bias);
            for name in ["w_ci", "w_cf", "w_co"] {
                params.push(format!("l{l}.{name}"), Tensor::zeros(&[h, grid_h, grid_w]));
            }
        }
        params.push("readout.w", nn::gaussian(&mut rng, &[1, h, 1, 1], 1.0 / (h as f64).sqrt()));
        params.push("readout.b", Tensor::zeros(&[1]));
        Self::assemble(cfg, grid_h, grid_w, mask, norm_stats, params)
    }

    fn assemble(cfg: &PredictorConfig, grid_h: usize, grid_w: usize, mask: &Tensor, norm_stats: Option<NormStats>, params: ParamSet) -> Result<Self> {
        if mask.len() != grid_h * grid_w {
            return Err(SstError::ShapeMismatch("mask does not match the predictor raster".into()));
        }
        info!("predictor: {} parameters", params.parameter_count());
        Ok(Predictor {
            arch: PredictorArch {
                lookback: cfg.lookback,
                horizon: cfg.horizon,
                layers: cfg.layers,
                hidden_channels: cfg.hidden_channels,
                kernel: cfg.kernel,
                grid_h,
                grid_w,
                norm_stats,
            },
            mask: mask.clone(),
            params,
        })
    }

    /// All-zero weights: every forecast is exactly zero.
    pub fn zeros(cfg: &PredictorConfig, grid_h: usize, grid_w: usize, mask: &Tensor) -> Result<Self> {
        let mut p = Predictor::init(cfg, grid_h, grid_w, mask, None, 0)?;
        p.params = p.params.map_tensors(|t| Tensor::zeros(t.shape()));
        Ok(p)
    }

    pub fn arch(&self) -> &PredictorArch {
        &self.arch
    }

    pub fn lookback(&self) -> usize {
        self.arch.lookback
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layer_weights(&self, layer: usize) -> ConvLstmWeights {
        let t = &self.params.tensors()[layer * PER_LAYER..(layer + 1) * PER_LAYER];
        ConvLstmWeights {
            w_x: t[0].clone(),
            w_h: t[1].clone(),
            bias: t[2].clone(),
            w_ci: t[3].clone(),
            w_cf: t[4].clone(),
            w_co: t[5].clone(),
        }
    }

    /// Forecasts `horizon` frames from `past` (`[B, t, H, W]`); each element is `[B, 1, H, W]`.
    pub fn rollout<'t>(&self, p: &[Var<'t>], past: Var<'t>, horizon: usize) -> Vec<Var<'t>> {
        let steps = past.shape()[1];
        let layers = self.arch.layers;
        let cells: Vec<CellVars> = (0..layers)
            .map(|l| CellVars::from_slice(&p[l * PER_LAYER..(l + 1) * PER_LAYER]))
            .collect();
        let (rw, rb) = (p[layers * PER_LAYER], p[layers * PER_LAYER + 1]);
        let mut state: Vec<(Option<Var>, Option<Var>)> = vec![(None, None); layers];
        let mut advance = |x: Var<'t>| -> Var<'t> {
            let mut input = x;
            for (cell, st) in cells.iter().zip(state.iter_mut()) {
                let (h, c) = cell_step(cell, input, st.0, st.1);
                *st = (Some(h), Some(c));
                input = h;
            }
            let y = input.conv2d(rw, ConvGeom::same(1)).add_channel_bias(rb);
            nn::apply_mask(y, &self.mask)
        };
        let mut y = None;
        for s in 0..steps {
            y = Some(advance(past.slice_channels(s, 1)));
        }
        let mut out = vec![y.expect("lookback >= 1")];
        for _ in 1..horizon {
            let next = advance(*out.last().expect("nonempty"));
            out.push(next);
        }
        out
    }

    /// Forecasts for a batch of windows `[B, t, H, W]`, normalized space.
    pub fn rollout_tensor(&self, past: &Tensor, horizon: usize) -> Vec<Tensor> {
        nn::with_tape(|tape| {
            let p = self.params.bind(tape);
            self.rollout(&p, tape.var(past.clone()), horizon)
                .iter()
                .map(|v| (*v.value()).clone())
                .collect()
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let arch = serde_json::json!({ "predictor": self.arch, "mask": self.mask.data() });
        self.params.save(dir, "predictor", arch)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, manifest) = ParamSet::load(dir, "predictor")?;
        let arch: PredictorArch = serde_json::from_value(manifest.arch["predictor"].clone())?;
        let mask: Vec<f64> = serde_json::from_value(manifest.arch["mask"].clone())?;
        let cfg = PredictorConfig {
            lookback: arch.lookback,
            horizon: arch.horizon,
            layers: arch.layers,
            hidden_channels: arch.hidden_channels,
            kernel: arch.kernel,
            ..PredictorConfig::default()
        };
        let mask = Tensor::new(vec![mask.len()], mask);
        let template = Predictor::init(&cfg, arch.grid_h, arch.grid_w, &mask, arch.norm_stats, 0)?;
        if template.params.names() != params.names()
            || template.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(SstError::Checkpoint("predictor tensors do not match architecture".into()));
        }
        Predictor::assemble(&cfg, arch.grid_h, arch.grid_w, &mask, arch.norm_stats, params)
    }
}

/// Forecast-origin positions `i` with frames `i−t..i−1` as input and
/// `i..i+horizon−1` as targets.
pub fn window_starts(len: usize, lookback: usize, horizon: usize) -> std::ops::Range<usize> {
    if len < lookback + horizon {
        return lookback..lookback;
    }
    lookback..len - horizon + 1
}

pub fn sample_count(len: usize, lookback: usize, horizon: usize) -> usize {
    window_starts(len, lookback, horizon).len()
}

/// Stacks the `lookback` frames before each origin into `[B, t, H, W]`.
fn gather_windows(frames: &Tensor, origins: &[usize], lookback: usize) -> Tensor {
    let plane: usize = frames.shape()[2..].iter().product();
    let mut data = Vec::with_capacity(origins.len() * lookback * plane);
    for &i in origins {
        data.extend_from_slice(&frames.data()[(i - lookback) * plane..i * plane]);
    }
    Tensor::new(
        vec![origins.len(), lookback, frames.shape()[2], frames.shape()[3]],
        data,
    )
}

/// The model `train_predictor` starts from for this series and config.
pub fn init_predictor(ph: &SstSeries, cfg: &PredictorConfig) -> Result<Predictor> {
    let mask = nn::mask_tensor(ph.mask());
    Predictor::init(cfg, ph.height(), ph.width(), &mask, ph.norm_stats(), cfg.seed.wrapping_add(505))
}

/// Fits a predictor on every sliding window of `ph` (normalized).
pub fn train_predictor(ph: &SstSeries, cfg: &PredictorConfig) -> Result<(Predictor, TrainLog)> {
    cfg.validate()?;
    let frames = nn::series_tensor(ph)?;
    let n = sample_count(ph.len(), cfg.lookback, cfg.horizon);
    if ph.len() <= cfg.lookback + cfg.horizon || n == 0 {
        return Err(SstError::SeriesTooShort(format!(
            "{} frames cannot supply windows of {} + {}",
            ph.len(),
            cfg.lookback,
            cfg.horizon
        )));
    }
    let mask = nn::mask_tensor(ph.mask());
    let mut model = init_predictor(ph, cfg)?;
    let mut opt = Adam::new(AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2), model.params().tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let origins: Vec<usize> = window_starts(ph.len(), cfg.lookback, cfg.horizon).collect();
    let mut log = TrainLog::new(&["loss"]);
    for epoch in 0..cfg.epochs {
        let mut mean = nn::Mean::new(1);
        for idx in nn::epoch_batches(&mut rng, origins.len(), cfg.minibatch) {
            let batch: Vec<usize> = idx.iter().map(|&j| origins[j]).collect();
            let past = gather_windows(&frames, &batch, cfg.lookback);
            let (loss, grads) = {
                let tape = Tape::new();
                let p = model.params().bind(&tape);
                let preds = model.rollout(&p, tape.var(past), cfg.horizon);
                let mut loss: Option<Var> = None;
                for (k, y) in preds.iter().enumerate() {
                    let target: Vec<usize> = batch.iter().map(|&i| i + k).collect();
                    let t = tape.var(nn::gather(&frames, &target));
                    let term = nn::masked_frame_l2(*y, t, &mask).mean();
                    loss = Some(match loss {
                        Some(l) => l.add(term),
                        None => term,
                    });
                }
                let loss = loss.expect("horizon >= 1");
                let grads = tape.grad(loss, &p);
                (loss.item(), nn::grads_to_tensors(&grads))
            };
            nn::ensure_finite("train-predictor", epoch, &[loss])?;
            opt.step(model.params_mut().tensors_mut(), &grads);
            mean.add(&[loss]);
        }
        let row = mean.finish();
        debug!("predictor epoch {epoch}: loss {:.5}", row[0]);
        log.push(row);
    }
    Ok((model, log))
}

/// Normalized forecasts from several origins at once: `out[o][k]` is the
/// `k`-th day ahead for origin `origins[o]` (series positions).
pub fn forecast_normalized(model: &Predictor, series: &SstSeries, origins: &[usize], horizon: usize) -> Result<Vec<Vec<Grid>>> {
    let t = model.lookback();
    if let Some(&bad) = origins.iter().find(|&&i| i < t || i > series.len()) {
        return Err(SstError::InsufficientHistory(format!(
            "origin {bad} needs {t} prior frames within a series of {}",
            series.len()
        )));
    }
    if (series.height(), series.width()) != (model.arch.grid_h, model.arch.grid_w) {
        return Err(SstError::ShapeMismatch("series raster differs from the predictor's".into()));
    }
    let frames = nn::series_tensor(series)?;
    let mut out = Vec::with_capacity(origins.len());
    for chunk in origins.chunks(32) {
        let past = gather_windows(&frames, chunk, t);
        let preds = model.rollout_tensor(&past, horizon);
        let per_step: Vec<Vec<Grid>> = preds
            .iter()
            .map(|p| nn::tensor_to_grids(p, series.mask()))
            .collect::<Result<_>>()?;
        for b in 0..chunk.len() {
            out.push(per_step.iter().map(|s| s[b].clone()).collect());
        }
    }
    Ok(out)
}

/// Physical-space forecasts for days `day_index..day_index+horizon−1`,
/// conditioned on the `t` frames before `day_index`.
pub fn predict(model: &Predictor, series: &SstSeries, day_index: i64, horizon: usize) -> Result<Vec<Grid>> {
    if horizon == 0 {
        return Err(SstError::Constraint {
            key: "horizon".into(),
            reason: "must be >= 1".into(),
        });
    }
    let stats = series
        .norm_stats()
        .or(model.arch.norm_stats)
        .ok_or(SstError::NotNormalized)?;
    let pos = if let Some(p) = series.position_of(day_index) {
        p
    } else if day_index == series.days().last().copied().unwrap_or(i64::MIN) + 1 {
        series.len()
    } else {
        return Err(SstError::InsufficientHistory(format!(
            "day {day_index} is outside the supplied series"
        )));
    };
    let frames = forecast_normalized(model, series, &[pos], horizon)?.remove(0);
    frames.iter().map(|g| denormalize_grid(g, stats)).collect()
}

/// Physical forecasts for every origin in `origins`, returned per lead day as aligned series.
pub fn forecast_by_lead(model: &Predictor, series: &SstSeries, origins: &[usize], horizon: usize) -> Result<Vec<Vec<Grid>>> {
    let stats = series.norm_stats().ok_or(SstError::NotNormalized)?;
    let per_origin = forecast_normalized(model, series, origins, horizon)?;
    (0..horizon)
        .map(|k| {
            per_origin
                .iter()
                .map(|f| {
                    let g = denormalize_grid(&f[k], stats)?;
                    debug_assert_eq!(g.space(), SpaceTag::PhysicalCelsius);
                    Ok(g)
                })
                .collect()
        })
        .collect()
}
