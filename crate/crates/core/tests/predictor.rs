mod common;

use std::sync::Arc;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use sst_autograd::check::{numerical_grad, relative_error};
use sst_autograd::{Tape, Tensor};
use sst_core::grid::{Grid, NormStats, SpaceTag, SstSeries};
use sst_core::nn::{self, mask_tensor};
use sst_core::predictor::{
    cell_step, convlstm_cell, init_predictor, predict, sample_count, train_predictor, window_starts, CellVars,
    ConvLstmState, ConvLstmWeights, Gate, Predictor, PredictorConfig,
};
use sst_core::SstError;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_weights(seed: u64, c_in: usize, hidden: usize, k: usize, h: usize, w: usize, scale: f64) -> ConvLstmWeights {
    let mut rng = common::rng(seed);
    let z = ConvLstmWeights::zeros(c_in, hidden, k, h, w);
    let mut fill = |t: &Tensor| nn::gaussian(&mut rng, t.shape(), scale);
    ConvLstmWeights {
        w_x: fill(&z.w_x),
        w_h: fill(&z.w_h),
        bias: fill(&z.bias),
        w_ci: fill(&z.w_ci),
        w_cf: fill(&z.w_cf),
        w_co: fill(&z.w_co),
    }
}

fn random_state(seed: u64, b: usize, hidden: usize, h: usize, w: usize, scale: f64) -> (ConvLstmState, Tensor) {
    let mut rng = common::rng(seed);
    let st = ConvLstmState {
        h: nn::gaussian(&mut rng, &[b, hidden, h, w], scale),
        c: nn::gaussian(&mut rng, &[b, hidden, h, w], scale),
    };
    (st, nn::gaussian(&mut rng, &[b, 1, h, w], scale))
}

/// Zero-padded "same" cross-correlation of one output channel, summed over inputs.
fn conv_at(x: &Tensor, b: usize, kern: &Tensor, oc: usize, i: usize, j: usize) -> f64 {
    let (c_in, hh, ww) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = kern.shape()[2];
    let r = (k / 2) as isize;
    let mut s = 0.0;
    for c in 0..c_in {
        for di in 0..k {
            for dj in 0..k {
                let (ii, jj) = (i as isize + di as isize - r, j as isize + dj as isize - r);
                if ii < 0 || jj < 0 || ii >= hh as isize || jj >= ww as isize {
                    continue;
                }
                let xv = x.data()[((b * c_in + c) * hh + ii as usize) * ww + jj as usize];
                let kv = kern.data()[((oc * c_in + c) * k + di) * k + dj];
                s += xv * kv;
            }
        }
    }
    s
}

/// Gate activations and the new state, computed pixel by pixel.
fn reference_cell(st: &ConvLstmState, x: &Tensor, w: &ConvLstmWeights) -> (ConvLstmState, Vec<f64>) {
    let s = st.h.shape().to_vec();
    let (bsz, hid, hh, ww) = (s[0], s[1], s[2], s[3]);
    let mut h_new = vec![0.0; st.h.len()];
    let mut c_new = vec![0.0; st.c.len()];
    let mut gates = Vec::new();
    for b in 0..bsz {
        for ch in 0..hid {
            for i in 0..hh {
                for j in 0..ww {
                    let pre = |g: usize| {
                        let oc = g * hid + ch;
                        conv_at(x, b, &w.w_x, oc, i, j) + conv_at(&st.h, b, &w.w_h, oc, i, j) + w.bias.data()[oc]
                    };
                    let at = ((b * hid + ch) * hh + i) * ww + j;
                    let p = (ch * hh + i) * ww + j;
                    let c0 = st.c.data()[at];
                    let ig = sigmoid(pre(0) + w.w_ci.data()[p] * c0);
                    let fg = sigmoid(pre(1) + w.w_cf.data()[p] * c0);
                    let c1 = fg * c0 + ig * pre(2).tanh();
                    let og = sigmoid(pre(3) + w.w_co.data()[p] * c1);
                    c_new[at] = c1;
                    h_new[at] = og * c1.tanh();
                    gates.extend([ig, fg, og]);
                }
            }
        }
    }
    (
        ConvLstmState {
            h: Tensor::new(s.clone(), h_new),
            c: Tensor::new(s, c_new),
        },
        gates,
    )
}

fn normalized_series(values: impl Fn(usize, usize, usize) -> f64, frames: usize, h: usize, w: usize) -> SstSeries {
    let mut mask = ndarray::Array2::from_elem((h, w), true);
    mask[(0, w - 1)] = false;
    let mask = Arc::new(mask);
    let grids = (0..frames)
        .map(|d| Grid::new(Array2::from_shape_fn((h, w), |(i, j)| values(d, i, j)), mask.clone(), SpaceTag::Normalized).unwrap())
        .collect();
    SstSeries::with_stats(grids, (0..frames as i64).collect(), Some(NormStats::new(20.0, 2.0).unwrap())).unwrap()
}

fn small_cfg() -> PredictorConfig {
    PredictorConfig {
        layers: 1,
        hidden_channels: 2,
        epochs: 1,
        minibatch: 4,
        ..PredictorConfig::for_horizon(1)
    }
}

#[test]
fn zero_weights_give_half_gates() {
    let w = ConvLstmWeights::zeros(1, 3, 3, 5, 4);
    let (st, x) = random_state(1, 2, 3, 5, 4, 1.5);
    let out = convlstm_cell(&st, &x, &w).unwrap();
    for ((&c0, &c1), &h1) in st.c.data().iter().zip(out.c.data()).zip(out.h.data()) {
        assert!((c1 - 0.5 * c0).abs() < 1e-12);
        assert!((h1 - 0.5 * (0.5 * c0).tanh()).abs() < 1e-12);
    }
}

#[test]
fn saturated_gates_hold_or_replace_the_cell() {
    let (st, x) = random_state(2, 1, 2, 4, 4, 1.0);
    let mut keep = ConvLstmWeights::zeros(1, 2, 3, 4, 4);
    keep.gate_bias_mut(Gate::Forget).fill(50.0);
    keep.gate_bias_mut(Gate::Input).fill(-50.0);
    keep.gate_bias_mut(Gate::Output).fill(50.0);
    let out = convlstm_cell(&st, &x, &keep).unwrap();
    for ((&c0, &c1), &h1) in st.c.data().iter().zip(out.c.data()).zip(out.h.data()) {
        assert!((c1 - c0).abs() < 1e-6);
        assert!((h1 - c0.tanh()).abs() < 1e-6);
    }
    let mut reset = ConvLstmWeights::zeros(1, 2, 3, 4, 4);
    reset.gate_bias_mut(Gate::Forget).fill(-50.0);
    reset.gate_bias_mut(Gate::Input).fill(50.0);
    reset.gate_bias_mut(Gate::Cell).fill(0.3);
    let out = convlstm_cell(&st, &x, &reset).unwrap();
    assert!(out.c.data().iter().all(|&c| (c - 0.3f64.tanh()).abs() < 1e-6));
}

#[test]
fn cell_matches_pixelwise_reference() {
    for (seed, hidden, k) in [(3, 2, 3), (4, 3, 5), (5, 1, 1)] {
        let w = random_weights(seed, 1, hidden, k, 5, 6, 0.4);
        let (st, x) = random_state(seed + 10, 2, hidden, 5, 6, 1.0);
        let fast = convlstm_cell(&st, &x, &w).unwrap();
        let (slow, _) = reference_cell(&st, &x, &w);
        assert!(common::max_rel_err(fast.h.data(), slow.h.data()) < 1e-10, "seed {seed}");
        assert!(common::max_rel_err(fast.c.data(), slow.c.data()) < 1e-10, "seed {seed}");
    }
}

#[test]
fn hidden_norm_gradient_matches_finite_differences() {
    let w = random_weights(6, 1, 1, 3, 4, 4, 0.5);
    let (st, x) = random_state(7, 1, 1, 4, 4, 1.0);
    let objective = |w: &ConvLstmWeights| convlstm_cell(&st, &x, w).unwrap().h.sum_squares();
    let tape = Tape::new();
    let vars: Vec<_> = [&w.w_x, &w.w_h, &w.bias, &w.w_ci, &w.w_cf, &w.w_co]
        .iter()
        .map(|t| tape.var((*t).clone()))
        .collect();
    let (h, _) = cell_step(&CellVars::from_slice(&vars), tape.var(x.clone()), Some(tape.var(st.h.clone())), Some(tape.var(st.c.clone())));
    let grads = tape.grad(h.square().sum(), &vars);
    let setters: [fn(&mut ConvLstmWeights) -> &mut Tensor; 6] = [
        |w| &mut w.w_x,
        |w| &mut w.w_h,
        |w| &mut w.bias,
        |w| &mut w.w_ci,
        |w| &mut w.w_cf,
        |w| &mut w.w_co,
    ];
    for (k, set) in setters.iter().enumerate() {
        let mut probe_w = w.clone();
        let base = set(&mut probe_w).clone();
        let numeric = numerical_grad(&base, 1e-5, |probe| {
            let mut q = w.clone();
            *set(&mut q) = probe.clone();
            objective(&q)
        });
        let err = relative_error(&grads[k].value(), &numeric);
        assert!(err < 1e-4, "tensor {k}: relative error {err:e}");
    }
}

#[test]
fn one_step_loss_gradient_matches_finite_differences() {
    let series = normalized_series(|d, i, j| ((d + i) as f64 * 0.3).sin() + 0.1 * j as f64, 12, 6, 6);
    let cfg = PredictorConfig { horizon: 3, lookback: 3, ..small_cfg() };
    let model = init_predictor(&series, &cfg).unwrap();
    let mask = mask_tensor(series.mask());
    let frames = nn::series_tensor(&series).unwrap();
    let past = nn::gather(&frames, &[3, 4, 5]);
    let past = Tensor::new(vec![1, 3, 6, 6], past.data().to_vec());
    let target: Vec<Tensor> = (6..9).map(|i| nn::gather(&frames, &[i])).collect();
    let loss_of = |m: &Predictor| -> f64 {
        m.rollout_tensor(&past, 3)
            .iter()
            .zip(&target)
            .map(|(y, t)| {
                let sq: f64 = y.data().iter().zip(t.data()).zip(mask.data()).map(|((a, b), k)| k * (a - b).powi(2)).sum();
                (sq / mask.sum()).sqrt()
            })
            .sum()
    };
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let preds = model.rollout(&p, tape.var(past.clone()), 3);
    let mut loss = nn::masked_frame_l2(preds[0], tape.var(target[0].clone()), &mask).mean();
    for k in 1..3 {
        loss = loss.add(nn::masked_frame_l2(preds[k], tape.var(target[k].clone()), &mask).mean());
    }
    assert!((loss.item() - loss_of(&model)).abs() < 1e-12);
    let grads = tape.grad(loss, &p);
    for (k, g) in grads.iter().enumerate() {
        let numeric = numerical_grad(&model.params().tensors()[k], 1e-5, |probe| {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[k] = probe.clone();
            loss_of(&m)
        });
        let err = relative_error(&g.value(), &numeric);
        assert!(err < 1e-4, "{}: relative error {err:e}", model.params().names()[k]);
    }
}

#[test]
fn zero_model_forecasts_zero_anomaly() {
    let series = normalized_series(|d, i, j| (d * i + j) as f64 * 0.01, 10, 4, 4);
    let mask = mask_tensor(series.mask());
    let model = Predictor::zeros(&small_cfg(), 4, 4, &mask).unwrap();
    let out = predict(&model, &series, 7, 3).unwrap();
    assert_eq!(out.len(), 3);
    for g in &out {
        assert!(g.ocean_values().all(|v| v == 20.0), "zero anomaly is the climatological mean");
    }
}

#[test]
fn longer_horizon_extends_the_one_day_forecast() {
    let series = normalized_series(|d, i, j| ((d * 3 + i * j) as f64 * 0.1).cos(), 20, 8, 8);
    let (model, _) = train_predictor(&series, &small_cfg()).unwrap();
    let one = predict(&model, &series, 12, 1).unwrap();
    let three = predict(&model, &series, 12, 3).unwrap();
    let seven = predict(&model, &series, 20, 7).unwrap();
    assert_eq!(one[0], three[0]);
    assert_eq!(seven.len(), 7);
    assert!(matches!(predict(&model, &series, 4, 1), Err(SstError::InsufficientHistory(_))));
    assert!(matches!(predict(&model, &series, 22, 1), Err(SstError::InsufficientHistory(_))));
    assert!(predict(&model, &series, 12, 0).is_err());
}

#[test]
fn constant_series_is_learned() {
    let series = normalized_series(|_, _, _| 0.5, 30, 8, 8);
    let cfg = PredictorConfig {
        layers: 1,
        hidden_channels: 2,
        epochs: 50,
        minibatch: 5,
        lr: 1e-3,
        beta1: 0.0,
        ..PredictorConfig::for_horizon(1)
    };
    let (model, log) = train_predictor(&series, &cfg).unwrap();
    let loss = log.column("loss").unwrap();
    let down = loss.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 10 >= 9 * (loss.len() - 1), "{loss:?}");
    let pred = predict(&model, &series, 30, 1).unwrap();
    let rmse = {
        let v: Vec<f64> = pred[0].ocean_values().map(|v| (v - 21.0) / 2.0).collect();
        (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
    };
    assert!(rmse < 1e-2, "normalized rmse {rmse}");
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let series = normalized_series(|d, _, _| d as f64 * 0.1, 12, 4, 4);
    let cfg = PredictorConfig { epochs: 0, ..small_cfg() };
    let (m, log) = train_predictor(&series, &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(m, init_predictor(&series, &cfg).unwrap());
    assert!(matches!(
        train_predictor(&series.slice(0..6).unwrap(), &cfg),
        Err(SstError::SeriesTooShort(_))
    ));
}

#[test]
fn checkpoint_round_trip() {
    let series = normalized_series(|d, i, _| (d + i) as f64 * 0.05, 12, 4, 4);
    let (m, _) = train_predictor(&series, &small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = Predictor::load(dir.path()).unwrap();
    assert_eq!(back.arch(), m.arch());
    let mut rounded = m.params().clone();
    rounded.round_to_f32();
    assert_eq!(back.params(), &rounded);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn window_count_matches_enumeration(len in 0usize..60, t in 1usize..12, h in prop::sample::select(vec![1usize, 3, 7])) {
        let brute: Vec<usize> = (0..=len).filter(|&i| i >= t && i + h <= len).collect();
        prop_assert_eq!(sample_count(len, t, h), brute.len());
        if !brute.is_empty() {
            prop_assert_eq!(window_starts(len, t, h).collect::<Vec<_>>(), brute);
        }
    }

    #[test]
    fn gates_are_open_intervals_and_cells_are_bounded(seed in any::<u64>(), scale in 0.05f64..0.8) {
        let w = random_weights(seed, 1, 2, 3, 4, 4, scale);
        let (st, x) = random_state(seed ^ 1, 1, 2, 4, 4, 2.0 * scale);
        let (_, gates) = reference_cell(&st, &x, &w);
        prop_assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
        let out = convlstm_cell(&st, &x, &w).unwrap();
        for ((&c0, &c1), &h1) in st.c.data().iter().zip(out.c.data()).zip(out.h.data()) {
            prop_assert!(c1.abs() <= c0.abs() + 1.0);
            prop_assert!(h1.abs() < 1.0);
        }
    }

    #[test]
    fn forecasts_are_finite(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let series = normalized_series(|_, _, _| 0.0, 8, 4, 4);
        let noisy = series.with_frames(series.frames().iter().map(|f| {
            f.with_values(f.values().mapv(|_| rng.random_range(-3.0..3.0)), SpaceTag::Normalized).unwrap()
        }).collect()).unwrap();
        let cfg = small_cfg();
        let mask = mask_tensor(noisy.mask());
        let model = Predictor::init(&cfg, 4, 4, &mask, noisy.norm_stats(), seed).unwrap();
        for g in predict(&model, &noisy, 8, 7).unwrap() {
            prop_assert!(g.ocean_values().all(f64::is_finite));
        }
    }
}
