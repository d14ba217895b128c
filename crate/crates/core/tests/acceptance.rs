//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one `PASS`/`FAIL` line, then exits non-zero if
//! any failed.

mod common;

use std::f64::consts::LN_2;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use sst_autograd::check::{numerical_grad, relative_error};
use sst_autograd::{Tape, Tensor};
use sst_core::ablation::{lookback_sweep, run_ablation_suite, sweep_csv, SWEEP};
use sst_core::config::{desk_predictor, RunConfig};
use sst_core::encoder::{
    encoder_loss, encoder_loss_grad, inversion_d_loss, inversion_d_loss_grad, r1_penalty, reconstruct_tensor, Encoder,
    PerceptualExtractor,
};
use sst_core::eval::{evaluate_forecasts, test_origins};
use sst_core::gan::{gan_d_loss, gan_d_loss_grad, ConvTrunk, Discriminator, GanArch, Generator};
use sst_core::grid::{compute_norm_stats, denormalize, normalize, train_len, SstSeries};
use sst_core::metrics;
use sst_core::nn::{self, mask_tensor};
use sst_core::params::ParamSet;
use sst_core::pipeline::{load_gan_ckpt, load_prior, load_report, rerun_from_manifest, run_pipeline, RunDir};
use sst_core::predictor::{train_predictor, ConvLstmState, ConvLstmWeights, Gate, Predictor, PredictorConfig};
use sst_core::prior::EnhancementReport;
use sst_core::sstb::{load_series, save_series};
use sst_core::synthetic::{generate_pair, SyntheticScenario};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(elapsed: Duration, budget: Duration, what: &str) -> Result<(), String> {
    if elapsed > budget {
        return Err(format!("{what} took {elapsed:.1?}, budget {budget:?}"));
    }
    Ok(())
}

fn tiny_config() -> RunConfig {
    RunConfig::parse_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")).unwrap()
}

fn with_param(p: &ParamSet, k: usize, value: &Tensor) -> ParamSet {
    let mut q = p.clone();
    q.tensors_mut()[k] = value.clone();
    q
}

fn masked(t: &Tensor, mask: &Tensor) -> Tensor {
    let plane = mask.len();
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().enumerate().map(|(i, v)| v * mask.data()[i % plane]).collect(),
    )
}

fn rms_gap(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (h, w) = (6, 5);
    let mut rng = common::rng(1);
    let st = ConvLstmState {
        h: nn::gaussian(&mut rng, &[2, 3, h, w], 1.0),
        c: nn::gaussian(&mut rng, &[2, 3, h, w], 2.0),
    };
    let x = nn::gaussian(&mut rng, &[2, 1, h, w], 1.0);
    let out = sst_core::predictor::convlstm_cell(&st, &x, &ConvLstmWeights::zeros(1, 3, 3, h, w)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for ((&c0, &c1), &h1) in st.c.data().iter().zip(out.c.data()).zip(out.h.data()) {
        worst = worst.max((c1 - 0.5 * c0).abs()).max((h1 - 0.5 * (0.5 * c0).tanh()).abs());
    }
    ensure!(worst < 1e-6, "zero-weight cell off by {worst:e}");
    let mut keep = ConvLstmWeights::zeros(1, 3, 3, h, w);
    keep.gate_bias_mut(Gate::Forget).fill(40.0);
    keep.gate_bias_mut(Gate::Input).fill(-40.0);
    let held = sst_core::predictor::convlstm_cell(&st, &x, &keep).map_err(|e| e.to_string())?;
    let drift = st.c.data().iter().zip(held.c.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(drift < 1e-6, "saturated forget gate lets memory drift by {drift:e}");
    within(start.elapsed(), Duration::from_secs(1), "cell checks")?;
    Ok(format!("max error {worst:.1e}, memory drift {drift:.1e}, {:.0?}", start.elapsed()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let step = 1e-5;
    let arch = common::toy_arch();
    let mut rng = common::rng(21);
    let mask = mask_tensor(&common::random_mask(&mut rng, 16, 16, 0.2));
    let real = masked(&nn::gaussian(&mut rng, &[2, 1, 16, 16], 1.0), &mask);
    let z = nn::gaussian(&mut rng, &[2, arch.latent_dim], 1.0);
    let g = Generator::init(&arch, 1).unwrap();
    let d = Discriminator::init(&arch, 2).unwrap();
    let e = Encoder::init(&arch, 3).unwrap();
    let f = PerceptualExtractor::new(16, 16, 4);
    let sizes = [g.params().parameter_count(), d.params().parameter_count(), e.params().parameter_count()];
    ensure!(sizes.iter().all(|&n| n <= 1000), "toy sizes {sizes:?} exceed 1k parameters");
    let mut worst = [0.0f64; 4];

    let (_, grads) = gan_d_loss_grad(&d, &g, &real, &z, &mask).map_err(|e| e.to_string())?;
    for (k, a) in grads.iter().enumerate() {
        let n = numerical_grad(&d.params().tensors()[k], step, |p| {
            let dp = Discriminator(ConvTrunk::from_params(&arch, 1, with_param(d.params(), k, p)).unwrap());
            gan_d_loss(&dp, &g, &real, &z, &mask).unwrap()
        });
        worst[0] = worst[0].max(relative_error(a, &n));
    }
    let (_, grads) = encoder_loss_grad(&e, &g, &d, &f, &real, &mask, 0.1, 1.0).map_err(|e| e.to_string())?;
    for (k, a) in grads.iter().enumerate() {
        let n = numerical_grad(&e.params().tensors()[k], step, |p| {
            let ep = Encoder(ConvTrunk::from_params(&arch, arch.latent_dim, with_param(e.params(), k, p)).unwrap());
            encoder_loss(&ep, &g, &d, &f, &real, &mask, 0.1, 1.0).unwrap().total
        });
        worst[1] = worst[1].max(relative_error(a, &n));
    }
    let (_, grads) = inversion_d_loss_grad(&d, &g, &e, &real, &mask, 10.0).map_err(|e| e.to_string())?;
    for (k, a) in grads.iter().enumerate() {
        let n = numerical_grad(&d.params().tensors()[k], step, |p| {
            let dp = Discriminator(ConvTrunk::from_params(&arch, 1, with_param(d.params(), k, p)).unwrap());
            inversion_d_loss(&dp, &g, &e, &real, &mask, 10.0).unwrap()
        });
        worst[2] = worst[2].max(relative_error(a, &n));
    }

    // ConvLSTM one-step loss on a 6x6 series window.
    let cfg = PredictorConfig { layers: 1, hidden_channels: 2, lookback: 3, ..PredictorConfig::for_horizon(1) };
    let pmask = Tensor::full(&[36], 1.0);
    let model = Predictor::init(&cfg, 6, 6, &pmask, None, 5).map_err(|e| e.to_string())?;
    ensure!(model.params().parameter_count() <= 1000, "predictor toy too large");
    let past = nn::gaussian(&mut rng, &[1, 3, 6, 6], 1.0);
    let target = nn::gaussian(&mut rng, &[1, 1, 6, 6], 1.0);
    let loss_of = |m: &Predictor| {
        let y = &m.rollout_tensor(&past, 1)[0];
        (y.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 36.0).sqrt()
    };
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let y = model.rollout(&p, tape.var(past.clone()), 1)[0];
    let loss = nn::masked_frame_l2(y, tape.var(target.clone()), &pmask).mean();
    let grads = tape.grad(loss, &p);
    for (k, a) in grads.iter().enumerate() {
        let n = numerical_grad(&model.params().tensors()[k], step, |probe| {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[k] = probe.clone();
            loss_of(&m)
        });
        worst[3] = worst[3].max(relative_error(&a.value(), &n));
    }
    ensure!(worst[0] < 1e-4, "gan_d_loss gradient error {:e}", worst[0]);
    ensure!(worst[1] < 1e-4, "encoder_loss gradient error {:e}", worst[1]);
    ensure!(worst[2] < 1e-3, "inversion_d_loss (with penalty) gradient error {:e}", worst[2]);
    ensure!(worst[3] < 1e-4, "ConvLSTM loss gradient error {:e}", worst[3]);
    within(start.elapsed(), Duration::from_secs(60), "gradient checks")?;
    Ok(format!(
        "max rel. errors d {:.1e}, enc {:.1e}, inv+penalty {:.1e}, lstm {:.1e}, {:.1?}",
        worst[0],
        worst[1],
        worst[2],
        worst[3],
        start.elapsed()
    ))
}

fn criterion_3() -> Outcome {
    let arch = common::toy_arch();
    let mut rng = common::rng(31);
    let mask = mask_tensor(&common::random_mask(&mut rng, 16, 16, 0.2));
    let m = masked(&nn::gaussian(&mut rng, &[3, 1, 16, 16], 1.0), &mask);
    let g = Generator::init(&arch, 1).unwrap();
    let d = Discriminator::init(&arch, 2).unwrap();
    let e = Encoder::init(&arch, 3).unwrap();
    let f = PerceptualExtractor::new(16, 16, 4);
    let (la, lv) = (0.1, 1.0);
    let l = encoder_loss(&e, &g, &d, &f, &m, &mask, la, lv).map_err(|e| e.to_string())?;

    // Terms rebuilt with plain loops over forward passes.
    let recon_m = reconstruct_tensor(&e, &g, &m, &mask);
    let n_ocean = mask.sum();
    let plane = 256;
    let (mut recon, mut perc) = (0.0, 0.0);
    for b in 0..3 {
        let x = Tensor::new(vec![1, 1, 16, 16], m.data()[b * plane..(b + 1) * plane].to_vec());
        let y = Tensor::new(vec![1, 1, 16, 16], recon_m.data()[b * plane..(b + 1) * plane].to_vec());
        recon += (x.data().iter().zip(y.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n_ocean).sqrt();
        let (fx, fy) = nn::with_tape(|t| {
            let a: Vec<Tensor> = f.forward(t.var(x.clone())).iter().map(|v| (*v.value()).clone()).collect();
            let c: Vec<Tensor> = f.forward(t.var(y.clone())).iter().map(|v| (*v.value()).clone()).collect();
            (a, c)
        });
        let len: usize = fx.iter().map(|t| t.len()).sum();
        let sq: f64 = fx.iter().zip(&fy).flat_map(|(a, c)| a.data().iter().zip(c.data()).map(|(p, q)| (p - q).powi(2))).sum();
        perc += (sq / len as f64).sqrt();
    }
    let adv = -d.0.forward_tensor(&recon_m).data().iter().sum::<f64>() / 3.0;
    let expect = recon / 3.0 + la * adv + lv * perc / 3.0;
    let rel = (l.total - expect).abs() / expect.abs();
    ensure!(rel < 1e-10, "encoder total differs from recomputed sum by {rel:e}");

    // Single-stage critic is affine in its input.
    let lin_arch = GanArch { channels: vec![1], ..arch.clone() };
    let lin = Discriminator::init(&lin_arch, 9).unwrap();
    let w = &lin.params().tensors()[0];
    let gamma = 10.0;
    let expect_pen = 0.5 * gamma * w.data().iter().zip(mask.data()).map(|(a, k)| (a * k).powi(2)).sum::<f64>();
    let tape = Tape::new();
    let pd = lin.params().bind(&tape);
    let pen = r1_penalty(&lin, &pd, tape.var(m.clone()), &mask, gamma).item();
    let pen_err = (pen - expect_pen).abs() / expect_pen;
    ensure!(pen_err < 1e-12, "linear critic penalty {pen} vs {expect_pen}");

    let d0 = Discriminator::zeros(&arch).unwrap();
    let z = nn::gaussian(&mut rng, &[3, arch.latent_dim], 1.0);
    let half = gan_d_loss(&d0, &g, &m, &z, &mask).map_err(|e| e.to_string())?;
    ensure!((half - 2.0 * LN_2).abs() <= 1e-9, "d_loss at probability 0.5 is {half}");
    Ok(format!("sum rel. err {rel:.1e}, penalty rel. err {pen_err:.1e}, d_loss - 2 ln 2 = {:.1e}", half - 2.0 * LN_2))
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = common::rng(400 + seed);
        let truth = common::random_series(&mut rng, 3, 5, 6, 0.25);
        let noise = common::random_series(&mut rng, 3, 5, 6, 0.25);
        let pred = truth
            .with_frames(
                truth
                    .frames()
                    .iter()
                    .zip(noise.frames())
                    .map(|(t, n)| t.with_values(t.values() + &n.values().mapv(|v| (v - 22.5) / 4.0), t.space()).unwrap())
                    .collect(),
            )
            .unwrap();
        let (p, t) = (common::ocean_values(&pred), common::ocean_values(&truth));
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        let res: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
        let (rmse_ref, r2_ref) = (rms_gap(&p, &t), 1.0 - res / tot);
        let rmse = metrics::rmse(&pred, &truth).map_err(|e| e.to_string())?;
        let r2 = metrics::r2(&pred, &truth).map_err(|e| e.to_string())?;
        worst = worst.max((rmse - rmse_ref).abs() / rmse_ref).max((r2 - r2_ref).abs() / r2_ref.abs());
    }
    ensure!(worst < 1e-10, "brute-force mismatch {worst:e}");
    let truth = common::random_series(&mut common::rng(7), 2, 4, 4, 0.2);
    let shift = |c: f64| {
        truth
            .with_frames(truth.frames().iter().map(|f| f.with_values(f.values().mapv(|v| v + c), f.space()).unwrap()).collect())
            .unwrap()
    };
    for c in [0.75, -1.25] {
        let r = metrics::rmse(&shift(c), &truth).unwrap();
        ensure!((r - c.abs()).abs() < 1e-12, "offset {c} gave rmse {r}");
    }
    let t = common::ocean_values(&truth);
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let flat = truth
        .with_frames(truth.frames().iter().map(|f| f.with_values(f.values().mapv(|_| mean), f.space()).unwrap()).collect())
        .unwrap();
    let r2 = metrics::r2(&flat, &truth).unwrap();
    ensure!(r2.abs() < 1e-12, "predicting the mean gave R² {r2}");
    Ok(format!("100 series, worst rel. err {worst:.1e}; hand cases exact"))
}

/// Normalized RMS of the gap between the mean generated and mean observed frames.
fn gan_mean_frame_gap(g: &Generator, observed: &SstSeries) -> f64 {
    let mask = mask_tensor(observed.mask());
    let n = 128;
    let z = nn::gaussian(&mut common::rng(5150), &[n, g.arch().latent_dim], 1.0);
    let fake = g.generate_tensor(&z);
    let plane = mask.len();
    let mut gap = Vec::new();
    for p in 0..plane {
        if mask.data()[p] == 0.0 {
            continue;
        }
        let gen_mean = (0..n).map(|b| fake.data()[b * plane + p]).sum::<f64>() / n as f64;
        let obs_mean = observed.frames().iter().map(|f| f.values().as_slice().unwrap()[p]).sum::<f64>() / observed.len() as f64;
        gap.push(gen_mean - obs_mean);
    }
    (gap.iter().map(|v| v * v).sum::<f64>() / gap.len() as f64).sqrt()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.tasks = vec![desk_predictor(1)];
    cfg.eval.run_id = "acceptance".into();
    let tmp = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, tmp.path(), None).map_err(|e| e.to_string())?;
    let dir = RunDir::new(tmp.path());
    let enh: EnhancementReport =
        serde_json::from_str(&std::fs::read_to_string(dir.reports_dir().join("enhancement.json")).unwrap()).unwrap();
    let full = load_report(&dir.report()).map_err(|e| e.to_string())?;

    // The same predictor trained on the uncorrected model series.
    let model_norm = load_series(&dir.data("model_norm")).map_err(|e| e.to_string())?;
    let truth = load_series(&dir.data("truth")).map_err(|e| e.to_string())?;
    let test_start = train_len(model_norm.len(), cfg.eval.train_fraction);
    let (raw, _) = train_predictor(&model_norm.slice(0..test_start).unwrap(), &cfg.tasks[0]).map_err(|e| e.to_string())?;
    let origins = test_origins(model_norm.len(), test_start, 1);
    let tra_nm = evaluate_forecasts(&raw, &model_norm, &truth, &origins, 1, None, "tra-nm").map_err(|e| e.to_string())?.report;

    // Component bounds on the same run.
    let observed = load_series(&dir.data("truth_train_norm")).map_err(|e| e.to_string())?;
    let (g, _, stats) = load_gan_ckpt(&dir.ckpt("gan")).map_err(|e| e.to_string())?;
    let gan_gap = gan_mean_frame_gap(&g, &observed);
    let prior = load_prior(&dir.ckpt("encoder"), &dir.ckpt("gan")).map_err(|e| e.to_string())?;
    let held_out = normalize(&truth.slice(test_start..truth.len()).unwrap(), stats.unwrap()).map_err(|e| e.to_string())?;
    let recon = metrics::rmse(&prior.enhance(&held_out).map_err(|e| e.to_string())?, &held_out).map_err(|e| e.to_string())?;
    let check_phys = denormalize(&held_out, stats.unwrap()).map_err(|e| e.to_string())?;
    ensure!(metrics::rmse(&check_phys, &truth.slice(test_start..truth.len()).unwrap()).unwrap() < 1e-9, "held-out round trip");

    let elapsed = start.elapsed();
    let detail = format!(
        "model {:.4} -> enhanced {:.4} °C (ratio {:.3}); h1 full {:.4} vs raw-trained {:.4} °C; gan gap {:.3}, held-out recon {:.3}; {:.1?}",
        enh.model_rmse, enh.enhanced_rmse, enh.improvement_ratio, full.rmse_celsius, tra_nm.rmse_celsius, gan_gap, recon, elapsed
    );
    ensure!(enh.enhanced_rmse <= 0.9 * enh.model_rmse, "(a) enhancement gains under 10%: {detail}");
    ensure!(enh.improvement_ratio > 0.2, "improvement ratio not above 0.2: {detail}");
    ensure!(full.rmse_celsius <= 0.9 * tra_nm.rmse_celsius, "(b) enhanced-data predictor gains under 10%: {detail}");
    ensure!(full.rmse_celsius < 1.0, "horizon-1 rmse not below 1 °C: {detail}");
    ensure!(gan_gap < 0.5, "generated mean frame too far from the observed mean: {detail}");
    ensure!(recon < 0.35, "held-out reconstruction not below 0.35: {detail}");
    within(elapsed, Duration::from_secs(30 * 60), "pipeline run")?;
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    let rows = run_ablation_suite(&cfg.ablation(), &seeds).map_err(|e| e.to_string())?;
    let mean = |name: &str| rows.iter().find(|r| r.scheme == name).map(|r| r.mean_rmse).unwrap();
    let (full, a, b, raw) = (mean("full"), mean("scheme_a"), mean("scheme_b"), mean("tra_nm"));
    let per_seed: Vec<String> = (0..seeds.len())
        .map(|i| format!("{:.3}/{:.3}/{:.3}", rows[0].per_seed[i].rmse_celsius, rows[1].per_seed[i].rmse_celsius, rows[2].per_seed[i].rmse_celsius))
        .collect();
    let detail = format!(
        "mean rmse full {full:.4}, scheme_a {a:.4}, scheme_b {b:.4}, tra_nm {raw:.4} °C; per seed full/a/b {}; {:.1?}",
        per_seed.join(" "),
        start.elapsed()
    );
    ensure!(full < b, "full not better than scheme_b: {detail}");
    ensure!(full < a, "full not better than scheme_a: {detail}");
    within(start.elapsed(), Duration::from_secs(90 * 60), "ablation")?;
    Ok(detail)
}

fn criterion_7(run: &Path) -> Outcome {
    let dir = RunDir::new(run);
    let cfg = RunConfig::parse_file(&dir.config()).map_err(|e| e.to_string())?;
    let ph = load_series(&dir.data("enhanced_norm")).map_err(|e| e.to_string())?;
    let truth = load_series(&dir.data("truth")).map_err(|e| e.to_string())?;
    let test_start = train_len(ph.len(), cfg.eval.train_fraction);
    let base = PredictorConfig { epochs: 1, ..cfg.tasks[0].clone() };
    let rows = lookback_sweep(&ph, &truth, test_start, &base).map_err(|e| e.to_string())?;
    let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.horizon, r.lookback)).collect();
    let expect: Vec<(usize, usize)> = SWEEP.iter().flat_map(|(h, ts)| ts.iter().map(move |&t| (*h, t))).collect();
    ensure!(cells == expect, "sweep cells {cells:?}");
    ensure!(
        expect == vec![(1, 1), (1, 3), (1, 5), (3, 3), (3, 5), (3, 7), (7, 7), (7, 9), (7, 10)],
        "protocol grid changed"
    );
    let defaults: Vec<(usize, usize)> = rows.iter().filter(|r| r.default).map(|r| (r.horizon, r.lookback)).collect();
    ensure!(defaults == vec![(1, 5), (3, 7), (7, 10)], "default markers {defaults:?}");
    ensure!(rows.iter().all(|r| r.rmse_celsius.is_finite() && r.rmse_celsius > 0.0 && r.r2.is_finite()), "non-finite scores");
    let csv = sweep_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    ensure!(lines[0] == "horizon,lookback,rmse_celsius,r2,default", "header {}", lines[0]);
    ensure!(lines.len() == 10 && lines[1..].iter().all(|l| l.split(',').count() == 5), "table shape");
    Ok(format!("{} cells, defaults {defaults:?}", rows.len()))
}

fn criterion_8(first: &Path, second: &Path) -> Outcome {
    let cfg = tiny_config();
    let a = run_pipeline(&cfg, first, None).map_err(|e| e.to_string())?;
    let b = rerun_from_manifest(&first.join("manifest.json"), second).map_err(|e| e.to_string())?;
    ensure!(a.config_sha256 == b.config_sha256, "config hashes differ");
    let mut compared = 0;
    for art in &a.artifacts {
        if art.path.starts_with("ckpt/") || art.path == "report.json" {
            let x = std::fs::read(first.join(&art.path)).unwrap();
            let y = std::fs::read(second.join(&art.path)).map_err(|e| format!("{}: {e}", art.path))?;
            ensure!(x == y, "{} differs between runs", art.path);
            compared += 1;
        }
    }
    ensure!(a.artifacts == b.artifacts, "artifact hash lists differ");
    ensure!(compared > 3, "too few artifacts compared");
    Ok(format!("{compared} checkpoint/report files bit-identical, {} artifacts hashed", a.artifacts.len()))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (truth, model) = generate_pair(&SyntheticScenario::default()).map_err(|e| e.to_string())?;
    for (name, s) in [("truth", &truth), ("model", &model)] {
        // The container stores float32, so the payload is rounded first.
        let s = &s
            .with_frames(s.frames().iter().map(|f| f.with_values(f.values().mapv(|v| v as f32 as f64), f.space()).unwrap()).collect())
            .unwrap();
        let path = tmp.path().join(format!("{name}.sstb"));
        save_series(s, &path).map_err(|e| e.to_string())?;
        let back = load_series(&path).map_err(|e| e.to_string())?;
        let bits = |s: &SstSeries| s.frames().iter().flat_map(|f| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        ensure!(bits(&back) == bits(s) && back.days() == s.days() && back.mask() == s.mask(), "{name} not bit-exact");
    }
    let stats = compute_norm_stats(&truth).unwrap();
    let back = denormalize(&normalize(&truth, stats).unwrap(), stats).unwrap();
    let worst = common::ocean_values(&truth)
        .iter()
        .zip(common::ocean_values(&back))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(worst < 1e-6, "normalize round trip off by {worst:e} °C");
    let invalid = [
        "[gan]\nmystery = 1\n",
        "[gan]\nepochs = \"many\"\n",
        "[predictor]\nhorizons = [1]\nlookbacks = [0]\n",
        "[predictor]\nhorizons = [2]\n",
        "[predictor]\nhorizons = []\n",
        "[predictor]\nhorizons = [1, 3]\nlookbacks = [5]\n",
        "[encoder]\nlambda_adv = -1.0\n",
        "[encoder]\ngamma = -1.0\n",
        "[eval]\ntrain_fraction = 0.0\n",
        "[scenario]\nheight = 20\n",
        "[gan]\nloss_mode = \"hinge\"\n",
        "version = 9\n",
        "[gan\n",
    ];
    let accepted: Vec<&str> = invalid.iter().copied().filter(|t| RunConfig::parse_str(t).is_ok()).collect();
    ensure!(accepted.is_empty(), "invalid configs accepted: {accepted:?}");
    ensure!(RunConfig::parse_str("").is_ok(), "empty config rejected");
    Ok(format!("2 series bit-exact, normalize round trip {worst:.1e} °C, {} invalid configs rejected", invalid.len()))
}

fn main() {
    let tiny_a = tempfile::tempdir().unwrap();
    let tiny_b = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("ConvLSTM analytic cell", Box::new(criterion_1)),
        ("gradient correctness", Box::new(criterion_2)),
        ("loss-formula oracles", Box::new(criterion_3)),
        ("metric oracles", Box::new(criterion_4)),
        ("core pipeline claim", Box::new(criterion_5)),
        ("ablation ordering", Box::new(criterion_6)),
        ("determinism", Box::new(|| criterion_8(tiny_a.path(), tiny_b.path()))),
        ("lookback sweep harness", Box::new(|| criterion_7(tiny_a.path()))),
        ("I/O round trips", Box::new(criterion_9)),
    ];
    let numbers = [1, 2, 3, 4, 5, 6, 8, 7, 9];
    // ACCEPTANCE_ONLY=1,2,3 restricts the run while iterating locally.
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut results = Vec::new();
    for ((name, run), n) in criteria.iter().zip(numbers) {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) || (n == 7 && only.as_ref().is_some_and(|o| !o.contains(&8))) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        results.push((n, *name, outcome));
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
