mod common;

use std::f64::consts::LN_2;
use std::sync::Arc;

use proptest::prelude::*;
use sst_autograd::check::{numerical_grad, relative_error};
use sst_autograd::{Adam, AdamConfig, Tape, Tensor};
use sst_core::gan::{
    gan_d_loss, gan_d_loss_grad, gan_g_loss, gan_g_loss_grad, init_gan, train_gan, ConvTrunk, Discriminator, GanConfig,
    Generator, GeneratorLossMode, LatentCode,
};
use sst_core::grid::{compute_norm_stats, normalize, Mask, SstSeries};
use sst_core::nn::{self, mask_tensor};
use sst_core::params::ParamSet;
use sst_core::synthetic::{generate_truth, SyntheticScenario};
use sst_core::SstError;

const STEP: f64 = 1e-5;

fn toy() -> (Generator, Discriminator, Tensor, Tensor, Tensor) {
    let arch = common::toy_arch();
    let g = Generator::init(&arch, 5).unwrap();
    let d = Discriminator::init(&arch, 6).unwrap();
    let mut rng = common::rng(9);
    let mask = mask_tensor(&common::random_mask(&mut rng, 16, 16, 0.2));
    let real = nn::gaussian(&mut rng, &[3, 1, 16, 16], 1.0);
    let real = Tensor::new(
        real.shape().to_vec(),
        real.data().iter().enumerate().map(|(i, v)| v * mask.data()[i % 256]).collect(),
    );
    let z = nn::gaussian(&mut rng, &[3, arch.latent_dim], 1.0);
    (g, d, real, z, mask)
}

fn with_param(p: &ParamSet, k: usize, value: &Tensor) -> ParamSet {
    let mut q = p.clone();
    q.tensors_mut()[k] = value.clone();
    q
}

fn small_observed(n_days: usize) -> SstSeries {
    let s = SyntheticScenario {
        height: 16,
        width: 16,
        n_days,
        ..SyntheticScenario::default()
    };
    let truth = generate_truth(&s).unwrap();
    normalize(&truth, compute_norm_stats(&truth).unwrap()).unwrap()
}

fn tiny_cfg() -> GanConfig {
    GanConfig {
        arch: common::toy_arch(),
        epochs: 2,
        minibatch: 8,
        lr_g: 1e-3,
        lr_d: 1e-3,
        ..GanConfig::default()
    }
}

#[test]
fn toy_instance_is_small() {
    let (g, d, ..) = toy();
    assert!(d.params().parameter_count() <= 1000, "{}", d.params().parameter_count());
    assert!(g.params().parameter_count() <= 1000, "{}", g.params().parameter_count());
}

#[test]
fn d_loss_gradient_matches_finite_differences() {
    let (g, d, real, z, mask) = toy();
    let (_, grads) = gan_d_loss_grad(&d, &g, &real, &z, &mask).unwrap();
    for (k, analytic) in grads.iter().enumerate() {
        let numeric = numerical_grad(&d.params().tensors()[k], STEP, |probe| {
            let dp = Discriminator(ConvTrunk::from_params(d.0.arch(), 1, with_param(d.params(), k, probe)).unwrap());
            gan_d_loss(&dp, &g, &real, &z, &mask).unwrap()
        });
        let err = relative_error(analytic, &numeric);
        assert!(err < 1e-4, "{}: relative error {err:e}", d.params().names()[k]);
    }
}

#[test]
fn g_loss_gradient_matches_finite_differences() {
    let (g, d, _, z, mask) = toy();
    for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
        let (_, grads) = gan_g_loss_grad(&d, &g, &z, &mask, mode).unwrap();
        for (k, analytic) in grads.iter().enumerate() {
            let numeric = numerical_grad(&g.params().tensors()[k], STEP, |probe| {
                let gp = Generator::from_params(g.arch(), with_param(g.params(), k, probe)).unwrap();
                gan_g_loss(&d, &gp, &z, &mask, mode).unwrap()
            });
            let err = relative_error(analytic, &numeric);
            assert!(err < 1e-4, "{mode:?} {}: relative error {err:e}", g.params().names()[k]);
        }
    }
}

#[test]
fn generator_output_gradient_in_latent_matches_finite_differences() {
    let (g, _, _, z, _) = toy();
    let weights = nn::gaussian(&mut common::rng(2), &[3, 1, 16, 16], 1.0);
    let objective = |zt: &Tensor| -> f64 {
        g.generate_tensor(zt).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let pg = g.params().bind(&tape);
    let zv = tape.var(z.clone());
    let out = g.forward(&pg, zv).mul(tape.var(weights.clone())).sum();
    let analytic = tape.grad(out, &[zv])[0].value();
    let err = relative_error(&analytic, &numerical_grad(&z, STEP, objective));
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn score_gradient_in_input_matches_finite_differences() {
    let (_, d, real, ..) = toy();
    let x = Tensor::new(vec![1, 1, 16, 16], real.data()[..256].to_vec());
    let tape = Tape::new();
    let pd = d.params().bind(&tape);
    let xv = tape.var(x.clone());
    let analytic = tape.grad(d.forward(&pd, xv).sum(), &[xv])[0].value();
    let numeric = numerical_grad(&x, STEP, |probe| d.0.forward_tensor(probe).item());
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn half_probability_losses() {
    let (g, _, real, z, mask) = toy();
    let d0 = Discriminator::zeros(g.arch()).unwrap();
    let l = gan_d_loss(&d0, &g, &real, &z, &mask).unwrap();
    assert!((l - 2.0 * LN_2).abs() < 1e-9, "{l}");
    let ns = gan_g_loss(&d0, &g, &z, &mask, GeneratorLossMode::NonSaturating).unwrap();
    assert!((ns - LN_2).abs() < 1e-12);
    let mm = gan_g_loss(&d0, &g, &z, &mask, GeneratorLossMode::Minimax).unwrap();
    assert!((mm + LN_2).abs() < 1e-12);
    let m = Arc::new(Mask::from_elem((16, 16), true));
    let frame = g.generate(&LatentCode::sample(&mut common::rng(0), 4), &m).unwrap();
    assert_eq!(d0.score(&frame).unwrap(), 0.0);
}

#[test]
fn empty_batches_are_rejected() {
    let (g, d, _, _, mask) = toy();
    let none = Tensor::zeros(&[0, 1, 16, 16]);
    let z = Tensor::zeros(&[0, 4]);
    assert!(matches!(gan_d_loss(&d, &g, &none, &z, &mask), Err(SstError::EmptyBatch)));
    assert!(matches!(
        gan_g_loss(&d, &g, &z, &mask, GeneratorLossMode::NonSaturating),
        Err(SstError::EmptyBatch)
    ));
}

#[test]
fn zero_learning_rate_step_changes_nothing() {
    let (g, d, real, z, mask) = toy();
    let (_, grads) = gan_d_loss_grad(&d, &g, &real, &z, &mask).unwrap();
    let mut params = d.params().clone();
    let before = params.digest();
    let mut opt = Adam::new(AdamConfig::new(0.0, 0.5, 0.999), params.tensors());
    opt.step(params.tensors_mut(), &grads);
    assert_eq!(params.digest(), before);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = GanConfig { epochs: 0, ..tiny_cfg() };
    let (g, d, log) = train_gan(&small_observed(20), &cfg).unwrap();
    let (g0, d0) = init_gan(&cfg).unwrap();
    assert_eq!(g.params().digest(), g0.params().digest());
    assert_eq!(d.params().digest(), d0.params().digest());
    assert!(log.is_empty());
}

#[test]
fn training_is_seed_deterministic_and_logs_both_losses() {
    let obs = small_observed(24);
    let (g1, d1, l1) = train_gan(&obs, &tiny_cfg()).unwrap();
    let (g2, d2, l2) = train_gan(&obs, &tiny_cfg()).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1.params().digest(), g2.params().digest());
    assert_eq!(d1.params().digest(), d2.params().digest());
    assert_eq!(l1.len(), 2);
    assert!(l1.column("d_loss").is_some() && l1.column("g_loss").is_some());
    let (g3, ..) = train_gan(&obs, &GanConfig { seed: 99, ..tiny_cfg() }).unwrap();
    assert_ne!(g1.params().digest(), g3.params().digest());
}

#[test]
fn too_few_frames_for_two_minibatches() {
    let err = train_gan(&small_observed(15), &tiny_cfg()).unwrap_err();
    assert!(matches!(err, SstError::SeriesTooShort(_)));
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let cfg = GanConfig {
        lr_g: 1e200,
        lr_d: 1e200,
        epochs: 3,
        ..tiny_cfg()
    };
    let err = train_gan(&small_observed(24), &cfg).unwrap_err();
    assert!(matches!(err, SstError::Divergence { .. }), "{err}");
    assert!(err.to_string().starts_with("divergence at epoch"));
}

#[test]
fn checkpoints_round_trip_shapes_and_values() {
    let (g, d, ..) = toy();
    let dir = tempfile::tempdir().unwrap();
    g.save(&dir.path().join("g")).unwrap();
    d.save(&dir.path().join("d")).unwrap();
    let (g2, d2) = (Generator::load(&dir.path().join("g")).unwrap(), Discriminator::load(&dir.path().join("d")).unwrap());
    let mut gr = g.params().clone();
    gr.round_to_f32();
    let mut dr = d.params().clone();
    dr.round_to_f32();
    assert_eq!(g2.params().digest(), gr.digest());
    assert_eq!(d2.params().digest(), dr.digest());
    assert_eq!(g2.arch(), g.arch());
    assert!(Discriminator::load(&dir.path().join("g")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_finite_for_wild_parameters(seed in any::<u64>(), scale in 1.0f64..200.0) {
        let (g, d, real, z, mask) = toy();
        let mut rng = common::rng(seed);
        let wild: Vec<Tensor> = d.params().tensors().iter().map(|t| nn::gaussian(&mut rng, t.shape(), scale)).collect();
        let mut dp = d.params().clone();
        dp.tensors_mut().clone_from_slice(&wild);
        let d = Discriminator(ConvTrunk::from_params(d.0.arch(), 1, dp).unwrap());
        prop_assert!(gan_d_loss(&d, &g, &real, &z, &mask).unwrap().is_finite());
        for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
            prop_assert!(gan_g_loss(&d, &g, &z, &mask, mode).unwrap().is_finite());
        }
    }

    #[test]
    fn scores_finite_on_bounded_inputs(seed in any::<u64>()) {
        let (_, d, ..) = toy();
        let x = Tensor::new(vec![2, 1, 16, 16], {
            let mut rng = common::rng(seed);
            (0..512).map(|_| rand::Rng::random_range(&mut rng, -4.0..4.0)).collect()
        });
        prop_assert!(d.0.forward_tensor(&x).all_finite());
    }
}
