//! Inversion encoder trained against a frozen generator.
//!
//! The encoder objective combines pixel reconstruction, a raw-score
//! adversarial term and a perceptual distance computed by a frozen random
//! convolutional stack. The discriminator keeps training alongside with a
//! critic loss plus an input-gradient penalty on real samples.

use std::path::Path;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sst_autograd::{Adam, AdamConfig, ConvGeom, Tensor, Var};

use crate::error::{Result, SstError};
use crate::gan::{self, ConvTrunk, Discriminator, GanArch, Generator, LatentCode};
use crate::grid::{Grid, SstSeries};
use crate::nn::{self, TrainLog, LEAKY_SLOPE};
use crate::params::ParamSet;

/// `(c_out, stride)` per layer of the default perceptual stack.
const PERCEPTUAL_LAYERS: [(usize, usize); 4] = [(4, 1), (8, 2), (8, 2), (8, 1)];
/// Layers (0-based) whose activations are compared.
const PERCEPTUAL_TAPS: [usize; 2] = [1, 3];

/// Frozen feature stack standing in for a pretrained image network.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor {
    params: ParamSet,
    strides: Vec<usize>,
    taps: Vec<usize>,
    grid_h: usize,
    grid_w: usize,
    seed: u64,
}

impl PerceptualExtractor {
    pub fn new(grid_h: usize, grid_w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut c_in = 1;
        for (l, &(c_out, _)) in PERCEPTUAL_LAYERS.iter().enumerate() {
            params.push(format!("f{l}.w"), nn::conv_kernel(&mut rng, c_out, c_in, 3));
            c_in = c_out;
        }
        PerceptualExtractor {
            params,
            strides: PERCEPTUAL_LAYERS.iter().map(|l| l.1).collect(),
            taps: PERCEPTUAL_TAPS.to_vec(),
            grid_h,
            grid_w,
            seed,
        }
    }

    /// Replaces the random kernels with externally supplied ones of the same layout.
    pub fn with_params(mut self, params: ParamSet) -> Result<Self> {
        if params.len() != self.params.len()
            || params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(SstError::ShapeMismatch(
                "perceptual kernels do not match the extractor layout".into(),
            ));
        }
        self.params = params;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    /// Tapped activations of a `[B, 1, H, W]` batch.
    pub fn forward<'t>(&self, x: Var<'t>) -> Vec<Var<'t>> {
        let tape = x.tape();
        let mut h = x;
        let mut out = Vec::with_capacity(self.taps.len());
        for (l, (w, &stride)) in self.params.tensors().iter().zip(&self.strides).enumerate() {
            h = h
                .conv2d(tape.var(w.clone()), ConvGeom::new(stride, 1))
                .leaky_relu(LEAKY_SLOPE);
            if self.taps.contains(&l) {
                out.push(h);
            }
        }
        out
    }

    pub fn features(&self, m: &Grid) -> Result<Vec<Tensor>> {
        if (m.height(), m.width()) != (self.grid_h, self.grid_w) {
            return Err(SstError::ShapeMismatch(format!(
                "extractor expects {}x{}, got {}x{}",
                self.grid_h,
                self.grid_w,
                m.height(),
                m.width()
            )));
        }
        let x = Tensor::new(
            vec![1, 1, m.height(), m.width()],
            m.values().iter().copied().collect(),
        );
        Ok(nn::with_tape(|tape| {
            self.forward(tape.var(x))
                .iter()
                .map(|f| (*f.value()).clone())
                .collect()
        }))
    }

    /// Number of scalars per sample across all taps.
    pub fn feature_len(&self) -> usize {
        let (mut h, mut w) = (self.grid_h, self.grid_w);
        let mut total = 0;
        for (l, (&(c, s), _)) in PERCEPTUAL_LAYERS.iter().zip(&self.strides).enumerate() {
            let g = ConvGeom::new(s, 1);
            h = g.out_size(h, 3);
            w = g.out_size(w, 3);
            if self.taps.contains(&l) {
                total += c * h * w;
            }
        }
        total
    }
}

/// Per-sample `‖F(a) − F(b)‖₂ / sqrt(feature count)` over the concatenated taps, `[B]`.
pub fn feature_distance<'t>(fa: &[Var<'t>], fb: &[Var<'t>]) -> Var<'t> {
    let mut total: Option<Var<'t>> = None;
    let mut n = 0usize;
    for (a, b) in fa.iter().zip(fb) {
        let shape = a.shape();
        n += shape[1..].iter().product::<usize>();
        let s = a.sub(*b).square().sum_per_row();
        total = Some(match total {
            Some(t) => t.add(s),
            None => s,
        });
    }
    total.expect("at least one tap").scale(1.0 / n as f64).sqrt()
}

/// Maps a normalized field to a latent code of the paired generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder(pub ConvTrunk);

impl Encoder {
    pub fn init(arch: &GanArch, seed: u64) -> Result<Self> {
        Ok(Encoder(ConvTrunk::init(arch, arch.latent_dim, seed)?))
    }

    pub fn latent_dim(&self) -> usize {
        self.0.out_dim()
    }

    pub fn arch(&self) -> &GanArch {
        self.0.arch()
    }

    pub fn params(&self) -> &ParamSet {
        self.0.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.0.params_mut()
    }

    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        self.0.forward(p, x)
    }

    pub fn encode_tensor(&self, x: &Tensor) -> Tensor {
        self.0.forward_tensor(x)
    }

    pub fn encode(&self, m: &Grid) -> Result<LatentCode> {
        let x = Tensor::new(
            vec![1, 1, m.height(), m.width()],
            m.values().iter().copied().collect(),
        );
        Ok(LatentCode(self.encode_tensor(&x).into_data()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        gan::save_trunk(&self.0, dir, "encoder")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Encoder(gan::load_trunk(dir, "encoder")?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub lambda_adv: f64,
    pub lambda_vgg: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_e: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub reuse_pretrained_d: bool,
    pub perceptual_seed: u64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            lambda_adv: 0.1,
            lambda_vgg: 1.0,
            gamma: 10.0,
            epochs: 200,
            minibatch: 16,
            lr_e: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            reuse_pretrained_d: true,
            perceptual_seed: 17,
            seed: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_vgg", self.lambda_vgg),
            ("gamma", self.gamma),
            ("lr_e", self.lr_e),
            ("lr_d", self.lr_d),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SstError::InvalidWeight(format!("{key} = {v} must be finite and >= 0")));
            }
        }
        if self.minibatch == 0 {
            return Err(SstError::Constraint {
                key: "minibatch".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Value of each encoder-objective term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLoss {
    pub total: f64,
    pub recon: f64,
    pub adv: f64,
    pub perc: f64,
}

/// The three encoder terms as tape variables, built from bound parameters.
struct LossTerms<'t> {
    total: Var<'t>,
    recon: Var<'t>,
    adv: Var<'t>,
    perc: Var<'t>,
}

#[allow(clippy::too_many_arguments)]
fn encoder_terms<'t>(
    e: &Encoder,
    pe: &[Var<'t>],
    g: &Generator,
    pg: &[Var<'t>],
    d: &Discriminator,
    pd: &[Var<'t>],
    f: &PerceptualExtractor,
    m: Var<'t>,
    mask: &Tensor,
    lambda_adv: f64,
    lambda_vgg: f64,
) -> LossTerms<'t> {
    let recon_m = nn::apply_mask(g.forward(pg, e.forward(pe, m)), mask);
    let recon = nn::masked_frame_l2(m, recon_m, mask).mean();
    let adv = d.forward(pd, recon_m).mean().neg();
    let perc = feature_distance(&f.forward(m), &f.forward(recon_m)).mean();
    let total = recon.add(adv.scale(lambda_adv)).add(perc.scale(lambda_vgg));
    LossTerms { total, recon, adv, perc }
}

fn check_batch(m: &Tensor, arch: &GanArch) -> Result<()> {
    if m.shape().first() == Some(&0) {
        return Err(SstError::EmptyBatch);
    }
    if m.shape()[1..] != [1, arch.grid_h, arch.grid_w] {
        return Err(SstError::ShapeMismatch(format!(
            "batch {:?} does not match the {}x{} raster",
            m.shape(),
            arch.grid_h,
            arch.grid_w
        )));
    }
    Ok(())
}

fn check_pair(e: &Encoder, g: &Generator) -> Result<()> {
    if e.latent_dim() != g.arch().latent_dim {
        return Err(SstError::IncompatiblePrior {
            encoder: e.latent_dim(),
            generator: g.arch().latent_dim,
        });
    }
    Ok(())
}

/// Encoder objective on a `[B, 1, H, W]` batch of normalized frames.
#[allow(clippy::too_many_arguments)]
pub fn encoder_loss(
    e: &Encoder,
    g: &Generator,
    d: &Discriminator,
    f: &PerceptualExtractor,
    m_batch: &Tensor,
    mask: &Tensor,
    lambda_adv: f64,
    lambda_vgg: f64,
) -> Result<EncoderLoss> {
    encoder_loss_grad(e, g, d, f, m_batch, mask, lambda_adv, lambda_vgg).map(|(l, _)| l)
}

/// [`encoder_loss`] and the gradient of its total with respect to every encoder parameter.
#[allow(clippy::too_many_arguments)]
pub fn encoder_loss_grad(
    e: &Encoder,
    g: &Generator,
    d: &Discriminator,
    f: &PerceptualExtractor,
    m_batch: &Tensor,
    mask: &Tensor,
    lambda_adv: f64,
    lambda_vgg: f64,
) -> Result<(EncoderLoss, Vec<Tensor>)> {
    if !(lambda_adv >= 0.0) || !(lambda_vgg >= 0.0) {
        return Err(SstError::InvalidWeight(format!(
            "lambda_adv = {lambda_adv}, lambda_vgg = {lambda_vgg}; both must be >= 0"
        )));
    }
    check_pair(e, g)?;
    check_batch(m_batch, g.arch())?;
    Ok(nn::with_tape(|tape| {
        let (pe, pg, pd) = (e.params().bind(tape), g.params().bind(tape), d.params().bind(tape));
        let t = encoder_terms(e, &pe, g, &pg, d, &pd, f, tape.var(m_batch.clone()), mask, lambda_adv, lambda_vgg);
        let grads = tape.grad(t.total, &pe);
        let loss = EncoderLoss {
            total: t.total.item(),
            recon: t.recon.item(),
            adv: t.adv.item(),
            perc: t.perc.item(),
        };
        (loss, nn::grads_to_tensors(&grads))
    }))
}

/// `(γ/2)·mean_b ‖∇_m D(m_b)‖²` over ocean pixels, differentiable in the parameters of `D`.
pub fn r1_penalty<'t>(d: &Discriminator, pd: &[Var<'t>], m: Var<'t>, mask: &Tensor, gamma: f64) -> Var<'t> {
    let score = d.forward(pd, m).sum();
    let grad = m.tape().grad(score, &[m])[0];
    nn::apply_mask(grad, mask)
        .square()
        .sum_per_row()
        .mean()
        .scale(0.5 * gamma)
}

/// Critic objective: `mean D(G(E(m))) − mean D(m) + (γ/2)·mean ‖∇_m D(m)‖²`.
fn inversion_d_terms<'t>(d: &Discriminator, pd: &[Var<'t>], real: Var<'t>, fake: Var<'t>, mask: &Tensor, gamma: f64) -> Var<'t> {
    let real_score = d.forward(pd, real).mean();
    let fake_score = d.forward(pd, fake).mean();
    let critic = fake_score.sub(real_score);
    if gamma == 0.0 {
        critic
    } else {
        critic.add(r1_penalty(d, pd, real, mask, gamma))
    }
}

pub fn inversion_d_loss(
    d: &Discriminator,
    g: &Generator,
    e: &Encoder,
    m_batch: &Tensor,
    mask: &Tensor,
    gamma: f64,
) -> Result<f64> {
    inversion_d_loss_grad(d, g, e, m_batch, mask, gamma).map(|(l, _)| l)
}

/// [`inversion_d_loss`] and its gradient with respect to every critic
/// parameter, penalty term included.
pub fn inversion_d_loss_grad(
    d: &Discriminator,
    g: &Generator,
    e: &Encoder,
    m_batch: &Tensor,
    mask: &Tensor,
    gamma: f64,
) -> Result<(f64, Vec<Tensor>)> {
    if !(gamma >= 0.0) {
        return Err(SstError::InvalidWeight(format!("gamma = {gamma} must be >= 0")));
    }
    check_pair(e, g)?;
    check_batch(m_batch, g.arch())?;
    let fake = reconstruct_tensor(e, g, m_batch, mask);
    Ok(nn::with_tape(|tape| {
        let pd = d.params().bind(tape);
        let loss = inversion_d_terms(d, &pd, tape.var(m_batch.clone()), tape.var(fake), mask, gamma);
        let grads = tape.grad(loss, &pd);
        (loss.item(), nn::grads_to_tensors(&grads))
    }))
}

/// Masked `G(E(m))` for a batch, without gradients.
pub fn reconstruct_tensor(e: &Encoder, g: &Generator, m_batch: &Tensor, mask: &Tensor) -> Tensor {
    let raw = g.generate_tensor(&e.encode_tensor(m_batch));
    let plane = mask.len();
    let mut data = raw.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        *v *= mask.data()[i % plane];
    }
    Tensor::new(m_batch.shape().to_vec(), data)
}

/// The encoder `train_encoder` starts from.
pub fn init_encoder(arch: &GanArch, cfg: &EncoderConfig) -> Result<Encoder> {
    Encoder::init(arch, cfg.seed.wrapping_add(303))
}

/// Alternating critic and encoder updates with the generator held fixed.
///
/// With `reuse_pretrained_d` the critic starts from `d_init`; otherwise it
/// is freshly initialized from the config seed.
pub fn train_encoder(
    g: &Generator,
    d_init: Option<&Discriminator>,
    observed: &SstSeries,
    cfg: &EncoderConfig,
) -> Result<(Encoder, Discriminator, TrainLog)> {
    cfg.validate()?;
    let arch = g.arch().clone();
    let data = nn::series_tensor(observed)?;
    if (observed.height(), observed.width()) != (arch.grid_h, arch.grid_w) {
        return Err(SstError::ShapeMismatch("observed raster differs from the generator's".into()));
    }
    let mask = nn::mask_tensor(observed.mask());
    let frozen_digest = g.params().digest();
    let f = PerceptualExtractor::new(arch.grid_h, arch.grid_w, cfg.perceptual_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut e = init_encoder(&arch, cfg)?;
    let mut d = match d_init {
        Some(d) if cfg.reuse_pretrained_d => d.clone(),
        _ => Discriminator::init(&arch, cfg.seed.wrapping_add(404))?,
    };
    info!(
        "encoder: {} parameters, critic {}",
        e.params().parameter_count(),
        if cfg.reuse_pretrained_d && d_init.is_some() { "reused" } else { "fresh" }
    );
    let mut opt_e = Adam::new(AdamConfig::new(cfg.lr_e, cfg.beta1, cfg.beta2), e.params().tensors());
    let mut opt_d = Adam::new(AdamConfig::new(cfg.lr_d, cfg.beta1, cfg.beta2), d.params().tensors());
    let mut log = TrainLog::new(&["d_loss", "e_loss", "recon", "adv", "perc"]);

    for epoch in 0..cfg.epochs {
        let mut mean = nn::Mean::new(5);
        for idx in nn::epoch_batches(&mut rng, observed.len(), cfg.minibatch) {
            let real = nn::gather(&data, &idx);

            let (d_loss, d_grads) = inversion_d_loss_grad(&d, g, &e, &real, &mask, cfg.gamma)?;
            nn::ensure_finite("train-encoder", epoch, &[d_loss])?;
            opt_d.step(d.params_mut().tensors_mut(), &d_grads);

            let (l, e_grads) = encoder_loss_grad(&e, g, &d, &f, &real, &mask, cfg.lambda_adv, cfg.lambda_vgg)?;
            let parts = [l.total, l.recon, l.adv, l.perc];
            nn::ensure_finite("train-encoder", epoch, &parts)?;
            opt_e.step(e.params_mut().tensors_mut(), &e_grads);
            mean.add(&[d_loss, parts[0], parts[1], parts[2], parts[3]]);
        }
        let row = mean.finish();
        debug!(
            "encoder epoch {epoch}: d_loss {:.4} e_loss {:.4} recon {:.4}",
            row[0], row[1], row[2]
        );
        log.push(row);
    }
    assert_eq!(g.params().digest(), frozen_digest, "generator changed during encoder training");
    Ok((e, d, log))
}
