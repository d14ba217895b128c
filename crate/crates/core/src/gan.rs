//! Convolutional generator/discriminator pair and adversarial training on
//! observed fields.
//!
//! The generator maps a latent code through a dense layer to a coarse
//! feature map, then doubles resolution per stage (nearest upsampling +
//! 3×3 convolution) until the target raster is reached. Output is
//! `OUTPUT_SCALE · tanh(·)`, so normalized fields within ±4σ are reachable.
//! The discriminator runs the mirror image with stride-2 convolutions and a
//! dense head producing one raw logit.

use std::sync::Arc;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sst_autograd::{Adam, AdamConfig, ConvGeom, Tensor, Var};

use crate::error::{Result, SstError};
use crate::grid::{Grid, Mask, SstSeries};
use crate::nn::{self, TrainLog, LEAKY_SLOPE};
use crate::params::ParamSet;

pub const OUTPUT_SCALE: f64 = 4.0;
/// Lower clamp for every log argument in the adversarial losses.
pub const LOG_FLOOR: f64 = 1e-12;

/// A point in the generator's input space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        LatentCode(nn::gaussian(rng, &[dim], 1.0).into_data())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Layer sizes shared by the generator, discriminator and encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanArch {
    pub latent_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Feature widths from the coarsest stage to the finest.
    pub channels: Vec<usize>,
}

impl Default for GanArch {
    fn default() -> Self {
        GanArch {
            latent_dim: 512,
            grid_h: 32,
            grid_w: 32,
            channels: vec![16, 16, 8, 8],
        }
    }
}

impl GanArch {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| {
            Err(SstError::Constraint {
                key: key.into(),
                reason,
            })
        };
        for (key, v) in [("grid_h", self.grid_h), ("grid_w", self.grid_w)] {
            if v < 16 || !v.is_power_of_two() {
                return fail(key, format!("must be a power of two >= 16, got {v}"));
            }
        }
        if self.latent_dim == 0 {
            return fail("latent_dim", "must be positive".into());
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return fail("channels", "need at least one positive width".into());
        }
        let (bh, bw) = self.base();
        if bh < 2 || bw < 2 {
            return fail(
                "channels",
                format!("{} stages shrink the raster below 2x2", self.channels.len()),
            );
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Spatial size of the coarsest feature map.
    pub fn base(&self) -> (usize, usize) {
        let k = self.channels.len().saturating_sub(1) as u32;
        (self.grid_h >> k, self.grid_w >> k)
    }

    pub fn pixels(&self) -> usize {
        self.grid_h * self.grid_w
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("arch serializes")
    }
}

fn check_shapes(params: &ParamSet, expected: &ParamSet) -> Result<()> {
    if params.names() != expected.names() {
        return Err(SstError::Checkpoint(format!(
            "parameter names {:?} do not match architecture {:?}",
            params.names(),
            expected.names()
        )));
    }
    for (a, b) in params.tensors().iter().zip(expected.tensors()) {
        if a.shape() != b.shape() {
            return Err(SstError::Checkpoint(format!(
                "parameter shape {:?} does not match architecture {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    arch: GanArch,
    params: ParamSet,
}

impl Generator {
    pub fn init(arch: &GanArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bh, bw) = arch.base();
        let ch = &arch.channels;
        let mut p = ParamSet::new();
        p.push("fc.w", nn::dense(&mut rng, arch.latent_dim, ch[0] * bh * bw, 1.0));
        p.push("fc.b", Tensor::zeros(&[ch[0] * bh * bw]));
        for l in 1..ch.len() {
            p.push(format!("up{l}.w"), nn::conv_kernel(&mut rng, ch[l], ch[l - 1], 3));
            p.push(format!("up{l}.b"), Tensor::zeros(&[ch[l]]));
        }
        let last = *ch.last().expect("validated");
        p.push("out.w", nn::conv_kernel(&mut rng, 1, last, 3).map(|v| 0.5 * v));
        p.push("out.b", Tensor::zeros(&[1]));
        info!("generator: {} parameters", p.parameter_count());
        Ok(Generator {
            arch: arch.clone(),
            params: p,
        })
    }

    pub fn from_params(arch: &GanArch, params: ParamSet) -> Result<Self> {
        let template = Generator::init(arch, 0)?;
        check_shapes(&params, &template.params)?;
        Ok(Generator {
            arch: arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[B, latent] -> [B, 1, H, W]`, unmasked.
    pub fn forward<'t>(&self, p: &[Var<'t>], z: Var<'t>) -> Var<'t> {
        let batch = z.shape()[0];
        let (bh, bw) = self.arch.base();
        let ch = &self.arch.channels;
        let mut h = z
            .matmul(p[0])
            .add_channel_bias(p[1])
            .reshape(&[batch, ch[0], bh, bw])
            .leaky_relu(LEAKY_SLOPE);
        let mut k = 2;
        for _ in 1..ch.len() {
            h = h
                .upsample2x()
                .conv2d(p[k], ConvGeom::same(3))
                .add_channel_bias(p[k + 1])
                .leaky_relu(LEAKY_SLOPE);
            k += 2;
        }
        h.conv2d(p[k], ConvGeom::same(3))
            .add_channel_bias(p[k + 1])
            .tanh()
            .scale(OUTPUT_SCALE)
    }

    /// Generates a batch of raw fields without recording gradients.
    pub fn generate_tensor(&self, z: &Tensor) -> Tensor {
        nn::with_tape(|tape| {
            let p = self.params.bind(tape);
            (*self.forward(&p, tape.var(z.clone())).value()).clone()
        })
    }

    /// One normalized-space field for `z`, land set to fill.
    pub fn generate(&self, z: &LatentCode, mask: &Arc<Mask>) -> Result<Grid> {
        if z.dim() != self.arch.latent_dim {
            return Err(SstError::ShapeMismatch(format!(
                "latent code has {} entries, generator expects {}",
                z.dim(),
                self.arch.latent_dim
            )));
        }
        if mask.dim() != (self.arch.grid_h, self.arch.grid_w) {
            return Err(SstError::ShapeMismatch("mask does not match generator raster".into()));
        }
        let out = self.generate_tensor(&Tensor::new(vec![1, z.dim()], z.0.clone()));
        Ok(nn::tensor_to_grids(&out, mask)?.remove(0))
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        self.params.save(dir, "generator", self.arch.to_json())
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let (params, manifest) = ParamSet::load(dir, "generator")?;
        let arch: GanArch = serde_json::from_value(manifest.arch)?;
        Generator::from_params(&arch, params)
    }
}

/// Stride-2 convolution trunk with a dense head; used as discriminator
/// (`out_dim = 1`) and as encoder (`out_dim = latent_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTrunk {
    arch: GanArch,
    out_dim: usize,
    params: ParamSet,
}

impl ConvTrunk {
    pub fn init(arch: &GanArch, out_dim: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &arch.channels;
        let stages = ch.len();
        let mut p = ParamSet::new();
        let mut c_in = 1;
        for s in 0..stages - 1 {
            let c_out = ch[stages - 1 - s];
            p.push(format!("down{s}.w"), nn::conv_kernel(&mut rng, c_out, c_in, 3));
            p.push(format!("down{s}.b"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        let (bh, bw) = arch.base();
        p.push("head.w", nn::dense(&mut rng, c_in * bh * bw, out_dim, 1.0));
        p.push("head.b", Tensor::zeros(&[out_dim]));
        Ok(ConvTrunk {
            arch: arch.clone(),
            out_dim,
            params: p,
        })
    }

    pub fn zeros(arch: &GanArch, out_dim: usize) -> Result<Self> {
        let mut t = ConvTrunk::init(arch, out_dim, 0)?;
        t.params = t.params.map_tensors(|x| Tensor::zeros(x.shape()));
        Ok(t)
    }

    pub fn from_params(arch: &GanArch, out_dim: usize, params: ParamSet) -> Result<Self> {
        let template = ConvTrunk::init(arch, out_dim, 0)?;
        check_shapes(&params, &template.params)?;
        Ok(ConvTrunk {
            arch: arch.clone(),
            out_dim,
            params,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[B, 1, H, W] -> [B, out_dim]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let batch = x.shape()[0];
        let mut h = x;
        let mut k = 0;
        for _ in 0..self.arch.stages() - 1 {
            h = h
                .conv2d(p[k], ConvGeom::new(2, 1))
                .add_channel_bias(p[k + 1])
                .leaky_relu(LEAKY_SLOPE);
            k += 2;
        }
        let flat = h.value().len() / batch;
        h.reshape(&[batch, flat]).matmul(p[k]).add_channel_bias(p[k + 1])
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Tensor {
        nn::with_tape(|tape| {
            let p = self.params.bind(tape);
            (*self.forward(&p, tape.var(x.clone())).value()).clone()
        })
    }

    fn save_as(&self, dir: &std::path::Path, kind: &str) -> Result<()> {
        let arch = serde_json::json!({ "gan": self.arch, "out_dim": self.out_dim });
        self.params.save(dir, kind, arch)
    }

    fn load_as(dir: &std::path::Path, kind: &str) -> Result<Self> {
        let (params, manifest) = ParamSet::load(dir, kind)?;
        let arch: GanArch = serde_json::from_value(manifest.arch["gan"].clone())?;
        let out_dim = manifest.arch["out_dim"]
            .as_u64()
            .ok_or_else(|| SstError::Checkpoint("manifest lacks out_dim".into()))?
            as usize;
        ConvTrunk::from_params(&arch, out_dim, params)
    }
}

/// Scores a normalized field with one raw logit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator(pub ConvTrunk);

impl Discriminator {
    pub fn init(arch: &GanArch, seed: u64) -> Result<Self> {
        Ok(Discriminator(ConvTrunk::init(arch, 1, seed)?))
    }

    /// All-zero weights: every input scores exactly 0.
    pub fn zeros(arch: &GanArch) -> Result<Self> {
        Ok(Discriminator(ConvTrunk::zeros(arch, 1)?))
    }

    pub fn params(&self) -> &ParamSet {
        self.0.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.0.params_mut()
    }

    /// `[B, 1, H, W] -> [B, 1]` logits.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        self.0.forward(p, x)
    }

    /// Raw score of one field.
    pub fn score(&self, m: &Grid) -> Result<f64> {
        let arch = self.0.arch();
        if (m.height(), m.width()) != (arch.grid_h, arch.grid_w) {
            return Err(SstError::ShapeMismatch(format!(
                "discriminator expects {}x{}, got {}x{}",
                arch.grid_h,
                arch.grid_w,
                m.height(),
                m.width()
            )));
        }
        let x = Tensor::new(
            vec![1, 1, m.height(), m.width()],
            m.values().iter().copied().collect(),
        );
        Ok(self.0.forward_tensor(&x).item())
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        self.0.save_as(dir, "discriminator")
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        Ok(Discriminator(ConvTrunk::load_as(dir, "discriminator")?))
    }
}

pub(crate) fn save_trunk(t: &ConvTrunk, dir: &std::path::Path, kind: &str) -> Result<()> {
    t.save_as(dir, kind)
}

pub(crate) fn load_trunk(dir: &std::path::Path, kind: &str) -> Result<ConvTrunk> {
    ConvTrunk::load_as(dir, kind)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossMode {
    /// `mean log(1 − σ(D(G(z))))`, minimized.
    Minimax,
    /// `−mean log σ(D(G(z)))`.
    #[default]
    NonSaturating,
}

/// `−mean[log σ(real) + log(1 − σ(fake))]`, log arguments clamped at [`LOG_FLOOR`].
pub fn d_loss_from_scores<'t>(real: Var<'t>, fake: Var<'t>) -> Var<'t> {
    let log_real = real.sigmoid().clamp_min(LOG_FLOOR).ln().mean();
    let log_not_fake = fake.neg().sigmoid().clamp_min(LOG_FLOOR).ln().mean();
    log_real.add(log_not_fake).neg()
}

pub fn g_loss_from_scores<'t>(fake: Var<'t>, mode: GeneratorLossMode) -> Var<'t> {
    match mode {
        GeneratorLossMode::Minimax => fake.neg().sigmoid().clamp_min(LOG_FLOOR).ln().mean(),
        GeneratorLossMode::NonSaturating => fake.sigmoid().clamp_min(LOG_FLOOR).ln().mean().neg(),
    }
}

fn check_batches(real: Option<&Tensor>, z: &Tensor, arch: &GanArch) -> Result<()> {
    if z.shape()[0] == 0 || real.is_some_and(|r| r.shape()[0] == 0) {
        return Err(SstError::EmptyBatch);
    }
    if z.shape() != [z.shape()[0], arch.latent_dim] {
        return Err(SstError::ShapeMismatch(format!(
            "latent batch {:?} does not match latent_dim {}",
            z.shape(),
            arch.latent_dim
        )));
    }
    Ok(())
}

/// Discriminator loss on a real batch `[B, 1, H, W]` and latent batch `[B', latent]`.
pub fn gan_d_loss(d: &Discriminator, g: &Generator, real: &Tensor, z: &Tensor, mask: &Tensor) -> Result<f64> {
    gan_d_loss_grad(d, g, real, z, mask).map(|(l, _)| l)
}

/// [`gan_d_loss`] and its gradient with respect to every discriminator parameter.
pub fn gan_d_loss_grad(
    d: &Discriminator,
    g: &Generator,
    real: &Tensor,
    z: &Tensor,
    mask: &Tensor,
) -> Result<(f64, Vec<Tensor>)> {
    check_batches(Some(real), z, g.arch())?;
    let fake = g.generate_tensor(z);
    Ok(nn::with_tape(|tape| {
        let pd = d.params().bind(tape);
        let fake = nn::apply_mask(tape.var(fake), mask);
        let loss = d_loss_from_scores(d.forward(&pd, tape.var(real.clone())), d.forward(&pd, fake));
        let grads = tape.grad(loss, &pd);
        (loss.item(), nn::grads_to_tensors(&grads))
    }))
}

pub fn gan_g_loss(d: &Discriminator, g: &Generator, z: &Tensor, mask: &Tensor, mode: GeneratorLossMode) -> Result<f64> {
    gan_g_loss_grad(d, g, z, mask, mode).map(|(l, _)| l)
}

/// [`gan_g_loss`] and its gradient with respect to every generator parameter.
pub fn gan_g_loss_grad(
    d: &Discriminator,
    g: &Generator,
    z: &Tensor,
    mask: &Tensor,
    mode: GeneratorLossMode,
) -> Result<(f64, Vec<Tensor>)> {
    check_batches(None, z, g.arch())?;
    Ok(nn::with_tape(|tape| {
        let pd = d.params().bind(tape);
        let pg = g.params().bind(tape);
        let fake = nn::apply_mask(g.forward(&pg, tape.var(z.clone())), mask);
        let loss = g_loss_from_scores(d.forward(&pd, fake), mode);
        let grads = tape.grad(loss, &pg);
        (loss.item(), nn::grads_to_tensors(&grads))
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub arch: GanArch,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss_mode: GeneratorLossMode,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            arch: GanArch::default(),
            epochs: 200,
            minibatch: 16,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            loss_mode: GeneratorLossMode::NonSaturating,
            seed: 1,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.minibatch == 0 {
            return Err(SstError::Constraint {
                key: "minibatch".into(),
                reason: "must be positive".into(),
            });
        }
        for (key, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(SstError::Constraint {
                    key: key.into(),
                    reason: "must be finite and >= 0".into(),
                });
            }
        }
        Ok(())
    }
}

/// The networks `train_gan` starts from.
pub fn init_gan(cfg: &GanConfig) -> Result<(Generator, Discriminator)> {
    Ok((
        Generator::init(&cfg.arch, cfg.seed.wrapping_add(101))?,
        Discriminator::init(&cfg.arch, cfg.seed.wrapping_add(202))?,
    ))
}

/// Alternating updates: per minibatch one discriminator step, then one
/// generator step, both with the same latent draw.
pub fn train_gan(observed: &SstSeries, cfg: &GanConfig) -> Result<(Generator, Discriminator, TrainLog)> {
    cfg.validate()?;
    let data = nn::series_tensor(observed)?;
    if (observed.height(), observed.width()) != (cfg.arch.grid_h, cfg.arch.grid_w) {
        return Err(SstError::ShapeMismatch(format!(
            "data raster {}x{} vs configured {}x{}",
            observed.height(),
            observed.width(),
            cfg.arch.grid_h,
            cfg.arch.grid_w
        )));
    }
    if observed.len() < 2 * cfg.minibatch {
        return Err(SstError::SeriesTooShort(format!(
            "{} frames is fewer than two minibatches of {}",
            observed.len(),
            cfg.minibatch
        )));
    }
    let mask = nn::mask_tensor(observed.mask());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut g, mut d) = init_gan(cfg)?;
    let mut opt_g = Adam::new(AdamConfig::new(cfg.lr_g, cfg.beta1, cfg.beta2), g.params().tensors());
    let mut opt_d = Adam::new(AdamConfig::new(cfg.lr_d, cfg.beta1, cfg.beta2), d.params().tensors());
    let mut log = TrainLog::new(&["d_loss", "g_loss"]);

    for epoch in 0..cfg.epochs {
        let mut mean = nn::Mean::new(2);
        for idx in nn::epoch_batches(&mut rng, observed.len(), cfg.minibatch) {
            let real = nn::gather(&data, &idx);
            let z = nn::gaussian(&mut rng, &[idx.len(), cfg.arch.latent_dim], 1.0);

            let (d_loss, d_grads) = gan_d_loss_grad(&d, &g, &real, &z, &mask)?;
            nn::ensure_finite("train-gan", epoch, &[d_loss])?;
            opt_d.step(d.params_mut().tensors_mut(), &d_grads);

            let (g_loss, g_grads) = gan_g_loss_grad(&d, &g, &z, &mask, cfg.loss_mode)?;
            nn::ensure_finite("train-gan", epoch, &[g_loss])?;
            opt_g.step(g.params_mut().tensors_mut(), &g_grads);
            mean.add(&[d_loss, g_loss]);
        }
        let row = mean.finish();
        debug!("gan epoch {epoch}: d_loss {:.4} g_loss {:.4}", row[0], row[1]);
        log.push(row);
    }
    if !g.params().all_finite() || !d.params().all_finite() {
        return Err(SstError::Divergence {
            stage: "train-gan",
            epoch: cfg.epochs.saturating_sub(1),
        });
    }
    Ok((g, d, log))
}
