//! End-to-end experiment runner.
//!
//! Every stage reads its inputs from the run directory and writes its outputs
//! back there, so a full run and a sequence of single-stage runs see exactly
//! the same (f32-rounded) data and checkpoints.
//!
//! ```text
//! <run>/config.toml            resolved configuration
//! <run>/manifest.json          config hash, seeds, hashes of every artifact
//! <run>/data/                  truth, model, normalized and enhanced series
//! <run>/ckpt/gan/              generator, discriminator, norm_stats.json
//! <run>/ckpt/encoder/          encoder and its discriminator
//! <run>/ckpt/predictor_h{h}/   one predictor per horizon task
//! <run>/logs/                  per-epoch training curves (CSV)
//! <run>/reports/h{h}.json      forecast scores per horizon task
//! <run>/report.json            scores of the first horizon task
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::encoder::{train_encoder, Encoder};
use crate::error::{Result, SstError};
use crate::eval::{evaluate_forecasts, scatter_export, test_origins, write_difference_ppm};
use crate::gan::{train_gan, Discriminator, Generator};
use crate::grid::{compute_norm_stats, denormalize, normalize, train_len, NormStats};
use crate::metrics::{difference_map, MetricsReport};
use crate::predictor::{train_predictor, Predictor};
use crate::prior::{enhancement_report, PriorNetwork};
use crate::sstb::{load_series, save_series};
use crate::synthetic::generate_pair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    MakeSynthetic,
    Normalize,
    TrainGan,
    TrainEncoder,
    Enhance,
    TrainPredictor,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::MakeSynthetic,
        Stage::Normalize,
        Stage::TrainGan,
        Stage::TrainEncoder,
        Stage::Enhance,
        Stage::TrainPredictor,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MakeSynthetic => "make-synthetic",
            Stage::Normalize => "normalize",
            Stage::TrainGan => "train-gan",
            Stage::TrainEncoder => "train-encoder",
            Stage::Enhance => "enhance",
            Stage::TrainPredictor => "train-predictor",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = SstError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| SstError::Constraint {
                key: "stage".into(),
                reason: format!("unknown stage `{s}`"),
            })
    }
}

/// File layout of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.sstb"))
    }

    pub fn ckpt(&self, name: &str) -> PathBuf {
        self.root.join("ckpt").join(name)
    }

    pub fn predictor_ckpt(&self, horizon: usize) -> PathBuf {
        self.ckpt(&format!("predictor_h{horizon}"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.csv"))
    }

    pub fn horizon_report(&self, horizon: usize) -> PathBuf {
        self.root.join("reports").join(format!("h{horizon}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn tag(stage: Stage, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        e @ SstError::Stage { .. } => e,
        e => SstError::Stage {
            stage: stage.name(),
            source: Box::new(e),
        },
    })
}

fn stage_make_synthetic(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let (truth, model) = match &cfg.data {
        Some(paths) => (load_series(&paths.truth)?, load_series(&paths.model)?),
        None => generate_pair(&cfg.scenario)?,
    };
    if truth.days() != model.days() {
        return Err(SstError::Misaligned("truth and model days differ".into()));
    }
    save_series(&truth, &dir.data("truth"))?;
    save_series(&model, &dir.data("model"))
}

fn stage_normalize(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let truth = load_series(&dir.data("truth"))?;
    let model = load_series(&dir.data("model"))?;
    let n_train = train_len(truth.len(), cfg.eval.train_fraction);
    let train = truth.slice(0..n_train)?;
    let stats = compute_norm_stats(&train)?;
    info!("normalize: mu {:.4} sigma {:.4} from {n_train} training days", stats.mu, stats.sigma);
    save_series(&normalize(&train, stats)?, &dir.data("truth_train_norm"))?;
    save_series(&normalize(&model, stats)?, &dir.data("model_norm"))
}

/// `<dir>/generator`, `<dir>/discriminator` and the normalization used in training.
pub fn save_gan_ckpt(dir: &Path, g: &Generator, d: &Discriminator, stats: Option<NormStats>) -> Result<()> {
    g.save(&dir.join("generator"))?;
    d.save(&dir.join("discriminator"))?;
    write_json(&dir.join("norm_stats.json"), &stats)
}

pub fn load_gan_ckpt(dir: &Path) -> Result<(Generator, Discriminator, Option<NormStats>)> {
    let stats = match fs::read_to_string(dir.join("norm_stats.json")) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((
        Generator::load(&dir.join("generator"))?,
        Discriminator::load(&dir.join("discriminator"))?,
        stats,
    ))
}

/// `<dir>/encoder` plus the discriminator trained alongside it.
pub fn save_encoder_ckpt(dir: &Path, e: &Encoder, d: &Discriminator) -> Result<()> {
    e.save(&dir.join("encoder"))?;
    d.save(&dir.join("discriminator"))
}

pub fn load_encoder_ckpt(dir: &Path) -> Result<Encoder> {
    Encoder::load(&dir.join("encoder"))
}

/// Prior network from an encoder checkpoint and a GAN checkpoint.
pub fn load_prior(encoder_dir: &Path, gan_dir: &Path) -> Result<PriorNetwork> {
    let (g, _, _) = load_gan_ckpt(gan_dir)?;
    PriorNetwork::new(load_encoder_ckpt(encoder_dir)?, g)
}

fn stage_train_gan(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let observed = load_series(&dir.data("truth_train_norm"))?;
    let (g, d, log) = train_gan(&observed, &cfg.gan)?;
    save_gan_ckpt(&dir.ckpt("gan"), &g, &d, observed.norm_stats())?;
    write_text(&dir.log("gan"), &log.to_csv())
}

fn stage_train_encoder(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let observed = load_series(&dir.data("truth_train_norm"))?;
    let (g, d, _) = load_gan_ckpt(&dir.ckpt("gan"))?;
    let d = cfg.encoder.reuse_pretrained_d.then_some(d);
    let (e, d_inv, log) = train_encoder(&g, d.as_ref(), &observed, &cfg.encoder)?;
    save_encoder_ckpt(&dir.ckpt("encoder"), &e, &d_inv)?;
    write_text(&dir.log("encoder"), &log.to_csv())
}

fn stage_enhance(dir: &RunDir) -> Result<()> {
    let prior = load_prior(&dir.ckpt("encoder"), &dir.ckpt("gan"))?;
    let model_norm = load_series(&dir.data("model_norm"))?;
    let enhanced = prior.enhance(&model_norm)?;
    save_series(&enhanced, &dir.data("enhanced_norm"))?;
    let stats = model_norm.norm_stats().ok_or(SstError::NotNormalized)?;
    let truth = load_series(&dir.data("truth"))?;
    let model = load_series(&dir.data("model"))?;
    // Score the enhanced series as stored on disk.
    let stored = load_series(&dir.data("enhanced_norm"))?;
    let report = enhancement_report(&model, &denormalize(&stored, stats)?, &truth)?;
    info!(
        "enhance: model rmse {:.4} -> enhanced rmse {:.4}",
        report.model_rmse, report.enhanced_rmse
    );
    write_json(&dir.reports_dir().join("enhancement.json"), &report)
}

fn stage_train_predictor(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let ph = load_series(&dir.data("enhanced_norm"))?;
    let n_train = train_len(ph.len(), cfg.eval.train_fraction);
    let train = ph.slice(0..n_train)?;
    for task in &cfg.tasks {
        info!("train-predictor: horizon {} lookback {}", task.horizon, task.lookback);
        let (model, log) = train_predictor(&train, task)?;
        model.save(&dir.predictor_ckpt(task.horizon))?;
        write_text(&dir.log(&format!("predictor_h{}", task.horizon)), &log.to_csv())?;
    }
    Ok(())
}

fn stage_evaluate(dir: &RunDir, cfg: &RunConfig) -> Result<()> {
    let ph = load_series(&dir.data("enhanced_norm"))?;
    let truth = load_series(&dir.data("truth"))?;
    let test_start = train_len(ph.len(), cfg.eval.train_fraction);
    let mut first: Option<MetricsReport> = None;
    for task in &cfg.tasks {
        let model = Predictor::load(&dir.predictor_ckpt(task.horizon))?;
        let origins = test_origins(ph.len(), test_start, task.horizon);
        let run_id = format!("{}-h{}", cfg.eval.run_id, task.horizon);
        let ev = evaluate_forecasts(&model, &ph, &truth, &origins, task.horizon, None, &run_id)?;
        info!(
            "evaluate: horizon {} rmse {:.4} r2 {:.4}",
            task.horizon, ev.report.rmse_celsius, ev.report.r2
        );
        write_json(&dir.horizon_report(task.horizon), &ev.report)?;
        let reports = dir.reports_dir();
        scatter_export(
            &ev.by_lead[0],
            &ev.truth_by_lead[0],
            &reports.join(format!("scatter_h{}.csv", task.horizon)),
            cfg.eval.scatter_stride,
        )?;
        let diff = difference_map(&ev.by_lead[0][0], &ev.truth_by_lead[0][0])?;
        write_difference_ppm(&diff, &reports.join(format!("difference_h{}.ppm", task.horizon)))?;
        first.get_or_insert(ev.report);
    }
    let report = first.expect("config has at least one task");
    write_json(&dir.report(), &report)
}

fn run_stage(dir: &RunDir, cfg: &RunConfig, stage: Stage) -> Result<()> {
    info!("stage {stage}");
    let r = match stage {
        Stage::MakeSynthetic => stage_make_synthetic(dir, cfg),
        Stage::Normalize => stage_normalize(dir, cfg),
        Stage::TrainGan => stage_train_gan(dir, cfg),
        Stage::TrainEncoder => stage_train_encoder(dir, cfg),
        Stage::Enhance => stage_enhance(dir),
        Stage::TrainPredictor => stage_train_predictor(dir, cfg),
        Stage::Evaluate => stage_evaluate(dir, cfg),
    };
    tag(stage, r)
}

/// Seeds actually used by each trained component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub root: Option<u64>,
    pub scenario: u64,
    pub gan: u64,
    pub encoder: u64,
    pub perceptual: u64,
    pub predictor: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config_toml: String,
    pub seeds: ManifestSeeds,
    pub stages: Vec<String>,
    pub artifacts: Vec<ArtifactHash>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The configuration this run was made from, after verifying its hash.
    pub fn config(&self) -> Result<RunConfig> {
        if sha256_hex(self.config_toml.as_bytes()) != self.config_sha256 {
            return Err(SstError::Checkpoint("manifest config hash does not match its text".into()));
        }
        let cfg = RunConfig::parse_str(&self.config_toml)?;
        Ok(cfg)
    }

    pub fn artifact(&self, path: &str) -> Option<&str> {
        self.artifacts
            .iter()
            .find(|a| a.path == path)
            .map(|a| a.sha256.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes every data file, checkpoint, log and report present in the run.
pub fn hash_artifacts(dir: &RunDir) -> Result<Vec<ArtifactHash>> {
    let mut files = Vec::new();
    for sub in ["data", "ckpt", "logs", "reports"] {
        collect_files(dir.root(), &dir.root().join(sub), &mut files)?;
    }
    if dir.report().is_file() {
        files.push(PathBuf::from("report.json"));
    }
    files
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(dir.root().join(&rel))?;
            Ok(ArtifactHash {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

fn write_manifest(dir: &RunDir, cfg: &RunConfig, done: &[Stage]) -> Result<RunManifest> {
    let config_toml = cfg.to_toml();
    let mut stages: Vec<String> = match RunManifest::load(&dir.manifest()) {
        Ok(m) if m.config_toml == config_toml => m.stages,
        _ => Vec::new(),
    };
    for s in done {
        if !stages.iter().any(|x| x == s.name()) {
            stages.push(s.name().to_string());
        }
    }
    stages.sort_by_key(|s| Stage::from_str(s).ok());
    let manifest = RunManifest {
        config_sha256: sha256_hex(config_toml.as_bytes()),
        seeds: ManifestSeeds {
            root: cfg.seed,
            scenario: cfg.scenario.seed,
            gan: cfg.gan.seed,
            encoder: cfg.encoder.seed,
            perceptual: cfg.encoder.perceptual_seed,
            predictor: cfg.tasks.iter().map(|t| t.seed).collect(),
        },
        stages,
        artifacts: hash_artifacts(dir)?,
        config_toml,
    };
    write_text(&dir.config(), &manifest.config_toml)?;
    write_json(&dir.manifest(), &manifest)?;
    Ok(manifest)
}

/// Runs `stages` in order (all of them when `None`) and refreshes the manifest.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path, stages: Option<&[Stage]>) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = RunDir::new(out_dir);
    fs::create_dir_all(dir.root())?;
    let list: Vec<Stage> = stages.map(<[Stage]>::to_vec).unwrap_or_else(|| Stage::ALL.to_vec());
    // Record the configuration before any stage can fail.
    write_text(&dir.config(), &cfg.to_toml())?;
    for &stage in &list {
        run_stage(&dir, cfg, stage)?;
    }
    write_manifest(&dir, cfg, &list)
}

/// Re-executes the full run described by a manifest into `out_dir`.
pub fn rerun_from_manifest(manifest: &Path, out_dir: &Path) -> Result<RunManifest> {
    let cfg = RunManifest::load(manifest)?.config()?;
    run_pipeline(&cfg, out_dir, None)
}

/// Loads a previously written `report.json`.
pub fn load_report(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
