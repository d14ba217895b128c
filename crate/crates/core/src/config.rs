//! Run configuration: a TOML file with `[scenario]`, `[scenario.bias]`,
//! `[data]`, `[gan]`, `[encoder]`, `[predictor]` and `[eval]` sections.
//!
//! Every key is optional; missing keys take the documented default and the
//! substitution is logged. Unknown keys, wrongly typed values and values
//! violating a constraint are rejected with distinct errors.
//!
//! [`RunConfig::to_toml`] writes the fully resolved configuration, which
//! parses back to an identical value; run manifests store that text.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::ablation::{AblationConfig, SeedPlan};
use crate::encoder::EncoderConfig;
use crate::error::{Result, SstError};
use crate::gan::{GanArch, GanConfig, GeneratorLossMode};
use crate::predictor::{default_lookback, PredictorConfig, HORIZONS};
use crate::synthetic::{BiasPattern, BiasSpec, SyntheticScenario};

pub const CONFIG_VERSION: i64 = 1;

/// Existing truth/model series to use instead of generating a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub truth: PathBuf,
    pub model: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub train_fraction: f64,
    pub scatter_stride: usize,
    pub ablation_seeds: usize,
    pub run_id: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_fraction: 0.85,
            scatter_stride: 4,
            ablation_seeds: 5,
            run_id: "desk".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// When set, all component seeds derive from it.
    pub seed: Option<u64>,
    pub scenario: SyntheticScenario,
    pub data: Option<DataPaths>,
    pub gan: GanConfig,
    pub encoder: EncoderConfig,
    /// One predictor task per horizon.
    pub tasks: Vec<PredictorConfig>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            scenario: SyntheticScenario::default(),
            data: None,
            gan: desk_gan(),
            encoder: desk_encoder(),
            tasks: HORIZONS.iter().map(|&h| desk_predictor(h)).collect(),
            eval: EvalConfig::default(),
        }
    }
}

// Budgets for a single CPU core, used for every key the file leaves out.
// The struct defaults keep the full-size settings.

pub fn desk_gan() -> GanConfig {
    GanConfig {
        epochs: 100,
        lr_g: 1e-3,
        lr_d: 1e-3,
        ..GanConfig::default()
    }
}

pub fn desk_encoder() -> EncoderConfig {
    EncoderConfig {
        epochs: 60,
        lr_e: 1e-3,
        lr_d: 1e-3,
        ..EncoderConfig::default()
    }
}

pub fn desk_predictor(horizon: usize) -> PredictorConfig {
    PredictorConfig {
        layers: 1,
        hidden_channels: 16,
        epochs: 15,
        lr: 3e-3,
        ..PredictorConfig::for_horizon(horizon)
    }
}

impl RunConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| SstError::ConfigSyntax(e.to_string()))?;
        let mut top = Section::new("", root);
        let version = top.opt_i64("version")?.unwrap_or(CONFIG_VERSION);
        if version != CONFIG_VERSION {
            return Err(SstError::Constraint {
                key: "version".into(),
                reason: format!("unsupported config version {version}"),
            });
        }
        let seed = top.opt_u64("seed")?;
        let scenario = parse_scenario(top.subsection("scenario")?)?;
        let data = top.subsection("data")?.map(parse_data).transpose()?;
        let gan = parse_gan(top.subsection("gan")?, &scenario)?;
        let encoder = parse_encoder(top.subsection("encoder")?)?;
        let tasks = parse_predictor(top.subsection("predictor")?)?;
        let eval = parse_eval(top.subsection("eval")?)?;
        top.finish()?;
        let mut cfg = RunConfig {
            seed: None,
            scenario,
            data,
            gan,
            encoder,
            tasks,
            eval,
        };
        if let Some(s) = seed {
            cfg.apply_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-derives every component seed from `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        let plan = SeedPlan::derive(seed);
        self.seed = Some(seed);
        self.gan.seed = plan.gan;
        self.encoder.seed = plan.encoder;
        for t in &mut self.tasks {
            t.seed = plan.predictor;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.gan.validate()?;
        self.encoder.validate()?;
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(SstError::Constraint {
                    key: key.into(),
                    reason: "must be >= 1".into(),
                })
            } else {
                Ok(())
            }
        };
        positive("gan.epochs", self.gan.epochs)?;
        positive("encoder.epochs", self.encoder.epochs)?;
        if self.tasks.is_empty() {
            return Err(SstError::Constraint {
                key: "predictor.horizons".into(),
                reason: "need at least one horizon".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            t.validate()?;
            positive("predictor.epochs", t.epochs)?;
            if !seen.insert(t.horizon) {
                return Err(SstError::Constraint {
                    key: "predictor.horizons".into(),
                    reason: format!("horizon {} listed twice", t.horizon),
                });
            }
        }
        let e = &self.eval;
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return Err(SstError::Constraint {
                key: "eval.train_fraction".into(),
                reason: "must lie strictly between 0 and 1".into(),
            });
        }
        positive("eval.scatter_stride", e.scatter_stride)?;
        positive("eval.ablation_seeds", e.ablation_seeds)?;
        if e.run_id.is_empty() || e.run_id.contains(['/', '\\']) {
            return Err(SstError::Constraint {
                key: "eval.run_id".into(),
                reason: "must be a non-empty name without path separators".into(),
            });
        }
        Ok(())
    }

    /// Ablation settings: the first predictor task with this run's components.
    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            scenario: self.scenario.clone(),
            gan: self.gan.clone(),
            encoder: self.encoder.clone(),
            predictor: self.tasks[0].clone(),
            train_fraction: self.eval.train_fraction,
        }
    }

    /// Canonical TOML with every value spelled out.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("version".into(), Value::Integer(CONFIG_VERSION));
        if let Some(seed) = self.seed {
            put_u64(&mut root, "seed", seed);
        }

        let s = &self.scenario;
        let mut sc = Table::new();
        put(&mut sc, "height", s.height);
        put(&mut sc, "width", s.width);
        put(&mut sc, "n_days", s.n_days);
        put(&mut sc, "n_modes", s.n_modes);
        sc.insert("seasonal_period".into(), Value::Float(s.seasonal_period));
        sc.insert("base_temp".into(), Value::Float(s.base_temp));
        sc.insert("amplitude".into(), Value::Float(s.amplitude));
        sc.insert("drift".into(), Value::Float(s.drift));
        sc.insert("land_fraction".into(), Value::Float(s.land_fraction));
        put_u64(&mut sc, "seed", s.seed);
        let mut bias = Table::new();
        bias.insert("additive_field_scale".into(), Value::Float(s.bias.additive_field_scale));
        bias.insert("smoothing_radius".into(), Value::Float(s.bias.smoothing_radius));
        bias.insert("phase_lag_days".into(), Value::Float(s.bias.phase_lag_days));
        let pattern = match s.bias.pattern {
            BiasPattern::Smooth => "smooth",
            BiasPattern::Flat => "flat",
        };
        bias.insert("pattern".into(), Value::String(pattern.into()));
        sc.insert("bias".into(), Value::Table(bias));
        root.insert("scenario".into(), Value::Table(sc));

        if let Some(d) = &self.data {
            let mut t = Table::new();
            t.insert("truth".into(), Value::String(d.truth.display().to_string()));
            t.insert("model".into(), Value::String(d.model.display().to_string()));
            root.insert("data".into(), Value::Table(t));
        }

        let g = &self.gan;
        let mut gt = Table::new();
        put(&mut gt, "latent_dim", g.arch.latent_dim);
        gt.insert(
            "channels".into(),
            Value::Array(g.arch.channels.iter().map(|&c| Value::Integer(c as i64)).collect()),
        );
        put(&mut gt, "epochs", g.epochs);
        put(&mut gt, "minibatch", g.minibatch);
        gt.insert("lr_g".into(), Value::Float(g.lr_g));
        gt.insert("lr_d".into(), Value::Float(g.lr_d));
        gt.insert("beta1".into(), Value::Float(g.beta1));
        gt.insert("beta2".into(), Value::Float(g.beta2));
        let mode = match g.loss_mode {
            GeneratorLossMode::Minimax => "minimax",
            GeneratorLossMode::NonSaturating => "non_saturating",
        };
        gt.insert("loss_mode".into(), Value::String(mode.into()));
        put_u64(&mut gt, "seed", g.seed);
        root.insert("gan".into(), Value::Table(gt));

        let e = &self.encoder;
        let mut et = Table::new();
        et.insert("lambda_adv".into(), Value::Float(e.lambda_adv));
        et.insert("lambda_vgg".into(), Value::Float(e.lambda_vgg));
        et.insert("gamma".into(), Value::Float(e.gamma));
        put(&mut et, "epochs", e.epochs);
        put(&mut et, "minibatch", e.minibatch);
        et.insert("lr_e".into(), Value::Float(e.lr_e));
        et.insert("lr_d".into(), Value::Float(e.lr_d));
        et.insert("beta1".into(), Value::Float(e.beta1));
        et.insert("beta2".into(), Value::Float(e.beta2));
        et.insert("reuse_pretrained_d".into(), Value::Boolean(e.reuse_pretrained_d));
        put_u64(&mut et, "perceptual_seed", e.perceptual_seed);
        put_u64(&mut et, "seed", e.seed);
        root.insert("encoder".into(), Value::Table(et));

        let p = &self.tasks[0];
        let mut pt = Table::new();
        let ints = |f: fn(&PredictorConfig) -> usize| {
            Value::Array(self.tasks.iter().map(|t| Value::Integer(f(t) as i64)).collect())
        };
        pt.insert("horizons".into(), ints(|t| t.horizon));
        pt.insert("lookbacks".into(), ints(|t| t.lookback));
        put(&mut pt, "layers", p.layers);
        put(&mut pt, "hidden_channels", p.hidden_channels);
        put(&mut pt, "kernel", p.kernel);
        put(&mut pt, "epochs", p.epochs);
        put(&mut pt, "minibatch", p.minibatch);
        pt.insert("lr".into(), Value::Float(p.lr));
        pt.insert("beta1".into(), Value::Float(p.beta1));
        pt.insert("beta2".into(), Value::Float(p.beta2));
        put_u64(&mut pt, "seed", p.seed);
        root.insert("predictor".into(), Value::Table(pt));

        let v = &self.eval;
        let mut vt = Table::new();
        vt.insert("train_fraction".into(), Value::Float(v.train_fraction));
        put(&mut vt, "scatter_stride", v.scatter_stride);
        put(&mut vt, "ablation_seeds", v.ablation_seeds);
        vt.insert("run_id".into(), Value::String(v.run_id.clone()));
        root.insert("eval".into(), Value::Table(vt));

        toml::to_string(&root).expect("config serializes")
    }
}

fn put(t: &mut Table, key: &str, v: usize) {
    t.insert(key.into(), Value::Integer(v as i64));
}

fn put_u64(t: &mut Table, key: &str, v: u64) {
    // TOML integers are signed 64-bit; larger seeds are stored as strings.
    let value = i64::try_from(v).map(Value::Integer).unwrap_or_else(|_| Value::String(v.to_string()));
    t.insert(key.into(), value);
}

/// A table whose keys are tracked so leftovers can be reported.
struct Section {
    name: String,
    table: Table,
    used: BTreeSet<String>,
}

impl Section {
    fn new(name: &str, table: Table) -> Self {
        Section {
            name: name.to_string(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn qualified(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        let v = self.table.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn mismatch(&self, key: &str, expected: &'static str) -> SstError {
        SstError::TypeMismatch {
            key: self.qualified(key),
            expected,
        }
    }

    fn subsection(&mut self, key: &str) -> Result<Option<Section>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(&self.qualified(key), t))),
            Some(_) => Err(self.mismatch(key, "table")),
        }
    }

    fn opt_i64(&mut self, key: &str) -> Result<Option<i64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => Ok(Some(i)),
            Some(_) => Err(self.mismatch(key, "integer")),
        }
    }

    fn opt_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) => u64::try_from(i).map(Some).map_err(|_| SstError::Constraint {
                key: self.qualified(key),
                reason: "must be non-negative".into(),
            }),
            Some(Value::String(s)) => s.parse().map(Some).map_err(|_| self.mismatch(key, "unsigned integer")),
            Some(_) => Err(self.mismatch(key, "unsigned integer")),
        }
    }

    fn logged<T: Display>(&self, key: &str, default: T) -> T {
        info!("config: `{}` not set, using default {default}", self.qualified(key));
        default
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.opt_u64(key)? {
            Some(v) => Ok(v as usize),
            None => Ok(self.logged(key, default)),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.opt_u64(key)? {
            Some(v) => Ok(v),
            None => Ok(self.logged(key, default)),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(self.logged(key, default)),
            Some(Value::Float(f)) => Ok(f),
            Some(Value::Integer(i)) => Ok(i as f64),
            Some(_) => Err(self.mismatch(key, "number")),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(self.logged(key, default)),
            Some(Value::Boolean(b)) => Ok(b),
            Some(_) => Err(self.mismatch(key, "boolean")),
        }
    }

    fn opt_str(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.mismatch(key, "string")),
        }
    }

    fn opt_usize_list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        let Some(v) = self.take(key) else { return Ok(None) };
        let Value::Array(items) = v else {
            return Err(self.mismatch(key, "array of integers"));
        };
        items
            .iter()
            .map(|x| match x {
                Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                Value::Integer(_) => Err(SstError::Constraint {
                    key: self.qualified(key),
                    reason: "entries must be non-negative".into(),
                }),
                _ => Err(self.mismatch(key, "array of integers")),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(SstError::UnknownKey {
                section: if self.name.is_empty() { "<root>".into() } else { self.name.clone() },
                key: k.clone(),
            }),
            None => Ok(()),
        }
    }
}

fn empty(name: &str) -> Section {
    Section::new(name, Table::new())
}

fn parse_scenario(sec: Option<Section>) -> Result<SyntheticScenario> {
    let mut s = sec.unwrap_or_else(|| empty("scenario"));
    let d = SyntheticScenario::default();
    let mut bias_sec = s.subsection("bias")?.unwrap_or_else(|| empty("scenario.bias"));
    let pattern = match bias_sec.opt_str("pattern")?.as_deref() {
        None | Some("smooth") => BiasPattern::Smooth,
        Some("flat") => BiasPattern::Flat,
        Some(other) => {
            return Err(SstError::Constraint {
                key: "scenario.bias.pattern".into(),
                reason: format!("`{other}` is not one of smooth, flat"),
            })
        }
    };
    let bias = BiasSpec {
        additive_field_scale: bias_sec.f64_or("additive_field_scale", d.bias.additive_field_scale)?,
        smoothing_radius: bias_sec.f64_or("smoothing_radius", d.bias.smoothing_radius)?,
        phase_lag_days: bias_sec.f64_or("phase_lag_days", d.bias.phase_lag_days)?,
        pattern,
    };
    bias_sec.finish()?;
    let out = SyntheticScenario {
        height: s.usize_or("height", d.height)?,
        width: s.usize_or("width", d.width)?,
        n_days: s.usize_or("n_days", d.n_days)?,
        n_modes: s.usize_or("n_modes", d.n_modes)?,
        seasonal_period: s.f64_or("seasonal_period", d.seasonal_period)?,
        base_temp: s.f64_or("base_temp", d.base_temp)?,
        amplitude: s.f64_or("amplitude", d.amplitude)?,
        drift: s.f64_or("drift", d.drift)?,
        land_fraction: s.f64_or("land_fraction", d.land_fraction)?,
        bias,
        seed: s.u64_or("seed", d.seed)?,
    };
    s.finish()?;
    Ok(out)
}

fn parse_data(mut s: Section) -> Result<DataPaths> {
    let mut path = |key: &str| -> Result<PathBuf> {
        s.opt_str(key)?.map(PathBuf::from).ok_or_else(|| SstError::Constraint {
            key: format!("data.{key}"),
            reason: "required when [data] is present".into(),
        })
    };
    let out = DataPaths {
        truth: path("truth")?,
        model: path("model")?,
    };
    s.finish()?;
    Ok(out)
}

fn parse_gan(sec: Option<Section>, scenario: &SyntheticScenario) -> Result<GanConfig> {
    let mut s = sec.unwrap_or_else(|| empty("gan"));
    let d = desk_gan();
    let loss_mode = match s.opt_str("loss_mode")?.as_deref() {
        None => s.logged("loss_mode", "non_saturating").parse_mode(),
        Some(m) => m.parse_mode(),
    }
    .ok_or_else(|| SstError::Constraint {
        key: "gan.loss_mode".into(),
        reason: "must be `minimax` or `non_saturating`".into(),
    })?;
    let channels = match s.opt_usize_list("channels")? {
        Some(c) => c,
        None => {
            s.logged("channels", format!("{:?}", d.arch.channels));
            d.arch.channels.clone()
        }
    };
    let out = GanConfig {
        arch: GanArch {
            latent_dim: s.usize_or("latent_dim", d.arch.latent_dim)?,
            grid_h: scenario.height,
            grid_w: scenario.width,
            channels,
        },
        epochs: s.usize_or("epochs", d.epochs)?,
        minibatch: s.usize_or("minibatch", d.minibatch)?,
        lr_g: s.f64_or("lr_g", d.lr_g)?,
        lr_d: s.f64_or("lr_d", d.lr_d)?,
        beta1: s.f64_or("beta1", d.beta1)?,
        beta2: s.f64_or("beta2", d.beta2)?,
        loss_mode,
        seed: s.u64_or("seed", d.seed)?,
    };
    s.finish()?;
    Ok(out)
}

trait ParseMode {
    fn parse_mode(&self) -> Option<GeneratorLossMode>;
}

impl ParseMode for str {
    fn parse_mode(&self) -> Option<GeneratorLossMode> {
        match self {
            "minimax" => Some(GeneratorLossMode::Minimax),
            "non_saturating" => Some(GeneratorLossMode::NonSaturating),
            _ => None,
        }
    }
}

fn parse_encoder(sec: Option<Section>) -> Result<EncoderConfig> {
    let mut s = sec.unwrap_or_else(|| empty("encoder"));
    let d = desk_encoder();
    let out = EncoderConfig {
        lambda_adv: s.f64_or("lambda_adv", d.lambda_adv)?,
        lambda_vgg: s.f64_or("lambda_vgg", d.lambda_vgg)?,
        gamma: s.f64_or("gamma", d.gamma)?,
        epochs: s.usize_or("epochs", d.epochs)?,
        minibatch: s.usize_or("minibatch", d.minibatch)?,
        lr_e: s.f64_or("lr_e", d.lr_e)?,
        lr_d: s.f64_or("lr_d", d.lr_d)?,
        beta1: s.f64_or("beta1", d.beta1)?,
        beta2: s.f64_or("beta2", d.beta2)?,
        reuse_pretrained_d: s.bool_or("reuse_pretrained_d", d.reuse_pretrained_d)?,
        perceptual_seed: s.u64_or("perceptual_seed", d.perceptual_seed)?,
        seed: s.u64_or("seed", d.seed)?,
    };
    s.finish()?;
    Ok(out)
}

fn one_of(s: &mut Section, list: &str, scalar: &str) -> Result<Option<Vec<usize>>> {
    let many = s.opt_usize_list(list)?;
    let one = s.opt_u64(scalar)?;
    match (many, one) {
        (Some(_), Some(_)) => Err(SstError::Constraint {
            key: s.qualified(scalar),
            reason: format!("give either `{list}` or `{scalar}`, not both"),
        }),
        (Some(v), None) => Ok(Some(v)),
        (None, Some(v)) => Ok(Some(vec![v as usize])),
        (None, None) => Ok(None),
    }
}

fn parse_predictor(sec: Option<Section>) -> Result<Vec<PredictorConfig>> {
    let mut s = sec.unwrap_or_else(|| empty("predictor"));
    let horizons = match one_of(&mut s, "horizons", "horizon")? {
        Some(h) => h,
        None => {
            s.logged("horizons", format!("{HORIZONS:?}"));
            HORIZONS.to_vec()
        }
    };
    if horizons.is_empty() {
        return Err(SstError::Constraint {
            key: "predictor.horizons".into(),
            reason: "need at least one horizon".into(),
        });
    }
    for &h in &horizons {
        if !HORIZONS.contains(&h) {
            return Err(SstError::Constraint {
                key: "predictor.horizons".into(),
                reason: format!("horizon {h} is not one of 1, 3, 7"),
            });
        }
    }
    let lookbacks = match one_of(&mut s, "lookbacks", "lookback")? {
        Some(l) if l.len() != horizons.len() => {
            return Err(SstError::Constraint {
                key: "predictor.lookbacks".into(),
                reason: format!("{} lookbacks for {} horizons", l.len(), horizons.len()),
            })
        }
        Some(l) => l,
        None => horizons
            .iter()
            .map(|&h| {
                let t = default_lookback(h).expect("checked horizon");
                info!("config: lookback for horizon {h} not set, using default {t}");
                t
            })
            .collect(),
    };
    let d = desk_predictor(horizons[0]);
    let layers = s.usize_or("layers", d.layers)?;
    let hidden_channels = s.usize_or("hidden_channels", d.hidden_channels)?;
    let kernel = s.usize_or("kernel", d.kernel)?;
    let epochs = s.usize_or("epochs", d.epochs)?;
    let minibatch = s.usize_or("minibatch", d.minibatch)?;
    let lr = s.f64_or("lr", d.lr)?;
    let beta1 = s.f64_or("beta1", d.beta1)?;
    let beta2 = s.f64_or("beta2", d.beta2)?;
    let seed = s.u64_or("seed", d.seed)?;
    s.finish()?;
    Ok(horizons
        .iter()
        .zip(lookbacks)
        .map(|(&horizon, lookback)| PredictorConfig {
            lookback,
            horizon,
            layers,
            hidden_channels,
            kernel,
            epochs,
            minibatch,
            lr,
            beta1,
            beta2,
            seed,
        })
        .collect())
}

fn parse_eval(sec: Option<Section>) -> Result<EvalConfig> {
    let mut s = sec.unwrap_or_else(|| empty("eval"));
    let d = EvalConfig::default();
    let run_id = match s.opt_str("run_id")? {
        Some(r) => r,
        None => s.logged("run_id", d.run_id.clone()),
    };
    let out = EvalConfig {
        train_fraction: s.f64_or("train_fraction", d.train_fraction)?,
        scatter_stride: s.usize_or("scatter_stride", d.scatter_stride)?,
        ablation_seeds: s.usize_or("ablation_seeds", d.ablation_seeds)?,
        run_id,
    };
    s.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.gan.arch.latent_dim, 512);
    }

    #[test]
    fn horizon_three_gets_lookback_seven() {
        let cfg = RunConfig::parse_str("[predictor]\nhorizon = 3\n").unwrap();
        assert_eq!(cfg.tasks.len(), 1);
        assert_eq!((cfg.tasks[0].horizon, cfg.tasks[0].lookback), (3, 7));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(4);
        cfg.data = Some(DataPaths {
            truth: "a/t.sstb".into(),
            model: "a/m.sstb".into(),
        });
        cfg.seed = None;
        assert_eq!(RunConfig::parse_str(&cfg.to_toml()).unwrap(), cfg);
    }
}
