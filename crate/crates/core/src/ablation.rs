//! Ablation schemes and the lookback sweep, run on a synthetic scenario.
//!
//! * `full`: enhance the model data, then train and forecast on it.
//! * `scheme_a`: train and forecast on raw model data, then enhance the forecasts.
//! * `scheme_b`: as `full`, but the prior skips adversarial pretraining: a
//!   randomly initialized generator stays frozen while the encoder and the
//!   critic are trained from scratch.
//!
//! The raw-data predictor of `scheme_a`, scored without enhancement, is
//! reported alongside as `tra_nm`.

use std::fmt::Write as _;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::encoder::{train_encoder, EncoderConfig};
use crate::error::{Result, SstError};
use crate::eval::{evaluate_forecasts, test_origins};
use crate::gan::{train_gan, GanConfig, Generator};
use crate::grid::{compute_norm_stats, normalize, train_len, NormStats, SstSeries};
use crate::metrics::MetricsReport;
use crate::predictor::{default_lookback, train_predictor, PredictorConfig};
use crate::prior::PriorNetwork;
use crate::synthetic::{generate_pair, SyntheticScenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Full,
    SchemeA,
    SchemeB,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Full, Scheme::SchemeA, Scheme::SchemeB];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Full => "full",
            Scheme::SchemeA => "scheme_a",
            Scheme::SchemeB => "scheme_b",
        }
    }
}

impl FromStr for Scheme {
    type Err = SstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scheme::Full),
            "a" | "scheme_a" => Ok(Scheme::SchemeA),
            "b" | "scheme_b" => Ok(Scheme::SchemeB),
            other => Err(SstError::UnknownScheme(other.to_string())),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one ablation run needs besides the seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub scenario: SyntheticScenario,
    pub gan: GanConfig,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub train_fraction: f64,
}

/// Component seeds derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub gan: u64,
    pub encoder: u64,
    pub predictor: u64,
}

impl SeedPlan {
    pub fn derive(seed: u64) -> Self {
        let base = seed.wrapping_mul(1000);
        SeedPlan {
            gan: base.wrapping_add(11),
            encoder: base.wrapping_add(22),
            predictor: base.wrapping_add(33),
        }
    }
}

/// Truth and model series prepared for training and scoring.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub truth: SstSeries,
    pub model: SstSeries,
    pub stats: NormStats,
    pub truth_train: SstSeries,
    pub model_norm: SstSeries,
    pub test_start: usize,
}

impl Prepared {
    /// Stats come from the truth training split and normalize both series.
    pub fn new(truth: SstSeries, model: SstSeries, train_fraction: f64) -> Result<Self> {
        let test_start = train_len(truth.len(), train_fraction);
        let stats = compute_norm_stats(&truth.slice(0..test_start)?)?;
        let truth_train = normalize(&truth.slice(0..test_start)?, stats)?;
        let model_norm = normalize(&model, stats)?;
        Ok(Prepared {
            truth,
            model,
            stats,
            truth_train,
            model_norm,
            test_start,
        })
    }

    pub fn from_scenario(s: &SyntheticScenario, train_fraction: f64) -> Result<Self> {
        let (truth, model) = generate_pair(s)?;
        Prepared::new(truth, model, train_fraction)
    }
}

fn forecast_report(
    prep: &Prepared,
    inputs: &SstSeries,
    cfg: &PredictorConfig,
    post: Option<&PriorNetwork>,
    run_id: &str,
) -> Result<MetricsReport> {
    let (model, _) = train_predictor(&inputs.slice(0..prep.test_start)?, cfg)?;
    let origins = test_origins(inputs.len(), prep.test_start, cfg.horizon);
    Ok(evaluate_forecasts(&model, inputs, &prep.truth, &origins, cfg.horizon, post, run_id)?.report)
}

fn trained_prior(prep: &Prepared, cfg: &AblationConfig, plan: SeedPlan) -> Result<PriorNetwork> {
    let gan_cfg = GanConfig { seed: plan.gan, ..cfg.gan.clone() };
    let (g, d, _) = train_gan(&prep.truth_train, &gan_cfg)?;
    let enc_cfg = EncoderConfig { seed: plan.encoder, ..cfg.encoder.clone() };
    let (e, _, _) = train_encoder(&g, Some(&d), &prep.truth_train, &enc_cfg)?;
    PriorNetwork::new(e, g)
}

fn untrained_prior(prep: &Prepared, cfg: &AblationConfig, plan: SeedPlan) -> Result<PriorNetwork> {
    let g = Generator::init(&cfg.gan.arch, plan.gan.wrapping_add(101))?;
    let enc_cfg = EncoderConfig {
        seed: plan.encoder,
        reuse_pretrained_d: false,
        ..cfg.encoder.clone()
    };
    let (e, _, _) = train_encoder(&g, None, &prep.truth_train, &enc_cfg)?;
    PriorNetwork::new(e, g)
}

/// Per-seed reports for every scheme plus the raw-data baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub full: MetricsReport,
    pub scheme_a: MetricsReport,
    pub scheme_b: MetricsReport,
    pub tra_nm: MetricsReport,
}

/// Runs all schemes for one seed, sharing the trained prior between `full`
/// and `scheme_a` and the raw-data predictor between `scheme_a` and `tra_nm`.
pub fn run_seed(prep: &Prepared, cfg: &AblationConfig, seed: u64) -> Result<SeedOutcome> {
    let plan = SeedPlan::derive(seed);
    let pred_cfg = PredictorConfig { seed: plan.predictor, ..cfg.predictor.clone() };
    let prior = trained_prior(prep, cfg, plan)?;
    let ph = prior.enhance(&prep.model_norm)?;
    let full = forecast_report(prep, &ph, &pred_cfg, None, &format!("full-seed{seed}"))?;

    let (raw_model, _) = train_predictor(&prep.model_norm.slice(0..prep.test_start)?, &pred_cfg)?;
    let origins = test_origins(prep.model_norm.len(), prep.test_start, pred_cfg.horizon);
    let score = |post: Option<&PriorNetwork>, id: &str| {
        evaluate_forecasts(&raw_model, &prep.model_norm, &prep.truth, &origins, pred_cfg.horizon, post, id)
            .map(|e| e.report)
    };
    let scheme_a = score(Some(&prior), &format!("scheme_a-seed{seed}"))?;
    let tra_nm = score(None, &format!("tra_nm-seed{seed}"))?;

    let prior_b = untrained_prior(prep, cfg, plan)?;
    let ph_b = prior_b.enhance(&prep.model_norm)?;
    let scheme_b = forecast_report(prep, &ph_b, &pred_cfg, None, &format!("scheme_b-seed{seed}"))?;
    info!(
        "seed {seed}: full {:.4} scheme_a {:.4} scheme_b {:.4} tra_nm {:.4}",
        full.rmse_celsius, scheme_a.rmse_celsius, scheme_b.rmse_celsius, tra_nm.rmse_celsius
    );
    Ok(SeedOutcome {
        seed,
        full,
        scheme_a,
        scheme_b,
        tra_nm,
    })
}

/// One scheme for one seed.
pub fn run_scheme(prep: &Prepared, cfg: &AblationConfig, scheme: Scheme, seed: u64) -> Result<MetricsReport> {
    let plan = SeedPlan::derive(seed);
    let pred_cfg = PredictorConfig { seed: plan.predictor, ..cfg.predictor.clone() };
    let id = format!("{scheme}-seed{seed}");
    match scheme {
        Scheme::Full => {
            let prior = trained_prior(prep, cfg, plan)?;
            forecast_report(prep, &prior.enhance(&prep.model_norm)?, &pred_cfg, None, &id)
        }
        Scheme::SchemeA => {
            let prior = trained_prior(prep, cfg, plan)?;
            forecast_report(prep, &prep.model_norm, &pred_cfg, Some(&prior), &id)
        }
        Scheme::SchemeB => {
            let prior = untrained_prior(prep, cfg, plan)?;
            forecast_report(prep, &prior.enhance(&prep.model_norm)?, &pred_cfg, None, &id)
        }
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub per_seed: Vec<MetricsReport>,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_r2: f64,
    pub std_r2: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SchemeSummary {
    pub fn new(scheme: &str, per_seed: Vec<MetricsReport>) -> Self {
        let rmse: Vec<f64> = per_seed.iter().map(|r| r.rmse_celsius).collect();
        let r2: Vec<f64> = per_seed.iter().map(|r| r.r2).collect();
        let (mean_rmse, std_rmse) = mean_std(&rmse);
        let (mean_r2, std_r2) = mean_std(&r2);
        SchemeSummary {
            scheme: scheme.to_string(),
            per_seed,
            mean_rmse,
            std_rmse,
            mean_r2,
            std_r2,
        }
    }
}

pub fn run_ablation(scheme: Scheme, cfg: &AblationConfig, seeds: &[u64]) -> Result<SchemeSummary> {
    let prep = Prepared::from_scenario(&cfg.scenario, cfg.train_fraction)?;
    let reports = seeds
        .iter()
        .map(|&s| run_scheme(&prep, cfg, scheme, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(SchemeSummary::new(scheme.name(), reports))
}

/// All three schemes plus `tra_nm`, each summarized over `seeds`.
pub fn run_ablation_suite(cfg: &AblationConfig, seeds: &[u64]) -> Result<Vec<SchemeSummary>> {
    let prep = Prepared::from_scenario(&cfg.scenario, cfg.train_fraction)?;
    let outcomes = seeds
        .iter()
        .map(|&s| run_seed(&prep, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&SeedOutcome) -> &MetricsReport| outcomes.iter().map(|o| f(o).clone()).collect();
    Ok(vec![
        SchemeSummary::new("full", pick(|o| &o.full)),
        SchemeSummary::new("scheme_a", pick(|o| &o.scheme_a)),
        SchemeSummary::new("scheme_b", pick(|o| &o.scheme_b)),
        SchemeSummary::new("tra_nm", pick(|o| &o.tra_nm)),
    ])
}

pub fn ablation_csv(rows: &[SchemeSummary]) -> String {
    let mut s = String::from("scheme,seeds,mean_rmse_celsius,std_rmse_celsius,mean_r2,std_r2,per_seed_rmse\n");
    for r in rows {
        let per: Vec<String> = r.per_seed.iter().map(|m| format!("{:.6}", m.rmse_celsius)).collect();
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.scheme,
            r.per_seed.len(),
            r.mean_rmse,
            r.std_rmse,
            r.mean_r2,
            r.std_r2,
            per.join(";")
        )
        .expect("string write");
    }
    s
}

/// Lookbacks compared for each horizon.
pub const SWEEP: [(usize, [usize; 3]); 3] = [(1, [1, 3, 5]), (3, [3, 5, 7]), (7, [7, 9, 10])];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub lookback: usize,
    pub rmse_celsius: f64,
    pub r2: f64,
    /// Whether this lookback is the default for its horizon.
    pub default: bool,
}

/// Trains one predictor per (horizon, lookback) cell of [`SWEEP`] on the
/// training part of `ph` and scores it on the test part against `truth`.
pub fn lookback_sweep(ph: &SstSeries, truth: &SstSeries, test_start: usize, base: &PredictorConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (horizon, lookbacks) in SWEEP {
        for lookback in lookbacks {
            let cfg = PredictorConfig { horizon, lookback, ..base.clone() };
            let (model, _) = train_predictor(&ph.slice(0..test_start)?, &cfg)?;
            let origins = test_origins(ph.len(), test_start, horizon);
            let id = format!("sweep-h{horizon}-t{lookback}");
            let r = evaluate_forecasts(&model, ph, truth, &origins, horizon, None, &id)?.report;
            info!("sweep horizon {horizon} lookback {lookback}: rmse {:.4}", r.rmse_celsius);
            rows.push(SweepRow {
                horizon,
                lookback,
                rmse_celsius: r.rmse_celsius,
                r2: r.r2,
                default: default_lookback(horizon) == Some(lookback),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("horizon,lookback,rmse_celsius,r2,default\n");
    for r in rows {
        writeln!(s, "{},{},{:.6},{:.6},{}", r.horizon, r.lookback, r.rmse_celsius, r.r2, r.default)
            .expect("string write");
    }
    s
}
