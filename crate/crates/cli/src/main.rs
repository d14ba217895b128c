use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn, LevelFilter};

use sst_core::ablation::{ablation_csv, lookback_sweep, run_ablation, run_ablation_suite, sweep_csv, Scheme};
use sst_core::config::RunConfig;
use sst_core::encoder::train_encoder;
use sst_core::eval::report_for_series;
use sst_core::gan::train_gan;
use sst_core::grid::{compute_norm_stats, denormalize, normalize, train_len, NormStats, SpaceTag, SstSeries};
use sst_core::pipeline::{
    load_gan_ckpt, load_prior, rerun_from_manifest, run_pipeline, save_encoder_ckpt, save_gan_ckpt, write_json, RunDir,
    Stage,
};
use sst_core::predictor::{predict, train_predictor, Predictor, HORIZONS};
use sst_core::sstb::{load_series, save_series};
use sst_core::synthetic::generate_pair;

#[derive(Parser, Debug)]
#[command(name = "sst", version, about = "SST bias correction and forecasting experiments")]
struct Cli {
    /// Root seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base directory for relative output paths and pipeline runs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic truth/model pair.
    MakeSynthetic {
        /// Config file holding the `[scenario]` section; defaults to `--config`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out_truth: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Train the generator and discriminator on observed data.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the inversion encoder against a frozen generator.
    TrainEncoder {
        #[arg(long)]
        gan_ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correct a numerical-model series with the prior network.
    Enhance {
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long)]
        gan_ckpt: PathBuf,
        #[arg(long)]
        model_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a ConvLSTM forecaster.
    TrainPredictor {
        #[arg(long)]
        data: PathBuf,
        /// Horizon task from the config; the first task when omitted.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast `horizon` days starting at `day`.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        day: i64,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted series against truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare pipeline orderings across seeds.
    Ablation {
        /// full, a or b; all schemes plus the raw-data baseline when omitted.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Config file holding the scenario; defaults to `--config`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Number of seeds, counting up from `--seed` (0 when unset).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage, or only the listed ones, into a run directory.
    RunPipeline {
        #[arg(long = "stage")]
        stages: Vec<Stage>,
        /// Reproduce the run recorded in this manifest.
        #[arg(long, conflicts_with_all = ["stages"])]
        manifest: Option<PathBuf>,
    },
    /// Train and score predictors over a grid of lookbacks on a finished run.
    LookbackSweep {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeSynthetic { .. } => "make-synthetic",
            Command::TrainGan { .. } => "train-gan",
            Command::TrainEncoder { .. } => "train-encoder",
            Command::Enhance { .. } => "enhance",
            Command::TrainPredictor { .. } => "train-predictor",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablation { .. } => "ablation",
            Command::RunPipeline { .. } => "run-pipeline",
            Command::LookbackSweep { .. } => "lookback-sweep",
        }
    }
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    fn load_config(&self, path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path.or(self.config.as_deref()) {
            Some(p) => RunConfig::parse_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.apply_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Normalized copy of `s`, using `stats` when `s` is in physical units.
fn to_normalized(s: SstSeries, stats: Option<NormStats>) -> Result<SstSeries> {
    match s.space() {
        SpaceTag::Normalized => Ok(s),
        SpaceTag::PhysicalCelsius => {
            let stats = match stats {
                Some(st) => st,
                None => {
                    let st = compute_norm_stats(&s)?;
                    info!("normalizing with the series' own stats mu {:.4} sigma {:.4}", st.mu, st.sigma);
                    st
                }
            };
            Ok(normalize(&s, stats)?)
        }
    }
}

fn to_physical(s: SstSeries) -> Result<SstSeries> {
    match (s.space(), s.norm_stats()) {
        (SpaceTag::PhysicalCelsius, _) => Ok(s),
        (SpaceTag::Normalized, Some(st)) => Ok(denormalize(&s, st)?),
        (SpaceTag::Normalized, None) => bail!("normalized series carries no stats"),
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::MakeSynthetic {
            scenario,
            out_truth,
            out_model,
        } => {
            let cfg = ctx.load_config(scenario.as_deref())?;
            let (truth, model) = generate_pair(&cfg.scenario)?;
            save_series(&truth, &ctx.out(&out_truth))?;
            save_series(&model, &ctx.out(&out_model))?;
            info!("wrote {} days of {}x{}", truth.len(), truth.height(), truth.width());
        }
        Command::TrainGan { data, out } => {
            let cfg = ctx.load_config(None)?;
            let observed = to_normalized(load_series(&data)?, None)?;
            let (g, d, log) = train_gan(&observed, &cfg.gan)?;
            let out = ctx.out(&out);
            save_gan_ckpt(&out, &g, &d, observed.norm_stats())?;
            std::fs::write(out.join("train_log.csv"), log.to_csv())?;
        }
        Command::TrainEncoder { gan_ckpt, data, out } => {
            let cfg = ctx.load_config(None)?;
            let (g, d, stats) = load_gan_ckpt(&gan_ckpt)?;
            let observed = to_normalized(load_series(&data)?, stats)?;
            let d = cfg.encoder.reuse_pretrained_d.then_some(d);
            let (e, d_inv, log) = train_encoder(&g, d.as_ref(), &observed, &cfg.encoder)?;
            let out = ctx.out(&out);
            save_encoder_ckpt(&out, &e, &d_inv)?;
            std::fs::write(out.join("train_log.csv"), log.to_csv())?;
        }
        Command::Enhance {
            encoder_ckpt,
            gan_ckpt,
            model_data,
            out,
        } => {
            let prior = load_prior(&encoder_ckpt, &gan_ckpt)?;
            let (_, _, stats) = load_gan_ckpt(&gan_ckpt)?;
            let model = load_series(&model_data)?;
            let physical = model.space() == SpaceTag::PhysicalCelsius;
            if physical && stats.is_none() {
                warn!("GAN checkpoint records no normalization; using the model series' own stats");
            }
            let enhanced = prior.enhance(&to_normalized(model, stats)?)?;
            let enhanced = if physical { to_physical(enhanced)? } else { enhanced };
            save_series(&enhanced, &ctx.out(&out))?;
        }
        Command::TrainPredictor { data, horizon, out } => {
            let cfg = ctx.load_config(None)?;
            let task = match horizon {
                None => cfg.tasks[0].clone(),
                Some(h) => cfg
                    .tasks
                    .iter()
                    .find(|t| t.horizon == h)
                    .cloned()
                    .with_context(|| format!("config has no task for horizon {h}"))?,
            };
            let ph = to_normalized(load_series(&data)?, None)?;
            let (model, log) = train_predictor(&ph, &task)?;
            let out = ctx.out(&out);
            model.save(&out)?;
            std::fs::write(out.join("train_log.csv"), log.to_csv())?;
        }
        Command::Predict {
            ckpt,
            data,
            day,
            horizon,
            out,
        } => {
            if !HORIZONS.contains(&horizon) {
                bail!("horizon must be one of {HORIZONS:?}");
            }
            let model = Predictor::load(&ckpt)?;
            let stats = model.arch().norm_stats;
            let series = to_normalized(load_series(&data)?, stats)?;
            let frames = predict(&model, &series, day, horizon)?;
            let days = (day..day + horizon as i64).collect();
            save_series(&SstSeries::new(frames, days)?, &ctx.out(&out))?;
        }
        Command::Evaluate { pred, truth, out } => {
            let cfg = ctx.load_config(None)?;
            let pred = to_physical(load_series(&pred)?)?;
            let truth = to_physical(load_series(&truth)?)?;
            let report = report_for_series(&pred, &truth, &cfg.eval.run_id)?;
            println!("rmse_celsius {:.6} r2 {:.6}", report.rmse_celsius, report.r2);
            write_json(&ctx.out(&out), &report)?;
        }
        Command::Ablation {
            scheme,
            scenario,
            seeds,
            out,
        } => {
            let cfg = ctx.load_config(scenario.as_deref())?;
            let n = seeds.unwrap_or(cfg.eval.ablation_seeds);
            let base = ctx.seed.unwrap_or(0);
            let seed_list: Vec<u64> = (base..base + n as u64).collect();
            let rows = match scheme {
                Some(s) => vec![run_ablation(s, &cfg.ablation(), &seed_list)?],
                None => run_ablation_suite(&cfg.ablation(), &seed_list)?,
            };
            for r in &rows {
                println!("{:<9} rmse {:.4} ± {:.4}", r.scheme, r.mean_rmse, r.std_rmse);
            }
            write_out(&ctx.out(&out), &ablation_csv(&rows))?;
        }
        Command::RunPipeline { stages, manifest } => {
            let cfg = ctx.load_config(None)?;
            let dir = ctx.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.eval.run_id));
            let m = match manifest {
                Some(m) => rerun_from_manifest(&m, &dir)?,
                None => run_pipeline(&cfg, &dir, (!stages.is_empty()).then_some(&stages[..]))?,
            };
            println!("run directory {} (config {})", dir.display(), &m.config_sha256[..12]);
        }
        Command::LookbackSweep { run_dir, out } => {
            let dir = RunDir::new(&run_dir);
            let cfg = ctx.load_config(Some(&dir.config()))?;
            let ph = load_series(&dir.data("enhanced_norm"))?;
            let truth = load_series(&dir.data("truth"))?;
            let test_start = train_len(ph.len(), cfg.eval.train_fraction);
            let rows = lookback_sweep(&ph, &truth, test_start, &cfg.tasks[0])?;
            write_out(&ctx.out(&out), &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
    };
    let name = cli.command.name();
    match dispatch(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<sst_core::SstError>().is_some_and(|s| matches!(s, sst_core::SstError::Stage { .. })) {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("error: stage `{name}` failed: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
