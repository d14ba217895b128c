//! Frozen encoder + generator composition applied frame by frame to
//! numerical-model fields.

use serde::{Deserialize, Serialize};
use sst_autograd::Tensor;

use crate::encoder::{reconstruct_tensor, Encoder};
use crate::error::{Result, SstError};
use crate::gan::Generator;
use crate::grid::SstSeries;
use crate::metrics;
use crate::nn;

/// Frames pushed through the prior per forward pass.
const CHUNK: usize = 32;

#[derive(Clone, Debug)]
pub struct PriorNetwork {
    encoder: Encoder,
    generator: Generator,
}

impl PriorNetwork {
    pub fn new(encoder: Encoder, generator: Generator) -> Result<Self> {
        if encoder.latent_dim() != generator.arch().latent_dim {
            return Err(SstError::IncompatiblePrior {
                encoder: encoder.latent_dim(),
                generator: generator.arch().latent_dim,
            });
        }
        if encoder.arch().grid_h != generator.arch().grid_h || encoder.arch().grid_w != generator.arch().grid_w {
            return Err(SstError::ShapeMismatch("encoder and generator rasters differ".into()));
        }
        Ok(PriorNetwork { encoder, generator })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// `Ph_i = G(E(x_i))` for every frame; days, mask and stats carried over.
    pub fn enhance(&self, series: &SstSeries) -> Result<SstSeries> {
        let arch = self.generator.arch();
        if (series.height(), series.width()) != (arch.grid_h, arch.grid_w) {
            return Err(SstError::ShapeMismatch(format!(
                "series raster {}x{} vs prior {}x{}",
                series.height(),
                series.width(),
                arch.grid_h,
                arch.grid_w
            )));
        }
        let data = nn::series_tensor(series)?;
        let mask = nn::mask_tensor(series.mask());
        let mut frames = Vec::with_capacity(series.len());
        let idx: Vec<usize> = (0..series.len()).collect();
        for chunk in idx.chunks(CHUNK) {
            let batch: Tensor = nn::gather(&data, chunk);
            let out = reconstruct_tensor(&self.encoder, &self.generator, &batch, &mask);
            frames.extend(nn::tensor_to_grids(&out, series.mask())?);
        }
        series.with_frames(frames)
    }
}

pub fn enhance(e: &Encoder, g: &Generator, model_series: &SstSeries) -> Result<SstSeries> {
    PriorNetwork::new(e.clone(), g.clone())?.enhance(model_series)
}

/// Error of the raw and corrected model fields against truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub model_rmse: f64,
    pub enhanced_rmse: f64,
    /// `1 − enhanced_rmse / model_rmse`.
    pub improvement_ratio: f64,
    pub model_rmse_per_frame: Vec<f64>,
    pub enhanced_rmse_per_frame: Vec<f64>,
}

pub fn enhancement_report(model: &SstSeries, enhanced: &SstSeries, truth: &SstSeries) -> Result<EnhancementReport> {
    let model_rmse = metrics::rmse(model, truth)?;
    let enhanced_rmse = metrics::rmse(enhanced, truth)?;
    let per_frame = |s: &SstSeries| -> Result<Vec<f64>> {
        s.frames()
            .iter()
            .zip(truth.frames())
            .map(|(p, t)| metrics::rmse_frames(std::slice::from_ref(p), std::slice::from_ref(t)))
            .collect()
    };
    let improvement_ratio = if model_rmse == 0.0 {
        if enhanced_rmse == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - enhanced_rmse / model_rmse
    };
    Ok(EnhancementReport {
        model_rmse,
        enhanced_rmse,
        improvement_ratio,
        model_rmse_per_frame: per_frame(model)?,
        enhanced_rmse_per_frame: per_frame(enhanced)?,
    })
}
