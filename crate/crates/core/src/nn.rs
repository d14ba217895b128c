//! Layer initialisation, batching helpers and training logs shared by the
//! adversarial, inversion and forecasting stages.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sst_autograd::{Tape, Tensor, Var};

use crate::error::{Result, SstError};
use crate::grid::{Grid, Mask, SpaceTag, SstSeries};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
    )
}

/// He-style initialisation for a `[Co, Ci, k, k]` kernel.
pub fn conv_kernel(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let fan_in = (c_in * k * k) as f64;
    gaussian(rng, &[c_out, c_in, k, k], (2.0 / fan_in).sqrt())
}

/// `[in, out]` dense weights scaled by `gain / sqrt(in)`.
pub fn dense(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize, gain: f64) -> Tensor {
    gaussian(rng, &[n_in, n_out], gain / (n_in as f64).sqrt())
}

/// `[B, C, H, W] · mask` with the mask broadcast over batch and channels.
pub fn apply_mask<'t>(x: Var<'t>, mask: &Tensor) -> Var<'t> {
    let shape = x.shape();
    let plane = shape[2] * shape[3];
    assert_eq!(mask.len(), plane, "mask does not match raster");
    let m = x.tape().var(mask.clone()).broadcast(shape[0] * shape[1], 1, &shape);
    x.mul(m)
}

/// Per-sample `‖a − b‖₂ / sqrt(n_ocean)` over ocean pixels, as a `[B]` vector.
pub fn masked_frame_l2<'t>(a: Var<'t>, b: Var<'t>, mask: &Tensor) -> Var<'t> {
    let n_ocean = mask.sum();
    assert!(n_ocean > 0.0, "empty ocean mask");
    apply_mask(a.sub(b), mask)
        .square()
        .sum_per_row()
        .scale(1.0 / n_ocean)
        .sqrt()
}

pub fn mask_tensor(mask: &Mask) -> Tensor {
    Tensor::new(
        vec![mask.len()],
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )
}

/// Stacks normalized frames into a `[N, 1, H, W]` tensor.
pub fn series_tensor(series: &SstSeries) -> Result<Tensor> {
    if series.space() != SpaceTag::Normalized {
        return Err(SstError::NotNormalized);
    }
    let (h, w) = (series.height(), series.width());
    let mut data = Vec::with_capacity(series.len() * h * w);
    for f in series.frames() {
        data.extend(f.values().iter().copied());
    }
    Ok(Tensor::new(vec![series.len(), 1, h, w], data))
}

/// Gathers frames `idx` of an `[N, ...]` tensor into a new batch.
pub fn gather(data: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = data.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        out.extend_from_slice(&data.data()[i * per..(i + 1) * per]);
    }
    let mut shape = data.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, out)
}

/// Splits a `[B, 1, H, W]` tensor back into normalized grids.
pub fn tensor_to_grids(t: &Tensor, mask: &std::sync::Arc<Mask>) -> Result<Vec<Grid>> {
    let (h, w) = mask.dim();
    t.data()
        .chunks_exact(h * w)
        .map(|c| {
            let values = ndarray::Array2::from_shape_vec((h, w), c.to_vec()).expect("frame size");
            Grid::new(values, mask.clone(), SpaceTag::Normalized)
        })
        .collect()
}

/// Shuffled minibatches of `0..n`; the final short batch is kept.
pub fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

pub fn grads_to_tensors(grads: &[Var<'_>]) -> Vec<Tensor> {
    grads.iter().map(|g| (*g.value()).clone()).collect()
}

pub fn with_tape<T>(f: impl FnOnce(&Tape) -> T) -> T {
    let tape = Tape::new();
    f(&tape)
}

/// Per-epoch scalar columns recorded during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainLog {
    pub fn new(columns: &[&str]) -> Self {
        TrainLog {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "log row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("epoch,{}\n", self.columns.join(","));
        for (e, row) in self.rows.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            s.push_str(&format!("{e},{}\n", vals.join(",")));
        }
        s
    }
}

/// Running mean of per-batch losses.
#[derive(Clone, Debug, Default)]
pub struct Mean {
    sum: Vec<f64>,
    count: usize,
}

impl Mean {
    pub fn new(width: usize) -> Self {
        Mean {
            sum: vec![0.0; width],
            count: 0,
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v;
        }
        self.count += 1;
    }

    pub fn finish(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count.max(1) as f64).collect()
    }
}

/// Fails with a divergence error when any value is non-finite.
pub fn ensure_finite(stage: &'static str, epoch: usize, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SstError::Divergence { stage, epoch })
    }
}
