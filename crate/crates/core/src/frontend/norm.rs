use ndarray::{Array1, Array2, Axis};

use crate::corpus::SplitTag;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsScope {
    Global,
    PerSpeaker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub scope: StatsScope,
}

impl NormalizationStats {
    pub fn identity(dim: usize, scope: StatsScope) -> Self {
        NormalizationStats {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
            scope,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-column mean and (population) std over all frames of all matrices.
/// The split tag must be training-side; fitting on held-out data is refused.
pub fn zscore_fit(tag: SplitTag, data: &[&Array2<f64>], scope: StatsScope) -> Result<NormalizationStats> {
    if !tag.is_training_side() {
        return Err(Error::Leakage(format!("normalisation statistics fitted on {tag:?} data")));
    }
    let first = data
        .first()
        .ok_or_else(|| Error::Data("no frames to fit normalisation on".into()))?;
    let dim = first.ncols();
    let mut sum = Array1::<f64>::zeros(dim);
    let mut count = 0usize;
    for m in data {
        if m.ncols() != dim {
            return Err(Error::shape("zscore_fit", "feature dimensions differ"));
        }
        sum += &m.sum_axis(Axis(0));
        count += m.nrows();
    }
    if count == 0 {
        return Err(Error::Data("no frames to fit normalisation on".into()));
    }
    let mean = sum / count as f64;
    let mut sq = Array1::<f64>::zeros(dim);
    for m in data {
        let c = *m - &mean.view().insert_axis(Axis(0));
        sq += &c.mapv(|v| v * v).sum_axis(Axis(0));
    }
    let mut std = (sq / count as f64).mapv(f64::sqrt);
    let floored = std.iter().filter(|&&s| s < STD_FLOOR).count();
    if floored > 0 {
        log::warn!("{floored} zero-variance dimension(s); std floored at {STD_FLOOR}");
        std.mapv_inplace(|s| s.max(STD_FLOOR));
    }
    Ok(NormalizationStats { mean, std, scope })
}

pub fn zscore_apply(x: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    (x - &stats.mean.view().insert_axis(Axis(0))) / stats.std.view().insert_axis(Axis(0))
}

pub fn zscore_unapply(z: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    z * &stats.std.view().insert_axis(Axis(0)) + stats.mean.view().insert_axis(Axis(0))
}
