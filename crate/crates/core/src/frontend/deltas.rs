use ndarray::{concatenate, Array2, Axis};

use super::AcousticFeatures;
use crate::error::{Error, Result};

const DELTA_WINDOW: usize = 2;

/// Regression delta over ±2 frames with edge replication:
/// `Δ_t = Σ_n n (x_{t+n} − x_{t−n}) / (2 Σ_n n²)`.
pub fn regression_delta(x: &Array2<f64>) -> Array2<f64> {
    let t_len = x.nrows();
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros(x.dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for n in 1..=DELTA_WINDOW {
            let ahead = (t + n).min(t_len - 1);
            let behind = t.saturating_sub(n);
            row.scaled_add(n as f64 / norm, &(&x.row(ahead) - &x.row(behind)));
        }
    }
    out
}

/// Appends Δ and ΔΔ blocks: D → 3D columns.
pub fn append_deltas(features: &AcousticFeatures) -> Result<AcousticFeatures> {
    if features.frames() < 5 {
        return Err(Error::Data(format!(
            "delta features need at least 5 frames, got {}",
            features.frames()
        )));
    }
    let d1 = regression_delta(&features.data);
    let d2 = regression_delta(&d1);
    let data = concatenate(Axis(1), &[features.data.view(), d1.view(), d2.view()]).unwrap();
    let mut names = features.feature_names.clone();
    names.extend(features.feature_names.iter().map(|n| format!("d_{n}")));
    names.extend(features.feature_names.iter().map(|n| format!("dd_{n}")));
    Ok(AcousticFeatures {
        data,
        frame_rate_hz: features.frame_rate_hz,
        feature_names: names,
    })
}
