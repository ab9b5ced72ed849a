use ndarray::{s, Array2};

use super::AcousticFeatures;
use crate::corpus::EmaTrajectory;
use crate::error::{Error, Result};

/// Largest tolerated relative length difference after resampling.
pub const MAX_ALIGN_MISMATCH: f64 = 0.10;

/// Linear interpolation of every channel onto `k / rate` for all `k` whose
/// time falls within the original trajectory.
pub fn resample_ema(ema: &EmaTrajectory, rate: f64) -> Result<EmaTrajectory> {
    if (ema.rate_hz - rate).abs() < 1e-9 {
        return Ok(ema.clone());
    }
    let last = (ema.frames() - 1) as f64 / ema.rate_hz;
    let n_out = (last * rate + 1e-9).floor() as usize + 1;
    let c = ema.channels.len();
    let mut data = Array2::<f32>::zeros((n_out, c));
    for k in 0..n_out {
        let pos = k as f64 / rate * ema.rate_hz;
        let i0 = (pos.floor() as usize).min(ema.frames() - 1);
        let i1 = (i0 + 1).min(ema.frames() - 1);
        let w = (pos - i0 as f64) as f32;
        for ch in 0..c {
            let (a, b) = (ema.data[[i0, ch]], ema.data[[i1, ch]]);
            data[[k, ch]] = if w == 0.0 { a } else { a + w * (b - a) };
        }
    }
    EmaTrajectory::new(ema.channels.clone(), rate, data)
}

/// Brings EMA to the acoustic frame rate and truncates both streams to the
/// shorter length.
pub fn align_frames(features: &AcousticFeatures, ema: &EmaTrajectory) -> Result<(AcousticFeatures, EmaTrajectory)> {
    let ema = resample_ema(ema, features.frame_rate_hz)?;
    let (tf, te) = (features.frames(), ema.frames());
    let longer = tf.max(te) as f64;
    if (tf as f64 - te as f64).abs() > MAX_ALIGN_MISMATCH * longer {
        return Err(Error::Data(format!(
            "streams disagree after resampling: {tf} feature frames vs {te} EMA frames"
        )));
    }
    let t = tf.min(te);
    let feats = AcousticFeatures {
        data: features.data.slice(s![..t, ..]).to_owned(),
        frame_rate_hz: features.frame_rate_hz,
        feature_names: features.feature_names.clone(),
    };
    let ema = EmaTrajectory::new(ema.channels.clone(), ema.rate_hz, ema.data.slice(s![..t, ..]).to_owned())?;
    Ok((feats, ema))
}
