use super::EmaTrajectory;
use crate::error::{Error, Result};

/// Longest run of missing samples that is bridged by interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 5;

/// Fills short NaN runs by linear interpolation (edge runs copy the nearest
/// valid sample). A run longer than [`MAX_INTERPOLATED_GAP`] rejects the
/// whole trajectory; callers drop the utterance.
pub fn clean_trajectory(ema: &EmaTrajectory) -> Result<EmaTrajectory> {
    let mut out = ema.clone();
    let t_len = ema.frames();
    for (c, name) in ema.channels.iter().enumerate() {
        let col = ema.data.column(c);
        let mut t = 0;
        while t < t_len {
            if col[t].is_finite() {
                t += 1;
                continue;
            }
            let start = t;
            while t < t_len && !col[t].is_finite() {
                t += 1;
            }
            let len = t - start;
            if len > MAX_INTERPOLATED_GAP {
                return Err(Error::Data(format!(
                    "channel {name}: {len} consecutive missing frames at {start}"
                )));
            }
            let left = start.checked_sub(1).map(|i| col[i]);
            let right = (t < t_len).then(|| col[t]);
            for k in start..t {
                let v = match (left, right) {
                    (Some(a), Some(b)) => {
                        let w = (k + 1 - start) as f32 / (len + 1) as f32;
                        a + w * (b - a)
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => {
                        return Err(Error::Data(format!("channel {name} has no valid samples")))
                    }
                };
                out.data[[k, c]] = v;
            }
        }
    }
    out.nan_mask.fill(true);
    Ok(out)
}
