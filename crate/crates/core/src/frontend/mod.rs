//! Acoustic and articulatory front-end: MFCC(+Δ+ΔΔ) extraction, EMA
//! smoothing and resampling, stream alignment and z-normalisation.

mod align;
mod deltas;
mod filter;
mod mfcc;
mod norm;

use std::path::Path;

use ndarray::Array2;

pub use align::{align_frames, resample_ema, MAX_ALIGN_MISMATCH};
pub use deltas::{append_deltas, regression_delta};
pub use filter::{lowpass_ema, Butterworth2};
pub use mfcc::{compute_mfcc, hz_to_mel, mel_filterbank, mel_to_hz, MfccConfig};
pub use norm::{zscore_apply, zscore_fit, zscore_unapply, NormalizationStats, StatsScope, STD_FLOOR};

use crate::container::Container;
use crate::corpus::{EmaTrajectory, Utterance};
use crate::error::{Error, Result};

/// Frame-level acoustic features, rows are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatures {
    pub data: Array2<f64>,
    pub frame_rate_hz: f64,
    pub feature_names: Vec<String>,
}

impl AcousticFeatures {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite acoustic feature".into()))
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("features");
        c.set("frame_rate", self.frame_rate_hz)
            .set("feature_names", self.feature_names.join(","));
        c.push_f32(
            "features",
            self.frames(),
            self.dim(),
            self.data.iter().map(|&v| v as f32).collect(),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "features" {
            return Err(Error::Data(format!("expected a feature file, found kind `{}`", c.kind)));
        }
        let b = c.block("features")?;
        let data = Array2::from_shape_vec((b.rows, b.cols), b.data.to_f64())
            .map_err(|e| Error::Data(e.to_string()))?;
        Ok(AcousticFeatures {
            data,
            frame_rate_hz: c.get_parsed("frame_rate")?,
            feature_names: c.get("feature_names")?.split(',').map(str::to_string).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub mfcc: MfccConfig,
    pub deltas: bool,
    /// EMA low-pass cutoff; `None` disables filtering.
    pub ema_cutoff_hz: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            mfcc: MfccConfig::default(),
            deltas: true,
            ema_cutoff_hz: Some(20.0),
        }
    }
}

impl FrontendConfig {
    pub fn feature_dim(&self) -> usize {
        self.mfcc.n_cepstra * if self.deltas { 3 } else { 1 }
    }
}

/// Audio features for an utterance (no EMA involved).
pub fn acoustic_features(audio: &crate::corpus::Audio, cfg: &FrontendConfig) -> Result<AcousticFeatures> {
    let f = compute_mfcc(&audio.samples, audio.rate_hz, &cfg.mfcc)?;
    if cfg.deltas {
        append_deltas(&f)
    } else {
        Ok(f)
    }
}

/// Full per-utterance front-end: features plus filtered, aligned EMA.
pub fn process_utterance(utt: &Utterance, cfg: &FrontendConfig) -> Result<(AcousticFeatures, EmaTrajectory)> {
    utt.check_durations()?;
    let feats = acoustic_features(&utt.audio, cfg)?;
    let ema = match cfg.ema_cutoff_hz {
        Some(cut) => lowpass_ema(&utt.ema, cut)?,
        None => utt.ema.clone(),
    };
    align_frames(&feats, &ema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_cache_round_trip() {
        let f = AcousticFeatures {
            data: Array2::from_shape_fn((3, 2), |(t, c)| (t as f64) - 0.5 * c as f64),
            frame_rate_hz: 100.0,
            feature_names: vec!["a".into(), "b".into()],
        };
        let back = AcousticFeatures::from_container(&f.to_container()).unwrap();
        assert_eq!(back, f);
    }
}
