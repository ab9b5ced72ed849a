//! EMA corpora: trajectories, utterances, manifests, channel taxonomy,
//! scenario splits and the synthetic parallel corpus.

mod channels;
mod clean;
pub mod est;
pub mod interchange;
pub mod manifest;
pub mod splits;
pub mod synth;

use ndarray::Array2;

pub use channels::{select_channels, ChannelMap, ArticulatorBlocks, CANONICAL_CHANNELS, LIP_CHANNELS, TONGUE_CHANNELS};
pub use clean::{clean_trajectory, MAX_INTERPOLATED_GAP};
pub use manifest::{CorpusManifest, UtteranceRef};
pub use splits::{assert_no_leakage, make_splits, ScenarioKind, ScenarioSpec, SplitAssignment, SplitTag};

use crate::error::{Error, Result};

/// Articulator positions over time (mm). Rows are frames, columns channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTrajectory {
    pub channels: Vec<String>,
    pub rate_hz: f64,
    pub data: Array2<f32>,
    /// `true` where the sample is a finite measurement.
    pub nan_mask: Array2<bool>,
}

impl EmaTrajectory {
    pub fn new(channels: Vec<String>, rate_hz: f64, data: Array2<f32>) -> Result<Self> {
        if channels.len() != data.ncols() {
            return Err(Error::shape(
                "EmaTrajectory",
                format!("{} channel names for {} columns", channels.len(), data.ncols()),
            ));
        }
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::Data(format!("EMA rate must be positive, got {rate_hz}")));
        }
        if data.nrows() == 0 {
            return Err(Error::Data("EMA trajectory has no frames".into()));
        }
        let nan_mask = data.mapv(f32::is_finite);
        Ok(EmaTrajectory {
            channels,
            rate_hz,
            data,
            nan_mask,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.rate_hz
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn is_clean(&self) -> bool {
        self.nan_mask.iter().all(|&v| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub rate_hz: u32,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz as f64
    }
}

/// A parallel acoustic/articulatory recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub audio: Audio,
    pub ema: EmaTrajectory,
}

/// Maximum disagreement between audio and EMA durations before alignment.
pub const MAX_DURATION_SKEW_S: f64 = 0.05;

impl Utterance {
    pub fn check_durations(&self) -> Result<()> {
        let skew = (self.audio.duration_s() - self.ema.duration_s()).abs();
        if skew > MAX_DURATION_SKEW_S {
            return Err(Error::Data(format!(
                "utterance {}: audio {:.3}s vs EMA {:.3}s",
                self.id,
                self.audio.duration_s(),
                self.ema.duration_s()
            )));
        }
        Ok(())
    }
}
