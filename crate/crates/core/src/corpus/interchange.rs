//! One-file-per-utterance interchange format (see [`crate::container`]).
//!
//! Header fields: `id`, `speaker_id`, `audio_rate`, `ema_rate`, `channels`
//! (comma separated), `audio_samples`, `ema_frames`. Payload: the audio
//! samples as a 1-column block followed by the EMA matrix, both `f32`.

use std::path::Path;

use ndarray::Array2;

use super::{Audio, EmaTrajectory, Utterance};
use crate::container::{BlockData, Container};
use crate::error::{Error, Result};

pub const KIND: &str = "utterance";

pub fn to_container(utt: &Utterance) -> Container {
    let mut c = Container::new(KIND);
    c.set("id", &utt.id)
        .set("speaker_id", &utt.speaker_id)
        .set("audio_rate", utt.audio.rate_hz)
        .set("ema_rate", utt.ema.rate_hz)
        .set("channels", utt.ema.channels.join(","))
        .set("audio_samples", utt.audio.samples.len())
        .set("ema_frames", utt.ema.frames());
    c.push_f32("audio", utt.audio.samples.len(), 1, utt.audio.samples.clone());
    c.push_f32(
        "ema",
        utt.ema.frames(),
        utt.ema.channels.len(),
        utt.ema.data.iter().copied().collect(),
    );
    c
}

pub fn from_container(c: &Container) -> Result<Utterance> {
    if c.kind != KIND {
        return Err(Error::Data(format!("expected an utterance file, found kind `{}`", c.kind)));
    }
    let channels: Vec<String> = c.get("channels")?.split(',').map(str::to_string).collect();
    let audio = match &c.block("audio")?.data {
        BlockData::F32(v) => v.clone(),
        BlockData::F64(_) => return Err(Error::Data("audio block must be f32".into())),
    };
    let ema_block = c.block("ema")?;
    let ema_data = match &ema_block.data {
        BlockData::F32(v) => v.clone(),
        BlockData::F64(_) => return Err(Error::Data("ema block must be f32".into())),
    };
    if audio.len() != c.get_parsed::<usize>("audio_samples")?
        || ema_block.rows != c.get_parsed::<usize>("ema_frames")?
        || ema_block.cols != channels.len()
    {
        return Err(Error::Data("interchange header disagrees with block shapes".into()));
    }
    let data = Array2::from_shape_vec((ema_block.rows, ema_block.cols), ema_data)
        .map_err(|e| Error::Data(e.to_string()))?;
    Ok(Utterance {
        id: c.get("id")?.to_string(),
        speaker_id: c.get("speaker_id")?.to_string(),
        audio: Audio {
            samples: audio,
            rate_hz: c.get_parsed("audio_rate")?,
        },
        ema: EmaTrajectory::new(channels, c.get_parsed("ema_rate")?, data)?,
    })
}

pub fn write_interchange(utt: &Utterance, path: &Path) -> Result<()> {
    to_container(utt).write(path)
}

pub fn read_interchange(path: &Path) -> Result<Utterance> {
    from_container(&Container::read(path)?)
}
