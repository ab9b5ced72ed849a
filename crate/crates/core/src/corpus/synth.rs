//! Synthetic parallel corpus with exactly known articulatory ground truth.
//!
//! Generative process, per utterance:
//! 1. draw a phone sequence with per-phone durations (EMA frames);
//! 2. expand to a frame-level one-hot matrix and smooth it with a causal
//!    moving average of `smoothing_kernel` frames (zero initial state);
//! 3. EMA = smoothed one-hots × phone target matrix (phones × 12 channels),
//!    so articulation is linear in phone identity before smoothing;
//! 4. audio = harmonic source at the speaker's f0, shaped by three formant
//!    resonances interpolated from the same smoothed weights. Speakers
//!    colour the audio through a formant-shift factor, per-formant gains and
//!    an overall level; the EMA never depends on the speaker.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::interchange::write_interchange;
use super::{Audio, CorpusManifest, EmaTrajectory, Utterance, UtteranceRef, CANONICAL_CHANNELS};
use crate::error::{Error, Result};

pub const SYNTH_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub version: u32,
    pub name: String,
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub n_phones: usize,
    pub phones_per_utterance: (usize, usize),
    pub phone_frames: (usize, usize),
    pub smoothing_kernel: usize,
    /// Formant-shift factors are spread over `1 ± speaker_shift_scale`.
    pub speaker_shift_scale: f64,
    pub ema_rate_hz: f64,
    pub audio_rate_hz: u32,
    /// Every speaker reads the same phone sequences (with the same timing).
    pub shared_sentences: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            version: SYNTH_CONFIG_VERSION,
            name: "synthetic".into(),
            n_speakers: 4,
            utterances_per_speaker: 50,
            n_phones: 8,
            phones_per_utterance: (4, 8),
            phone_frames: (10, 24),
            smoothing_kernel: 9,
            speaker_shift_scale: 0.15,
            ema_rate_hz: 200.0,
            audio_rate_hz: 16000,
            shared_sentences: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.version != SYNTH_CONFIG_VERSION {
            return bad(&format!("config version {} unsupported", self.version));
        }
        if self.n_speakers == 0 {
            return bad("n_speakers must be ≥ 1");
        }
        if self.utterances_per_speaker == 0 {
            return bad("utterances_per_speaker must be ≥ 1");
        }
        if self.n_phones < 2 {
            return bad("phone inventory needs at least 2 phones");
        }
        let (lo, hi) = self.phones_per_utterance;
        if lo == 0 || lo > hi {
            return bad("phones_per_utterance must satisfy 1 ≤ min ≤ max");
        }
        let (lo, hi) = self.phone_frames;
        if lo == 0 || lo > hi {
            return bad("phone_frames must satisfy 1 ≤ min ≤ max");
        }
        if self.smoothing_kernel == 0 {
            return bad("smoothing_kernel must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.speaker_shift_scale) {
            return bad("speaker_shift_scale must lie in [0, 1)");
        }
        if self.ema_rate_hz <= 0.0 || self.audio_rate_hz < 8000 {
            return bad("rates must be positive and audio ≥ 8 kHz");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Phone {
    targets: [f64; 12],
    formants: [f64; 3],
    level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub formant_shift: f64,
    pub f0_hz: f64,
    pub formant_gains: [f64; 3],
    pub level: f64,
}

/// An in-memory synthetic corpus with its generating phone sequences.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub seed: u64,
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<Utterance>,
    /// `(phone, frames)` runs per utterance, parallel to `utterances`.
    pub phone_sequences: Vec<Vec<(usize, usize)>>,
    /// Phone target matrix, `n_phones × 12` in canonical channel order.
    pub phone_targets: Array2<f64>,
}

impl SyntheticCorpus {
    pub fn manifest(&self, root: &Path) -> CorpusManifest {
        CorpusManifest {
            name: self.config.name.clone(),
            speakers: self.speakers.iter().map(|s| s.id.clone()).collect(),
            utterances: self
                .utterances
                .iter()
                .map(|u| UtteranceRef {
                    id: u.id.clone(),
                    speaker_id: u.speaker_id.clone(),
                    path: format!("{}.safn", u.id).into(),
                })
                .collect(),
            root: root.to_path_buf(),
        }
    }

    /// Writes one interchange file per utterance plus the manifest.
    pub fn save(&self, dir: &Path) -> Result<CorpusManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest(dir);
        for (u, r) in self.utterances.iter().zip(&manifest.utterances) {
            write_interchange(u, &dir.join(&r.path))?;
        }
        manifest.save(dir)?;
        Ok(manifest)
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

/// Frame-level one-hot phone matrix for a run-length phone sequence.
pub fn one_hot_frames(sequence: &[(usize, usize)], n_phones: usize) -> Array2<f64> {
    let frames: usize = sequence.iter().map(|(_, n)| n).sum();
    let mut m = Array2::zeros((frames, n_phones));
    let mut t = 0;
    for &(p, n) in sequence {
        for _ in 0..n {
            m[[t, p]] = 1.0;
            t += 1;
        }
    }
    m
}

/// Causal moving average with zero initial state.
pub fn causal_smooth(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for t in 0..x.nrows() {
        let lo = t.saturating_sub(kernel - 1);
        let mut acc = x.row(lo).to_owned();
        for k in lo + 1..=t {
            acc += &x.row(k);
        }
        out.row_mut(t).assign(&(acc / kernel as f64));
    }
    out
}

fn draw_inventory(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Phone> {
    // per-channel (lo, hi) ranges in mm, canonical order
    const RANGES: [(f64, f64); 12] = [
        (-3.0, 3.0),
        (-2.0, 6.0),
        (-3.0, 3.0),
        (-12.0, 0.0),
        (-2.0, 2.0),
        (-10.0, 0.0),
        (-10.0, 10.0),
        (-8.0, 8.0),
        (-10.0, 10.0),
        (-8.0, 8.0),
        (-10.0, 10.0),
        (-8.0, 8.0),
    ];
    (0..cfg.n_phones)
        .map(|_| {
            let mut targets = [0.0; 12];
            for (v, (lo, hi)) in targets.iter_mut().zip(RANGES) {
                *v = rng.random_range(lo..hi);
            }
            // the tongue rides on the jaw (lower incisors)
            for k in 0..3 {
                targets[6 + 2 * k] += 0.3 * targets[4];
                targets[7 + 2 * k] += 0.6 * targets[5];
            }
            Phone {
                targets,
                formants: [
                    rng.random_range(300.0..900.0),
                    rng.random_range(900.0..2400.0),
                    rng.random_range(2400.0..3400.0),
                ],
                level: rng.random_range(0.4..1.0),
            }
        })
        .collect()
}

fn spread(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 })
        .collect();
    v.shuffle(rng);
    v
}

fn draw_speakers(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SpeakerProfile> {
    let shifts = spread(cfg.n_speakers, rng);
    let pitches = spread(cfg.n_speakers, rng);
    let levels = spread(cfg.n_speakers, rng);
    (0..cfg.n_speakers)
        .map(|s| SpeakerProfile {
            id: format!("spk{:02}", s + 1),
            formant_shift: 1.0 + cfg.speaker_shift_scale * shifts[s],
            f0_hz: 150.0 + 50.0 * pitches[s],
            formant_gains: [
                rng.random_range(0.6..1.4),
                rng.random_range(0.6..1.4),
                rng.random_range(0.6..1.4),
            ],
            level: 0.3 * (1.0 + 0.5 * levels[s]),
        })
        .collect()
}

fn draw_sequence(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = rng.random_range(cfg.phones_per_utterance.0..=cfg.phones_per_utterance.1);
    let mut seq: Vec<(usize, usize)> = Vec::with_capacity(n);
    while seq.len() < n {
        let p = rng.random_range(0..cfg.n_phones);
        if seq.last().is_some_and(|&(q, _)| q == p) {
            continue;
        }
        seq.push((p, rng.random_range(cfg.phone_frames.0..=cfg.phone_frames.1)));
    }
    seq
}

const BANDWIDTHS: [f64; 3] = [90.0, 130.0, 180.0];

fn synthesize_audio(cfg: &SynthConfig, weights: &Array2<f64>, inventory: &[Phone], spk: &SpeakerProfile) -> Vec<f32> {
    let sr = cfg.audio_rate_hz as f64;
    let frames = weights.nrows();
    let hop = sr / cfg.ema_rate_hz;
    let n_samples = (frames as f64 * hop).round() as usize;
    let n_harm = ((0.45 * sr) / spk.f0_hz).floor() as usize;

    // harmonic amplitudes per EMA frame
    let mut amps = Array2::<f64>::zeros((frames, n_harm));
    for t in 0..frames {
        let w = weights.row(t);
        let total: f64 = w.sum();
        if total <= 0.0 {
            continue;
        }
        let mut formants = [0.0; 3];
        let mut level = 0.0;
        for (p, phone) in inventory.iter().enumerate() {
            for k in 0..3 {
                formants[k] += w[p] * phone.formants[k];
            }
            level += w[p] * phone.level;
        }
        for f in &mut formants {
            *f *= spk.formant_shift / total;
        }
        for h in 0..n_harm {
            let freq = (h + 1) as f64 * spk.f0_hz;
            let mut a = 0.0;
            for k in 0..3 {
                let d = (freq - formants[k]) / BANDWIDTHS[k];
                a += spk.formant_gains[k] / (1.0 + d * d);
            }
            amps[[t, h]] = spk.level * level * a;
        }
    }

    let mut out = vec![0f32; n_samples];
    for (n, sample) in out.iter_mut().enumerate() {
        let pos = n as f64 / hop;
        let t0 = (pos.floor() as usize).min(frames - 1);
        let t1 = (t0 + 1).min(frames - 1);
        let frac = pos - t0 as f64;
        let time = n as f64 / sr;
        let mut acc = 0.0;
        for h in 0..n_harm {
            let a = amps[[t0, h]] * (1.0 - frac) + amps[[t1, h]] * frac;
            if a != 0.0 {
                acc += a * (2.0 * PI * (h + 1) as f64 * spk.f0_hz * time).sin();
            }
        }
        *sample = (acc / 4.0) as f32;
    }
    out
}

pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inventory = draw_inventory(cfg, &mut rng);
    let speakers = draw_speakers(cfg, &mut rng);
    let phone_targets = Array2::from_shape_fn((cfg.n_phones, 12), |(p, c)| inventory[p].targets[c]);

    let shared: Vec<Vec<(usize, usize)>> = if cfg.shared_sentences {
        (0..cfg.utterances_per_speaker)
            .map(|_| draw_sequence(cfg, &mut rng))
            .collect()
    } else {
        Vec::new()
    };

    let channels: Vec<String> = CANONICAL_CHANNELS.iter().map(|c| c.to_string()).collect();
    let mut utterances = Vec::new();
    let mut phone_sequences = Vec::new();
    for spk in &speakers {
        for i in 0..cfg.utterances_per_speaker {
            let seq = if cfg.shared_sentences {
                shared[i].clone()
            } else {
                draw_sequence(cfg, &mut rng)
            };
            let weights = causal_smooth(&one_hot_frames(&seq, cfg.n_phones), cfg.smoothing_kernel);
            let ema = weights.dot(&phone_targets).mapv(|v| v as f32);
            let audio = synthesize_audio(cfg, &weights, &inventory, spk);
            utterances.push(Utterance {
                id: format!("{}_{:03}", spk.id, i),
                speaker_id: spk.id.clone(),
                audio: Audio {
                    samples: audio,
                    rate_hz: cfg.audio_rate_hz,
                },
                ema: EmaTrajectory::new(channels.clone(), cfg.ema_rate_hz, ema)?,
            });
            phone_sequences.push(seq);
        }
    }
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        seed,
        speakers,
        utterances,
        phone_sequences,
        phone_targets,
    })
}
