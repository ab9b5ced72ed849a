use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AcousticFeatures;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_cepstra: usize,
    pub n_mel_filters: usize,
    pub pre_emphasis: f64,
    /// Floor applied to filterbank energies before the log.
    pub log_floor: f64,
    pub low_hz: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_cepstra: 13,
            n_mel_filters: 26,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl MfccConfig {
    /// Reads `key = value` lines (TOML) overriding the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn window_samples(&self, rate: u32) -> usize {
        (self.window_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        (self.hop_ms * rate as f64 / 1000.0).round() as usize
    }

    /// `floor((n − window) / hop) + 1`, or 0 when the audio is shorter than a window.
    pub fn frame_count(&self, n_samples: usize, rate: u32) -> usize {
        let (w, h) = (self.window_samples(rate), self.hop_samples(rate));
        if n_samples < w {
            0
        } else {
            (n_samples - w) / h + 1
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, `n_filters × (n_fft/2 + 1)`.
pub fn mel_filterbank(n_filters: usize, n_fft: usize, rate: u32, low_hz: f64, high_hz: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bin_hz = rate as f64 / n_fft as f64;
    Array2::from_shape_fn((n_filters, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        }
    })
}

/// MFCCs: pre-emphasis, Hamming window, power spectrum, mel filterbank,
/// floored log, orthonormal DCT-II. Coefficient 0 is kept.
pub fn compute_mfcc(samples: &[f32], rate: u32, cfg: &MfccConfig) -> Result<AcousticFeatures> {
    if rate < 8000 {
        return Err(Error::Data(format!("audio rate {rate} Hz below 8 kHz")));
    }
    let win = cfg.window_samples(rate);
    let hop = cfg.hop_samples(rate);
    let frames = cfg.frame_count(samples.len(), rate);
    if frames == 0 {
        return Err(Error::Data(format!(
            "audio of {} samples is shorter than one {win}-sample window",
            samples.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let high = cfg.high_hz.unwrap_or(rate as f64 / 2.0);
    let fbank = mel_filterbank(cfg.n_mel_filters, n_fft, rate, cfg.low_hz, high);
    let window: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
        .collect();
    let n_mel = cfg.n_mel_filters;
    let dct = Array2::from_shape_fn((cfg.n_cepstra, n_mel), |(i, j)| {
        let scale = if i == 0 { (1.0 / n_mel as f64).sqrt() } else { (2.0 / n_mel as f64).sqrt() };
        scale * (PI * i as f64 * (j as f64 + 0.5) / n_mel as f64).cos()
    });

    let emphasized: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let prev = if n == 0 { 0.0 } else { samples[n - 1] as f64 };
            x as f64 - cfg.pre_emphasis * prev
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = ndarray::Array1::<f64>::zeros(n_fft / 2 + 1);
    let mut out = Array2::zeros((frames, cfg.n_cepstra));
    for t in 0..frames {
        let start = t * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < win {
                Complex::new(emphasized[start + k] * window[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        let log_mel = fbank.dot(&power).mapv(|e| e.max(cfg.log_floor).ln());
        out.row_mut(t).assign(&dct.dot(&log_mel));
    }
    Ok(AcousticFeatures {
        data: out,
        frame_rate_hz: rate as f64 / hop as f64,
        feature_names: (0..cfg.n_cepstra).map(|i| format!("mfcc{i}")).collect(),
    })
}
