use ndarray::Array2;

use crate::corpus::EmaTrajectory;
use crate::error::{Error, Result};

/// Second-order Butterworth low-pass section (bilinear transform with
/// pre-warping), direct form II transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Butterworth2 {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Butterworth2 {
    pub fn lowpass(cutoff_hz: f64, rate_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0) || cutoff_hz >= rate_hz / 2.0 {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) for rate {rate_hz} Hz",
                rate_hz / 2.0
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Butterworth2 {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        })
    }

    /// `|H(e^{jω})|` of one pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / rate_hz;
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -(c[1] * w.sin() + c[2] * (2.0 * w).sin());
            (re * re + im * im).sqrt()
        };
        eval(&self.b) / eval(&self.a)
    }

    /// Single causal pass starting from the steady state of `x[0]`.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let x0 = x[0];
        let mut z1 = x0 * (1.0 - b0);
        let mut z2 = x0 * (b2 - a2);
        x.iter()
            .map(|&v| {
                let y = b0 * v + z1;
                z1 = b1 * v - a1 * y + z2;
                z2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase low-pass of every EMA channel.
pub fn lowpass_ema(ema: &EmaTrajectory, cutoff_hz: f64) -> Result<EmaTrajectory> {
    let filt = Butterworth2::lowpass(cutoff_hz, ema.rate_hz)?;
    let mut data = Array2::<f32>::zeros(ema.data.dim());
    for c in 0..ema.channels.len() {
        let col: Vec<f64> = ema.data.column(c).iter().map(|&v| v as f64).collect();
        for (t, v) in filt.filtfilt(&col).into_iter().enumerate() {
            data[[t, c]] = v as f32;
        }
    }
    EmaTrajectory::new(ema.channels.clone(), ema.rate_hz, data)
}
