//! RMSE / Pearson CC metrics, aggregate reports and plots.

mod plot;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use plot::{cc_bar_chart_svg, trajectory_overlay_svg};

use crate::error::{Error, Result};

pub const TONGUE_LABELS: [&str; 6] = ["t1x", "t1z", "t2x", "t2z", "t3x", "t3z"];

pub fn rmse_channel(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("rmse", format!("{} vs {} frames", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Data("rmse over zero frames".into()));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Pearson correlation. A constant truth channel has no defined CC and is an
/// error; a constant prediction against a varying truth scores 0.
pub fn cc_channel(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("cc", format!("{} vs {} frames", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Data("cc needs at least two frames".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if syy <= f64::EPSILON * n * mt.abs().max(1.0).powi(2) {
        return Err(Error::Numeric("CC undefined: truth channel is constant".into()));
    }
    if sxx == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Arithmetic mean of the six per-channel values.
pub fn aggregate(values: &[f64]) -> Result<f64> {
    if values.len() != TONGUE_LABELS.len() {
        return Err(Error::Data(format!(
            "aggregate needs {} channel values, got {}",
            TONGUE_LABELS.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite channel value".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean over the channels whose value is defined (NaN marks a missing CC).
pub fn aggregate_available(values: &[f64]) -> Option<f64> {
    let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if ok.len() < values.len() {
        log::warn!("{} channel(s) without a defined CC excluded from the mean", values.len() - ok.len());
    }
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Concatenate all test frames per channel, then compute each metric once.
    #[default]
    Pooled,
    /// Metric per utterance, then the mean over utterances.
    PerUtterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub n_test_utterances: usize,
    pub channels: Vec<String>,
    /// mm, one per channel.
    pub rmse: Vec<f64>,
    /// NaN where undefined.
    pub cc: Vec<f64>,
    pub mean_rmse: f64,
    /// NaN when no channel has a defined CC.
    pub mean_cc: f64,
}

impl MetricsReport {
    /// Scores `(prediction, truth)` pairs, each `T × 6` in mm.
    pub fn from_pairs(
        pairs: &[(ArrayView2<f64>, ArrayView2<f64>)],
        scenario: &str,
        variant: &str,
        seed: u64,
        pooling: Pooling,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("no predictions to evaluate".into()));
        }
        let c = TONGUE_LABELS.len();
        for (p, t) in pairs {
            if p.dim() != t.dim() || p.ncols() != c {
                return Err(Error::shape("evaluation", format!("prediction {:?} vs truth {:?}", p.dim(), t.dim())));
            }
        }
        let mut rmse = vec![0.0; c];
        let mut cc = vec![f64::NAN; c];
        for ch in 0..c {
            match pooling {
                Pooling::Pooled => {
                    let pred: Vec<f64> = pairs.iter().flat_map(|(p, _)| p.column(ch).to_vec()).collect();
                    let truth: Vec<f64> = pairs.iter().flat_map(|(_, t)| t.column(ch).to_vec()).collect();
                    rmse[ch] = rmse_channel(&pred, &truth)?;
                    cc[ch] = cc_channel(&pred, &truth).unwrap_or(f64::NAN);
                }
                Pooling::PerUtterance => {
                    let mut r = Vec::new();
                    let mut k = Vec::new();
                    for (p, t) in pairs {
                        let (p, t) = (p.column(ch).to_vec(), t.column(ch).to_vec());
                        r.push(rmse_channel(&p, &t)?);
                        if let Ok(v) = cc_channel(&p, &t) {
                            k.push(v);
                        }
                    }
                    rmse[ch] = r.iter().sum::<f64>() / r.len() as f64;
                    if !k.is_empty() {
                        cc[ch] = k.iter().sum::<f64>() / k.len() as f64;
                    }
                }
            }
        }
        Ok(MetricsReport {
            scenario: scenario.into(),
            variant: variant.into(),
            seed,
            n_test_utterances: pairs.len(),
            channels: TONGUE_LABELS.iter().map(|s| s.to_string()).collect(),
            mean_rmse: aggregate(&rmse)?,
            mean_cc: aggregate_available(&cc).unwrap_or(f64::NAN),
            rmse,
            cc,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

/// One row per report: scenario, variant, six channel RMSEs, mean RMSE and
/// mean CC.
pub fn report_table(reports: &[MetricsReport], format: TableFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to tabulate".into()));
    }
    let mut header: Vec<String> = vec!["scenario".into(), "variant".into()];
    header.extend(TONGUE_LABELS.iter().map(|s| s.to_string()));
    header.push("rmse".into());
    header.push("cc".into());
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.scenario.clone(), r.variant.clone()];
            row.extend(r.rmse.iter().map(|v| format!("{v:.3}")));
            row.push(format!("{:.3}", r.mean_rmse));
            row.push(if r.mean_cc.is_finite() {
                format!("{:.3}", r.mean_cc)
            } else {
                "NA".into()
            });
            row
        })
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            writeln!(out, "{}", header.join(",")).unwrap();
            for row in rows {
                writeln!(out, "{}", row.join(",")).unwrap();
            }
        }
        TableFormat::Text => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            writeln!(out, "{}", line(&header)).unwrap();
            for row in &rows {
                writeln!(out, "{}", line(row)).unwrap();
            }
        }
    }
    Ok(out)
}
