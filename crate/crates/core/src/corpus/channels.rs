use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::EmaTrajectory;
use crate::error::{Error, Result};

/// Visible articulators: upper lip, lower lip, lower incisors.
pub const LIP_CHANNELS: [&str; 6] = ["ULx", "ULz", "LLx", "LLz", "LIx", "LIz"];
/// Tongue tip, blade and rear; the inversion targets.
pub const TONGUE_CHANNELS: [&str; 6] = ["T1x", "T1z", "T2x", "T2z", "T3x", "T3z"];

pub const CANONICAL_CHANNELS: [&str; 12] = [
    "ULx", "ULz", "LLx", "LLz", "LIx", "LIz", "T1x", "T1z", "T2x", "T2z", "T3x", "T3z",
];

/// Lip and tongue blocks in canonical column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatorBlocks {
    pub lip: Array2<f32>,
    pub tongue: Array2<f32>,
}

pub fn select_channels(ema: &EmaTrajectory) -> Result<ArticulatorBlocks> {
    let missing: Vec<String> = CANONICAL_CHANNELS
        .iter()
        .filter(|c| ema.channel_index(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::ChannelMap(missing));
    }
    let gather = |names: &[&str; 6]| {
        let idx: Vec<usize> = names.iter().map(|n| ema.channel_index(n).unwrap()).collect();
        Array2::from_shape_fn((ema.frames(), 6), |(t, j)| ema.data[[t, idx[j]]])
    };
    Ok(ArticulatorBlocks {
        lip: gather(&LIP_CHANNELS),
        tongue: gather(&TONGUE_CHANNELS),
    })
}

/// Raw corpus channel name → canonical name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelMap {
    pub map: BTreeMap<String, String>,
}

impl ChannelMap {
    /// Built-in maps for the EST-track corpora. `canonical` is the identity.
    pub fn builtin(corpus: &str) -> Option<Self> {
        let pairs: &[(&str, &str)] = match corpus {
            "mocha" => &[
                ("ul_x", "ULx"),
                ("ul_y", "ULz"),
                ("ll_x", "LLx"),
                ("ll_y", "LLz"),
                ("li_x", "LIx"),
                ("li_y", "LIz"),
                ("tt_x", "T1x"),
                ("tt_y", "T1z"),
                ("tb_x", "T2x"),
                ("tb_y", "T2z"),
                ("td_x", "T3x"),
                ("td_y", "T3z"),
            ],
            "mngu0" => &[
                ("upperlip_py", "ULx"),
                ("upperlip_pz", "ULz"),
                ("lowerlip_py", "LLx"),
                ("lowerlip_pz", "LLz"),
                ("jaw_py", "LIx"),
                ("jaw_pz", "LIz"),
                ("T1_py", "T1x"),
                ("T1_pz", "T1z"),
                ("T2_py", "T2x"),
                ("T2_pz", "T2z"),
                ("T3_py", "T3x"),
                ("T3_pz", "T3z"),
            ],
            "canonical" | "synthetic" => {
                return Some(ChannelMap {
                    map: CANONICAL_CHANNELS
                        .iter()
                        .map(|c| (c.to_string(), c.to_string()))
                        .collect(),
                })
            }
            _ => return None,
        };
        Some(ChannelMap {
            map: pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        })
    }

    /// Parses `raw = canonical` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (raw, canon) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                message: format!("expected `raw = canonical`, got `{line}`"),
            })?;
            map.insert(raw.trim().to_string(), canon.trim().to_string());
        }
        Ok(ChannelMap { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renames mapped channels; unmapped channels keep their raw names.
    pub fn apply(&self, mut ema: EmaTrajectory) -> EmaTrajectory {
        for name in &mut ema.channels {
            if let Some(c) = self.map.get(name) {
                *name = c.clone();
            }
        }
        ema
    }
}
