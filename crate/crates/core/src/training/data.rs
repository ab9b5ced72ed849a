use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;

use crate::corpus::{clean_trajectory, select_channels, CorpusManifest, SplitTag, Utterance, UtteranceRef};
use crate::error::{Error, Result};
use crate::frontend::{
    process_utterance, zscore_apply, zscore_fit, AcousticFeatures, FrontendConfig, NormalizationStats, StatsScope,
};
use crate::inversion::InversionInput;
use crate::sdn::{AcousticUtterance, SdnModel};

/// Front-end output for one utterance: features plus frame-aligned lip and
/// tongue trajectories in mm.
#[derive(Debug, Clone)]
pub struct ProcessedUtterance {
    pub id: String,
    pub speaker_id: String,
    pub features: AcousticFeatures,
    pub lip_mm: Array2<f64>,
    pub tongue_mm: Array2<f64>,
}

impl ProcessedUtterance {
    pub fn from_utterance(utt: &Utterance, frontend: &FrontendConfig) -> Result<Self> {
        let cleaned;
        let utt = if utt.ema.is_clean() {
            utt
        } else {
            cleaned = Utterance {
                ema: clean_trajectory(&utt.ema)?,
                ..utt.clone()
            };
            &cleaned
        };
        let (features, ema) = process_utterance(utt, frontend)?;
        features.check_finite()?;
        let blocks = select_channels(&ema)?;
        Ok(ProcessedUtterance {
            id: utt.id.clone(),
            speaker_id: utt.speaker_id.clone(),
            features,
            lip_mm: blocks.lip.mapv(f64::from),
            tongue_mm: blocks.tongue.mapv(f64::from),
        })
    }

    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    pub fn acoustic_view(&self) -> AcousticUtterance {
        AcousticUtterance {
            id: self.id.clone(),
            speaker_id: self.speaker_id.clone(),
            features: self.features.clone(),
        }
    }
}

/// A processed corpus held in memory, keyed by utterance id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: CorpusManifest,
    pub utterances: BTreeMap<String, ProcessedUtterance>,
}

impl Dataset {
    pub fn from_utterances(name: &str, utterances: &[Utterance], frontend: &FrontendConfig) -> Result<Self> {
        let mut speakers: Vec<String> = Vec::new();
        let mut refs = Vec::new();
        let mut map = BTreeMap::new();
        for u in utterances {
            if !speakers.contains(&u.speaker_id) {
                speakers.push(u.speaker_id.clone());
            }
            refs.push(UtteranceRef {
                id: u.id.clone(),
                speaker_id: u.speaker_id.clone(),
                path: PathBuf::from(&u.id),
            });
            map.insert(u.id.clone(), ProcessedUtterance::from_utterance(u, frontend)?);
        }
        let manifest = CorpusManifest {
            name: name.into(),
            speakers,
            utterances: refs,
            root: PathBuf::new(),
        };
        manifest.validate()?;
        Ok(Dataset {
            manifest,
            utterances: map,
        })
    }

    pub fn load(manifest: &CorpusManifest, frontend: &FrontendConfig) -> Result<Self> {
        manifest.validate()?;
        let mut map = BTreeMap::new();
        for r in &manifest.utterances {
            let utt = manifest.load_utterance(r)?;
            let p = ProcessedUtterance::from_utterance(&utt, frontend)
                .map_err(|e| Error::Data(format!("{}: {e}", r.id)))?;
            map.insert(r.id.clone(), p);
        }
        Ok(Dataset {
            manifest: manifest.clone(),
            utterances: map,
        })
    }

    pub fn get(&self, id: &str) -> Result<&ProcessedUtterance> {
        self.utterances
            .get(id)
            .ok_or_else(|| Error::Data(format!("utterance {id} not in dataset")))
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&ProcessedUtterance>> {
        ids.iter().map(|id| self.get(id)).collect()
    }
}

/// Standardisation statistics for the acoustic input and both articulatory
/// targets, fitted on training-side utterances only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizers {
    pub acoustic: NormalizationStats,
    pub lip: NormalizationStats,
    pub tongue: NormalizationStats,
    /// Speakers contributing to the statistics.
    pub fitted_on: Vec<String>,
}

impl Normalizers {
    pub fn fit(tag: SplitTag, utterances: &[&ProcessedUtterance]) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Split("cannot fit normalisation on an empty split".into()));
        }
        let pick = |f: fn(&ProcessedUtterance) -> &Array2<f64>| -> Vec<&Array2<f64>> {
            utterances.iter().map(|u| f(u)).collect()
        };
        let mut fitted_on: Vec<String> = utterances.iter().map(|u| u.speaker_id.clone()).collect();
        fitted_on.sort();
        fitted_on.dedup();
        Ok(Normalizers {
            acoustic: zscore_fit(tag, &pick(|u| &u.features.data), StatsScope::Global)?,
            lip: zscore_fit(tag, &pick(|u| &u.lip_mm), StatsScope::Global)?,
            tongue: zscore_fit(tag, &pick(|u| &u.tongue_mm), StatsScope::Global)?,
            fitted_on,
        })
    }
}

/// One utterance in model space.
#[derive(Debug, Clone)]
pub struct ModelUtterance {
    pub id: String,
    pub speaker_id: String,
    pub acoustic: Array2<f64>,
    pub personalized: Option<Array2<f64>>,
    pub lip: Array2<f64>,
    pub tongue: Array2<f64>,
    pub tongue_mm: Array2<f64>,
}

impl ModelUtterance {
    pub fn input(&self) -> InversionInput<'_> {
        InversionInput {
            acoustic: &self.acoustic,
            personalized: self.personalized.as_ref(),
        }
    }

    pub fn frames(&self) -> usize {
        self.acoustic.nrows()
    }
}

/// Standardises features and targets, and computes the frozen SDN's
/// personalised features when a model is supplied.
pub fn prepare_utterances(
    utterances: &[&ProcessedUtterance],
    norms: &Normalizers,
    sdn: Option<&SdnModel>,
) -> Result<Vec<ModelUtterance>> {
    utterances
        .iter()
        .map(|u| {
            let personalized = match sdn {
                Some(m) => Some(m.personalized(&u.features).map_err(|e| e.in_stage("sdn"))?),
                None => None,
            };
            Ok(ModelUtterance {
                id: u.id.clone(),
                speaker_id: u.speaker_id.clone(),
                acoustic: zscore_apply(&u.features.data, &norms.acoustic),
                personalized,
                lip: zscore_apply(&u.lip_mm, &norms.lip),
                tongue: zscore_apply(&u.tongue_mm, &norms.tongue),
                tongue_mm: u.tongue_mm.clone(),
            })
        })
        .collect()
}
