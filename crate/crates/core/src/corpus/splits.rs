//! Train/validation/fine-tune/test assignment for the four evaluation
//! scenarios:
//!
//! | scenario | speakers in play | non-target speakers | target speaker |
//! |----------|------------------|---------------------|----------------|
//! | S1 | one | - | train 80 / val 10 / test 10 |
//! | S2 | all | train 80 / val 10 / test 10 each | - |
//! | S3 | all | train 80 / val 20 | fine-tune 80 / test 20 |
//! | S4 | all | train 80 / val 20 | test 100 |
//!
//! Validation and test sizes are floored; the remainder goes to train (or
//! fine-tune). Each speaker's ids are shuffled with a seeded RNG first.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    S1,
    S2,
    S3,
    S4,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [ScenarioKind::S1, ScenarioKind::S2, ScenarioKind::S3, ScenarioKind::S4];

    pub fn needs_target(self) -> bool {
        matches!(self, ScenarioKind::S3 | ScenarioKind::S4)
    }

    /// Speaker-dependent scenarios see the test speaker during training.
    pub fn speaker_dependent(self) -> bool {
        !matches!(self, ScenarioKind::S4)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(ScenarioKind::S1),
            "S2" => Ok(ScenarioKind::S2),
            "S3" => Ok(ScenarioKind::S3),
            "S4" => Ok(ScenarioKind::S4),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (expected S1|S2|S3|S4)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub dataset: String,
    pub target_speaker: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    FineTune,
    Test,
}

impl SplitTag {
    /// Splits whose data may feed parameters or normalisation statistics.
    pub fn is_training_side(self) -> bool {
        matches!(self, SplitTag::Train | SplitTag::FineTune)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub fine_tune: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn get(&self, tag: SplitTag) -> &[String] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Validation => &self.validation,
            SplitTag::FineTune => &self.fine_tune,
            SplitTag::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.fine_tune.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        [&self.train, &self.validation, &self.fine_tune, &self.test]
            .iter()
            .flat_map(|v| v.iter())
            .all(|id| seen.insert(id))
    }
}

/// `(large, small, small)` sizes for an 8:1:1 cut.
pub fn cut_8_1_1(n: usize) -> (usize, usize, usize) {
    let tenth = n / 10;
    (n - 2 * tenth, tenth, tenth)
}

/// `(large, small)` sizes for an 80/20 cut.
pub fn cut_80_20(n: usize) -> (usize, usize) {
    let fifth = n * 2 / 10;
    (n - fifth, fifth)
}

fn target_of(manifest: &CorpusManifest, spec: &ScenarioSpec) -> Result<Option<String>> {
    match &spec.target_speaker {
        Some(t) if manifest.speakers.contains(t) => Ok(Some(t.clone())),
        Some(t) => Err(Error::Split(format!("target speaker {t} not in manifest"))),
        None if spec.kind.needs_target() => Err(Error::Split(format!(
            "{} requires a target speaker",
            spec.kind
        ))),
        None => Ok(None),
    }
}

pub fn make_splits(manifest: &CorpusManifest, spec: &ScenarioSpec) -> Result<SplitAssignment> {
    manifest.validate()?;
    let target = target_of(manifest, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut speakers = manifest.speakers.clone();
    speakers.sort();

    let shuffled = |speaker: &str, rng: &mut ChaCha8Rng| {
        let mut ids: Vec<String> = manifest.utterances_of(speaker).map(|u| u.id.clone()).collect();
        ids.sort();
        ids.shuffle(rng);
        ids
    };

    let mut out = SplitAssignment::default();
    match spec.kind {
        ScenarioKind::S1 => {
            let speaker = match (&target, manifest.speakers.as_slice()) {
                (Some(t), _) => t.clone(),
                (None, [only]) => only.clone(),
                (None, _) => {
                    return Err(Error::Split(
                        "S1 on a multi-speaker corpus needs a target speaker".into(),
                    ))
                }
            };
            let ids = shuffled(&speaker, &mut rng);
            let (tr, va, _) = cut_8_1_1(ids.len());
            out.train.extend_from_slice(&ids[..tr]);
            out.validation.extend_from_slice(&ids[tr..tr + va]);
            out.test.extend_from_slice(&ids[tr + va..]);
        }
        ScenarioKind::S2 => {
            for s in &speakers {
                let ids = shuffled(s, &mut rng);
                let (tr, va, _) = cut_8_1_1(ids.len());
                out.train.extend_from_slice(&ids[..tr]);
                out.validation.extend_from_slice(&ids[tr..tr + va]);
                out.test.extend_from_slice(&ids[tr + va..]);
            }
        }
        ScenarioKind::S3 | ScenarioKind::S4 => {
            let target = target.expect("checked above");
            for s in &speakers {
                let ids = shuffled(s, &mut rng);
                if *s == target {
                    if spec.kind == ScenarioKind::S3 {
                        let (ft, _) = cut_80_20(ids.len());
                        out.fine_tune.extend_from_slice(&ids[..ft]);
                        out.test.extend_from_slice(&ids[ft..]);
                    } else {
                        out.test.extend(ids);
                    }
                } else {
                    let (tr, _) = cut_80_20(ids.len());
                    out.train.extend_from_slice(&ids[..tr]);
                    out.validation.extend_from_slice(&ids[tr..]);
                }
            }
        }
    }
    Ok(out)
}

/// Fails if any utterance of a held-out speaker reaches a split that feeds
/// training. S4 holds the target out of train, validation and fine-tune; S3
/// holds it out of train and validation.
pub fn assert_no_leakage(manifest: &CorpusManifest, spec: &ScenarioSpec, splits: &SplitAssignment) -> Result<()> {
    if !splits.is_disjoint() {
        return Err(Error::Leakage("split lists overlap".into()));
    }
    let Some(target) = &spec.target_speaker else {
        return Ok(());
    };
    let guarded: &[SplitTag] = match spec.kind {
        ScenarioKind::S4 => &[SplitTag::Train, SplitTag::Validation, SplitTag::FineTune],
        ScenarioKind::S3 => &[SplitTag::Train, SplitTag::Validation],
        _ => &[],
    };
    for &tag in guarded {
        for id in splits.get(tag) {
            let speaker = manifest.find(id).map(|u| u.speaker_id.as_str());
            if speaker == Some(target.as_str()) {
                return Err(Error::Leakage(format!(
                    "{}: utterance {id} of held-out speaker {target} is in {tag:?}",
                    spec.kind
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UtteranceRef;
    use std::path::PathBuf;

    fn manifest(per_speaker: &[usize]) -> CorpusManifest {
        let speakers: Vec<String> = (0..per_speaker.len()).map(|i| format!("F{:02}", i + 1)).collect();
        let mut utterances = Vec::new();
        for (s, &n) in speakers.iter().zip(per_speaker) {
            for i in 0..n {
                utterances.push(UtteranceRef {
                    id: format!("{s}_{i:03}"),
                    speaker_id: s.clone(),
                    path: PathBuf::from(format!("{s}_{i:03}.safn")),
                });
            }
        }
        CorpusManifest {
            name: "t".into(),
            speakers,
            utterances,
            root: PathBuf::new(),
        }
    }

    fn spec(kind: ScenarioKind, target: Option<&str>) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            dataset: "t".into(),
            target_speaker: target.map(str::to_string),
            seed: 7,
        }
    }

    #[test]
    fn s1_460_utterances() {
        let m = manifest(&[460]);
        let s = make_splits(&m, &spec(ScenarioKind::S1, None)).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (368, 46, 46));
        assert!(s.fine_tune.is_empty());
    }

    #[test]
    fn s1_multi_speaker_needs_target() {
        let m = manifest(&[10, 10]);
        assert!(make_splits(&m, &spec(ScenarioKind::S1, None)).is_err());
        let s = make_splits(&m, &spec(ScenarioKind::S1, Some("F02"))).unwrap();
        assert!(s.train.iter().chain(&s.test).all(|id| id.starts_with("F02")));
    }

    #[test]
    fn s3_s4_need_known_target() {
        let m = manifest(&[10, 10]);
        assert!(make_splits(&m, &spec(ScenarioKind::S4, None)).is_err());
        assert!(make_splits(&m, &spec(ScenarioKind::S3, Some("X"))).is_err());
    }

    #[test]
    fn s4_holds_target_out() {
        let m = manifest(&[90; 8]);
        let sp = spec(ScenarioKind::S4, Some("F01"));
        let s = make_splits(&m, &sp).unwrap();
        assert_eq!(s.test.len(), 90);
        assert!(s.test.iter().all(|id| id.starts_with("F01")));
        assert!(s.train.iter().chain(&s.validation).all(|id| !id.starts_with("F01")));
        assert_no_leakage(&m, &sp, &s).unwrap();
    }

    #[test]
    fn leakage_guard_fires_on_corruption() {
        let m = manifest(&[20, 20, 20]);
        let sp = spec(ScenarioKind::S4, Some("F02"));
        let mut s = make_splits(&m, &sp).unwrap();
        let leaked = s.test.pop().unwrap();
        s.train.push(leaked);
        assert!(matches!(assert_no_leakage(&m, &sp, &s), Err(Error::Leakage(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = manifest(&[33, 41, 29]);
        let sp = spec(ScenarioKind::S2, None);
        assert_eq!(make_splits(&m, &sp).unwrap(), make_splits(&m, &sp).unwrap());
        let other = ScenarioSpec { seed: 8, ..sp.clone() };
        assert_ne!(make_splits(&m, &sp).unwrap(), make_splits(&m, &other).unwrap());
    }

    #[test]
    fn scenario_names_parse() {
        assert_eq!("s3".parse::<ScenarioKind>().unwrap(), ScenarioKind::S3);
        assert!("S5".parse::<ScenarioKind>().is_err());
    }
}
