//! Corpus manifests: a text file listing utterance files and speakers.
//!
//! ```text
//! # safn-manifest 1
//! name=hprc
//! speakers=F01,F02
//! F01_001    F01    F01_001.safn
//! ```
//! Utterance lines are `id<TAB>speaker<TAB>path`, paths relative to the
//! manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::interchange::read_interchange;
use super::Utterance;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MAGIC: &str = "# safn-manifest 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRef {
    pub id: String,
    pub speaker_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub name: String,
    pub speakers: Vec<String>,
    pub utterances: Vec<UtteranceRef>,
    /// Directory that utterance paths are relative to.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for u in &self.utterances {
            if !seen.insert(&u.id) {
                return Err(Error::Data(format!("duplicate utterance id {}", u.id)));
            }
            if !self.speakers.contains(&u.speaker_id) {
                return Err(Error::Data(format!(
                    "utterance {} has unlisted speaker {}",
                    u.id, u.speaker_id
                )));
            }
        }
        Ok(())
    }

    pub fn utterances_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a UtteranceRef> + 'a {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker)
    }

    pub fn find(&self, id: &str) -> Option<&UtteranceRef> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\nname={}\nspeakers={}\n", self.name, self.speakers.join(","));
        for u in &self.utterances {
            s.push_str(&format!("{}\t{}\t{}\n", u.id, u.speaker_id, u.path.display()));
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected `{MAGIC}`"),
                })
            }
        }
        let mut m = CorpusManifest {
            root: root.to_path_buf(),
            ..Default::default()
        };
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("name=") {
                m.name = v.to_string();
            } else if let Some(v) = line.strip_prefix("speakers=") {
                m.speakers = v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
            } else {
                let parts: Vec<&str> = line.split('\t').collect();
                if parts.len() != 3 {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "expected `id<TAB>speaker<TAB>path`".into(),
                    });
                }
                m.utterances.push(UtteranceRef {
                    id: parts[0].to_string(),
                    speaker_id: parts[1].to_string(),
                    path: PathBuf::from(parts[2]),
                });
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Reads `dir/manifest.txt`, or the given file directly.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let file = dir.join(MANIFEST_FILE);
        std::fs::write(&file, self.to_text()).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn load_utterance(&self, r: &UtteranceRef) -> Result<Utterance> {
        read_interchange(&self.root.join(&r.path))
    }
}
