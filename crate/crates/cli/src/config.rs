//! Run configuration: one TOML tree with every tunable, merged as
//! defaults < file < `--set key=value` < dedicated flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use safn_core::checkpoint;
use safn_core::corpus::synth::SynthConfig;
use safn_core::corpus::{ScenarioKind, ScenarioSpec};
use safn_core::eval::Pooling;
use safn_core::frontend::FrontendConfig;
use safn_core::inversion::{AblationVariant, InversionConfig};
use safn_core::sdn::SdnConfig;
use safn_core::training::{ScenarioConfig, TrainConfig};
use safn_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    pub target_speaker: Option<String>,
    pub variant: AblationVariant,
    pub pooling: Pooling,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            kind: ScenarioKind::S1,
            target_speaker: None,
            variant: AblationVariant::Safn,
            pooling: Pooling::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    /// Directory holding `manifest.txt`, or the manifest itself.
    pub path: Option<PathBuf>,
    /// `raw = canonical` channel map used by `convert`.
    pub channel_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Parent directory for timestamped run directories.
    pub output: PathBuf,
    pub corpus: CorpusSection,
    pub scenario: ScenarioSection,
    pub frontend: FrontendConfig,
    pub synth: SynthConfig,
    pub sdn: SdnConfig,
    pub inversion: InversionConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: PathBuf::from("runs"),
            corpus: CorpusSection::default(),
            scenario: ScenarioSection::default(),
            frontend: FrontendConfig::default(),
            synth: SynthConfig::default(),
            sdn: SdnConfig::default(),
            inversion: InversionConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

/// Parses the right-hand side of `--set`: any TOML value, or a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("`{key}`: `{p}` is not a section"))),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Merges an optional TOML file and `key=value` overrides over the
    /// defaults. Keys that do not name a config field are rejected.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = to_table(&RunConfig::default())?;
        let mut supplied = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let file_tree: toml::Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let mut flat = BTreeMap::new();
            flatten("", &file_tree, &mut flat);
            for (k, v) in flat {
                set_path(&mut tree, &k, v.clone())?;
                supplied.insert(k, v);
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{o}`")))?;
            let v = parse_value(v.trim());
            set_path(&mut tree, k.trim(), v.clone())?;
            supplied.insert(k.trim().to_string(), v);
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        // anything supplied but absent after a round trip is not a real field
        let mut known = BTreeMap::new();
        flatten("", &to_table(&cfg)?, &mut known);
        for k in supplied.keys() {
            if !known.contains_key(k) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sdn.validate()?;
        self.inversion.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.sdn.feature_dim != self.frontend.feature_dim() {
            return Err(Error::Config(format!(
                "sdn.feature_dim {} differs from the front-end width {}",
                self.sdn.feature_dim,
                self.frontend.feature_dim()
            )));
        }
        if self.inversion.acoustic_dim != self.frontend.feature_dim() {
            return Err(Error::Config(format!(
                "inversion.acoustic_dim {} differs from the front-end width {}",
                self.inversion.acoustic_dim,
                self.frontend.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical flattened form; independent of key order.
    pub fn hash(&self) -> Result<String> {
        checkpoint::config_hash(self)
    }

    pub fn scenario_spec(&self, dataset: &str) -> ScenarioSpec {
        ScenarioSpec {
            kind: self.scenario.kind,
            dataset: dataset.to_string(),
            target_speaker: self.scenario.target_speaker.clone(),
            seed: self.seed,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            sdn: self.sdn.clone(),
            inversion: self.inversion.clone(),
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            pooling: self.scenario.pooling,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.scenario_config().train
    }
}
