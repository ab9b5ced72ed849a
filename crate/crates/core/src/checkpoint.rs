//! Parameter-store serialisation and configuration hashing shared by the
//! SDN and inversion checkpoints.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::container::{sha256_hex, Container};
use crate::error::{Error, Result};
use crate::frontend::{NormalizationStats, StatsScope};
use crate::nn::{Mat, ParamStore};

const CONFIG_PREFIX: &str = "config.";

/// Canonical TOML rendering of a config. Tables are key-sorted, so the
/// result does not depend on the order keys appeared in a source file.
pub fn canonical_toml<T: Serialize>(cfg: &T) -> Result<String> {
    let value = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    lines.sort();
    Ok(lines.join("\n"))
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    Ok(sha256_hex(canonical_toml(cfg)?.as_bytes()))
}

/// Stores every flattened config key as a `config.<path>` header field,
/// plus `config_hash`.
pub fn embed_config<T: Serialize>(c: &mut Container, cfg: &T) -> Result<()> {
    embed_config_as(c, CONFIG_PREFIX, cfg)?;
    c.set("config_hash", config_hash(cfg)?);
    Ok(())
}

pub fn embed_config_as<T: Serialize>(c: &mut Container, prefix: &str, cfg: &T) -> Result<()> {
    for line in canonical_toml(cfg)?.lines() {
        let (k, v) = line.split_once(" = ").expect("flattened line");
        c.set(&format!("{prefix}{k}"), v);
    }
    Ok(())
}

pub fn extract_config<T: DeserializeOwned>(c: &Container) -> Result<T> {
    extract_config_as(c, CONFIG_PREFIX)
}

pub fn extract_config_as<T: DeserializeOwned>(c: &Container, prefix: &str) -> Result<T> {
    let text: String = c
        .fields
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| format!("{k} = {v}\n")))
        .collect();
    toml::from_str(&text).map_err(|e| Error::Config(format!("embedded config: {e}")))
}

/// Writes every leaf as an f64 block named `<prefix><leaf name>`.
pub fn push_store(c: &mut Container, prefix: &str, store: &ParamStore) {
    for (_, name, value) in store.iter() {
        c.push_f64(
            &format!("{prefix}{name}"),
            value.nrows(),
            value.ncols(),
            value.iter().copied().collect(),
        );
    }
}

/// Fills `store` from blocks written by [`push_store`]; every leaf must be
/// present with the same shape.
pub fn load_store(c: &Container, prefix: &str, store: &mut ParamStore) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", store.name(id));
        let b = c.block(&name)?;
        let target = store.get_mut(id);
        if (b.rows, b.cols) != target.dim() {
            return Err(Error::shape(
                name,
                format!("checkpoint has {}×{}, model expects {:?}", b.rows, b.cols, target.dim()),
            ));
        }
        *target = Mat::from_shape_vec((b.rows, b.cols), b.data.to_f64()).expect("checked shape");
    }
    Ok(())
}

pub fn push_mats(c: &mut Container, prefix: &str, mats: &[Mat]) {
    for (i, m) in mats.iter().enumerate() {
        c.push_f64(&format!("{prefix}{i}"), m.nrows(), m.ncols(), m.iter().copied().collect());
    }
}

pub fn load_mats(c: &Container, prefix: &str, like: &[Mat]) -> Result<Vec<Mat>> {
    like.iter()
        .enumerate()
        .map(|(i, m)| {
            let b = c.block(&format!("{prefix}{i}"))?;
            if (b.rows, b.cols) != m.dim() {
                return Err(Error::shape(format!("{prefix}{i}"), "optimizer state shape"));
            }
            Ok(Mat::from_shape_vec((b.rows, b.cols), b.data.to_f64()).expect("checked shape"))
        })
        .collect()
}

pub fn push_stats(c: &mut Container, name: &str, stats: &NormalizationStats) {
    let mut data: Vec<f64> = stats.mean.to_vec();
    data.extend(stats.std.iter());
    c.push_f64(name, 2, stats.dim(), data);
}

pub fn load_stats(c: &Container, name: &str, scope: StatsScope) -> Result<NormalizationStats> {
    let b = c.block(name)?;
    if b.rows != 2 {
        return Err(Error::shape(name, "statistics block must have two rows"));
    }
    let d = b.data.to_f64();
    Ok(NormalizationStats {
        mean: d[..b.cols].to_vec().into(),
        std: d[b.cols..].to_vec().into(),
        scope,
    })
}
