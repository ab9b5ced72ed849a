//! Binary container shared by utterance interchange files, feature caches,
//! predictions and checkpoints.
//!
//! Layout: an ASCII header of `key=value` lines opened by `SAFN-CONTAINER`
//! and closed by `end_header`, followed by the raw payload. Each `block=`
//! line declares a named little-endian matrix (`name dtype rows cols`); the
//! payload is those matrices concatenated in declaration order, row-major.
//! `checksum` is the SHA-256 of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &str = "SAFN-CONTAINER";
pub const SCHEMA_VERSION: u32 = 1;
const END: &str = "end_header";

#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl BlockData {
    fn dtype(&self) -> &'static str {
        match self {
            BlockData::F32(_) => "f32",
            BlockData::F64(_) => "f64",
        }
    }

    fn len(&self) -> usize {
        match self {
            BlockData::F32(v) => v.len(),
            BlockData::F64(v) => v.len(),
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            BlockData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            BlockData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: BlockData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub kind: String,
    pub fields: BTreeMap<String, String>,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        assert!(!value.contains('\n'), "header values must be single-line");
        self.fields.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("container field `{key}` missing")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Data(format!("container field `{key}` has bad value `{raw}`")))
    }

    pub fn push_f32(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f32>) {
        assert_eq!(rows * cols, data.len(), "block {name} shape");
        self.blocks.push(Block {
            name: name.to_string(),
            rows,
            cols,
            data: BlockData::F32(data),
        });
    }

    pub fn push_f64(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(rows * cols, data.len(), "block {name} shape");
        self.blocks.push(Block {
            name: name.to_string(),
            rows,
            cols,
            data: BlockData::F64(data),
        });
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Data(format!("container block `{name}` missing")))
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match &b.data {
                BlockData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                BlockData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut header = format!("{MAGIC}\nschema_version={SCHEMA_VERSION}\nkind={}\n", self.kind);
        for (k, v) in &self.fields {
            header.push_str(&format!("{k}={v}\n"));
        }
        for b in &self.blocks {
            header.push_str(&format!(
                "block={} {} {} {}\n",
                b.name,
                b.data.dtype(),
                b.rows,
                b.cols
            ));
        }
        header.push_str(&format!("checksum={}\n{END}\n", sha256_hex(&payload)));
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut line_no = 0usize;
        let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
            let rest = &bytes[*pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or(Error::Parse {
                line: line_no + 1,
                message: "unterminated header".into(),
            })?;
            let text = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Parse {
                line: line_no + 1,
                message: "header is not UTF-8".into(),
            })?;
            *pos += nl + 1;
            line_no += 1;
            Ok((line_no, text.to_string()))
        };

        let (_, magic) = next_line(&mut pos)?;
        if magic != MAGIC {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `{MAGIC}`"),
            });
        }
        let mut c = Container::default();
        let mut version = None;
        let mut checksum = None;
        let mut decl: Vec<(String, String, usize, usize)> = Vec::new();
        loop {
            let (n, line) = next_line(&mut pos)?;
            if line == END {
                break;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: n,
                message: format!("expected key=value, got `{line}`"),
            })?;
            match k {
                "schema_version" => {
                    version = Some(v.parse::<u32>().map_err(|_| Error::Parse {
                        line: n,
                        message: "bad schema_version".into(),
                    })?)
                }
                "kind" => c.kind = v.to_string(),
                "checksum" => checksum = Some(v.to_string()),
                "block" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    let bad = || Error::Parse {
                        line: n,
                        message: format!("bad block declaration `{v}`"),
                    };
                    if parts.len() != 4 || !matches!(parts[1], "f32" | "f64") {
                        return Err(bad());
                    }
                    let rows = parts[2].parse().map_err(|_| bad())?;
                    let cols = parts[3].parse().map_err(|_| bad())?;
                    decl.push((parts[0].to_string(), parts[1].to_string(), rows, cols));
                }
                _ => {
                    c.fields.insert(k.to_string(), v.to_string());
                }
            }
        }
        let version = version.ok_or(Error::Parse {
            line: 2,
            message: "schema_version missing".into(),
        })?;
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }

        let payload = &bytes[pos..];
        let expected: usize = decl
            .iter()
            .map(|(_, dt, r, cl)| r * cl * if dt == "f32" { 4 } else { 8 })
            .sum();
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
                unit: "bytes",
            });
        }
        if let Some(want) = checksum {
            let got = sha256_hex(payload);
            if got != want {
                return Err(Error::Checksum {
                    expected: want,
                    found: got,
                });
            }
        }
        let mut off = 0;
        for (name, dt, rows, cols) in decl {
            let n = rows * cols;
            let data = if dt == "f32" {
                let v = payload[off..off + 4 * n]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                off += 4 * n;
                BlockData::F32(v)
            } else {
                let v = payload[off..off + 8 * n]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                off += 8 * n;
                BlockData::F64(v)
            };
            debug_assert_eq!(data.len(), n);
            c.blocks.push(Block {
                name,
                rows,
                cols,
                data,
            });
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checksum recorded for the current payload.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.payload())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
