//! Binary named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//! `T2ACKPT\0`, `u32` version, `u32` metadata count, then `(key, value)`
//! strings, `u32` tensor count, then per tensor: name, `u32` rank, `u64`
//! dims, `f64` values. Strings are a `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::params::ParamGroup;
use crate::tensor::{AdamConfig, AdamState, Moments, Tensor};

const MAGIC: &[u8; 8] = b"T2ACKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint has no tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {got:?}, expected {want:?}")]
    Shape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("checkpoint {name} is {found}, config expects {expected}")]
    Dimension {
        name: String,
        found: String,
        expected: String,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Format(format!("missing metadata `{key}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    /// Stores every tensor of `group` as `prefix.name`.
    pub fn insert_group<P: ParamGroup>(&mut self, prefix: &str, group: &P) {
        for (name, t) in group.tensors() {
            self.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Fills a group shaped like `template` from `prefix.name` tensors.
    pub fn group<P: ParamGroup>(&self, prefix: &str, template: &P) -> Result<P> {
        let mut out = template.clone();
        for (name, t) in out.tensors_mut() {
            let key = format!("{prefix}.{name}");
            let stored = self.get(&key)?;
            if stored.shape() != t.shape() {
                return Err(CheckpointError::Shape {
                    name: key,
                    got: stored.shape().to_vec(),
                    want: t.shape().to_vec(),
                });
            }
            *t = stored.clone();
        }
        Ok(out)
    }

    /// Stores moments as `prefix.m.name` / `prefix.v.name` and the step in metadata.
    pub fn insert_adam(&mut self, prefix: &str, state: &AdamState) {
        self.set_meta(&format!("{prefix}.t"), state.steps());
        for (name, m) in state.moments() {
            self.insert(format!("{prefix}.m.{name}"), m.m.clone());
            self.insert(format!("{prefix}.v.{name}"), m.v.clone());
        }
    }

    pub fn adam(&self, prefix: &str, config: AdamConfig) -> Result<AdamState> {
        let t: u64 = self
            .meta(&format!("{prefix}.t"))?
            .parse()
            .map_err(|e| CheckpointError::Format(format!("{prefix}.t: {e}")))?;
        let m_prefix = format!("{prefix}.m.");
        let mut moments = BTreeMap::new();
        for (key, m) in self.tensors.range(m_prefix.clone()..) {
            let Some(name) = key.strip_prefix(&m_prefix) else { break };
            let v = self.get(&format!("{prefix}.v.{name}"))?;
            moments.insert(
                name.to_string(),
                Moments {
                    m: m.clone(),
                    v: v.clone(),
                },
            );
        }
        Ok(AdamState::from_parts(config, t, moments))
    }

    /// Fails with the first named size in `expected` that the metadata contradicts.
    pub fn check_dimensions(&self, expected: &[(&str, usize)]) -> Result<()> {
        for (name, want) in expected {
            let found = self.meta(name)?;
            if found != want.to_string() {
                return Err(CheckpointError::Dimension {
                    name: name.to_string(),
                    found: found.to_string(),
                    expected: want.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic bytes".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..get_u32(&mut r)? {
            let k = get_str(&mut r)?;
            let v = get_str(&mut r)?;
            ck.metadata.insert(k, v);
        }
        for _ in 0..get_u32(&mut r)? {
            let name = get_str(&mut r)?;
            let rank = get_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(get_u64(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            if len * 8 > r.len() {
                return Err(CheckpointError::Format(format!("tensor `{name}` is truncated")));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            ck.tensors.insert(name, t);
        }
        if !r.is_empty() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Format("unexpected end of data".into()))
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > r.len() {
        return Err(CheckpointError::Format("string is truncated".into()));
    }
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|e| CheckpointError::Format(e.to_string()))
}
