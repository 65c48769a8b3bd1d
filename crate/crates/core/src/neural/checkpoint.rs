//! Binary checkpoints: magic, format version, phase tag, a JSON header
//! with the configuration, then every parameter as a little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Layout, TransformerConfig};
use super::model::{Phase, TransformerModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"SFTM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    scalar: String,
    config: TransformerConfig,
    params: usize,
}

impl<T: Scalar> TransformerModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header { scalar: T::NAME.into(), config: self.config.clone(), params: self.params.len() };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(13 + json.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.phase.tag());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let (head, rest) = r.split_at(n);
            r = rest;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let phase = Phase::from_tag(take(1)?[0])?;
        let hlen = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header =
            serde_json::from_slice(take(hlen)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if layout.total != header.params {
            return Err(Error::Format(format!("header lists {} parameters, config needs {}", header.params, layout.total)));
        }
        let raw = take(8 * header.params)?;
        let params: Vec<T> =
            raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        if take(1).is_ok() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok(TransformerModel { config: header.config, layout, params, phase })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
