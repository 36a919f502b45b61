//! Binary checkpoint format.
//!
//! ```text
//! "VTMM"                      4 bytes
//! format version              u32 LE
//! header length               u32 LE
//! header                      JSON: { "dims": {..}, "projection_activation": .., "dropout_rate": .. }
//! parameters                  f64 LE, in network parameter order
//! ```
//! The file must end exactly after the last parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, MatchingNetwork, NetDims};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VTMM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: NetDims,
    projection_activation: Activation,
    dropout_rate: f64,
}

impl MatchingNetwork {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            dims: self.dims().clone(),
            projection_activation: self.projection_activation(),
            dropout_rate: self.dropout_rate(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.parameter_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for layer in self.layers() {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < 12 {
            return Err(corrupt("file shorter than the fixed header"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if header_len > body.len() {
            return Err(corrupt("header length exceeds file size"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::CorruptCheckpoint(format!("unreadable header: {e}")))?;
        let params = &body[header_len..];

        let mut net = MatchingNetwork::zeros(header.dims)
            .map_err(|e| Error::CorruptCheckpoint(format!("invalid dimension table: {e}")))?;
        let expected = net.parameter_count() * 8;
        if params.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {expected} parameter bytes, found {}",
                params.len()
            )));
        }
        let mut values = params
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for layer in net.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = values.next().expect("length checked");
            }
        }
        if !net.is_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        net.set_projection_activation(header.projection_activation);
        net.set_dropout_rate(header.dropout_rate)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(net)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads whatever architecture the checkpoint describes.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Loads a checkpoint and requires it to have exactly `dims`.
    pub fn load_checkpoint_expecting(path: &Path, dims: &NetDims) -> Result<Self> {
        let net = Self::load_checkpoint(path)?;
        check_dims(dims, net.dims())?;
        Ok(net)
    }
}

fn check_dims(expected: &NetDims, found: &NetDims) -> Result<()> {
    let pairs = [
        ("video input width", expected.video_in, found.video_in),
        ("text input width", expected.text_in, found.text_in),
        ("projection width", expected.joint, found.joint),
        ("head depth", expected.head_hidden.len(), found.head_hidden.len()),
    ];
    for (what, e, f) in pairs {
        if e != f {
            return Err(Error::dims(what, e, f));
        }
    }
    for (l, (e, f)) in expected.head_hidden.iter().zip(&found.head_hidden).enumerate() {
        if e != f {
            return Err(Error::dims(format!("head layer {l} width"), *e, *f));
        }
    }
    Ok(())
}
