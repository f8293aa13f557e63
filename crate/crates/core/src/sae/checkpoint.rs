//! SAE checkpoint files.
//!
//! ```text
//! 0..8       magic  b"DBLSAE01"
//! 8..12      header length H, u32 little-endian
//! 12..12+H   UTF-8 JSON header
//! 12+H..     f32 little-endian payload: W_enc, W_dec, b1, b2 (row-major)
//! ```
//!
//! The header carries the SHA-256 of the payload; loading fails on mismatch.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SaeParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBLSAE01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SaeParams,
    pub k: usize,
    /// Echo of the training configuration, if the parameters came from training.
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    d: usize,
    omega: usize,
    k: usize,
    prefix_schedule: Vec<usize>,
    train_config: Option<serde_json::Value>,
    checksum: String,
}

impl Checkpoint {
    pub fn new(params: SaeParams, k: usize, train_config: Option<serde_json::Value>) -> Result<Self> {
        params.validate()?;
        if k == 0 || k > params.omega() {
            return Err(Error::Range {
                what: "k",
                value: k,
                lo: 1,
                hi: params.omega(),
            });
        }
        Ok(Self {
            params,
            k,
            train_config,
        })
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = self.params.payload_bytes();
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            d: self.params.d(),
            omega: self.params.omega(),
            k: self.k,
            prefix_schedule: self.params.prefix_schedule.clone(),
            train_config: self.train_config.clone(),
            checksum: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("missing DBLSAE01 magic header".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Corruption("truncated checkpoint header".into()));
        }
        let h_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let h_end = 12usize
            .checked_add(h_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Corruption("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..h_end])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        let (d, omega) = (header.d, header.omega);
        let count = 2 * d * omega + 2 * d;
        let payload = &bytes[h_end..];
        if payload.len() != count * 4 {
            return Err(Error::Corruption(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        let actual = hex::encode(Sha256::digest(payload));
        if actual != header.checksum {
            return Err(Error::Corruption(format!(
                "checkpoint checksum mismatch: header {}, payload {actual}",
                header.checksum
            )));
        }
        let mut vals = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
        let w_enc = Array2::from_shape_vec((d, omega), take(d * omega)).expect("sized");
        let w_dec = Array2::from_shape_vec((omega, d), take(omega * d)).expect("sized");
        let b1 = Array1::from(take(d));
        let b2 = Array1::from(take(d));
        let params = SaeParams::new(w_enc, w_dec, b1, b2, header.prefix_schedule)?;
        Checkpoint::new(params, header.k, header.train_config)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
