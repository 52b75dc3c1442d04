//! Flat parameter checkpoints: 8-byte magic, 32-byte configuration digest,
//! little-endian u64 count, then little-endian f64 values.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PPO_MAGIC: &[u8; 8] = b"PPOC0001";
pub const CNN_MAGIC: &[u8; 8] = b"CNNC0001";

const HEADER: usize = 8 + 32 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 8],
    pub config_digest: [u8; 32],
    pub params: Vec<f64>,
}

/// SHA-256 of the JSON form of a configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> [u8; 32] {
    let text = serde_json::to_string(cfg).expect("serializable configuration");
    Sha256::digest(text.as_bytes()).into()
}

impl Checkpoint {
    pub fn new(magic: &[u8; 8], config_digest: [u8; 32], params: Vec<f64>) -> Self {
        Self {
            magic: *magic,
            config_digest,
            params,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 8 * self.params.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Decodes a checkpoint whose header must be `magic`.
    pub fn from_bytes(magic: &[u8; 8], bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::Format(format!("checkpoint too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != magic {
            return Err(Error::Format(format!(
                "expected {} header",
                String::from_utf8_lossy(magic)
            )));
        }
        let config_digest: [u8; 32] = bytes[8..40].try_into().expect("32 bytes");
        let count = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes"));
        let payload = &bytes[HEADER..];
        if payload.len() % 8 != 0 || (payload.len() / 8) as u64 != count {
            return Err(Error::Format(format!(
                "checkpoint declares {count} values but carries {} bytes",
                payload.len()
            )));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("checkpoint holds non-finite values".into()));
        }
        Ok(Self {
            magic: *magic,
            config_digest,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(magic: &[u8; 8], path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(magic, &bytes)
    }

    /// Fails unless the stored digest matches `expected`.
    pub fn check_digest(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.config_digest != expected {
            return Err(Error::Format("checkpoint was written for a different configuration".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = Checkpoint::new(PPO_MAGIC, [7; 32], vec![1.5, -2.25, 0.0]);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"PPOC0001");
        assert_eq!(bytes.len(), 48 + 24);
        assert_eq!(Checkpoint::from_bytes(PPO_MAGIC, &bytes).unwrap(), c);
        assert!(Checkpoint::from_bytes(CNN_MAGIC, &bytes).is_err());
        assert!(Checkpoint::from_bytes(PPO_MAGIC, &bytes[..bytes.len() - 1]).is_err());
    }
}
