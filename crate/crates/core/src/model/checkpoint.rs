//! Checkpoint files.
//!
//! `AVARCKP1` magic, `u32` little-endian header length, a JSON header
//! `{"config":..,"seed":..,"step":..}`, then every parameter as a
//! little-endian binary64 in the flat order documented on [`crate::model`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{MicroModelParameters, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVARCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    seed: u64,
    step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MicroModelParameters,
    pub seed: u64,
    pub step: u64,
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: *ckpt.params.config(),
        seed: ckpt.seed,
        step: ckpt.step,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 8 * ckpt.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in ckpt.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: "AVARCKP1",
        });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + n {
        return Err(Error::LengthMismatch {
            expected: 12 + n,
            actual: bytes.len(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..12 + n]).map_err(|e| Error::HeaderParse(e.to_string()))?;
    header.config.validate()?;
    let payload = &bytes[12 + n..];
    let expected = header.config.param_count() * 8;
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        params: MicroModelParameters::from_vec(header.config, data)?,
        seed: header.seed,
        step: header.step,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, write_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            vocab_size: 5,
            image_vocab_size: 3,
            d_model: 4,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 6,
            seed: 2,
        };
        let ckpt = Checkpoint {
            params: init_params(&cfg, 2).unwrap(),
            seed: 2,
            step: 17,
        };
        let bytes = write_checkpoint(&ckpt).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(write_checkpoint(&back).unwrap(), bytes);

        let mut cut = bytes.clone();
        cut.pop();
        assert!(matches!(read_checkpoint(&cut), Err(Error::LengthMismatch { .. })));
        assert!(matches!(read_checkpoint(&bytes[1..]), Err(Error::BadMagic { .. })));
    }
}
