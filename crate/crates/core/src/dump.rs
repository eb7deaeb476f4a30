//! ATND binary attention dumps.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | ASCII `ATNDUMP1` |
//! | 4     | `u32` header length `n` |
//! | n     | UTF-8 JSON header |
//! | rest  | `layers*heads*seq_len^2` IEEE-754 binary32 values, `[layer][head][query][key]` |
//!
//! Header fields are written in the order `version, seq_len, layers, heads,
//! causal, dtype, spans, sample_id` with no insignificant whitespace, so
//! write → read → write reproduces the input bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionTensor, DEFAULT_ROW_TOL};
use crate::error::{Error, Result};
use crate::segment::{SpanSet, TokenSegmentation};

pub const MAGIC: &[u8; 8] = b"ATNDUMP1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub version: u32,
    pub seq_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub causal: bool,
    pub dtype: String,
    pub spans: SpanSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

impl DumpHeader {
    pub fn payload_len(&self) -> usize {
        self.layers * self.heads * self.seq_len * self.seq_len * 4
    }
}

/// A parsed dump.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub attention: AttentionTensor,
    pub segmentation: TokenSegmentation,
    pub sample_id: Option<String>,
}

pub fn write_dump(
    attention: &AttentionTensor,
    seg: &TokenSegmentation,
    sample_id: Option<&str>,
) -> Result<Vec<u8>> {
    if seg.total_len != attention.seq_len() {
        return Err(Error::Shape(format!(
            "segmentation covers {} tokens, attention has {}",
            seg.total_len,
            attention.seq_len()
        )));
    }
    let header = DumpHeader {
        version: VERSION,
        seq_len: attention.seq_len(),
        layers: attention.layers(),
        heads: attention.heads(),
        causal: attention.causal(),
        dtype: "f32".to_string(),
        spans: seg.spans(),
        sample_id: sample_id.map(str::to_string),
    };
    let json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| Error::HeaderParse("header longer than u32::MAX".into()))?;

    let mut out = Vec::with_capacity(12 + json.len() + header.payload_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for &w in attention.weights() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates a dump; row sums are re-checked at [`DEFAULT_ROW_TOL`].
pub fn read_dump(bytes: &[u8]) -> Result<Dump> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            expected: "ATNDUMP1",
        });
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::LengthMismatch {
            expected: MAGIC.len() + 4,
            actual: bytes.len(),
        });
    }
    let header_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < header_len {
        return Err(Error::LengthMismatch {
            expected: 12 + header_len,
            actual: bytes.len(),
        });
    }
    let header: DumpHeader = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| Error::HeaderParse(e.to_string()))?;
    if header.version != VERSION {
        return Err(Error::HeaderParse(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.dtype != "f32" {
        return Err(Error::HeaderParse(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    let payload = &rest[header_len..];
    if payload.len() != header.payload_len() {
        return Err(Error::LengthMismatch {
            expected: header.payload_len(),
            actual: payload.len(),
        });
    }
    let weights = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let attention = AttentionTensor::new(
        header.layers,
        header.heads,
        header.seq_len,
        header.causal,
        weights,
    )?;
    let segmentation = TokenSegmentation::from_spans(header.seq_len, header.spans);
    segmentation.validate()?;
    attention.validate(DEFAULT_ROW_TOL)?;
    Ok(Dump {
        attention,
        segmentation,
        sample_id: header.sample_id,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Dump> {
    read_dump(&std::fs::read(path)?)
}

pub fn save(
    path: impl AsRef<Path>,
    attention: &AttentionTensor,
    seg: &TokenSegmentation,
    sample_id: Option<&str>,
) -> Result<()> {
    std::fs::write(path, write_dump(attention, seg, sample_id)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::Span;

    fn seg4() -> TokenSegmentation {
        TokenSegmentation::new(
            4,
            Span::new(0, 1),
            vec![Span::new(1, 3)],
            vec![Span::new(3, 4)],
            Span::empty(),
        )
    }

    #[test]
    fn two_by_two_by_four_payload_is_256_bytes() {
        let mut a = AttentionTensor::uniform(2, 2, 4, true);
        // payload is f32: compare against the representable values
        a.weights_mut().iter_mut().for_each(|w| *w = *w as f32 as f64);
        let bytes = write_dump(&a, &seg4(), None).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 12 - header_len, 256);
        let d = read_dump(&bytes).unwrap();
        assert_eq!(d.attention.layers(), 2);
        assert_eq!(d.attention, a);
        assert_eq!(d.segmentation, seg4());
    }

    #[test]
    fn header_text_is_canonical() {
        let a = AttentionTensor::uniform(1, 1, 4, false);
        let bytes = write_dump(&a, &seg4(), Some("case-7")).unwrap();
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + n]).unwrap();
        assert_eq!(
            text,
            r#"{"version":1,"seq_len":4,"layers":1,"heads":1,"causal":false,"dtype":"f32","spans":{"system":[0,1],"image":[[1,3]],"user":[[3,4]],"response":[0,0]},"sample_id":"case-7"}"#
        );
    }

    #[test]
    fn truncated_payload_rejected() {
        let a = AttentionTensor::uniform(1, 2, 4, true);
        let mut bytes = write_dump(&a, &seg4(), None).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_dump(&bytes), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        let a = AttentionTensor::uniform(1, 1, 4, true);
        let mut bytes = write_dump(&a, &seg4(), None).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_dump(&bytes), Err(Error::BadMagic { .. })));
        assert!(matches!(read_dump(b"ATND"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn garbage_header_rejected() {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(b"{x}");
        assert!(matches!(read_dump(&bytes), Err(Error::HeaderParse(_))));
    }

    #[test]
    fn invalid_payload_propagates_validation() {
        let mut a = AttentionTensor::uniform(1, 1, 4, true);
        a.set(0, 0, 0, 3, 0.5);
        let bytes = write_dump(&a, &seg4(), None).unwrap();
        assert!(matches!(
            read_dump(&bytes),
            Err(Error::CausalViolation { .. })
        ));
    }

    #[test]
    fn overlapping_spans_rejected_on_read() {
        let a = AttentionTensor::uniform(1, 1, 4, true);
        let mut seg = seg4();
        seg.user = vec![Span::new(2, 4)];
        let bytes = write_dump(&a, &seg, None).unwrap();
        assert!(matches!(read_dump(&bytes), Err(Error::Overlap { .. })));
    }
}
