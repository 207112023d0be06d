//! Binary record format for checkpoint entry files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CRKT"
//!      4     2  format version (1)
//!      6     1  entry kind
//!      7     1  element tag
//!      8     8  dim0 (elements, rows, or declared byte size)
//!     16     8  dim1 (columns; 1 for one-dimensional entries)
//!     24     8  selected column (i64, -1 for none)
//!     32     8  payload length in bytes
//!     40     n  payload, little-endian
//!   40+n     4  CRC-32 (IEEE) over bytes [0, 40+n)
//! ```

use crate::error::FormatError;
use crate::types::element::ElemTag;

pub const MAGIC: [u8; 4] = *b"CRKT";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 40;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EntryKind {
    Scalar = 1,
    Array = 2,
    MultiArray = 3,
    Packed = 4,
    Custom = 5,
}

impl EntryKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => EntryKind::Scalar,
            2 => EntryKind::Array,
            3 => EntryKind::MultiArray,
            4 => EntryKind::Packed,
            5 => EntryKind::Custom,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub kind: EntryKind,
    pub elem: ElemTag,
    pub dim0: u64,
    pub dim1: u64,
    pub column: i64,
}

impl RecordHeader {
    pub fn describe(&self) -> String {
        format!("{:?}<{}>", self.kind, self.elem.name())
    }

    fn dims(&self) -> (u64, u64, i64) {
        (self.dim0, self.dim1, self.column)
    }
}

pub fn encode(header: &RecordHeader, payload: &[u8], out: &mut Vec<u8>) {
    let start = out.len();
    out.reserve(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(header.kind as u8);
    out.push(header.elem as u8);
    out.extend_from_slice(&header.dim0.to_le_bytes());
    out.extend_from_slice(&header.dim1.to_le_bytes());
    out.extend_from_slice(&header.column.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Parse and checksum-verify a record, returning its header and payload.
pub fn decode(bytes: &[u8]) -> Result<(RecordHeader, &[u8]), FormatError> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(FormatError::Truncated(bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let payload_len = u64_at(bytes, 32);
    let expected_len = (HEADER_LEN as u64)
        .checked_add(payload_len)
        .and_then(|n| n.checked_add(TRAILER_LEN as u64));
    if expected_len != Some(bytes.len() as u64) {
        return Err(FormatError::Truncated(bytes.len()));
    }
    let body_end = bytes.len() - TRAILER_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::Corrupt { stored, computed });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let kind = EntryKind::from_u8(bytes[6])
        .ok_or_else(|| FormatError::Malformed(format!("entry kind {}", bytes[6])))?;
    let elem = ElemTag::from_u8(bytes[7])
        .ok_or_else(|| FormatError::Malformed(format!("element tag {}", bytes[7])))?;
    let header = RecordHeader {
        kind,
        elem,
        dim0: u64_at(bytes, 8),
        dim1: u64_at(bytes, 16),
        column: u64_at(bytes, 24) as i64,
    };
    Ok((header, &bytes[HEADER_LEN..body_end]))
}

/// Decode a record and require it to match `expected` exactly.
pub fn decode_expect<'a>(
    bytes: &'a [u8],
    expected: &RecordHeader,
) -> Result<&'a [u8], FormatError> {
    let (found, payload) = decode(bytes)?;
    if found.kind != expected.kind || found.elem != expected.elem {
        return Err(FormatError::TypeMismatch {
            expected: expected.describe(),
            found: found.describe(),
        });
    }
    if found.dims() != expected.dims() {
        return Err(FormatError::DimensionMismatch {
            expected: expected.dims(),
            found: found.dims(),
        });
    }
    Ok(payload)
}

/// Wrap arbitrary bytes from a user-defined entry type.
pub fn encode_custom(payload: &[u8], out: &mut Vec<u8>) {
    let header = RecordHeader {
        kind: EntryKind::Custom,
        elem: ElemTag::Bytes,
        dim0: payload.len() as u64,
        dim1: 1,
        column: -1,
    };
    encode(&header, payload, out);
}

pub fn decode_custom(bytes: &[u8]) -> Result<&[u8], FormatError> {
    let (found, payload) = decode(bytes)?;
    if found.kind != EntryKind::Custom {
        return Err(FormatError::TypeMismatch {
            expected: "Custom<bytes>".into(),
            found: found.describe(),
        });
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RecordHeader {
        RecordHeader { kind: EntryKind::Scalar, elem: ElemTag::I32, dim0: 1, dim1: 1, column: -1 }
    }

    #[test]
    fn layout_is_fixed() {
        let mut out = Vec::new();
        encode(&header(), &5i32.to_le_bytes(), &mut out);
        assert_eq!(out.len(), HEADER_LEN + 4 + TRAILER_LEN);
        assert_eq!(&out[..4], b"CRKT");
        assert_eq!(&out[HEADER_LEN..HEADER_LEN + 4], &[5, 0, 0, 0]);
        let crc = crc32fast::hash(&out[..HEADER_LEN + 4]);
        assert_eq!(&out[HEADER_LEN + 4..], &crc.to_le_bytes());
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let mut good = Vec::new();
        encode(&header(), &[1, 2, 3, 4], &mut good);
        for i in 0..good.len() {
            let mut bad = good.clone();
            bad[i] ^= 0x40;
            assert!(decode(&bad).is_err(), "flip at {i} went unnoticed");
        }
    }

    #[test]
    fn truncation_is_detected() {
        let mut good = Vec::new();
        encode(&header(), &[1, 2, 3, 4], &mut good);
        for n in 0..good.len() {
            assert!(decode(&good[..n]).is_err());
        }
    }
}
