//! EDS and HEAD binary formats.
//!
//! EDS (little-endian, no padding):
//! - `OODEDS01` magic
//! - `u32 n`, `u32 d`, `u32 c`
//! - flags byte (bit0 labels, bit1 groups), then three zero bytes
//! - `n·d` f32 features, `n·c` f32 logits (row-major)
//! - optional `n` i32 labels, optional `n` i32 groups
//!
//! HEAD: `OODHEAD1`, `u32 c`, `u32 d`, `c·d` f32 weight (row-major), `c` f32 bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EdsError, EmbeddingSet, ModelHead};
use crate::numeric::RowMatrix;

pub const EDS_MAGIC: &[u8; 8] = b"OODEDS01";
pub const HEAD_MAGIC: &[u8; 8] = b"OODHEAD1";

const EDS_HEADER: u64 = 24;
const HEAD_HEADER: u64 = 16;
const FLAG_LABELS: u8 = 0b01;
const FLAG_GROUPS: u8 = 0b10;

/// Exact on-disk size of an EDS file. `None` on arithmetic overflow.
pub fn eds_size(n: u64, d: u64, c: u64, labels: bool, groups: bool) -> Option<u64> {
    let per_row = d.checked_add(c)?
        .checked_add(labels as u64)?
        .checked_add(groups as u64)?;
    n.checked_mul(per_row)?.checked_mul(4)?.checked_add(EDS_HEADER)
}

pub fn head_size(c: u64, d: u64) -> Option<u64> {
    c.checked_mul(d)?.checked_add(c)?.checked_mul(4)?.checked_add(HEAD_HEADER)
}

fn to_f32(v: f64, what: &'static str) -> Result<f32, EdsError> {
    let x = v as f32;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EdsError::NonFinite(what))
    }
}

fn encode_f32s(out: &mut Vec<u8>, values: &[f64], what: &'static str) -> Result<(), EdsError> {
    for &v in values {
        out.extend_from_slice(&to_f32(v, what)?.to_le_bytes());
    }
    Ok(())
}

fn dim_u32(v: usize, what: &str) -> Result<u32, EdsError> {
    u32::try_from(v).map_err(|_| EdsError::Invariant(format!("{what} exceeds u32 range")))
}

/// Serializes `set` and writes it to `sink`. The whole buffer is validated
/// and encoded before the first byte is written.
pub fn write_eds<W: Write>(set: &EmbeddingSet, mut sink: W) -> Result<u64, EdsError> {
    if set.n() == 0 {
        return Err(EdsError::Invariant("cannot write an empty embedding set".into()));
    }
    let (n, d, c) = (
        dim_u32(set.n(), "n")?,
        dim_u32(set.d(), "d")?,
        dim_u32(set.c(), "c")?,
    );
    let size = eds_size(
        n as u64,
        d as u64,
        c as u64,
        set.labels().is_some(),
        set.groups().is_some(),
    )
    .ok_or_else(|| EdsError::Invariant("dump too large".into()))?;
    let mut buf = Vec::with_capacity(size as usize);
    buf.extend_from_slice(EDS_MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    let mut flags = 0u8;
    if set.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if set.groups().is_some() {
        flags |= FLAG_GROUPS;
    }
    buf.extend_from_slice(&[flags, 0, 0, 0]);
    encode_f32s(&mut buf, set.features().as_slice(), "features")?;
    encode_f32s(&mut buf, set.logits().as_slice(), "logits")?;
    if let Some(labels) = set.labels() {
        for &l in labels {
            buf.extend_from_slice(&(l as i32).to_le_bytes());
        }
    }
    if let Some(groups) = set.groups() {
        for &g in groups {
            buf.extend_from_slice(&g.to_le_bytes());
        }
    }
    debug_assert_eq!(buf.len() as u64, size);
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(size)
}

/// Cursor over an in-memory byte buffer with typed truncation errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], EdsError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(EdsError::Truncated {
                expected: (self.pos + len) as u64,
                actual: self.bytes.len() as u64,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, EdsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, EdsError> {
        let raw = self.take(count * 4)?;
        raw.chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(EdsError::NonFinite(what))
                }
            })
            .collect()
    }

    fn i32s(&mut self, count: usize) -> Result<Vec<i32>, EdsError> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

fn check_magic(bytes: &[u8], magic: &'static [u8; 8], name: &'static str) -> Result<(), EdsError> {
    if bytes.len() < 8 {
        // a short stream that still matches the magic prefix is truncation
        if magic.starts_with(bytes) {
            return Err(EdsError::Truncated {
                expected: 8,
                actual: bytes.len() as u64,
            });
        }
        return Err(EdsError::BadMagic { expected: name });
    }
    if &bytes[..8] != magic {
        return Err(EdsError::BadMagic { expected: name });
    }
    Ok(())
}

fn check_total(expected: u64, actual: usize) -> Result<(), EdsError> {
    let actual = actual as u64;
    if actual < expected {
        Err(EdsError::Truncated { expected, actual })
    } else if actual > expected {
        Err(EdsError::SizeMismatch { expected, actual })
    } else {
        Ok(())
    }
}

pub(crate) fn parse_eds(bytes: &[u8]) -> Result<EmbeddingSet, EdsError> {
    check_magic(bytes, EDS_MAGIC, "OODEDS01")?;
    let mut cur = Cursor { bytes, pos: 8 };
    let n = cur.u32()?;
    let d = cur.u32()?;
    let c = cur.u32()?;
    let tail = cur.take(4)?;
    let flags = tail[0];
    if flags & !(FLAG_LABELS | FLAG_GROUPS) != 0 {
        return Err(EdsError::InvalidHeader(format!("unknown flag bits {flags:#04x}")));
    }
    if tail[1..] != [0, 0, 0] {
        return Err(EdsError::InvalidHeader("reserved header bytes are not zero".into()));
    }
    if n == 0 {
        return Err(EdsError::InvalidHeader("n must be >= 1".into()));
    }
    if d == 0 {
        return Err(EdsError::InvalidHeader("d must be >= 1".into()));
    }
    if c < 2 {
        return Err(EdsError::InvalidHeader("c must be >= 2".into()));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let has_groups = flags & FLAG_GROUPS != 0;
    let expected = eds_size(n as u64, d as u64, c as u64, has_labels, has_groups)
        .ok_or_else(|| EdsError::InvalidHeader("dimensions overflow".into()))?;
    // size is checked before any payload allocation
    check_total(expected, bytes.len())?;

    let (n, d, c) = (n as usize, d as usize, c as usize);
    let features = cur.f32s(n * d, "features")?;
    let logits = cur.f32s(n * c, "logits")?;
    let labels = if has_labels {
        let raw = cur.i32s(n)?;
        if raw.iter().any(|&l| l < 0) {
            return Err(EdsError::Invariant("negative label in dump".into()));
        }
        Some(raw.into_iter().map(|l| l as u32).collect())
    } else {
        None
    };
    let groups = if has_groups { Some(cur.i32s(n)?) } else { None };
    EmbeddingSet::new(
        RowMatrix::from_vec(n, d, features),
        RowMatrix::from_vec(n, c, logits),
        labels,
        groups,
    )
}

/// Reads a full EDS stream.
pub fn read_eds<R: Read>(mut source: R) -> Result<EmbeddingSet, EdsError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_eds(&bytes)
}

pub fn write_head<W: Write>(head: &ModelHead, mut sink: W) -> Result<u64, EdsError> {
    let c = dim_u32(head.c(), "c")?;
    let d = dim_u32(head.d(), "d")?;
    let size =
        head_size(c as u64, d as u64).ok_or_else(|| EdsError::Invariant("head too large".into()))?;
    let mut buf = Vec::with_capacity(size as usize);
    buf.extend_from_slice(HEAD_MAGIC);
    buf.extend_from_slice(&c.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    encode_f32s(&mut buf, head.weight().as_slice(), "head weight")?;
    encode_f32s(&mut buf, head.bias(), "head bias")?;
    debug_assert_eq!(buf.len() as u64, size);
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(size)
}

pub(crate) fn parse_head(bytes: &[u8]) -> Result<ModelHead, EdsError> {
    check_magic(bytes, HEAD_MAGIC, "OODHEAD1")?;
    let mut cur = Cursor { bytes, pos: 8 };
    let c = cur.u32()?;
    let d = cur.u32()?;
    if c == 0 || d == 0 {
        return Err(EdsError::InvalidHeader("head dimensions must be >= 1".into()));
    }
    let expected =
        head_size(c as u64, d as u64).ok_or_else(|| EdsError::InvalidHeader("dimensions overflow".into()))?;
    check_total(expected, bytes.len())?;
    let (c, d) = (c as usize, d as usize);
    let weight = cur.f32s(c * d, "head weight")?;
    let bias = cur.f32s(c, "head bias")?;
    ModelHead::new(RowMatrix::from_vec(c, d, weight), bias)
}

pub fn read_head<R: Read>(mut source: R) -> Result<ModelHead, EdsError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_head(&bytes)
}

pub fn read_eds_file(path: impl AsRef<Path>) -> Result<EmbeddingSet, EdsError> {
    read_eds(BufReader::new(File::open(path)?))
}

pub fn write_eds_file(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<u64, EdsError> {
    write_eds(set, BufWriter::new(File::create(path)?))
}

pub fn read_head_file(path: impl AsRef<Path>) -> Result<ModelHead, EdsError> {
    read_head(BufReader::new(File::open(path)?))
}

pub fn write_head_file(head: &ModelHead, path: impl AsRef<Path>) -> Result<u64, EdsError> {
    write_head(head, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sample() -> EmbeddingSet {
        EmbeddingSet::new(
            RowMatrix::from_rows(&[[0.5, -1.25]]),
            RowMatrix::from_rows(&[[2.0, 3.0]]),
            Some(vec![1]),
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_dump_is_44_bytes() {
        let mut buf = Vec::new();
        let written = write_eds(&one_sample(), &mut buf).unwrap();
        assert_eq!(written, 44);
        assert_eq!(buf.len(), 44);
        assert_eq!(&buf[..8], b"OODEDS01");
        assert_eq!(buf[20], 0b01);
    }

    #[test]
    fn empty_set_is_rejected_before_writing() {
        let empty = one_sample().select(&[]);
        let mut buf = Vec::new();
        assert!(matches!(write_eds(&empty, &mut buf), Err(EdsError::Invariant(_))));
        assert!(buf.is_empty());
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_eds(&one_sample(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_eds(&buf[..]), Err(EdsError::BadMagic { .. })));
    }

    #[test]
    fn truncated_by_one_byte() {
        let mut buf = Vec::new();
        write_eds(&one_sample(), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_eds(&buf[..]), Err(EdsError::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes_are_a_size_mismatch() {
        let mut buf = Vec::new();
        write_eds(&one_sample(), &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(read_eds(&buf[..]), Err(EdsError::SizeMismatch { .. })));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut buf = Vec::new();
        write_eds(&one_sample(), &mut buf).unwrap();
        buf[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_eds(&buf[..]), Err(EdsError::NonFinite("features"))));
    }

    #[test]
    fn value_overflowing_f32_is_rejected_on_write() {
        let set = EmbeddingSet::new(
            RowMatrix::from_rows(&[[1e300]]),
            RowMatrix::from_rows(&[[0.0, 0.0]]),
            None,
            None,
        )
        .unwrap();
        assert!(matches!(write_eds(&set, Vec::new()), Err(EdsError::NonFinite(_))));
    }

    #[test]
    fn head_is_48_bytes_for_c2_d3() {
        let head = ModelHead::new(
            RowMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]),
            vec![0.5, -0.5],
        )
        .unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_head(&head, &mut buf).unwrap(), 48);
        assert_eq!(read_head(&buf[..]).unwrap(), head);
    }

    #[test]
    fn head_with_nan_weight_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(HEAD_MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        buf.extend_from_slice(&0f32.to_le_bytes());
        assert!(matches!(read_head(&buf[..]), Err(EdsError::NonFinite("head weight"))));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut buf = Vec::new();
        buf.extend_from_slice(EDS_MAGIC);
        for v in [u32::MAX, u32::MAX, u32::MAX] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&[0, 0, 0, 0]);
        assert!(read_eds(&buf[..]).is_err());
    }
}
