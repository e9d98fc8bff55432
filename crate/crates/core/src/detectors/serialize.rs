//! Binary container for fitted detector states.
//!
//! Layout (little-endian):
//! - `OODSTA01` magic
//! - `u32` detector tag, `u32` section count
//! - per section: 4-byte ASCII name, `u32 rows`, `u32 cols`, then
//!   `rows·cols` f64 values row-major
//!
//! Values are stored at double precision so a state reloads bit-identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DetectorError, DetectorKind, DetectorState, KlmState, KnnState, MahaState, ReactState, VimState};
use crate::eds::ModelHead;
use crate::numeric::RowMatrix;

pub const STATE_MAGIC: &[u8; 8] = b"OODSTA01";

type Sections = Vec<([u8; 4], RowMatrix)>;

fn scalar(v: f64) -> RowMatrix {
    RowMatrix::from_vec(1, 1, vec![v])
}

fn row_vector(v: &[f64]) -> RowMatrix {
    RowMatrix::from_vec(1, v.len(), v.to_vec())
}

fn sections_of(state: &DetectorState) -> Sections {
    match state {
        DetectorState::Msp | DetectorState::Mls | DetectorState::GradNorm => Vec::new(),
        DetectorState::Gen { gamma } => vec![(*b"GAMM", scalar(*gamma))],
        DetectorState::Maha(s) => vec![
            (
                *b"CLSS",
                row_vector(&s.classes().iter().map(|&k| k as f64).collect::<Vec<_>>()),
            ),
            (*b"CENT", s.centroids().clone()),
            (*b"CHOL", s.factor().clone()),
        ],
        DetectorState::React(s) => vec![
            (*b"TAU_", scalar(s.clamp())),
            (*b"HW__", s.head().weight().clone()),
            (*b"HB__", row_vector(s.head().bias())),
        ],
        DetectorState::Klm(s) => vec![(*b"TMPL", s.templates().clone())],
        DetectorState::Knn(s) => vec![(*b"BANK", s.bank().clone()), (*b"K___", scalar(s.k() as f64))],
        DetectorState::Vim(s) => vec![
            (*b"OFFS", row_vector(s.offset())),
            (*b"BASI", s.basis().clone()),
            (*b"ALPH", scalar(s.alpha())),
        ],
    }
}

pub fn write_state<W: Write>(state: &DetectorState, mut sink: W) -> Result<u64, DetectorError> {
    let sections = sections_of(state);
    let mut buf = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&state.kind().tag().to_le_bytes());
    buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, m) in &sections {
        let dims = |v: usize| {
            u32::try_from(v).map_err(|_| DetectorError::State("section too large".into()))
        };
        buf.extend_from_slice(name);
        buf.extend_from_slice(&dims(m.rows())?.to_le_bytes());
        buf.extend_from_slice(&dims(m.cols())?.to_le_bytes());
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len() as u64)
}

fn bad(msg: impl Into<String>) -> DetectorError {
    DetectorError::State(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], DetectorError> {
        let remaining = self.bytes.len() - self.pos;
        if len > remaining {
            return Err(bad(format!("truncated: need {len} bytes, {remaining} left")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DetectorError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_sections(bytes: &[u8]) -> Result<(DetectorKind, BTreeMap<[u8; 4], RowMatrix>), DetectorError> {
    if bytes.len() < 8 || &bytes[..8] != STATE_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut r = Reader { bytes, pos: 8 };
    let tag = r.u32()?;
    let kind = DetectorKind::from_tag(tag).ok_or_else(|| bad(format!("unknown detector tag {tag}")))?;
    let count = r.u32()?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let name: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| bad("section size overflows"))?;
        let raw = r.take(len)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite("state section"));
        }
        if sections.insert(name, RowMatrix::from_vec(rows, cols, values)).is_some() {
            return Err(bad(format!("duplicate section {}", String::from_utf8_lossy(&name))));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last section"));
    }
    Ok((kind, sections))
}

struct Fields(BTreeMap<[u8; 4], RowMatrix>);

impl Fields {
    fn take(&mut self, name: &[u8; 4]) -> Result<RowMatrix, DetectorError> {
        self.0
            .remove(name)
            .ok_or_else(|| bad(format!("missing section {}", String::from_utf8_lossy(name))))
    }

    fn scalar(&mut self, name: &[u8; 4]) -> Result<f64, DetectorError> {
        let m = self.take(name)?;
        if m.rows() != 1 || m.cols() != 1 {
            return Err(bad(format!("section {} must be 1x1", String::from_utf8_lossy(name))));
        }
        Ok(m.get(0, 0))
    }

    fn vector(&mut self, name: &[u8; 4]) -> Result<Vec<f64>, DetectorError> {
        let m = self.take(name)?;
        if m.rows() != 1 {
            return Err(bad(format!("section {} must be a row vector", String::from_utf8_lossy(name))));
        }
        Ok(m.into_vec())
    }

    fn count(&mut self, name: &[u8; 4]) -> Result<usize, DetectorError> {
        as_count(self.scalar(name)?)
    }

    fn finish(self) -> Result<(), DetectorError> {
        match self.0.keys().next() {
            Some(extra) => Err(bad(format!("unexpected section {}", String::from_utf8_lossy(extra)))),
            None => Ok(()),
        }
    }
}

fn as_count(v: f64) -> Result<usize, DetectorError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(bad(format!("expected a non-negative integer, got {v}")))
    }
}

fn parse_state(bytes: &[u8]) -> Result<DetectorState, DetectorError> {
    let (kind, sections) = parse_sections(bytes)?;
    let mut f = Fields(sections);
    let state = match kind {
        DetectorKind::Msp => DetectorState::Msp,
        DetectorKind::Mls => DetectorState::Mls,
        DetectorKind::GradNorm => DetectorState::GradNorm,
        DetectorKind::Gen => {
            let gamma = f.scalar(b"GAMM")?;
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(bad("gen gamma out of range"));
            }
            DetectorState::Gen { gamma }
        }
        DetectorKind::Maha => {
            let classes = f
                .vector(b"CLSS")?
                .into_iter()
                .map(|v| as_count(v).map(|k| k as u32))
                .collect::<Result<Vec<_>, _>>()?;
            let centroids = f.take(b"CENT")?;
            let factor = f.take(b"CHOL")?;
            DetectorState::Maha(MahaState::from_parts(classes, centroids, factor)?)
        }
        DetectorKind::React => {
            let clamp = f.scalar(b"TAU_")?;
            let weight = f.take(b"HW__")?;
            let bias = f.vector(b"HB__")?;
            let head = ModelHead::new(weight, bias).map_err(|e| bad(e.to_string()))?;
            if head.c() < 2 {
                return Err(bad("react head needs at least 2 classes"));
            }
            DetectorState::React(ReactState::from_parts(clamp, head))
        }
        DetectorKind::Klm => {
            let t = f.take(b"TMPL")?;
            if t.rows() != t.cols() || t.rows() < 2 {
                return Err(bad("klm templates must be c x c with c >= 2"));
            }
            DetectorState::Klm(KlmState::from_templates(t))
        }
        DetectorKind::Knn => {
            let bank = f.take(b"BANK")?;
            let k = f.count(b"K___")?;
            if bank.cols() == 0 {
                return Err(bad("knn bank has zero width"));
            }
            DetectorState::Knn(KnnState::from_parts(bank, k)?)
        }
        DetectorKind::Vim => {
            let offset = f.vector(b"OFFS")?;
            let basis = f.take(b"BASI")?;
            let alpha = f.scalar(b"ALPH")?;
            DetectorState::Vim(VimState::from_parts(offset, basis, alpha)?)
        }
    };
    f.finish()?;
    Ok(state)
}

pub fn read_state<R: Read>(mut source: R) -> Result<DetectorState, DetectorError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_state(&bytes)
}

pub fn read_state_file(path: impl AsRef<Path>) -> Result<DetectorState, DetectorError> {
    read_state(BufReader::new(File::open(path)?))
}

pub fn write_state_file(state: &DetectorState, path: impl AsRef<Path>) -> Result<u64, DetectorError> {
    write_state(state, BufWriter::new(File::create(path)?))
}
