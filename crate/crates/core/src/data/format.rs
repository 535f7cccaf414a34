//! Little-endian binary container.
//!
//! ```text
//! magic "VFG1" | u32 version | u32 shapes | u16 rows | u16 cols | u32 dim
//! u32 classes | classes x (u32 len, utf-8 name) | u64 fnv1a(payload)
//! u8 confidences-present
//! payload: shapes x (u32 label | u32 len, utf-8 id | rows*cols*dim f32
//!                    | [rows*cols f32 confidences])
//! ```

use std::fs;
use std::path::Path;

use super::{Dataset, FeatureGrid, Fnv1a};
use crate::error::{Error, Result};
use crate::viewspace::ViewSpace;

pub const MAGIC: [u8; 4] = *b"VFG1";
pub const VERSION: u32 = 1;

pub(crate) fn encode_payload(ds: &Dataset) -> Vec<u8> {
    let with_conf = ds.has_confidences();
    let per_shape = 8 + ds.space.cells() * (ds.dim + 1) * 4;
    let mut out = Vec::with_capacity(ds.shapes.len() * per_shape);
    for s in &ds.shapes {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        put_str(&mut out, &s.id);
        for &x in s.features() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        if with_conf {
            for &x in s.confidences().expect("checked above") {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.space.rows > u16::MAX as usize || ds.space.cols > u16::MAX as usize {
        return Err(Error::InvalidConfig("grid dimensions exceed u16".into()));
    }
    for s in &ds.shapes {
        if s.dim() != ds.dim || s.space() != ds.space {
            return Err(Error::Dimension {
                op: "write dataset",
                left: vec![ds.space.rows, ds.space.cols, ds.dim],
                right: vec![s.space().rows, s.space().cols, s.dim()],
            });
        }
    }
    let payload = encode_payload(ds);
    let mut h = Fnv1a::new();
    h.write(&payload);

    let mut out = Vec::with_capacity(payload.len() + 64);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.shapes.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.space.rows as u16).to_le_bytes());
    out.extend_from_slice(&(ds.space.cols as u16).to_le_bytes());
    out.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    out.extend_from_slice(&(ds.class_names.len() as u32).to_le_bytes());
    for name in &ds.class_names {
        put_str(&mut out, name);
    }
    out.extend_from_slice(&h.finish().to_le_bytes());
    out.push(ds.has_confidences() as u8);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptHeader(format!("{what} is not valid UTF-8")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow() -> Error {
    Error::CorruptHeader("size overflow".into())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let rows = cur.u16()? as usize;
    let cols = cur.u16()? as usize;
    let dim = cur.u32()? as usize;
    let classes = cur.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::CorruptHeader(format!("grid {rows}x{cols}")));
    }
    if dim == 0 {
        return Err(Error::CorruptHeader("feature dimension 0".into()));
    }
    let mut class_names = Vec::with_capacity(classes.min(1 << 16));
    for _ in 0..classes {
        class_names.push(cur.string("class name")?);
    }
    let checksum = cur.u64()?;
    let flag = cur.u8()?;
    let with_conf = match flag {
        0 => false,
        1 => true,
        f => return Err(Error::CorruptHeader(format!("confidence flag {f}"))),
    };
    let space = ViewSpace { rows, cols };

    let payload_start = cur.pos;
    let cells = space.cells();
    let feat_len = cells.checked_mul(dim).ok_or_else(overflow)?;
    let mut ds = Dataset::new(class_names, space, dim);
    ds.shapes.reserve(count.min(1 << 16));
    for _ in 0..count {
        let label = cur.u32()? as usize;
        let id = cur.string("shape id")?;
        let feats = cur.f32s(feat_len)?;
        let mut grid = FeatureGrid::new(id, label, space, dim, feats)?;
        if with_conf {
            grid.set_confidences(cur.f32s(cells)?)?;
        }
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        ds.shapes.push(grid);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after {count} shapes",
            bytes.len() - cur.pos
        )));
    }
    let mut h = Fnv1a::new();
    h.write(&bytes[payload_start..]);
    if h.finish() != checksum {
        return Err(Error::ChecksumMismatch {
            expected: checksum,
            found: h.finish(),
        });
    }
    Ok(ds)
}
