//! Snapshot layout (little-endian):
//!
//! ```text
//! "NPDS" | version u32 | layer u32 | channel u8 | N u64 | D u32
//! N x ( id_len u16 | id utf-8 | label u8 | age u8 | sex u8 | D x f32 )
//! ```
//!
//! An empty store that never held an entry is written with D = 0. Insertion
//! ranks are not persisted; a loaded store ranks entries by file order, which
//! preserves every tie-break.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Datastore, DatastoreError, PooledVector, Result};
use crate::ingest::{AgeGroup, Channel, FeatureKey, Label, Sex};
use crate::SNAPSHOT_VERSION;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"NPDS";

/// Conventional snapshot file name for a (layer, channel) inside a store directory.
pub fn snapshot_file_name(key: FeatureKey) -> String {
    format!("layer{}_{}.npds", key.layer, key.channel)
}

pub fn encode_snapshot(ds: &Datastore) -> Result<Vec<u8>> {
    let dim = ds.dim().unwrap_or(0);
    let mut buf = Vec::with_capacity(25 + ds.len() * (8 + dim * 4));
    buf.extend_from_slice(&SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ds.layer().to_le_bytes());
    buf.push(ds.channel().code());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in ds.entries() {
        let id = e.sample_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| DatastoreError::IdTooLong { len: id.len() })?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.push(e.label.code());
        buf.push(e.age_group.code());
        buf.push(e.sex.code());
        for v in e.key.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(DatastoreError::Truncated {
                offset: self.pos as u64,
                needed: (n - remaining) as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    fn code<T>(&mut self, field: &'static str, parse: fn(u8) -> Option<T>) -> Result<T> {
        let offset = self.pos as u64;
        let v = self.u8()?;
        parse(v).ok_or(DatastoreError::InvalidField {
            field,
            offset,
            value: v as u64,
        })
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Datastore> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != SNAPSHOT_MAGIC {
        return Err(DatastoreError::BadMagic { found: magic });
    }
    let version = cur.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(DatastoreError::UnsupportedVersion(version));
    }
    let layer = cur.u32()?;
    let channel = cur.code("channel", Channel::from_code)?;
    let count = cur.u64()?;
    let dim_offset = cur.pos as u64;
    let dim = cur.u32()? as usize;
    if count > 0 && dim == 0 {
        return Err(DatastoreError::InvalidField {
            field: "D",
            offset: dim_offset,
            value: 0,
        });
    }

    let mut ds = Datastore::new(layer, channel);
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let id_offset = cur.pos as u64;
        let id = std::str::from_utf8(cur.take(len)?).map_err(|_| DatastoreError::InvalidId { offset: id_offset })?;
        let label = cur.code("label", Label::from_code)?;
        let age = cur.code("age", AgeGroup::from_code)?;
        let sex = cur.code("sex", Sex::from_code)?;
        let raw = cur.take(dim * 4)?;
        let key: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ds.insert(id, PooledVector::new(key)?, label, age, sex)?;
    }
    if cur.pos != bytes.len() {
        return Err(DatastoreError::TrailingData {
            offset: cur.pos as u64,
            extra: (bytes.len() - cur.pos) as u64,
        });
    }
    if count == 0 && dim > 0 {
        ds.dim = Some(dim);
    }
    Ok(ds)
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Datastore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_snapshot(&bytes)
}

/// Writes the snapshot atomically: a temporary file in the target directory is
/// renamed over `path`, so readers see either the old or the new store.
pub fn write_snapshot(ds: &Datastore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DatastoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = encode_snapshot(ds)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(&bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
