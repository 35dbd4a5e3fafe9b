//! Versioned binary store image.
//!
//! Layout (integers little-endian, strings as `u32` length + UTF-8 bytes):
//!
//! ```text
//! "PPRL1"
//! u8   finest level code
//! u64  entity count, then per entity (parents first): str id, str label,
//!      u8 has_parent, [str parent]
//! u64  series count, then per series: str entity, u8 stat, str attr,
//!      str value, u64 cell count, then per cell: i64 epoch start, u64 count
//! [32] SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EntityHierarchy, Store, StoreError};
use crate::noise::StatType;
use crate::timegrid::Level;

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"PPRL1";
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a store snapshot (bad magic header)")]
    BadMagic,
    #[error("snapshot truncated at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt snapshot at offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("snapshot checksum mismatch (file offset {offset})")]
    ChecksumMismatch { offset: usize },
    #[error("{0} trailing bytes after snapshot checksum")]
    TrailingBytes(usize),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(SnapshotError::Truncated {
                offset: self.buf.len(),
                needed: n - available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], SnapshotError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64, SnapshotError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn str(&mut self) -> Result<&'a str, SnapshotError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        std::str::from_utf8(bytes).map_err(|_| SnapshotError::Corrupt {
            offset: at,
            reason: "invalid UTF-8".into(),
        })
    }

    fn corrupt(&self, at: usize, reason: impl Into<String>) -> SnapshotError {
        SnapshotError::Corrupt {
            offset: at,
            reason: reason.into(),
        }
    }
}

impl Store {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(SNAPSHOT_MAGIC);
        w.u8(self.finest.code());

        let entities = self.hierarchy.topological();
        w.u64(entities.len() as u64);
        for (id, label, parent) in entities {
            w.str(id);
            w.str(label);
            match parent {
                Some(p) => {
                    w.u8(1);
                    w.str(p);
                }
                None => w.u8(0),
            }
        }

        let series_count: usize = self
            .cells
            .values()
            .flat_map(|stats| stats.values())
            .flat_map(|attrs| attrs.values())
            .map(|values| values.len())
            .sum();
        w.u64(series_count as u64);
        for (entity, stats) in &self.cells {
            for (stat, attrs) in stats {
                for (attr, values) in attrs {
                    for (value, series) in values {
                        w.str(entity);
                        w.u8(stat.code());
                        w.str(attr);
                        w.str(value);
                        w.u64(series.len() as u64);
                        for (epoch, count) in series {
                            w.i64(*epoch);
                            w.u64(*count);
                        }
                    }
                }
            }
        }
        let digest = Sha256::digest(&w.buf);
        w.buf.extend_from_slice(&digest);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Store, StoreError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(SNAPSHOT_MAGIC.len()).ok() != Some(&SNAPSHOT_MAGIC[..]) {
            return Err(SnapshotError::BadMagic.into());
        }
        let at = r.pos;
        let finest = Level::from_code(r.u8()?).ok_or_else(|| r.corrupt(at, "unknown level code"))?;

        let mut hierarchy = EntityHierarchy::new();
        let entity_count = r.u64()?;
        for _ in 0..entity_count {
            let at = r.pos;
            let id = r.str()?;
            let label = r.str()?;
            let added = match r.u8()? {
                0 => hierarchy.add_root(id, label),
                1 => {
                    let parent = r.str()?;
                    hierarchy.add_child(parent, id, label)
                }
                _ => return Err(r.corrupt(at, "bad parent flag").into()),
            };
            added.map_err(|e| r.corrupt(at, e.to_string()))?;
        }

        let mut store = Store::with_hierarchy(finest, hierarchy);
        let series_count = r.u64()?;
        for _ in 0..series_count {
            let at = r.pos;
            let entity = r.str()?;
            let stat = StatType::from_code(r.u8()?).ok_or_else(|| r.corrupt(at, "unknown stat code"))?;
            let attr = r.str()?;
            let value = r.str()?;
            if !store.hierarchy.is_leaf(entity).unwrap_or(false) {
                return Err(r
                    .corrupt(at, format!("series for non-leaf or unknown entity `{entity}`"))
                    .into());
            }
            let cells = r.u64()?;
            let series = store
                .cells
                .entry(entity.to_string())
                .or_default()
                .entry(stat)
                .or_default()
                .entry(attr.to_string())
                .or_default()
                .entry(value.to_string())
                .or_default();
            if !series.is_empty() {
                return Err(r.corrupt(at, "duplicate series").into());
            }
            for _ in 0..cells {
                let at = r.pos;
                let epoch = r.i64()?;
                let count = r.u64()?;
                if !finest.is_boundary(epoch) {
                    return Err(r.corrupt(at, "cell start not aligned to finest level").into());
                }
                if series.insert(epoch, count).is_some() {
                    return Err(r.corrupt(at, "duplicate cell").into());
                }
            }
        }

        let body_len = r.pos;
        let stored: [u8; CHECKSUM_LEN] = r.array()?;
        if Sha256::digest(&bytes[..body_len])[..] != stored[..] {
            return Err(SnapshotError::ChecksumMismatch { offset: body_len }.into());
        }
        if r.pos != bytes.len() {
            return Err(SnapshotError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Ok(store)
    }

    /// Writes the snapshot atomically: a temporary file in the same directory
    /// is renamed over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.encode())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let bytes = fs::read(path)?;
        Store::decode(&bytes)
    }
}
