//! `index.hnsw` layout: 8-byte magic, u32 header length, JSON header, the
//! vector matrix (f32 LE, row-major) and per-node adjacency lists
//! (u32 level count, then per level u32 degree followed by u32 neighbors).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hnsw::{HnswConfig, HnswIndex};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NXHNSW1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    #[serde(rename = "M")]
    m: usize,
    ef_construction: usize,
    ef_search: usize,
    seed: u64,
    entry: Option<u32>,
    max_level: usize,
    ids: Vec<String>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::invalid("truncated index file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl HnswIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dim: self.dim,
            count: self.len(),
            m: self.config.m,
            ef_construction: self.config.ef_construction,
            ef_search: self.config.ef_search,
            seed: self.config.seed,
            entry: self.entry,
            max_level: self.max_level,
            ids: self.ids.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.vectors.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for node in &self.links {
            out.extend_from_slice(&(node.len() as u32).to_le_bytes());
            for level in node {
                out.extend_from_slice(&(level.len() as u32).to_le_bytes());
                for n in level {
                    out.extend_from_slice(&n.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err(Error::invalid("not an index.hnsw file (bad magic)"));
        }
        let hlen = c.u32()? as usize;
        let header: Header = serde_json::from_slice(c.take(hlen)?)?;
        if header.ids.len() != header.count {
            return Err(Error::invalid("index header id count mismatch"));
        }
        let config = HnswConfig {
            m: header.m,
            ef_construction: header.ef_construction,
            ef_search: header.ef_search,
            seed: header.seed,
        };
        let mut index = HnswIndex::new(header.dim, config)?;
        let raw = c.take(header.count * header.dim * 4)?;
        index.vectors = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut links = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let levels = c.u32()? as usize;
            let mut node = Vec::with_capacity(levels);
            for _ in 0..levels {
                let deg = c.u32()? as usize;
                let mut ns = Vec::with_capacity(deg);
                for _ in 0..deg {
                    let n = c.u32()?;
                    if n as usize >= header.count {
                        return Err(Error::invalid("neighbor index out of range"));
                    }
                    ns.push(n);
                }
                node.push(ns);
            }
            if node.is_empty() {
                return Err(Error::invalid("node without levels"));
            }
            links.push(node);
        }
        if c.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after index data"));
        }
        index.positions = header
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        index.ids = header.ids;
        index.links = links;
        index.entry = header.entry;
        index.max_level = header.max_level;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
