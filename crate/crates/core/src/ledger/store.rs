//! Durable block storage.
//!
//! `blocks.dat` is an append-only sequence of records, each a 4-byte
//! big-endian length followed by the canonical block encoding.
//! `blocks.idx` holds one 8-byte big-endian file offset per height.
//! [`BlockStore::open`] refuses a store whose framing or index is
//! inconsistent; [`BlockStore::repair`] truncates a torn trailing record
//! after a crash and rebuilds the index from the data file.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::codec::Canonical;

use super::block::Block;
use super::LedgerError;

pub const DATA_FILE: &str = "blocks.dat";
pub const INDEX_FILE: &str = "blocks.idx";

/// One framed record as found on disk.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub offset: u64,
    pub bytes: Vec<u8>,
}

/// Result of scanning the data file: the records that framed cleanly and,
/// if framing broke, the byte offset where it did.
#[derive(Debug, Clone)]
pub struct Scan {
    pub records: Vec<RawRecord>,
    pub broken_at: Option<u64>,
}

pub fn scan_records(data: &[u8]) -> Scan {
    let mut records = Vec::new();
    let mut pos = 0usize;
    while pos < data.len() {
        if data.len() - pos < 4 {
            return Scan { records, broken_at: Some(pos as u64) };
        }
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let start = pos + 4;
        if data.len() - start < len {
            return Scan { records, broken_at: Some(pos as u64) };
        }
        records.push(RawRecord {
            offset: pos as u64,
            bytes: data[start..start + len].to_vec(),
        });
        pos = start + len;
    }
    Scan { records, broken_at: None }
}

pub fn read_index(bytes: &[u8]) -> Vec<u64> {
    bytes
        .chunks_exact(8)
        .map(|c| u64::from_be_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

#[derive(Debug)]
pub struct BlockStore {
    dir: PathBuf,
    data: File,
    index: File,
    offsets: Vec<u64>,
    end: u64,
}

impl BlockStore {
    /// Opens or creates the store in `dir`.
    pub fn open(dir: &Path) -> Result<Self, LedgerError> {
        fs::create_dir_all(dir)?;
        let data_path = dir.join(DATA_FILE);
        let index_path = dir.join(INDEX_FILE);
        let mut data = OpenOptions::new().read(true).append(true).create(true).open(&data_path)?;
        let mut raw = Vec::new();
        data.read_to_end(&mut raw)?;
        let scan = scan_records(&raw);
        if let Some(at) = scan.broken_at {
            return Err(LedgerError::Framing(at));
        }
        let offsets: Vec<u64> = scan.records.iter().map(|r| r.offset).collect();
        let index_bytes = match fs::read(&index_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && offsets.is_empty() => {
                fs::write(&index_path, [])?;
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        if index_bytes.len() % 8 != 0 || read_index(&index_bytes) != offsets {
            return Err(LedgerError::IndexMismatch);
        }
        let index = OpenOptions::new().append(true).open(&index_path)?;
        Ok(Self { dir: dir.to_path_buf(), data, index, offsets, end: raw.len() as u64 })
    }

    /// Crash recovery: drops a torn trailing record and rewrites the index.
    /// Returns the number of bytes truncated.
    pub fn repair(dir: &Path) -> Result<u64, LedgerError> {
        let data_path = dir.join(DATA_FILE);
        let raw = fs::read(&data_path)?;
        let scan = scan_records(&raw);
        let keep = scan.broken_at.unwrap_or(raw.len() as u64);
        if keep < raw.len() as u64 {
            OpenOptions::new().write(true).open(&data_path)?.set_len(keep)?;
        }
        let mut buf = Vec::with_capacity(scan.records.len() * 8);
        for r in &scan.records {
            buf.extend_from_slice(&r.offset.to_be_bytes());
        }
        fs::write(dir.join(INDEX_FILE), buf)?;
        Ok(raw.len() as u64 - keep)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> u64 {
        self.offsets.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn append(&mut self, block: &Block) -> Result<(), LedgerError> {
        let bytes = block.to_canonical_bytes();
        let len = u32::try_from(bytes.len()).map_err(|_| LedgerError::BlockTooLarge)?;
        let mut record = Vec::with_capacity(bytes.len() + 4);
        record.extend_from_slice(&len.to_be_bytes());
        record.extend_from_slice(&bytes);
        self.data.write_all(&record)?;
        self.data.sync_data()?;
        self.index.write_all(&self.end.to_be_bytes())?;
        self.index.sync_data()?;
        self.offsets.push(self.end);
        self.end += record.len() as u64;
        Ok(())
    }

    pub fn read(&self, height: u64) -> Result<Block, LedgerError> {
        let offset = *self
            .offsets
            .get(height as usize)
            .ok_or(LedgerError::NoSuchHeight(height))?;
        let mut file = File::open(self.dir.join(DATA_FILE))?;
        file.seek(SeekFrom::Start(offset))?;
        let mut len = [0u8; 4];
        file.read_exact(&mut len)?;
        let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
        file.read_exact(&mut buf)?;
        Ok(Block::from_canonical_bytes(&buf)?)
    }

    /// Decodes every stored block in order.
    pub fn load_all(dir: &Path) -> Result<Vec<Block>, LedgerError> {
        let raw = match fs::read(dir.join(DATA_FILE)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let scan = scan_records(&raw);
        if let Some(at) = scan.broken_at {
            return Err(LedgerError::Framing(at));
        }
        scan.records
            .iter()
            .map(|r| Block::from_canonical_bytes(&r.bytes).map_err(LedgerError::from))
            .collect()
    }
}
