//! Append-only EEPROM log holding the meter reading and its configuration.
//!
//! Every record is a fixed 92-byte frame:
//!
//! ```text
//! offset  size  field
//!      0     8  seq (u64 LE)
//!      8     8  ncu_pulses (u64 LE)
//!     16     8  ecu_pulses (u64 LE)
//!     24     1  config digest length
//!     25    63  config digest, zero padded
//!     88     4  CRC-32 (IEEE, reflected) over bytes 0..88, LE
//! ```
//!
//! A record only counts once its last CRC byte is on disk, so a torn append
//! leaves a tail that fails verification and recovery falls back to the
//! previous record.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_LEN: usize = 92;
pub const DIGEST_CAPACITY: usize = 63;
const CRC_OFFSET: usize = RECORD_LEN - 4;
pub const DEFAULT_COMPACTION_THRESHOLD: usize = 4096;

#[derive(Debug, Error)]
pub enum NvError {
    #[error("config digest of {needed} bytes exceeds the {capacity}-byte record slot")]
    StorageFull { needed: usize, capacity: usize },
    #[error("nv log i/o: {0}")]
    Io(#[from] io::Error),
}

/// What the firmware asks to persist.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvPayload {
    pub ncu_pulses: u64,
    pub ecu_pulses: u64,
    pub config_digest: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvRecord {
    pub seq: u64,
    pub ncu_pulses: u64,
    pub ecu_pulses: u64,
    pub config_digest: Vec<u8>,
    pub crc: u32,
}

impl NvRecord {
    pub fn payload(&self) -> NvPayload {
        NvPayload {
            ncu_pulses: self.ncu_pulses,
            ecu_pulses: self.ecu_pulses,
            config_digest: self.config_digest.clone(),
        }
    }
}

fn encode_record(seq: u64, payload: &NvPayload) -> Result<([u8; RECORD_LEN], u32), NvError> {
    let digest = &payload.config_digest;
    if digest.len() > DIGEST_CAPACITY {
        return Err(NvError::StorageFull { needed: digest.len(), capacity: DIGEST_CAPACITY });
    }
    let mut frame = [0u8; RECORD_LEN];
    frame[0..8].copy_from_slice(&seq.to_le_bytes());
    frame[8..16].copy_from_slice(&payload.ncu_pulses.to_le_bytes());
    frame[16..24].copy_from_slice(&payload.ecu_pulses.to_le_bytes());
    frame[24] = digest.len() as u8;
    frame[25..25 + digest.len()].copy_from_slice(digest);
    let crc = crc32fast::hash(&frame[..CRC_OFFSET]);
    frame[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
    Ok((frame, crc))
}

fn decode_record(frame: &[u8]) -> Option<NvRecord> {
    let frame: &[u8; RECORD_LEN] = frame.try_into().ok()?;
    let crc = u32::from_le_bytes(frame[CRC_OFFSET..].try_into().ok()?);
    if crc32fast::hash(&frame[..CRC_OFFSET]) != crc {
        return None;
    }
    let len = usize::from(frame[24]);
    if len > DIGEST_CAPACITY {
        return None;
    }
    let u64_at = |at: usize| u64::from_le_bytes(frame[at..at + 8].try_into().unwrap());
    Some(NvRecord {
        seq: u64_at(0),
        ncu_pulses: u64_at(8),
        ecu_pulses: u64_at(16),
        config_digest: frame[25..25 + len].to_vec(),
        crc,
    })
}

/// Highest-seq record with a valid CRC, or the zero record.
pub fn recover_bytes(log: &[u8]) -> NvRecord {
    log.chunks_exact(RECORD_LEN)
        .filter_map(decode_record)
        .max_by_key(|r| r.seq)
        .unwrap_or_default()
}

/// The log of one meter, optionally mirrored to a file.
#[derive(Debug)]
pub struct NvStore {
    log: Vec<u8>,
    file: Option<(PathBuf, File)>,
    compaction_threshold: usize,
    last_seq: u64,
}

impl Default for NvStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl NvStore {
    pub fn in_memory() -> Self {
        Self::from_bytes(Vec::new())
    }

    /// Opens an in-memory store over an existing log image, dropping any
    /// partial frame at the tail.
    pub fn from_bytes(mut log: Vec<u8>) -> Self {
        log.truncate(log.len() - log.len() % RECORD_LEN);
        let last_seq = recover_bytes(&log).seq;
        Self { log, file: None, compaction_threshold: DEFAULT_COMPACTION_THRESHOLD, last_seq }
    }

    /// Opens (or creates) a file-backed log.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, NvError> {
        let path = path.as_ref();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut store = Self::from_bytes(bytes);
        if store.log.is_empty() {
            // Also clears a file that held only a torn frame.
            fs::write(path, [])?;
        } else {
            fs::write(path, &store.log)?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        store.file = Some((path.to_path_buf(), file));
        Ok(store)
    }

    /// Creates a fresh, empty file-backed log, discarding any previous file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, NvError> {
        fs::write(path.as_ref(), [])?;
        Self::open(path)
    }

    pub fn with_compaction_threshold(mut self, records: usize) -> Self {
        self.compaction_threshold = records.max(1);
        self
    }

    pub fn bytes(&self) -> &[u8] {
        &self.log
    }

    pub fn record_count(&self) -> usize {
        self.log.len() / RECORD_LEN
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Appends `payload` under the next sequence number and returns it.
    pub fn commit(&mut self, payload: &NvPayload) -> Result<u64, NvError> {
        let seq = self.last_seq + 1;
        let (frame, _) = encode_record(seq, payload)?;
        if self.record_count() >= self.compaction_threshold {
            self.compact()?;
        }
        if let Some((_, file)) = self.file.as_mut() {
            file.write_all(&frame)?;
            file.flush()?;
        }
        self.log.extend_from_slice(&frame);
        self.last_seq = seq;
        Ok(seq)
    }

    pub fn recover(&self) -> NvRecord {
        recover_bytes(&self.log)
    }

    /// Rewrites the log with only its latest valid record.
    pub fn compact(&mut self) -> Result<(), NvError> {
        let latest = self.recover();
        let image = if latest.seq == 0 {
            Vec::new()
        } else {
            encode_record(latest.seq, &latest.payload())?.0.to_vec()
        };
        if let Some((path, _)) = self.file.take() {
            let tmp = path.with_extension("nvlog.tmp");
            fs::write(&tmp, &image)?;
            fs::rename(&tmp, &path)?;
            let file = OpenOptions::new().append(true).open(&path)?;
            self.file = Some((path, file));
        }
        self.log = image;
        Ok(())
    }
}
