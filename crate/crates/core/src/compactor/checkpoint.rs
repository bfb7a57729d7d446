//! Durable ingestion cursor.
//!
//! On disk: `v1 <file_identity> <committed_offset> <last_batch_id> <records_ingested> <crc32>`
//! where the CRC (8 hex digits) covers everything before it, separator
//! included. Replaced atomically after every batch.

use std::fmt;
use std::io;
use std::path::Path;

use crate::logfile::{atomic_write, FileIdentity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Checkpoint {
    pub file_identity: FileIdentity,
    /// Bytes of `file_identity` fully ingested and committed; always on a line boundary.
    pub committed_offset: u64,
    pub last_batch_id: u64,
    pub records_ingested: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl Checkpoint {
    pub fn fresh() -> Self {
        Self::default()
    }

    pub fn is_fresh(&self) -> bool {
        *self == Self::default()
    }

    pub fn generation(&self) -> u64 {
        self.file_identity.generation
    }

    pub fn encode(&self) -> String {
        let body = format!(
            "v1 {} {} {} {}",
            self.file_identity, self.committed_offset, self.last_batch_id, self.records_ingested
        );
        let crc = crc32fast::hash(format!("{body} ").as_bytes());
        format!("{body} {crc:08x}\n")
    }

    pub fn decode(text: &str) -> Result<Self, CheckpointError> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_owned());
        let line = text.strip_suffix('\n').ok_or_else(|| corrupt("missing newline"))?;
        let (body, crc) = line.rsplit_once(' ').ok_or_else(|| corrupt("missing crc"))?;
        let crc = u32::from_str_radix(crc, 16).map_err(|_| corrupt("bad crc field"))?;
        if crc32fast::hash(format!("{body} ").as_bytes()) != crc {
            return Err(corrupt("crc mismatch"));
        }
        let fields: Vec<&str> = body.split(' ').collect();
        if fields.len() != 5 {
            return Err(corrupt("wrong field count"));
        }
        if fields[0] != "v1" {
            return Err(corrupt("unsupported version"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| corrupt("bad number"));
        Ok(Checkpoint {
            file_identity: fields[1].parse().map_err(|e: String| CheckpointError::Corrupt(e))?,
            committed_offset: num(fields[2])?,
            last_batch_id: num(fields[3])?,
            records_ingested: num(fields[4])?,
        })
    }

    /// `Ok(None)` when no checkpoint has been written yet.
    pub fn load(path: &Path) -> Result<Option<Self>, CheckpointError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::decode(&text).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) if e.kind() == io::ErrorKind::InvalidData => Err(CheckpointError::Corrupt("not text".into())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, path: &Path) -> io::Result<()> {
        atomic_write(path, self.encode().as_bytes())
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.encode().trim_end())
    }
}
