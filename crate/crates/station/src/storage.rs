//! Append-only newline-delimited JSON tables, loaded fully at startup.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const METERS_FILE: &str = "meters.jsonl";
pub const READINGS_FILE: &str = "readings.jsonl";
pub const DEAD_LETTER_FILE: &str = "dead_letter.jsonl";
pub const TARIFF_FILE: &str = "tariff.json";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Corrupt { path: PathBuf, line: usize, source: serde_json::Error },
}

#[derive(Debug)]
pub struct Storage {
    dir: PathBuf,
}

impl Storage {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StorageError::Io { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Reads every row of `table`. A final line without its newline is a torn
    /// append and is skipped; any other bad line is an error.
    pub fn load<T: DeserializeOwned>(&self, table: &str) -> Result<Vec<T>, StorageError> {
        let path = self.dir.join(table);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StorageError::Io { path, source }),
        };
        let mut rows = Vec::new();
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut number = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|source| StorageError::Io { path: path.clone(), source })?;
            if n == 0 {
                break;
            }
            number += 1;
            let complete = line.ends_with('\n');
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line.trim_end()) {
                Ok(row) => rows.push(row),
                Err(_) if !complete => break,
                Err(source) => return Err(StorageError::Corrupt { path, line: number, source }),
            }
        }
        Ok(rows)
    }

    pub fn append<T: Serialize>(&self, table: &str, row: &T) -> Result<(), StorageError> {
        let path = self.dir.join(table);
        let mut line = serde_json::to_string(row).expect("rows serialize");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|source| StorageError::Io { path, source })
    }

    pub fn load_document<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, StorageError> {
        let path = self.dir.join(name);
        match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s)
                .map(Some)
                .map_err(|source| StorageError::Corrupt { path, line: 1, source }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StorageError::Io { path, source }),
        }
    }

    /// Replaces a whole document via write-then-rename.
    pub fn store_document<T: Serialize>(&self, name: &str, doc: &T) -> Result<(), StorageError> {
        let path = self.dir.join(name);
        let tmp = path.with_extension("tmp");
        let body = serde_json::to_vec_pretty(doc).expect("documents serialize");
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|source| StorageError::Io { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_load_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let s = Storage::open(dir.path()).unwrap();
        s.append("t.jsonl", &1u32).unwrap();
        s.append("t.jsonl", &2u32).unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.path().join("t.jsonl")).unwrap();
        f.write_all(b"{\"partial").unwrap();
        assert_eq!(s.load::<u32>("t.jsonl").unwrap(), vec![1, 2]);
        assert!(s.load::<u32>("missing.jsonl").unwrap().is_empty());

        fs::write(dir.path().join("bad.jsonl"), "1\nnope\n3\n").unwrap();
        assert!(matches!(s.load::<u32>("bad.jsonl"), Err(StorageError::Corrupt { line: 2, .. })));
    }
}
