use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ledger::LedgerChange;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("storage line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRow {
    pub station_id: u16,
    pub received_ts: u32,
    pub payload_hex: String,
    pub error: String,
}

/// Write-ahead record. Server state is rebuilt by replaying these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoredRecord {
    /// An accepted, non-duplicate uplink.
    Uplink { station_id: u16, received_ts: u32, payload_hex: String },
    Quarantine(QuarantineRow),
    Ledger { station_id: u16, change: LedgerChange },
    /// A trap update carrying this server time was sent to the station.
    Issued { station_id: u16, server_time: u32 },
}

pub trait Storage: Send {
    fn load(&mut self) -> Result<Vec<StoredRecord>, StorageError>;
    /// Durable before returning.
    fn append(&mut self, record: &StoredRecord) -> Result<(), StorageError>;
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStorage {
    records: Vec<StoredRecord>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }
}

impl Storage for MemoryStorage {
    fn load(&mut self) -> Result<Vec<StoredRecord>, StorageError> {
        Ok(self.records.clone())
    }

    fn append(&mut self, record: &StoredRecord) -> Result<(), StorageError> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// One JSON object per line, appended and synced per record.
#[derive(Debug)]
pub struct JsonlStorage {
    path: PathBuf,
    file: Option<File>,
    /// The last record on disk lacks its newline.
    unterminated: bool,
}

impl JsonlStorage {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), file: None, unterminated: false }
    }
}

impl Storage for JsonlStorage {
    fn load(&mut self) -> Result<Vec<StoredRecord>, StorageError> {
        let data = match fs::read(&self.path) {
            Ok(d) => d,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        let mut keep = 0;
        let mut start = 0;
        let mut line = 0;
        self.unterminated = false;
        while start < data.len() {
            line += 1;
            let end = data[start..].iter().position(|&b| b == b'\n').map_or(data.len(), |p| start + p);
            let terminated = end < data.len();
            let text = &data[start..end];
            if !text.iter().all(u8::is_ascii_whitespace) {
                match serde_json::from_slice(text) {
                    Ok(r) => out.push(r),
                    // a torn final line from a crash mid-append
                    Err(_) if !terminated => {
                        log::warn!("dropping torn last line of {}", self.path.display());
                        break;
                    }
                    Err(source) => return Err(StorageError::Corrupt { line, source }),
                }
            }
            keep = if terminated { end + 1 } else { end };
            self.unterminated = !terminated && !text.is_empty();
            start = end + 1;
        }
        if keep < data.len() {
            OpenOptions::new().write(true).open(&self.path)?.set_len(keep as u64)?;
        }
        Ok(out)
    }

    fn append(&mut self, record: &StoredRecord) -> Result<(), StorageError> {
        if self.file.is_none() {
            self.file = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        let f = self.file.as_mut().expect("opened above");
        let mut line = Vec::new();
        if std::mem::take(&mut self.unterminated) {
            line.push(b'\n');
        }
        serde_json::to_writer(&mut line, record).map_err(io::Error::other)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: u32) -> StoredRecord {
        StoredRecord::Issued { station_id: 1, server_time: n }
    }

    #[test]
    fn torn_tail_is_cut_before_appending() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut s = JsonlStorage::new(&path);
        s.append(&rec(1)).unwrap();
        s.append(&rec(2)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"type":"issued","stat"#).unwrap();

        let mut s = JsonlStorage::new(&path);
        assert_eq!(s.load().unwrap(), vec![rec(1), rec(2)]);
        s.append(&rec(3)).unwrap();
        assert_eq!(JsonlStorage::new(&path).load().unwrap(), vec![rec(1), rec(2), rec(3)]);
    }

    #[test]
    fn complete_record_without_newline_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        fs::write(&path, serde_json::to_vec(&rec(1)).unwrap()).unwrap();
        let mut s = JsonlStorage::new(&path);
        assert_eq!(s.load().unwrap(), vec![rec(1)]);
        s.append(&rec(2)).unwrap();
        assert_eq!(JsonlStorage::new(&path).load().unwrap(), vec![rec(1), rec(2)]);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        fs::write(&path, "{\"type\":\"issued\"\n{\"type\":\"issued\",\"station_id\":1,\"server_time\":2}\n").unwrap();
        assert!(matches!(JsonlStorage::new(&path).load(), Err(StorageError::Corrupt { line: 1, .. })));
    }
}
