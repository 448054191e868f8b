//! Append-only annotation journal with an in-memory index.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gatecheck_core::annotation::{parse_journal, AnnotationIndex, AnnotationRecord, JournalError};
use parking_lot::RwLock;

/// One writer appends; readers take cheap snapshots of the index.
pub struct AnnotationStore {
    path: PathBuf,
    writer: tokio::sync::Mutex<File>,
    snapshot: RwLock<Arc<AnnotationIndex>>,
}

/// Drops a torn final line so later appends start on a line boundary.
fn trim_torn_tail(file: &mut File) -> io::Result<String> {
    let mut text = String::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_string(&mut text)?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        tracing::warn!(dropped = text.len() - keep, "discarding torn journal tail");
        file.set_len(keep as u64)?;
        text.truncate(keep);
    }
    file.seek(SeekFrom::End(0))?;
    Ok(text)
}

impl AnnotationStore {
    /// Opens or creates the journal and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let text = trim_torn_tail(&mut file)?;
        let records = parse_journal(&text)?;
        let index = AnnotationIndex::from_records(&records);
        tracing::info!(path = %path.display(), records = records.len(), "journal replayed");
        Ok(Self { path, writer: tokio::sync::Mutex::new(file), snapshot: RwLock::new(Arc::new(index)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<AnnotationIndex> {
        self.snapshot.read().clone()
    }

    /// Appends and syncs one line, then publishes the updated index. Returns
    /// whether the record became the effective one for its key.
    pub async fn append(&self, record: AnnotationRecord) -> io::Result<bool> {
        let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.writer.lock().await;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        let mut next = (*self.snapshot()).clone();
        let accepted = next.apply(record);
        *self.snapshot.write() = Arc::new(next);
        Ok(accepted)
    }

    /// The journal file as written so far.
    pub async fn export(&self) -> io::Result<String> {
        let _guard = self.writer.lock().await;
        std::fs::read_to_string(&self.path)
    }
}
