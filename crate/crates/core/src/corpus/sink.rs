//! Append-only JSONL sink with a persisted dedup ledger.
//!
//! Each append is one critical section: an in-process mutex plus an advisory
//! lock on `<file>.lock` (so separate processes serialize too), duplicate
//! check, a single `write` of the line and its newline, `fdatasync`, then the
//! ledger update and atomic ledger rewrite. A crash between the line write and
//! the ledger rewrite is repaired on the next open by replaying the file.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::dedup::{DedupLedger, DedupMethod, DedupMethods};
use super::{normalize_url, CorpusEntry};

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("storage full while writing {0}")]
    StorageFull(PathBuf),
    #[error("could not lock {path} within {waited_ms} ms")]
    LockTimeout { path: PathBuf, waited_ms: u64 },
    #[error("cannot serialize entry: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SinkError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::StorageFull {
            SinkError::StorageFull(path.to_path_buf())
        } else {
            SinkError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Written,
    SkippedDuplicate(DedupMethod),
}

/// Parsed contents of a corpus file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub entries: Vec<CorpusEntry>,
    /// Byte length of an incomplete final record, if one was found.
    pub torn_tail_bytes: Option<usize>,
    /// Complete lines that did not parse.
    pub malformed_lines: usize,
    /// Byte offset just past the last complete record.
    pub valid_len: u64,
    /// The final record was complete but lacked its newline.
    pub missing_newline: bool,
}

/// What [`CorpusSink::open`] had to repair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecoveryReport {
    pub entries: usize,
    pub torn_tail_bytes: Option<usize>,
    pub repaired_newline: bool,
    /// Entries that were in the file but missing from the ledger.
    pub replayed: usize,
}

impl RecoveryReport {
    pub fn recovered_anything(&self) -> bool {
        self.torn_tail_bytes.is_some() || self.repaired_newline || self.replayed > 0
    }
}

fn parse_bytes(bytes: &[u8]) -> LoadReport {
    let mut report = LoadReport::default();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        match rest.iter().position(|&b| b == b'\n') {
            Some(nl) => {
                let line = &rest[..nl];
                if !line.iter().all(u8::is_ascii_whitespace) {
                    match serde_json::from_slice::<CorpusEntry>(line) {
                        Ok(e) => report.entries.push(e),
                        Err(e) => {
                            log::warn!("malformed corpus line at byte {offset}: {e}");
                            report.malformed_lines += 1;
                        }
                    }
                }
                offset += nl + 1;
                report.valid_len = offset as u64;
            }
            None => {
                // Final segment without a newline: complete only if it parses.
                match serde_json::from_slice::<CorpusEntry>(rest) {
                    Ok(e) => {
                        report.entries.push(e);
                        report.missing_newline = true;
                        report.valid_len = bytes.len() as u64;
                    }
                    Err(_) if rest.iter().all(u8::is_ascii_whitespace) => {}
                    Err(_) => report.torn_tail_bytes = Some(rest.len()),
                }
                break;
            }
        }
    }
    report
}

/// Reads every complete record; an incomplete final record is reported and
/// dropped, never returned. A missing file loads as empty.
pub fn load_entries(path: &Path) -> Result<LoadReport, SinkError> {
    match fs::read(path) {
        Ok(bytes) => {
            let report = parse_bytes(&bytes);
            if let Some(n) = report.torn_tail_bytes {
                log::warn!("{}: ignoring torn final record ({n} bytes)", path.display());
            }
            Ok(report)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(LoadReport::default()),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name: OsString = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Default ledger location next to a corpus file.
pub fn default_ledger_path(jsonl: &Path) -> PathBuf {
    sibling(jsonl, ".ledger.json")
}

struct SinkState {
    file: File,
    lock_file: File,
    ledger: DedupLedger,
    /// File length this process has accounted for in the ledger.
    synced_len: u64,
    written: usize,
}

pub struct CorpusSink {
    path: PathBuf,
    ledger_path: PathBuf,
    lock_path: PathBuf,
    methods: DedupMethods,
    lock_timeout: Duration,
    state: Mutex<SinkState>,
}

impl CorpusSink {
    /// Opens (creating if needed) a corpus file and its ledger, repairing a
    /// torn tail and replaying records the ledger missed.
    pub fn open(
        path: &Path,
        ledger_path: &Path,
        methods: DedupMethods,
        lock_timeout: Duration,
    ) -> Result<(Self, RecoveryReport), SinkError> {
        let lock_path = sibling(path, ".lock");
        let lock_file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        acquire(&lock_file, &lock_path, lock_timeout)?;
        let result = Self::recover(path, ledger_path);
        let _ = lock_file.unlock();
        let (file, ledger, synced_len, report) = result?;
        if report.recovered_anything() {
            log::warn!(
                "recovered {}: torn tail {:?} bytes, newline repaired {}, {} entries replayed into ledger",
                path.display(),
                report.torn_tail_bytes,
                report.repaired_newline,
                report.replayed
            );
        }
        let sink = Self {
            path: path.to_path_buf(),
            ledger_path: ledger_path.to_path_buf(),
            lock_path,
            methods,
            lock_timeout,
            state: Mutex::new(SinkState {
                file,
                lock_file,
                ledger,
                synced_len,
                written: 0,
            }),
        };
        Ok((sink, report))
    }

    fn recover(path: &Path, ledger_path: &Path) -> Result<(File, DedupLedger, u64, RecoveryReport), SinkError> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(path))?;
        let loaded = parse_bytes(&bytes);
        let mut report = RecoveryReport {
            entries: loaded.entries.len(),
            torn_tail_bytes: loaded.torn_tail_bytes,
            ..Default::default()
        };
        let mut len = bytes.len() as u64;
        if loaded.torn_tail_bytes.is_some() {
            file.set_len(loaded.valid_len).map_err(io_err(path))?;
            len = loaded.valid_len;
        }
        if loaded.missing_newline {
            file.write_all(b"\n").map_err(io_err(path))?;
            report.repaired_newline = true;
            len += 1;
        }
        if report.torn_tail_bytes.is_some() || report.repaired_newline {
            file.sync_data().map_err(io_err(path))?;
        }

        let mut ledger = DedupLedger::load(ledger_path).unwrap_or_else(|e| {
            log::warn!("{}: unreadable ledger ({e}); rebuilding from corpus", ledger_path.display());
            DedupLedger::default()
        });
        for entry in &loaded.entries {
            if ledger.record(entry) {
                report.replayed += 1;
            }
        }
        if report.replayed > 0 || !ledger_path.exists() {
            ledger.persist(ledger_path).map_err(io_err(ledger_path))?;
        }
        Ok((file, ledger, len, report))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries written through this handle.
    pub fn written(&self) -> usize {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).written
    }

    /// URL-only duplicate check against the current ledger, used to skip a
    /// fetch. The authoritative check happens again inside [`append`](Self::append).
    pub fn check_url(&self, url: &str) -> Option<DedupMethod> {
        let normalized = normalize_url(url).ok()?;
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.ledger.check_url(url, &normalized, &self.methods)
    }

    pub fn ledger_snapshot(&self) -> DedupLedger {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).ledger.clone()
    }

    pub fn append(&self, entry: &CorpusEntry) -> Result<AppendOutcome, SinkError> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');

        let mut guard = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let state = &mut *guard;
        acquire(&state.lock_file, &self.lock_path, self.lock_timeout)?;
        let result = self.append_locked(state, entry, &line);
        let _ = state.lock_file.unlock();
        result
    }

    fn append_locked(&self, state: &mut SinkState, entry: &CorpusEntry, line: &[u8]) -> Result<AppendOutcome, SinkError> {
        self.absorb_foreign_appends(state)?;
        if let Some(method) = state.ledger.is_duplicate(entry, &self.methods) {
            return Ok(AppendOutcome::SkippedDuplicate(method));
        }
        let write = state.file.write_all(line).and_then(|_| state.file.sync_data());
        if let Err(e) = write {
            // Leave no partial line behind for the next writer.
            let _ = state.file.set_len(state.synced_len);
            return Err(io_err(&self.path)(e));
        }
        state.synced_len += line.len() as u64;
        state.written += 1;
        state.ledger.record(entry);
        state.ledger.persist(&self.ledger_path).map_err(io_err(&self.ledger_path))?;
        Ok(AppendOutcome::Written)
    }

    /// Folds records appended by other processes into the in-memory ledger.
    fn absorb_foreign_appends(&self, state: &mut SinkState) -> Result<(), SinkError> {
        let len = state.file.metadata().map_err(io_err(&self.path))?.len();
        if len <= state.synced_len {
            return Ok(());
        }
        let mut reader = File::open(&self.path).map_err(io_err(&self.path))?;
        reader.seek(SeekFrom::Start(state.synced_len)).map_err(io_err(&self.path))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(io_err(&self.path))?;
        let report = parse_bytes(&bytes);
        for e in &report.entries {
            state.ledger.record(e);
        }
        state.synced_len += report.valid_len;
        Ok(())
    }
}

fn acquire(file: &File, path: &Path, timeout: Duration) -> Result<(), SinkError> {
    let start = Instant::now();
    loop {
        match file.try_lock() {
            Ok(()) => return Ok(()),
            Err(TryLockError::WouldBlock) => {
                if start.elapsed() >= timeout {
                    return Err(SinkError::LockTimeout {
                        path: path.to_path_buf(),
                        waited_ms: start.elapsed().as_millis() as u64,
                    });
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(TryLockError::Error(e)) => return Err(io_err(path)(e)),
        }
    }
}
