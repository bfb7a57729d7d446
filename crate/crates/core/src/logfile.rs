//! Active-log file handling shared by writers and the compactor.
//!
//! Writers append whole lines under a shared advisory lock and re-check, under
//! that lock, that the log path still names the file they hold open. The
//! compactor renames the active log aside and then takes an exclusive lock on
//! the renamed file: once it has the lock, every in-flight append has landed
//! and every later append goes to a fresh active file.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Device and inode of an open or named file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FileId {
    pub dev: u64,
    pub ino: u64,
}

impl FileId {
    #[cfg(unix)]
    pub fn of_metadata(meta: &fs::Metadata) -> FileId {
        use std::os::unix::fs::MetadataExt;
        FileId { dev: meta.dev(), ino: meta.ino() }
    }

    #[cfg(not(unix))]
    pub fn of_metadata(meta: &fs::Metadata) -> FileId {
        // creation time stands in for an inode number
        let created = meta
            .created()
            .ok()
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        FileId { dev: 0, ino: created }
    }

    pub fn of_file(file: &File) -> io::Result<FileId> {
        Ok(Self::of_metadata(&file.metadata()?))
    }

    /// `None` when nothing exists at `path`.
    pub fn of_path(path: &Path) -> io::Result<Option<FileId>> {
        match fs::metadata(path) {
            Ok(m) => Ok(Some(Self::of_metadata(&m))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Identity of one ingested log file: the generation number assigned by the
/// compactor plus the file's device and inode. Line numbers are unique within
/// an identity; the generation keeps identities unique when inodes are reused
/// or a file is truncated in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FileIdentity {
    pub generation: u64,
    pub file: FileId,
}

impl FileIdentity {
    pub fn new(generation: u64, file: FileId) -> Self {
        FileIdentity { generation, file }
    }
}

impl std::fmt::Display for FileIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}-{}", self.generation, self.file.dev, self.file.ino)
    }
}

impl std::str::FromStr for FileIdentity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('-').map(str::parse::<u64>);
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(Ok(generation)), Some(Ok(dev)), Some(Ok(ino)), None) => {
                Ok(FileIdentity { generation, file: FileId { dev, ino } })
            }
            _ => Err(format!("malformed file identity {s:?}")),
        }
    }
}

/// Appends lines to an active log, following renames of the path.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    current: Option<(File, FileId)>,
    buf: Vec<u8>,
    reopens: u64,
}

impl LogWriter {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let mut w = LogWriter { path: path.into(), current: None, buf: Vec::with_capacity(256), reopens: 0 };
        w.reopen()?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of times the writer switched to a new file after a rotation.
    pub fn reopens(&self) -> u64 {
        self.reopens
    }

    fn reopen(&mut self) -> io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let id = FileId::of_file(&file)?;
        self.current = Some((file, id));
        Ok(())
    }

    /// Appends `line` plus a newline in a single write.
    pub fn append_line(&mut self, line: &[u8]) -> io::Result<()> {
        let mut buf = std::mem::take(&mut self.buf);
        buf.clear();
        buf.extend_from_slice(line);
        buf.push(b'\n');
        let r = self.append_raw(&buf);
        self.buf = buf;
        r
    }

    /// Appends bytes verbatim in a single write. Callers are expected to pass
    /// whole lines; anything else leaves a partial line for the compactor to
    /// hold back.
    pub fn append_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        loop {
            if self.current.is_none() {
                self.reopen()?;
            }
            let (file, id) = self.current.as_mut().expect("opened above");
            file.lock_shared()?;
            let still_active = FileId::of_path(&self.path).map(|p| p == Some(*id));
            match still_active {
                Ok(true) => {
                    let r = file.write_all(bytes);
                    file.unlock()?;
                    return r;
                }
                Ok(false) => {
                    file.unlock()?;
                    self.current = None;
                    self.reopens += 1;
                }
                Err(e) => {
                    file.unlock()?;
                    return Err(e);
                }
            }
        }
    }
}

/// Exclusive single-instance lock held for the lifetime of the guard.
#[derive(Debug)]
pub struct InstanceLock {
    file: File,
    path: PathBuf,
}

impl InstanceLock {
    pub fn acquire(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path)?;
        match file.try_lock() {
            Ok(()) => Ok(InstanceLock { file, path }),
            Err(TryLockError::WouldBlock) => {
                Err(io::Error::new(io::ErrorKind::WouldBlock, format!("another compactor holds {}", path.display())))
            }
            Err(TryLockError::Error(e)) => Err(e),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for InstanceLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

/// Sidecar path next to `log`, e.g. `honeyd.log` + `lock` -> `honeyd.log.lock`.
pub fn sidecar(log: &Path, suffix: &str) -> PathBuf {
    let mut name = log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    log.with_file_name(name)
}

/// Writes `contents` to `path` atomically: temp file, fsync, rename, fsync dir.
pub fn atomic_write(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = sidecar(path, "tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    sync_parent(path)
}

pub fn sync_parent(path: &Path) -> io::Result<()> {
    #[cfg(unix)]
    {
        let parent = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        File::open(parent)?.sync_all()?;
    }
    #[cfg(not(unix))]
    let _ = path;
    Ok(())
}
