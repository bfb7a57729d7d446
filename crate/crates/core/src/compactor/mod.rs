//! Incremental ingestion of the active log into a [`Sink`].
//!
//! Each run consumes every complete line not yet committed, in batches, and
//! then shrinks the log so that its size stays bounded by what accumulates
//! between two runs. Progress is tracked by a [`Checkpoint`] stored next to
//! the sink; together with the sink's batch index it makes every line land
//! in the sink exactly once, whatever point a run is killed at.
//!
//! Two ways of shrinking the log are supported:
//!
//! * rotation: the active log is renamed to `<log>.staging`, writers reopen
//!   the path and continue in a fresh file, and the staging file is ingested
//!   and then deleted or archived;
//! * truncation in place: the consumed prefix is cut off under an exclusive
//!   lock on the log, during which cooperating writers wait.
//!
//! Writers cooperate through [`LogWriter`](crate::logfile::LogWriter), which
//! holds a shared lock for each append.

mod checkpoint;
mod daemon;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use daemon::{run_daemon, DaemonConfig, DaemonError, DaemonHandle, DaemonReport, RunRecord};

use crate::fault::{no_faults, FaultPoint, SharedFaults};
use crate::logfile::{atomic_write, sidecar, sync_parent, FileId, FileIdentity, InstanceLock};
use crate::par;
use crate::parser::RawLines;
use crate::sink::{BatchCursor, CommitOutcome, Sink, SinkError, StoredRecord};

pub const DEFAULT_BATCH_SIZE: usize = 10_000;
const MAX_ERROR_SAMPLES: usize = 100;

/// What happens to consumed log data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RotationMode {
    /// Cut the consumed prefix off the active log.
    TruncateInPlace,
    /// Rotate the log aside, ingest it, delete it.
    RotateDelete,
    /// Rotate the log aside, ingest it, move it into this directory.
    RotateArchive(PathBuf),
}

impl RotationMode {
    pub fn rotates(&self) -> bool {
        !matches!(self, RotationMode::TruncateInPlace)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CompactError {
    #[error("log I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("injected crash at {0}")]
    InjectedCrash(FaultPoint),
    #[error("another compactor is running on {0}")]
    Locked(PathBuf),
}

impl CompactError {
    pub fn is_injected_crash(&self) -> bool {
        matches!(self, CompactError::InjectedCrash(_) | CompactError::Sink(SinkError::InjectedCrash(_)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CompactError + '_ {
    move |source| CompactError::Io { path: path.to_owned(), source }
}

/// Files the compactor owns for one log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogPaths {
    pub log: PathBuf,
    pub staging: PathBuf,
    pub lock: PathBuf,
    pub checkpoint: PathBuf,
    pub truncate_marker: PathBuf,
}

impl LogPaths {
    /// Sidecars live next to the log; checkpoint state lives in `state_dir`
    /// (normally the sink directory).
    pub fn new(log: impl Into<PathBuf>, state_dir: impl AsRef<Path>) -> Self {
        let log = log.into();
        let state = state_dir.as_ref();
        LogPaths {
            staging: sidecar(&log, "staging"),
            lock: sidecar(&log, "lock"),
            checkpoint: state.join("checkpoint"),
            truncate_marker: state.join("truncate.pending"),
            log,
        }
    }
}

#[derive(Clone)]
pub struct CompactorOptions {
    pub mode: RotationMode,
    pub batch_size: usize,
    pub parallelism: par::Mode,
    pub faults: SharedFaults,
}

impl Default for CompactorOptions {
    fn default() -> Self {
        CompactorOptions {
            mode: RotationMode::TruncateInPlace,
            batch_size: DEFAULT_BATCH_SIZE,
            parallelism: par::Mode::default(),
            faults: no_faults(),
        }
    }
}

impl std::fmt::Debug for CompactorOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompactorOptions")
            .field("mode", &self.mode)
            .field("batch_size", &self.batch_size)
            .field("parallelism", &self.parallelism)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorSample {
    pub line_number: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompactionStats {
    pub bytes_consumed: u64,
    pub records_parsed: u64,
    pub parse_errors: u64,
    pub records_committed: u64,
    /// Records already in the sink from an interrupted earlier run.
    pub records_replayed: u64,
    pub batches_committed: u64,
    pub bytes_truncated: u64,
    /// Writers were blocked for this long (truncation mode).
    pub pause: Duration,
    pub duration: Duration,
    /// The log was replaced by someone else since the last run.
    pub external_rotation: bool,
    /// Incomplete trailing bytes of a rotated file that could not be carried over.
    pub fragments_dropped: u64,
    /// First parse errors of the run.
    pub error_samples: Vec<ErrorSample>,
}

impl CompactionStats {
    /// Adds `other` into `self`, e.g. to total a daemon's runs.
    pub fn absorb(&mut self, other: CompactionStats) {
        self.bytes_consumed += other.bytes_consumed;
        self.records_parsed += other.records_parsed;
        self.parse_errors += other.parse_errors;
        self.records_committed += other.records_committed;
        self.records_replayed += other.records_replayed;
        self.batches_committed += other.batches_committed;
        self.bytes_truncated += other.bytes_truncated;
        self.pause += other.pause;
        self.external_rotation |= other.external_rotation;
        self.fragments_dropped += other.fragments_dropped;
        let room = MAX_ERROR_SAMPLES.saturating_sub(self.error_samples.len());
        self.error_samples.extend(other.error_samples.into_iter().take(room));
    }
}

/// What [`recover`] found and repaired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub checkpoint_missing: bool,
    pub checkpoint_corrupt: bool,
    /// The sink held a batch newer than the checkpoint.
    pub adopted_batch: Option<u64>,
    /// A truncation interrupted by a crash was finished.
    pub completed_truncation: bool,
}

struct Ctx<'a, S: ?Sized> {
    paths: &'a LogPaths,
    opts: &'a CompactorOptions,
    sink: &'a mut S,
    stats: CompactionStats,
}

impl<S: Sink + ?Sized> Ctx<'_, S> {
    fn crash(&self, point: FaultPoint) -> Result<(), CompactError> {
        if self.opts.faults.hit(point) {
            return Err(CompactError::InjectedCrash(point));
        }
        Ok(())
    }

    fn store(&self, cp: &Checkpoint) -> Result<(), CompactError> {
        cp.store(&self.paths.checkpoint).map_err(io_err(&self.paths.checkpoint))
    }

    /// Ingests `file` (which is `cp.file_identity`) from the checkpoint to
    /// its current end, committing and checkpointing batch by batch.
    fn ingest(&mut self, file: &File, path: &Path, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let identity = cp.file_identity;
        let start = cp.committed_offset;
        let mut line_number = count_newlines(file, start).map_err(io_err(path))? + 1;
        let mut reader = file;
        reader.seek(SeekFrom::Start(start)).map_err(io_err(path))?;
        let mut lines = RawLines::new(BufReader::with_capacity(1 << 20, reader), start);
        let batch_size = self.opts.batch_size.max(1);
        let mut chunk = Vec::with_capacity(batch_size.min(DEFAULT_BATCH_SIZE));
        loop {
            chunk.clear();
            for line in lines.by_ref().take(batch_size) {
                chunk.push(line.map_err(io_err(path))?);
            }
            let Some(last) = chunk.last() else { break };
            let end_offset = last.end_offset;
            let bytes: Vec<&[u8]> = chunk.iter().map(|l| l.bytes.as_slice()).collect();
            let parsed = par::parse_batch(self.opts.parallelism, &bytes);

            let mut batch = self.sink.begin_batch()?;
            let (mut fresh, mut replayed) = (0, 0);
            for result in parsed {
                match result {
                    Ok(record) => {
                        self.stats.records_parsed += 1;
                        let rec = StoredRecord { record, source: identity, line_number, batch_id: batch.id() };
                        if self.sink.append(&mut batch, rec)? {
                            fresh += 1;
                        } else {
                            replayed += 1;
                        }
                    }
                    Err(e) => {
                        self.stats.parse_errors += 1;
                        if self.stats.error_samples.len() < MAX_ERROR_SAMPLES {
                            self.stats.error_samples.push(ErrorSample { line_number, error: e.to_string() });
                        }
                    }
                }
                line_number += 1;
            }
            let outcome = if batch.is_empty() {
                self.sink.abort(batch);
                CommitOutcome::Empty
            } else {
                self.sink.commit(batch, BatchCursor { source: identity, end_offset })?
            };
            if outcome != CommitOutcome::Empty {
                self.crash(FaultPoint::AfterCommit)?;
            }
            if let CommitOutcome::Committed(_) = outcome {
                self.stats.batches_committed += 1;
                cp.records_ingested += fresh;
            }
            if let Some(id) = outcome.batch_id() {
                cp.last_batch_id = cp.last_batch_id.max(id);
            }
            self.stats.records_committed += fresh;
            self.stats.records_replayed += replayed;
            self.stats.bytes_consumed += end_offset - cp.committed_offset;
            cp.committed_offset = end_offset;
            self.store(cp)?;
            self.crash(FaultPoint::AfterCheckpoint)?;
        }
        Ok(())
    }

    // ---- truncation in place ----

    fn compact_in_place(&mut self, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let log = &self.paths.log;
        let file = match OpenOptions::new().read(true).write(true).open(log) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(io_err(log)(e)),
        };
        let id = FileId::of_file(&file).map_err(io_err(log))?;
        let len = file.metadata().map_err(io_err(log))?.len();
        let resumable = cp.file_identity.file == id
            && !cp.is_fresh()
            && cp.committed_offset <= len
            && ends_line(&file, cp.committed_offset).map_err(io_err(log))?;
        if !resumable {
            if !cp.is_fresh() && cp.file_identity.file != id {
                self.stats.external_rotation = true;
                self.ingest_rotated_away(cp)?;
            } else if !cp.is_fresh() {
                // same inode but shorter or misaligned: truncated behind our back
                self.stats.external_rotation = true;
            }
            *cp = Checkpoint { file_identity: FileIdentity::new(cp.generation() + 1, id), committed_offset: 0, ..*cp };
            self.store(cp)?;
            self.crash(FaultPoint::AfterClaim)?;
        }

        // bulk of the work without blocking writers
        self.ingest(&file, log, cp)?;

        let paused = Instant::now();
        file.lock().map_err(io_err(log))?;
        let result = self.ingest(&file, log, cp).and_then(|()| self.truncate_consumed(&file, cp));
        let _ = file.unlock();
        self.stats.pause += paused.elapsed();
        result
    }

    /// Looks for the previous log file (moved by an outside rotation) in the
    /// log's directory and ingests what is left of it.
    fn ingest_rotated_away(&mut self, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let dir = match self.paths.log.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
            _ => PathBuf::from("."),
        };
        let Ok(entries) = fs::read_dir(&dir) else { return Ok(()) };
        for entry in entries.flatten() {
            let path = entry.path();
            let Ok(meta) = entry.metadata() else { continue };
            if meta.is_file() && FileId::of_metadata(&meta) == cp.file_identity.file {
                tracing::warn!(file = %path.display(), "log was rotated externally; ingesting remainder");
                let file = File::open(&path).map_err(io_err(&path))?;
                if cp.committed_offset <= meta.len() && ends_line(&file, cp.committed_offset).map_err(io_err(&path))? {
                    self.ingest(&file, &path, cp)?;
                }
                break;
            }
        }
        Ok(())
    }

    /// Called with the exclusive lock held and everything up to
    /// `cp.committed_offset` committed.
    fn truncate_consumed(&mut self, file: &File, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let cut = cp.committed_offset;
        if cut == 0 {
            return Ok(());
        }
        let log = &self.paths.log;
        let crc = prefix_crc(file, cut).map_err(io_err(log))?;
        let marker = TruncateMarker { generation: cp.generation(), offset: cut, crc };
        atomic_write(&self.paths.truncate_marker, marker.encode().as_bytes())
            .map_err(io_err(&self.paths.truncate_marker))?;
        self.crash(FaultPoint::BeforeTruncate)?;
        cut_prefix(file, cut).map_err(io_err(log))?;
        self.stats.bytes_truncated += cut;
        self.crash(FaultPoint::AfterTruncate)?;
        self.advance_after_truncate(cp)
    }

    fn advance_after_truncate(&mut self, cp: &mut Checkpoint) -> Result<(), CompactError> {
        *cp = Checkpoint {
            file_identity: FileIdentity::new(cp.generation() + 1, cp.file_identity.file),
            committed_offset: 0,
            ..*cp
        };
        self.store(cp)?;
        remove_if_exists(&self.paths.truncate_marker).map_err(io_err(&self.paths.truncate_marker))
    }

    // ---- rotation ----

    fn compact_rotating(&mut self, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let staging = self.paths.staging.clone();
        // a staging file means an earlier run stopped before retiring it
        if let Some(file) = open_existing(&staging)? {
            let id = FileId::of_file(&file).map_err(io_err(&staging))?;
            if cp.is_fresh() || cp.file_identity.file != id {
                tracing::warn!(file = %staging.display(), "unclaimed staging file; ingesting from the start");
                self.stats.external_rotation = true;
                self.claim(cp, id)?;
            }
            self.finish_staged(file, cp)?;
        }

        let log = &self.paths.log;
        let Some(file) = open_existing(log)? else { return Ok(()) };
        if file.metadata().map_err(io_err(log))?.len() == 0 {
            return Ok(());
        }
        let id = FileId::of_file(&file).map_err(io_err(log))?;
        drop(file);
        self.claim(cp, id)?;
        self.crash(FaultPoint::AfterClaim)?;
        fs::rename(log, &staging).map_err(io_err(log))?;
        sync_parent(log).map_err(io_err(log))?;
        self.crash(FaultPoint::AfterRename)?;
        OpenOptions::new().create(true).append(true).open(log).map_err(io_err(log))?;
        let file = File::open(&staging).map_err(io_err(&staging))?;
        self.finish_staged(file, cp)
    }

    fn claim(&mut self, cp: &mut Checkpoint, id: FileId) -> Result<(), CompactError> {
        *cp = Checkpoint { file_identity: FileIdentity::new(cp.generation() + 1, id), committed_offset: 0, ..*cp };
        self.store(cp)
    }

    fn finish_staged(&mut self, file: File, cp: &mut Checkpoint) -> Result<(), CompactError> {
        let staging = self.paths.staging.clone();
        // wait out appends that started before the rename
        let paused = Instant::now();
        file.lock().map_err(io_err(&staging))?;
        let _ = file.unlock();
        self.stats.pause += paused.elapsed();

        self.ingest(&file, &staging, cp)?;
        self.carry_tail(&file, cp.committed_offset)?;
        self.crash(FaultPoint::BeforeTruncate)?;
        let staged = file.metadata().map_err(io_err(&staging))?.len();
        drop(file);
        self.retire(cp.generation())?;
        self.stats.bytes_truncated += staged;
        self.crash(FaultPoint::AfterRetire)
    }

    /// An unterminated last line goes back to the head of the new log, if
    /// that is still empty.
    fn carry_tail(&mut self, file: &File, from: u64) -> Result<(), CompactError> {
        let staging = &self.paths.staging;
        let tail = read_range(file, from, None).map_err(io_err(staging))?;
        if tail.is_empty() {
            return Ok(());
        }
        let log = &self.paths.log;
        let active = OpenOptions::new().create(true).read(true).append(true).open(log).map_err(io_err(log))?;
        active.lock().map_err(io_err(log))?;
        let head = read_range(&active, 0, Some(tail.len() as u64)).map_err(io_err(log));
        let result = head.and_then(|head| {
            if head == tail {
                return Ok(());
            }
            if !head.is_empty() {
                tracing::warn!(bytes = tail.len(), "dropping unterminated line of rotated log");
                self.stats.fragments_dropped += 1;
                return Ok(());
            }
            let mut w = &active;
            io::Write::write_all(&mut w, &tail).and_then(|()| active.sync_data()).map_err(io_err(log))
        });
        let _ = active.unlock();
        result
    }

    fn retire(&mut self, generation: u64) -> Result<(), CompactError> {
        let staging = &self.paths.staging;
        match &self.opts.mode {
            RotationMode::RotateArchive(dir) => {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let name = self.paths.log.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let mut target = dir.join(format!("{name}.g{generation}"));
                let mut n = 1;
                while target.exists() {
                    target = dir.join(format!("{name}.g{generation}.{n}"));
                    n += 1;
                }
                if fs::rename(staging, &target).is_err() {
                    // different filesystem
                    fs::copy(staging, &target).map_err(io_err(&target))?;
                    File::open(&target).and_then(|f| f.sync_all()).map_err(io_err(&target))?;
                    fs::remove_file(staging).map_err(io_err(staging))?;
                }
                sync_parent(&target).map_err(io_err(&target))?;
            }
            _ => fs::remove_file(staging).map_err(io_err(staging))?,
        }
        sync_parent(staging).map_err(io_err(staging))?;
        Ok(())
    }
}

/// `v1 <generation> <offset> <crc32 of the log prefix>`: a truncation is in
/// progress. If the log still starts with the recorded prefix the cut has
/// not happened yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TruncateMarker {
    generation: u64,
    offset: u64,
    crc: u32,
}

impl TruncateMarker {
    fn encode(&self) -> String {
        format!("v1 {} {} {:08x}\n", self.generation, self.offset, self.crc)
    }

    fn decode(text: &str) -> Option<Self> {
        let mut it = text.trim_end().split(' ');
        if it.next()? != "v1" {
            return None;
        }
        let generation = it.next()?.parse().ok()?;
        let offset = it.next()?.parse().ok()?;
        let crc = u32::from_str_radix(it.next()?, 16).ok()?;
        it.next().is_none().then_some(TruncateMarker { generation, offset, crc })
    }
}

/// Consumes new lines of the log at `paths.log` into `sink`.
///
/// `cp` must be the checkpoint returned by [`recover`] or by the previous
/// call; the updated one is returned with the run's stats. The caller must
/// hold the instance lock (see [`Compactor`]).
pub fn compact_once<S: Sink + ?Sized>(
    paths: &LogPaths,
    mut cp: Checkpoint,
    sink: &mut S,
    opts: &CompactorOptions,
) -> Result<(CompactionStats, Checkpoint), CompactError> {
    let started = Instant::now();
    let mut ctx = Ctx { paths, opts, sink, stats: CompactionStats::default() };
    if opts.mode.rotates() {
        ctx.compact_rotating(&mut cp)?;
    } else {
        ctx.compact_in_place(&mut cp)?;
    }
    let mut stats = ctx.stats;
    stats.duration = started.elapsed();
    Ok((stats, cp))
}

/// Loads the checkpoint and reconciles it with the sink and the log after
/// an unclean stop.
pub fn recover<S: Sink + ?Sized>(
    paths: &LogPaths,
    sink: &mut S,
    opts: &CompactorOptions,
) -> Result<(Checkpoint, RecoveryReport), CompactError> {
    let mut report = RecoveryReport::default();
    let mut cp = match Checkpoint::load(&paths.checkpoint) {
        Ok(Some(cp)) => cp,
        Ok(None) => {
            report.checkpoint_missing = true;
            Checkpoint::fresh()
        }
        Err(CheckpointError::Corrupt(why)) => {
            tracing::warn!(%why, "checkpoint unreadable; rebuilding from the sink");
            report.checkpoint_corrupt = true;
            Checkpoint::fresh()
        }
        Err(e) => return Err(e.into()),
    };

    let last = sink.last_batch();
    let behind = match last {
        Some(b) => b.batch_id > cp.last_batch_id || report.checkpoint_corrupt,
        None => cp.last_batch_id > 0,
    };
    if behind {
        cp = match last {
            Some(b) => {
                report.adopted_batch = Some(b.batch_id);
                Checkpoint {
                    file_identity: b.source,
                    committed_offset: b.end_offset,
                    last_batch_id: b.batch_id,
                    records_ingested: sink.stats().total_records,
                }
            }
            None => Checkpoint::fresh(),
        };
    }

    let mut ctx = Ctx { paths, opts, sink, stats: CompactionStats::default() };
    if let Some(text) = read_optional(&paths.truncate_marker).map_err(io_err(&paths.truncate_marker))? {
        match TruncateMarker::decode(&text) {
            Some(m) if m.generation == cp.generation() && m.offset >= cp.committed_offset => {
                report.completed_truncation = finish_truncation(&mut ctx, &mut cp, m)?;
            }
            _ => remove_if_exists(&paths.truncate_marker).map_err(io_err(&paths.truncate_marker))?,
        }
    }
    if behind || report.checkpoint_missing && !cp.is_fresh() || report.completed_truncation {
        ctx.store(&cp)?;
    }
    Ok((cp, report))
}

/// Returns whether the cut still had to be made.
fn finish_truncation<S: Sink + ?Sized>(
    ctx: &mut Ctx<'_, S>,
    cp: &mut Checkpoint,
    m: TruncateMarker,
) -> Result<bool, CompactError> {
    let log = &ctx.paths.log;
    let Some(file) = open_existing_rw(log)? else {
        remove_if_exists(&ctx.paths.truncate_marker).map_err(io_err(&ctx.paths.truncate_marker))?;
        return Ok(false);
    };
    if FileId::of_file(&file).map_err(io_err(log))? != cp.file_identity.file {
        remove_if_exists(&ctx.paths.truncate_marker).map_err(io_err(&ctx.paths.truncate_marker))?;
        return Ok(false);
    }
    file.lock().map_err(io_err(log))?;
    let result = (|| {
        let len = file.metadata().map_err(io_err(log))?.len();
        let pending = len >= m.offset && prefix_crc(&file, m.offset).map_err(io_err(log))? == m.crc;
        if pending {
            cut_prefix(&file, m.offset).map_err(io_err(log))?;
        }
        ctx.advance_after_truncate(cp)?;
        Ok(pending)
    })();
    let _ = file.unlock();
    result
}

/// Owns the instance lock, the sink and the current checkpoint.
pub struct Compactor<S: Sink> {
    paths: LogPaths,
    opts: CompactorOptions,
    sink: S,
    checkpoint: Checkpoint,
    recovery: RecoveryReport,
    _lock: InstanceLock,
}

impl<S: Sink> Compactor<S> {
    /// Takes the instance lock and runs recovery.
    pub fn open(paths: LogPaths, mut sink: S, opts: CompactorOptions) -> Result<Self, CompactError> {
        let lock = InstanceLock::acquire(&paths.lock).map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock => CompactError::Locked(paths.lock.clone()),
            _ => io_err(&paths.lock)(e),
        })?;
        let (checkpoint, recovery) = recover(&paths, &mut sink, &opts)?;
        Ok(Compactor { paths, opts, sink, checkpoint, recovery, _lock: lock })
    }

    pub fn compact_once(&mut self) -> Result<CompactionStats, CompactError> {
        let (stats, cp) = compact_once(&self.paths, self.checkpoint, &mut self.sink, &self.opts)?;
        self.checkpoint = cp;
        Ok(stats)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn paths(&self) -> &LogPaths {
        &self.paths
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

// ---- file helpers ----

fn open_existing(path: &Path) -> Result<Option<File>, CompactError> {
    match File::open(path) {
        Ok(f) => Ok(Some(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn open_existing_rw(path: &Path) -> Result<Option<File>, CompactError> {
    match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => Ok(Some(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn read_optional(path: &Path) -> io::Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) if e.kind() == io::ErrorKind::InvalidData => Ok(Some(String::new())),
        Err(e) => Err(e),
    }
}

fn remove_if_exists(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

fn for_each_chunk(file: &File, upto: u64, mut f: impl FnMut(&[u8])) -> io::Result<()> {
    let mut reader = file;
    reader.seek(SeekFrom::Start(0))?;
    let mut reader = reader.take(upto);
    let mut buf = vec![0; 1 << 20];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        f(&buf[..n]);
    }
}

fn count_newlines(file: &File, upto: u64) -> io::Result<u64> {
    let mut n = 0;
    for_each_chunk(file, upto, |b| n += memchr::memchr_iter(b'\n', b).count() as u64)?;
    Ok(n)
}

fn prefix_crc(file: &File, upto: u64) -> io::Result<u32> {
    let mut h = crc32fast::Hasher::new();
    for_each_chunk(file, upto, |b| h.update(b))?;
    Ok(h.finalize())
}

/// True if `offset` is the start of a line.
fn ends_line(file: &File, offset: u64) -> io::Result<bool> {
    if offset == 0 {
        return Ok(true);
    }
    Ok(read_range(file, offset - 1, Some(1))? == b"\n")
}

fn read_range(file: &File, from: u64, len: Option<u64>) -> io::Result<Vec<u8>> {
    let mut reader = file;
    reader.seek(SeekFrom::Start(from))?;
    let mut out = Vec::new();
    match len {
        Some(n) => reader.take(n).read_to_end(&mut out)?,
        None => reader.read_to_end(&mut out)?,
    };
    Ok(out)
}

/// Removes the first `cut` bytes, keeping the rest at the head of the file.
fn cut_prefix(file: &File, cut: u64) -> io::Result<()> {
    let tail = read_range(file, cut, None)?;
    file.set_len(0)?;
    #[cfg(unix)]
    std::os::unix::fs::FileExt::write_all_at(file, &tail, 0)?;
    #[cfg(not(unix))]
    {
        let mut w = file;
        w.seek(SeekFrom::Start(0))?;
        io::Write::write_all(&mut w, &tail)?;
    }
    file.sync_data()
}
