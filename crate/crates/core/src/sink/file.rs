//! File-backed sink.
//!
//! Directory layout:
//!
//! * `MANIFEST`: format line, `logreaper-sink 1`.
//! * `records.dat`: append-only entries `len:u32le crc32:u32le payload`.
//!   Payload `R` is one record (keys plus the canonical log line); payload
//!   `C` is a batch commit trailer. Records after the last valid trailer
//!   were never committed and are cut off on open.
//! * `batches.idx`: one text line per committed batch with its extent in
//!   `records.dat`, its source cursor and line range, and a CRC. It is a
//!   cache of the trailers and is rebuilt from `records.dat` when stale.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{BatchCursor, BatchHandle, BatchInfo, CommitOutcome, Sink, SinkError, SinkStats, StoredRecord};
use crate::fault::{no_faults, FaultPoint, SharedFaults};
use crate::logfile::{atomic_write, sync_parent, FileId, FileIdentity};
use crate::par;

const MANIFEST: &str = "logreaper-sink 1\n";
const RECORDS: &str = "records.dat";
const INDEX: &str = "batches.idx";
const TAG_RECORD: u8 = b'R';
const TAG_COMMIT: u8 = b'C';
const SCAN_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Extent {
    info: BatchInfo,
    start: u64,
    end: u64,
}

impl Extent {
    fn index_line(&self) -> String {
        let i = &self.info;
        let body = format!(
            "{} {} {} {} {} {} {} {}",
            i.batch_id, self.start, self.end, i.records, i.source, i.first_line, i.last_line, i.end_offset
        );
        let crc = crc32fast::hash(body.as_bytes());
        format!("{body} {crc:08x}\n")
    }

    fn parse_index_line(line: &str) -> Option<Extent> {
        let (body, crc) = line.rsplit_once(' ')?;
        if u32::from_str_radix(crc, 16).ok()? != crc32fast::hash(body.as_bytes()) {
            return None;
        }
        let f: Vec<&str> = body.split(' ').collect();
        if f.len() != 8 {
            return None;
        }
        let n = |i: usize| f[i].parse::<u64>().ok();
        Some(Extent {
            info: BatchInfo {
                batch_id: n(0)?,
                records: n(3)?,
                source: f[4].parse().ok()?,
                first_line: n(5)?,
                last_line: n(6)?,
                end_offset: n(7)?,
            },
            start: n(1)?,
            end: n(2)?,
        })
    }
}

enum Entry {
    Record { batch_id: u64, line_number: u64, source: FileIdentity, line: Vec<u8> },
    Commit(BatchInfo),
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_identity(buf: &mut Vec<u8>, id: FileIdentity) {
    put_u64(buf, id.generation);
    put_u64(buf, id.file.dev);
    put_u64(buf, id.file.ino);
}

fn frame(buf: &mut Vec<u8>, payload: &[u8]) {
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    buf.extend_from_slice(payload);
}

fn encode_record(buf: &mut Vec<u8>, scratch: &mut Vec<u8>, r: &StoredRecord) {
    scratch.clear();
    scratch.push(TAG_RECORD);
    put_u64(scratch, r.batch_id);
    put_u64(scratch, r.line_number);
    put_identity(scratch, r.source);
    scratch.extend_from_slice(r.record.to_string().as_bytes());
    frame(buf, scratch);
}

fn encode_commit(buf: &mut Vec<u8>, i: &BatchInfo) {
    let mut p = vec![TAG_COMMIT];
    for v in [i.batch_id, i.records] {
        put_u64(&mut p, v);
    }
    put_identity(&mut p, i.source);
    for v in [i.first_line, i.last_line, i.end_offset] {
        put_u64(&mut p, v);
    }
    frame(buf, &p);
}

fn decode(payload: &[u8]) -> Option<Entry> {
    let u = |i: usize| -> Option<u64> { Some(u64::from_le_bytes(payload.get(1 + 8 * i..9 + 8 * i)?.try_into().ok()?)) };
    let ident = |i: usize| -> Option<FileIdentity> {
        Some(FileIdentity::new(u(i)?, FileId { dev: u(i + 1)?, ino: u(i + 2)? }))
    };
    match *payload.first()? {
        TAG_RECORD => Some(Entry::Record {
            batch_id: u(0)?,
            line_number: u(1)?,
            source: ident(2)?,
            line: payload.get(41..)?.to_vec(),
        }),
        TAG_COMMIT if payload.len() == 1 + 8 * 8 => Some(Entry::Commit(BatchInfo {
            batch_id: u(0)?,
            records: u(1)?,
            source: ident(2)?,
            first_line: u(5)?,
            last_line: u(6)?,
            end_offset: u(7)?,
        })),
        _ => None,
    }
}

/// Reads framed entries; stops quietly at a torn or corrupt frame.
struct EntryReader<R> {
    inner: R,
    pos: u64,
    limit: u64,
}

impl<R: Read> EntryReader<R> {
    fn next_entry(&mut self) -> std::io::Result<Option<(Entry, u64)>> {
        if self.pos + 8 > self.limit {
            return Ok(None);
        }
        let mut head = [0u8; 8];
        if let Err(e) = self.inner.read_exact(&mut head) {
            return if e.kind() == std::io::ErrorKind::UnexpectedEof { Ok(None) } else { Err(e) };
        }
        let len = u32::from_le_bytes(head[..4].try_into().unwrap()) as u64;
        let crc = u32::from_le_bytes(head[4..].try_into().unwrap());
        if self.pos + 8 + len > self.limit {
            return Ok(None);
        }
        let mut payload = vec![0u8; len as usize];
        if let Err(e) = self.inner.read_exact(&mut payload) {
            return if e.kind() == std::io::ErrorKind::UnexpectedEof { Ok(None) } else { Err(e) };
        }
        if crc32fast::hash(&payload) != crc {
            return Ok(None);
        }
        let Some(entry) = decode(&payload) else { return Ok(None) };
        self.pos += 8 + len;
        Ok(Some((entry, self.pos)))
    }
}

/// Reference sink storing records under one directory.
pub struct FileSink {
    dir: PathBuf,
    writer: Option<File>,
    committed_len: u64,
    extents: Vec<Extent>,
    /// Per source: (first_line, last_line, batch_id), sorted by first_line.
    keys: HashMap<FileIdentity, Vec<(u64, u64, u64)>>,
    total_records: u64,
    open_batch: Option<u64>,
    poisoned: bool,
    faults: SharedFaults,
}

impl std::fmt::Debug for FileSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileSink")
            .field("dir", &self.dir)
            .field("committed_len", &self.committed_len)
            .field("batches", &self.extents.len())
            .field("records", &self.total_records)
            .finish()
    }
}

impl FileSink {
    /// Opens or creates a sink for writing, discarding any uncommitted tail.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SinkError> {
        Self::open_inner(dir.as_ref(), true)
    }

    /// Opens a snapshot of the committed data without modifying anything.
    pub fn open_read_only(dir: impl AsRef<Path>) -> Result<Self, SinkError> {
        Self::open_inner(dir.as_ref(), false)
    }

    pub fn with_faults(mut self, faults: SharedFaults) -> Self {
        self.faults = faults;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Committed batches in order.
    pub fn batches(&self) -> impl Iterator<Item = &BatchInfo> {
        self.extents.iter().map(|e| &e.info)
    }

    fn open_inner(dir: &Path, writable: bool) -> Result<Self, SinkError> {
        if writable {
            fs::create_dir_all(dir)?;
        }
        let manifest = dir.join("MANIFEST");
        match fs::read_to_string(&manifest) {
            Ok(m) if m == MANIFEST => {}
            Ok(m) => return Err(SinkError::Corrupt(format!("unsupported manifest {:?}", m.trim()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && writable => {
                atomic_write(&manifest, MANIFEST.as_bytes())?;
            }
            Err(e) => return Err(e.into()),
        }

        let records_path = dir.join(RECORDS);
        let index_path = dir.join(INDEX);
        if writable && !records_path.exists() {
            File::create(&records_path)?.sync_all()?;
            sync_parent(&records_path)?;
        }
        let data_len = fs::metadata(&records_path).map(|m| m.len()).unwrap_or(0);

        let mut extents = Vec::new();
        let mut index_clean = true;
        match File::open(&index_path) {
            Ok(f) => {
                for line in BufReader::new(f).lines() {
                    let parsed = line.ok().and_then(|l| Extent::parse_index_line(&l));
                    match parsed {
                        Some(e)
                            if e.end <= data_len
                                && extents
                                    .last()
                                    .is_none_or(|p: &Extent| p.info.batch_id < e.info.batch_id && p.end == e.start)
                                && (extents.is_empty() == (e.start == 0)) =>
                        {
                            extents.push(e)
                        }
                        _ => {
                            index_clean = false;
                            break;
                        }
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }

        // pick up trailers past the index (crash between trailer and index update)
        let scan_from = extents.last().map_or(0, |e| e.end);
        let mut file = File::open(&records_path)?;
        file.seek(SeekFrom::Start(scan_from))?;
        let mut reader = EntryReader { inner: BufReader::new(file), pos: scan_from, limit: data_len };
        let mut batch_start = scan_from;
        let mut pending: u64 = 0;
        let mut pending_batch: Option<u64> = None;
        while let Some((entry, end)) = reader.next_entry()? {
            match entry {
                Entry::Record { batch_id, .. } => {
                    if pending_batch.is_some_and(|b| b != batch_id) {
                        break;
                    }
                    pending_batch = Some(batch_id);
                    pending += 1;
                }
                Entry::Commit(info) => {
                    let ok = info.records == pending
                        && pending_batch.is_none_or(|b| b == info.batch_id)
                        && extents.last().is_none_or(|p: &Extent| p.info.batch_id < info.batch_id);
                    if !ok {
                        break;
                    }
                    extents.push(Extent { info, start: batch_start, end });
                    index_clean = false;
                    batch_start = end;
                    pending = 0;
                    pending_batch = None;
                }
            }
        }
        let committed_len = extents.last().map_or(0, |e| e.end);

        let writer = if writable {
            let f = OpenOptions::new().append(true).open(&records_path)?;
            if data_len > committed_len {
                f.set_len(committed_len)?;
                f.sync_all()?;
            }
            if !index_clean {
                let text: String = extents.iter().map(Extent::index_line).collect();
                atomic_write(&index_path, text.as_bytes())?;
            }
            Some(f)
        } else {
            None
        };

        let mut sink = FileSink {
            dir: dir.to_path_buf(),
            writer,
            committed_len,
            extents: Vec::new(),
            keys: HashMap::new(),
            total_records: 0,
            open_batch: None,
            poisoned: false,
            faults: no_faults(),
        };
        for e in extents {
            sink.admit(e);
        }
        Ok(sink)
    }

    fn admit(&mut self, e: Extent) {
        let ranges = self.keys.entry(e.info.source).or_default();
        let at = ranges.partition_point(|r| r.0 < e.info.first_line);
        ranges.insert(at, (e.info.first_line, e.info.last_line, e.info.batch_id));
        self.total_records += e.info.records;
        self.committed_len = e.end;
        self.extents.push(e);
    }

    fn committed_in(&self, source: FileIdentity, line: u64) -> Option<u64> {
        let ranges = self.keys.get(&source)?;
        let at = ranges.partition_point(|r| r.0 <= line);
        let (first, last, batch) = *ranges.get(at.checked_sub(1)?)?;
        (first..=last).contains(&line).then_some(batch)
    }

    fn next_batch_id(&self) -> u64 {
        self.extents.last().map_or(1, |e| e.info.batch_id + 1)
    }

    fn crash(&mut self, point: FaultPoint) -> Result<(), SinkError> {
        if self.faults.hit(point) {
            self.poisoned = true;
            return Err(SinkError::InjectedCrash(point));
        }
        Ok(())
    }

    fn write_batch(&mut self, batch: &BatchHandle, info: &BatchInfo) -> Result<u64, SinkError> {
        let mut buf = Vec::with_capacity(batch.records.len() * 120 + 80);
        let mut scratch = Vec::with_capacity(160);
        for r in &batch.records {
            encode_record(&mut buf, &mut scratch, r);
        }
        let writer = self.writer.as_mut().ok_or(SinkError::Poisoned)?;
        let half = if batch.records.len() > 1 { buf.len() / 2 } else { 0 };
        writer.write_all(&buf[..half])?;
        self.crash(FaultPoint::MidBatchWrite)?;
        let writer = self.writer.as_mut().ok_or(SinkError::Poisoned)?;
        writer.write_all(&buf[half..])?;
        self.crash(FaultPoint::BeforeTrailer)?;

        let mut trailer = Vec::with_capacity(80);
        encode_commit(&mut trailer, info);
        let writer = self.writer.as_mut().ok_or(SinkError::Poisoned)?;
        writer.write_all(&trailer)?;
        writer.sync_data()?;
        Ok(self.committed_len + (buf.len() + trailer.len()) as u64)
    }
}

impl Sink for FileSink {
    fn begin_batch(&mut self) -> Result<BatchHandle, SinkError> {
        if self.poisoned || self.writer.is_none() {
            return Err(SinkError::Poisoned);
        }
        if self.open_batch.is_some() {
            return Err(SinkError::BatchOpen);
        }
        let id = self.next_batch_id();
        self.open_batch = Some(id);
        Ok(BatchHandle { id, records: Vec::new(), replay_of: None })
    }

    fn append(&mut self, batch: &mut BatchHandle, rec: StoredRecord) -> Result<bool, SinkError> {
        if self.poisoned {
            return Err(SinkError::Poisoned);
        }
        if self.open_batch != Some(batch.id) || rec.batch_id != batch.id {
            return Err(SinkError::WrongBatch { open: batch.id, got: rec.batch_id });
        }
        if let Some(existing) = self.committed_in(rec.source, rec.line_number) {
            batch.replay_of.get_or_insert(existing);
            return Ok(false);
        }
        if let Some(last) = batch.records.last() {
            if last.source != rec.source {
                return Err(SinkError::Corrupt("a batch must come from a single source".into()));
            }
            if rec.line_number <= last.line_number {
                let dup = batch.records.iter().any(|r| r.line_number == rec.line_number);
                if dup {
                    return Err(SinkError::DuplicateInBatch { source_identity: rec.source, line: rec.line_number });
                }
                return Err(SinkError::Corrupt("line numbers must increase within a batch".into()));
            }
        }
        batch.records.push(rec);
        Ok(true)
    }

    fn commit(&mut self, batch: BatchHandle, cursor: BatchCursor) -> Result<CommitOutcome, SinkError> {
        if self.poisoned {
            return Err(SinkError::Poisoned);
        }
        if self.open_batch != Some(batch.id) {
            return Err(SinkError::WrongBatch { open: self.open_batch.unwrap_or(0), got: batch.id });
        }
        self.open_batch = None;
        let (Some(first), Some(last)) = (batch.records.first(), batch.records.last()) else {
            return Ok(batch.replay_of.map_or(CommitOutcome::Empty, CommitOutcome::Replayed));
        };
        if first.source != cursor.source {
            return Err(SinkError::Corrupt("cursor source differs from record source".into()));
        }
        let info = BatchInfo {
            batch_id: batch.id,
            source: cursor.source,
            first_line: first.line_number,
            last_line: last.line_number,
            records: batch.records.len() as u64,
            end_offset: cursor.end_offset,
        };
        let start = self.committed_len;
        let end = match self.write_batch(&batch, &info) {
            Ok(end) => end,
            Err(e @ SinkError::InjectedCrash(_)) => return Err(e),
            Err(e) => {
                // roll the data file back to the last commit; poison if even that fails
                let rolled_back = self.writer.as_ref().map(|w| w.set_len(self.committed_len).is_ok()).unwrap_or(false);
                self.poisoned = !rolled_back;
                return Err(e);
            }
        };
        self.crash(FaultPoint::AfterTrailer)?;
        let extent = Extent { info, start, end };
        let mut idx = OpenOptions::new().create(true).append(true).open(self.dir.join(INDEX))?;
        idx.write_all(extent.index_line().as_bytes())?;
        idx.sync_data()?;
        self.admit(extent);
        Ok(CommitOutcome::Committed(info.batch_id))
    }

    fn abort(&mut self, batch: BatchHandle) {
        if self.open_batch == Some(batch.id) {
            self.open_batch = None;
        }
    }

    fn last_batch(&self) -> Option<BatchInfo> {
        self.extents.last().map(|e| e.info)
    }

    fn stats(&self) -> SinkStats {
        let idx = fs::metadata(self.dir.join(INDEX)).map(|m| m.len()).unwrap_or(0);
        SinkStats {
            total_records: self.total_records,
            total_batches: self.extents.len() as u64,
            bytes_on_disk: self.committed_len + idx,
        }
    }

    fn scan(&self, visit: &mut dyn FnMut(StoredRecord)) -> Result<(), SinkError> {
        let file = File::open(self.dir.join(RECORDS))?;
        let mut reader =
            EntryReader { inner: BufReader::with_capacity(1 << 16, file), pos: 0, limit: self.committed_len };
        let mut chunk: Vec<(u64, u64, FileIdentity, Vec<u8>)> = Vec::with_capacity(SCAN_CHUNK);
        let mut flush = |chunk: &mut Vec<(u64, u64, FileIdentity, Vec<u8>)>| -> Result<(), SinkError> {
            let parsed = par::map(par::Mode::Parallel, chunk, |(_, _, _, line)| crate::parser::parse_line(line));
            for ((batch_id, line_number, source, _), rec) in chunk.drain(..).zip(parsed) {
                let record = rec.map_err(|e| SinkError::Corrupt(format!("stored line does not parse: {e}")))?;
                visit(StoredRecord { record, source, line_number, batch_id });
            }
            Ok(())
        };
        while let Some((entry, _)) = reader.next_entry()? {
            if let Entry::Record { batch_id, line_number, source, line } = entry {
                chunk.push((batch_id, line_number, source, line));
                if chunk.len() == SCAN_CHUNK {
                    flush(&mut chunk)?;
                }
            }
        }
        if reader.pos != self.committed_len {
            return Err(SinkError::Corrupt(format!(
                "records.dat unreadable at {} of {} committed bytes",
                reader.pos, self.committed_len
            )));
        }
        flush(&mut chunk)
    }
}
