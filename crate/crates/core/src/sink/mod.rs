//! Persistence for parsed records.
//!
//! [`Sink`] is the storage boundary; [`FileSink`] is the reference
//! implementation. Every stored record is keyed by the file it came from and
//! its 1-based line number there, which is how replays after a crash are
//! recognised and dropped.

mod file;

use std::collections::HashMap;
use std::io::{self, Write};

use serde::Serialize;

pub use file::FileSink;

use crate::logfile::FileIdentity;
use crate::parser::{Detail, Event, FlowKey, LogRecord, Protocol, Timestamp};

/// CSV export header.
pub const CSV_HEADER: [&str; 14] = [
    "ts", "proto", "event", "src", "sport", "dst", "dport", "sent", "recv", "size", "flags", "comment", "source",
    "line",
];

#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("sink I/O: {0}")]
    Io(#[from] io::Error),
    #[error("sink storage is corrupt: {0}")]
    Corrupt(String),
    #[error("a batch is already open")]
    BatchOpen,
    #[error("record belongs to batch {got}, open batch is {open}")]
    WrongBatch { open: u64, got: u64 },
    #[error("duplicate key {source_identity}:{line} within batch")]
    DuplicateInBatch { source_identity: FileIdentity, line: u64 },
    #[error("injected crash at {0}")]
    InjectedCrash(crate::fault::FaultPoint),
    #[error("sink is unusable after an earlier failure; reopen it")]
    Poisoned,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub record: LogRecord,
    pub source: FileIdentity,
    /// 1-based line within `source`.
    pub line_number: u64,
    pub batch_id: u64,
}

impl StoredRecord {
    pub fn key(&self) -> (FileIdentity, u64) {
        (self.source, self.line_number)
    }
}

/// Where a batch's records came from; recorded with the commit so that a
/// restart can tell how far ingestion got.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchCursor {
    pub source: FileIdentity,
    /// Byte offset in `source` just past the last line covered by the batch.
    pub end_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchInfo {
    pub batch_id: u64,
    pub source: FileIdentity,
    pub first_line: u64,
    pub last_line: u64,
    pub records: u64,
    pub end_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed(u64),
    /// Every record was already stored; the id is the batch that holds them.
    Replayed(u64),
    /// Nothing appended.
    Empty,
}

impl CommitOutcome {
    pub fn batch_id(self) -> Option<u64> {
        match self {
            CommitOutcome::Committed(id) | CommitOutcome::Replayed(id) => Some(id),
            CommitOutcome::Empty => None,
        }
    }
}

/// An open batch. Records are buffered until commit.
#[derive(Debug)]
pub struct BatchHandle {
    id: u64,
    records: Vec<StoredRecord>,
    replay_of: Option<u64>,
}

impl BatchHandle {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SinkStats {
    pub total_records: u64,
    pub total_batches: u64,
    pub bytes_on_disk: u64,
}

/// Half-open `[start, end)`; missing bounds are open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimeRange {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
}

impl TimeRange {
    pub const ALL: TimeRange = TimeRange { start: None, end: None };

    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        TimeRange { start: Some(start), end: Some(end) }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Filter {
    pub range: TimeRange,
    pub protocol: Option<Protocol>,
    pub event: Option<Event>,
}

impl Filter {
    pub fn matches(&self, rec: &LogRecord) -> bool {
        self.range.contains(rec.timestamp)
            && self.protocol.is_none_or(|p| p == rec.protocol)
            && self.event.is_none_or(|e| e == rec.event())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowAggregate {
    pub flow: FlowKey,
    pub record_count: u64,
    pub packet_bytes: u64,
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
}

impl FlowAggregate {
    fn new(rec: &LogRecord) -> Self {
        FlowAggregate {
            flow: rec.flow_key(),
            record_count: 0,
            packet_bytes: 0,
            sent_bytes: 0,
            received_bytes: 0,
            first_seen: rec.timestamp,
            last_seen: rec.timestamp,
        }
    }

    fn add(&mut self, rec: &LogRecord) {
        self.record_count += 1;
        self.first_seen = self.first_seen.min(rec.timestamp);
        self.last_seen = self.last_seen.max(rec.timestamp);
        match rec.detail {
            Detail::Packet { size, .. } | Detail::IcmpPacket { size, .. } => self.packet_bytes += u64::from(size),
            Detail::End { sent, received } => {
                self.sent_bytes += sent;
                self.received_bytes += received;
            }
            Detail::Start { .. } => {}
        }
    }
}

/// Storage for parsed records. One batch may be open at a time.
pub trait Sink {
    fn begin_batch(&mut self) -> Result<BatchHandle, SinkError>;

    /// Buffers a record. Returns `false` when its key is already committed
    /// (the record is dropped).
    fn append(&mut self, batch: &mut BatchHandle, rec: StoredRecord) -> Result<bool, SinkError>;

    /// Makes the batch durable atomically.
    fn commit(&mut self, batch: BatchHandle, cursor: BatchCursor) -> Result<CommitOutcome, SinkError>;

    fn abort(&mut self, batch: BatchHandle);

    /// Most recently committed batch.
    fn last_batch(&self) -> Option<BatchInfo>;

    fn stats(&self) -> SinkStats;

    /// Visits committed records in commit order.
    fn scan(&self, visit: &mut dyn FnMut(StoredRecord)) -> Result<(), SinkError>;

    fn count(&self, filter: &Filter) -> Result<u64, SinkError> {
        if *filter == Filter::default() {
            return Ok(self.stats().total_records);
        }
        let mut n = 0;
        self.scan(&mut |r| {
            if filter.matches(&r.record) {
                n += 1;
            }
        })?;
        Ok(n)
    }

    /// One aggregate per flow with at least one record in `range`, ordered by flow key.
    fn aggregate_flows(&self, range: TimeRange) -> Result<Vec<FlowAggregate>, SinkError> {
        let mut flows: HashMap<FlowKey, FlowAggregate> = HashMap::new();
        self.scan(&mut |r| {
            if range.contains(r.record.timestamp) {
                flows.entry(r.record.flow_key()).or_insert_with(|| FlowAggregate::new(&r.record)).add(&r.record);
            }
        })?;
        let mut out: Vec<_> = flows.into_values().collect();
        out.sort_by_key(|a| a.flow);
        Ok(out)
    }

    /// Writes a header plus one row per record in `range`, ordered by
    /// (source, line). Returns data rows written.
    fn export_csv(&self, out: &mut dyn Write, range: TimeRange) -> Result<u64, SinkError> {
        let mut rows = Vec::new();
        self.scan(&mut |r| {
            if range.contains(r.record.timestamp) {
                rows.push(r);
            }
        })?;
        rows.sort_by_key(StoredRecord::key);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &rows {
            w.write_record(csv_row(r))?;
        }
        w.flush()?;
        Ok(rows.len() as u64)
    }
}

/// CSV fields for one record. ICMP type and code go in the `flags` column as
/// `type(code)`.
pub fn csv_row(r: &StoredRecord) -> [String; 14] {
    let rec = &r.record;
    let (mut sent, mut recv, mut size, mut flags, mut comment) =
        (String::new(), String::new(), String::new(), String::new(), String::new());
    match &rec.detail {
        Detail::Start { comment: c } => comment = c.clone().unwrap_or_default(),
        Detail::End { sent: s, received: r } => {
            sent = s.to_string();
            recv = r.to_string();
        }
        Detail::Packet { size: s, flags: f } => {
            size = s.to_string();
            flags = f.clone().unwrap_or_default();
        }
        Detail::IcmpPacket { icmp_type, code, size: s } => {
            size = s.to_string();
            flags = format!("{icmp_type}({code})");
        }
    }
    let port = |p: u16| if rec.protocol.has_ports() { p.to_string() } else { String::new() };
    [
        rec.timestamp.to_string(),
        rec.protocol.name().to_owned(),
        rec.event().tag().to_owned(),
        rec.src_addr.to_string(),
        port(rec.src_port),
        rec.dst_addr.to_string(),
        port(rec.dst_port),
        sent,
        recv,
        size,
        flags,
        comment,
        r.source.to_string(),
        r.line_number.to_string(),
    ]
}

/// Rebuilds the canonical log line from an exported CSV row.
pub fn line_from_csv(row: &csv::StringRecord) -> Option<String> {
    let get = |i: usize| row.get(i).unwrap_or("");
    let proto: Protocol = get(1).parse().ok()?;
    let head = format!("{} {}({}) {}", get(0), proto.name(), proto.number(), get(2));
    let conn = if proto.has_ports() {
        format!("{} {} {} {}", get(3), get(4), get(5), get(6))
    } else {
        format!("{} {}", get(3), get(5))
    };
    let detail = match (proto, get(2)) {
        (Protocol::Icmp, _) => format!(": {}: {}", get(10), get(9)),
        (_, "S") if row.get(11).is_some_and(|c| !c.is_empty()) => format!(" [{}]", get(11)),
        (_, "S") => String::new(),
        (_, "E") => format!(": {} {}", get(7), get(8)),
        _ if get(10).is_empty() => format!(": {}", get(9)),
        _ => format!(": {} {}", get(9), get(10)),
    };
    Some(format!("{head} {conn}{detail}"))
}
