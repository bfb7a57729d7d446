//! Honeypot log compaction.
//!
//! A honeyd-style sensor (or the synthetic generator) appends connection
//! events to an active log. On a cron or fixed-interval schedule the
//! compactor parses everything new into a persistent sink, then truncates or
//! rotates the active log so it never grows beyond one interval's worth of
//! traffic. Delivery into the sink is exactly-once across crashes.
//!
//! The `bench` module reproduces the before/after comparison (log size, disk
//! share, ingestion time) for flood profiles with and without compaction.

pub mod bench;
pub mod compactor;
pub mod fault;
pub mod logfile;
pub mod par;
pub mod parser;
pub mod schedule;
pub mod sink;
pub mod traffic;

pub use parser::{
    format_record, parse_line, Detail, Event, FlowKey, LogRecord, ParseError, ParseErrorKind, Protocol, Timestamp,
};
