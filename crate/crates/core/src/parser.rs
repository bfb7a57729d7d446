//! honeyd-style connection log records and their line codec.
//!
//! One event per line:
//!
//! ```text
//! 2005-05-03-19:39:58.0423 tcp(6) S 218.25.147.83 1687 192.168.1.20 1433 [Windows XP SP1]
//! 2005-05-03-19:40:02.1037 tcp(6) E 218.25.147.83 1687 192.168.1.20 1433: 0 0
//! 2005-05-03-19:40:03.0000 tcp(6) - 218.25.147.83 1687 192.168.1.20 1433: 60 S
//! 2005-05-03-19:40:04.0000 icmp(1) - 218.25.147.83 192.168.1.20: 8(0): 84
//! ```
//!
//! The codec is bijective on canonical lines: numbers carry no leading zeros,
//! timestamps have exactly four fractional digits and are UTC.

use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::net::Ipv4Addr;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Utc};

/// Longest excerpt kept in a [`ParseError`].
pub const MAX_EXCERPT: usize = 64;

/// Microseconds since the Unix epoch, UTC.
///
/// The line format carries 100 µs resolution; finer values are truncated
/// when formatted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    /// 0000-01-01T00:00:00Z
    pub const MIN: Timestamp = Timestamp(-62_167_219_200_000_000);
    /// 9999-12-31T23:59:59.9999Z
    pub const MAX: Timestamp = Timestamp(253_402_300_799_999_900);

    pub const fn from_micros(micros: i64) -> Self {
        Timestamp(micros)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_micros())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::from_timestamp_micros(self.0).unwrap_or_default()
    }

    pub fn now() -> Self {
        let t = Self::from_datetime(Utc::now());
        t.truncate_to_tick()
    }

    /// Drops sub-100 µs precision so the value survives a format/parse cycle.
    pub fn truncate_to_tick(self) -> Self {
        Timestamp(self.0 - self.0.rem_euclid(100))
    }

    /// True when the value is in the four-digit-year range and on a 100 µs tick.
    pub fn is_canonical(self) -> bool {
        (Self::MIN..=Self::MAX).contains(&self) && self.0.rem_euclid(100) == 0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = self.to_datetime();
        write!(
            f,
            "{:04}-{:02}-{:02}-{:02}:{:02}:{:02}.{:04}",
            dt.year(),
            dt.month(),
            dt.day(),
            dt.hour(),
            dt.minute(),
            dt.second(),
            dt.timestamp_subsec_micros() / 100
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Tcp, Protocol::Udp, Protocol::Icmp];

    /// IANA protocol number.
    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Icmp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
        }
    }

    fn token(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp(6)",
            Protocol::Udp => "udp(17)",
            Protocol::Icmp => "icmp(1)",
        }
    }

    pub fn has_ports(self) -> bool {
        self != Protocol::Icmp
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tcp" | "tcp(6)" => Ok(Protocol::Tcp),
            "udp" | "udp(17)" => Ok(Protocol::Udp),
            "icmp" | "icmp(1)" => Ok(Protocol::Icmp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    /// Connection started (`S`).
    Start,
    /// Connection ended (`E`).
    End,
    /// Single stateless packet (`-`).
    Packet,
}

impl Event {
    pub const ALL: [Event; 3] = [Event::Start, Event::End, Event::Packet];

    pub fn tag(self) -> &'static str {
        match self {
            Event::Start => "S",
            Event::End => "E",
            Event::Packet => "-",
        }
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" | "start" => Ok(Event::Start),
            "E" | "end" => Ok(Event::End),
            "-" | "packet" => Ok(Event::Packet),
            other => Err(format!("unknown event {other:?}")),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Event-specific trailing fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Detail {
    Start {
        comment: Option<String>,
    },
    End {
        sent: u64,
        received: u64,
    },
    /// TCP or UDP packet.
    Packet {
        size: u32,
        flags: Option<String>,
    },
    IcmpPacket {
        icmp_type: u8,
        code: u8,
        size: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogRecord {
    pub timestamp: Timestamp,
    pub protocol: Protocol,
    pub src_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_addr: Ipv4Addr,
    pub dst_port: u16,
    pub detail: Detail,
}

impl LogRecord {
    pub fn event(&self) -> Event {
        match self.detail {
            Detail::Start { .. } => Event::Start,
            Detail::End { .. } => Event::End,
            Detail::Packet { .. } | Detail::IcmpPacket { .. } => Event::Packet,
        }
    }

    pub fn flow_key(&self) -> FlowKey {
        FlowKey {
            protocol: self.protocol,
            src_addr: self.src_addr,
            src_port: self.src_port,
            dst_addr: self.dst_addr,
            dst_port: self.dst_port,
        }
    }

    /// Checks the record invariants that `format_record` relies on.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !self.timestamp.is_canonical() {
            return Err("timestamp outside the four-digit-year range or not on a 100us tick");
        }
        match (&self.protocol, &self.detail) {
            (Protocol::Icmp, Detail::IcmpPacket { size, .. }) => {
                if self.src_port != 0 || self.dst_port != 0 {
                    return Err("icmp records carry no ports");
                }
                if *size == 0 {
                    return Err("packet size must be positive");
                }
            }
            (Protocol::Icmp, _) => return Err("icmp records are packets only"),
            (_, Detail::IcmpPacket { .. }) => return Err("icmp detail on a non-icmp record"),
            (_, Detail::Packet { size, flags }) => {
                if *size == 0 {
                    return Err("packet size must be positive");
                }
                if let Some(flags) = flags {
                    if flags.is_empty() || !flags.bytes().all(|b| b.is_ascii_graphic()) {
                        return Err("flags must be a non-empty printable token");
                    }
                }
            }
            (_, Detail::Start { comment: Some(c) }) if c.contains('\n') => {
                return Err("comment must not contain a newline");
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ", self.timestamp, self.protocol.token(), self.event().tag())?;
        if self.protocol.has_ports() {
            write!(f, "{} {} {} {}", self.src_addr, self.src_port, self.dst_addr, self.dst_port)?;
        } else {
            write!(f, "{} {}", self.src_addr, self.dst_addr)?;
        }
        match &self.detail {
            Detail::Start { comment: None } => Ok(()),
            Detail::Start { comment: Some(c) } => write!(f, " [{c}]"),
            Detail::End { sent, received } => write!(f, ": {sent} {received}"),
            Detail::Packet { size, flags: None } => write!(f, ": {size}"),
            Detail::Packet { size, flags: Some(fl) } => write!(f, ": {size} {fl}"),
            Detail::IcmpPacket { icmp_type, code, size } => {
                write!(f, ": {icmp_type}({code}): {size}")
            }
        }
    }
}

impl FromStr for LogRecord {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_line(s)
    }
}

/// The 5-tuple identifying a flow. ICMP flows use port 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub protocol: Protocol,
    pub src_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_addr: Ipv4Addr,
    pub dst_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    BadTimestamp,
    BadProtocol,
    BadAddress,
    BadPort,
    BadEventTag,
    TruncatedLine,
    TrailingGarbage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at byte {byte_offset}: {excerpt:?}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Offset of the offending token within the line.
    pub byte_offset: usize,
    /// Up to [`MAX_EXCERPT`] bytes of the line starting at `byte_offset`.
    pub excerpt: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: &[u8], at: usize) -> Self {
        let at = at.min(line.len());
        let end = (at + MAX_EXCERPT).min(line.len());
        let mut excerpt = String::from_utf8_lossy(&line[at..end]).into_owned();
        // lossy replacement can grow the text past the byte budget
        while excerpt.len() > MAX_EXCERPT {
            excerpt.pop();
        }
        ParseError { kind, byte_offset: at, excerpt }
    }
}

/// Renders a record as its canonical line (no trailing newline).
pub fn format_record(rec: &LogRecord) -> String {
    rec.to_string()
}

/// Parses one line (without its newline). The first failure scanning left to
/// right determines the error.
pub fn parse_line<B: AsRef<[u8]> + ?Sized>(line: &B) -> Result<LogRecord, ParseError> {
    Cursor { line: line.as_ref(), pos: 0 }.record()
}

struct Cursor<'a> {
    line: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, kind: ParseErrorKind, at: usize) -> ParseError {
        ParseError::new(kind, self.line, at)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.line.len()
    }

    /// Next token ending at any byte in `stops` (or end of line).
    fn token(&mut self, stops: &[u8]) -> (usize, &'a [u8]) {
        let start = self.pos;
        let len = self.line[start..].iter().position(|b| stops.contains(b)).unwrap_or(self.line.len() - start);
        self.pos = start + len;
        (start, &self.line[start..start + len])
    }

    /// Consumes one separating space before a mandatory field.
    fn space(&mut self) -> Result<(), ParseError> {
        match self.line.get(self.pos) {
            None => Err(self.err(ParseErrorKind::TruncatedLine, self.pos)),
            Some(b' ') => {
                self.pos += 1;
                if self.at_end() {
                    Err(self.err(ParseErrorKind::TruncatedLine, self.pos))
                } else {
                    Ok(())
                }
            }
            Some(_) => Err(self.err(ParseErrorKind::TrailingGarbage, self.pos)),
        }
    }

    fn record(mut self) -> Result<LogRecord, ParseError> {
        if self.line.is_empty() {
            return Err(self.err(ParseErrorKind::TruncatedLine, 0));
        }
        let (at, tok) = self.token(b" ");
        let timestamp = parse_timestamp(tok).ok_or_else(|| self.err(ParseErrorKind::BadTimestamp, at))?;

        self.space()?;
        let (at, tok) = self.token(b" ");
        let protocol = match tok {
            b"tcp(6)" => Protocol::Tcp,
            b"udp(17)" => Protocol::Udp,
            b"icmp(1)" => Protocol::Icmp,
            _ => return Err(self.err(ParseErrorKind::BadProtocol, at)),
        };

        self.space()?;
        let (at, tok) = self.token(b" ");
        let event = match tok {
            b"S" if protocol.has_ports() => Event::Start,
            b"E" if protocol.has_ports() => Event::End,
            b"-" => Event::Packet,
            _ => return Err(self.err(ParseErrorKind::BadEventTag, at)),
        };

        self.space()?;
        let src_addr = self.address(b" ")?;
        let mut src_port = 0;
        let mut dst_port = 0;
        let dst_addr;
        if protocol.has_ports() {
            self.space()?;
            src_port = self.port()?;
            self.space()?;
            dst_addr = self.address(b" ")?;
            self.space()?;
            dst_port = self.port()?;
        } else {
            self.space()?;
            dst_addr = self.address(b" :")?;
        }

        let detail = match (protocol, event) {
            (_, Event::Start) => Detail::Start { comment: self.comment()? },
            (_, Event::End) => {
                self.colon()?;
                let sent = self.number::<u64>(b" ")?;
                self.space()?;
                let received = self.number::<u64>(b"")?;
                Detail::End { sent, received }
            }
            (Protocol::Icmp, Event::Packet) => {
                self.colon()?;
                let icmp_type = self.number::<u8>(b"(")?;
                self.expect(b"(")?;
                let code = self.number::<u8>(b")")?;
                self.expect(b")")?;
                self.colon()?;
                let size = self.size()?;
                Detail::IcmpPacket { icmp_type, code, size }
            }
            (_, Event::Packet) => {
                self.colon()?;
                let size = self.size()?;
                let flags = if self.at_end() {
                    None
                } else {
                    self.space()?;
                    let (at, tok) = self.token(b"");
                    if !tok.iter().all(u8::is_ascii_graphic) {
                        return Err(self.err(ParseErrorKind::TrailingGarbage, at));
                    }
                    // all-graphic ASCII is valid UTF-8
                    Some(String::from_utf8_lossy(tok).into_owned())
                };
                Detail::Packet { size, flags }
            }
        };

        if !self.at_end() {
            return Err(self.err(ParseErrorKind::TrailingGarbage, self.pos));
        }
        Ok(LogRecord { timestamp, protocol, src_addr, src_port, dst_addr, dst_port, detail })
    }

    fn address(&mut self, stops: &[u8]) -> Result<Ipv4Addr, ParseError> {
        let (at, tok) = self.token(stops);
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<Ipv4Addr>().ok())
            // std accepts nothing but dotted-quad; reject leading zeros for canonical form
            .filter(|_| tok.split(|&b| b == b'.').all(|o| o.len() == 1 || o[0] != b'0'))
            .ok_or_else(|| self.err(ParseErrorKind::BadAddress, at))
    }

    fn port(&mut self) -> Result<u16, ParseError> {
        let (at, tok) = self.token(b" :");
        canonical_number::<u16>(tok).ok_or_else(|| self.err(ParseErrorKind::BadPort, at))
    }

    fn number<T: FromStr>(&mut self, stops: &[u8]) -> Result<T, ParseError> {
        let mut all = stops.to_vec();
        all.push(b' ');
        let (at, tok) = self.token(&all);
        if tok.is_empty() && self.at_end() {
            return Err(self.err(ParseErrorKind::TruncatedLine, at));
        }
        canonical_number::<T>(tok).ok_or_else(|| self.err(ParseErrorKind::TrailingGarbage, at))
    }

    fn size(&mut self) -> Result<u32, ParseError> {
        let at = self.pos;
        match self.number::<u32>(b"")? {
            0 => Err(self.err(ParseErrorKind::TrailingGarbage, at)),
            n => Ok(n),
        }
    }

    fn expect(&mut self, lit: &[u8]) -> Result<(), ParseError> {
        let rest = &self.line[self.pos..];
        if rest.starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else if lit.starts_with(rest) {
            Err(self.err(ParseErrorKind::TruncatedLine, self.line.len()))
        } else {
            Err(self.err(ParseErrorKind::TrailingGarbage, self.pos))
        }
    }

    fn colon(&mut self) -> Result<(), ParseError> {
        self.expect(b": ")?;
        if self.at_end() {
            return Err(self.err(ParseErrorKind::TruncatedLine, self.pos));
        }
        Ok(())
    }

    fn comment(&mut self) -> Result<Option<String>, ParseError> {
        if self.at_end() {
            return Ok(None);
        }
        let at = self.pos;
        let rest = &self.line[at..];
        let body = rest
            .strip_prefix(b" [")
            .and_then(|r| r.strip_suffix(b"]"))
            .filter(|b| !b.contains(&b'\n'))
            .and_then(|b| std::str::from_utf8(b).ok())
            .ok_or_else(|| self.err(ParseErrorKind::TrailingGarbage, at))?;
        self.pos = self.line.len();
        Ok(Some(body.to_owned()))
    }
}

fn canonical_number<T: FromStr>(tok: &[u8]) -> Option<T> {
    if tok.is_empty() || !tok.iter().all(u8::is_ascii_digit) || (tok.len() > 1 && tok[0] == b'0') {
        return None;
    }
    std::str::from_utf8(tok).ok()?.parse().ok()
}

fn parse_timestamp(tok: &[u8]) -> Option<Timestamp> {
    // YYYY-MM-DD-HH:MM:SS.ffff
    const SHAPE: &[u8; 24] = b"0000-00-00-00:00:00.0000";
    if tok.len() != SHAPE.len() {
        return None;
    }
    for (&b, &s) in tok.iter().zip(SHAPE.iter()) {
        let ok = if s == b'0' { b.is_ascii_digit() } else { b == s };
        if !ok {
            return None;
        }
    }
    let num = |r: std::ops::Range<usize>| -> u32 { tok[r].iter().fold(0, |acc, d| acc * 10 + u32::from(d - b'0')) };
    let date = NaiveDate::from_ymd_opt(num(0..4) as i32, num(5..7), num(8..10))?;
    let time = NaiveTime::from_hms_opt(num(11..13), num(14..16), num(17..19))?;
    let secs = date.and_time(time).and_utc().timestamp();
    Some(Timestamp(secs * 1_000_000 + i64::from(num(20..24)) * 100))
}

/// One complete line read from a log stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLine {
    /// Line bytes without the trailing newline.
    pub bytes: Vec<u8>,
    pub start_offset: u64,
    /// Offset one past the newline.
    pub end_offset: u64,
}

/// Iterates complete lines from `start_offset`, holding back a trailing line
/// that has no newline yet.
pub struct RawLines<R> {
    inner: R,
    offset: u64,
    done: bool,
}

impl<R: BufRead> RawLines<R> {
    /// `base_offset` is the stream position `inner` is already at.
    pub fn new(inner: R, base_offset: u64) -> Self {
        RawLines { inner, offset: base_offset, done: false }
    }

    /// Offset just past the last complete line returned.
    pub fn offset(&self) -> u64 {
        self.offset
    }
}

impl<R: BufRead> Iterator for RawLines<R> {
    type Item = io::Result<RawLine>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut bytes = Vec::new();
        match self.inner.read_until(b'\n', &mut bytes) {
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
            Ok(_) if bytes.last() != Some(&b'\n') => {
                // EOF, possibly with a partial line the writer is still appending
                self.done = true;
                None
            }
            Ok(n) => {
                bytes.pop();
                let start_offset = self.offset;
                self.offset += n as u64;
                Some(Ok(RawLine { bytes, start_offset, end_offset: self.offset }))
            }
        }
    }
}

/// A parsed (or rejected) line and the offset just past it.
#[derive(Debug, Clone, PartialEq)]
pub struct LineItem {
    pub result: Result<LogRecord, ParseError>,
    pub end_offset: u64,
}

pub struct LogReader<R> {
    lines: RawLines<R>,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(inner: R, base_offset: u64) -> Self {
        LogReader { lines: RawLines::new(inner, base_offset) }
    }

    pub fn offset(&self) -> u64 {
        self.lines.offset()
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = io::Result<LineItem>;

    fn next(&mut self) -> Option<Self::Item> {
        self.lines.next().map(|line| line.map(|l| LineItem { result: parse_line(&l.bytes), end_offset: l.end_offset }))
    }
}

/// Reads records from `source` starting at `start_offset`, which must be on a
/// line boundary.
pub fn read_from<R: Read + Seek>(mut source: R, start_offset: u64) -> io::Result<LogReader<BufReader<R>>> {
    source.seek(SeekFrom::Start(start_offset))?;
    Ok(LogReader::new(BufReader::with_capacity(1 << 16, source), start_offset))
}
