#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration as TimeDelta, Timelike, Utc};
use logreaper::compactor::{CompactError, Compactor, CompactorOptions, LogPaths, RotationMode};
use logreaper::fault::{CrashAt, FaultPoint, SharedFaults};
use logreaper::logfile::LogWriter;
use logreaper::sink::{FileSink, Sink, StoredRecord};
use logreaper::traffic::{FloodProfile, SyntheticFlood};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn multiset<I: IntoIterator<Item = String>>(items: I) -> HashMap<String, u64> {
    let mut m = HashMap::new();
    for s in items {
        *m.entry(s).or_insert(0) += 1;
    }
    m
}

pub fn stored(sink: &impl Sink) -> Vec<StoredRecord> {
    let mut out = Vec::new();
    sink.scan(&mut |r| out.push(r)).unwrap();
    out
}

pub fn stored_lines(sink: &impl Sink) -> Vec<String> {
    stored(sink).into_iter().map(|r| r.record.to_string()).collect()
}

/// Canonical lines of a small deterministic flood.
pub fn flood_lines(seed: u64, n: u64) -> Vec<String> {
    let profile = FloodProfile {
        threads: 1,
        lines_per_thread_per_sec: n as f64,
        duration_secs: 1,
        seed,
        ..FloodProfile::default()
    };
    SyntheticFlood::new(profile).unwrap().map(|r| r.to_string()).collect()
}

// ---- cron oracle: scan every minute ----

#[derive(Debug, Clone)]
pub struct CronOracle {
    sets: [Vec<bool>; 5],
    dom_star: bool,
    dow_star: bool,
}

const BOUNDS: [(u32, u32); 5] = [(0, 59), (0, 23), (1, 31), (1, 12), (0, 6)];

impl CronOracle {
    /// Expects a valid expression; used only on generated input.
    pub fn new(expr: &str) -> Self {
        let fields: Vec<&str> = expr.split_whitespace().collect();
        assert_eq!(fields.len(), 5);
        let mut sets: [Vec<bool>; 5] = Default::default();
        for (i, f) in fields.iter().enumerate() {
            let (lo, hi) = BOUNDS[i];
            let mut set = vec![false; 60];
            for part in f.split(',') {
                let (range, step) = match part.split_once('/') {
                    Some((r, s)) => (r, s.parse::<u32>().unwrap()),
                    None => (part, 1),
                };
                let (a, b) = if range == "*" {
                    (lo, hi)
                } else if let Some((a, b)) = range.split_once('-') {
                    (a.parse().unwrap(), b.parse().unwrap())
                } else {
                    let a: u32 = range.parse().unwrap();
                    (a, if part.contains('/') { hi } else { a })
                };
                let mut v = a;
                while v <= b {
                    set[v as usize] = true;
                    v += step;
                }
            }
            sets[i] = set;
        }
        CronOracle { sets, dom_star: fields[2] == "*", dow_star: fields[4] == "*" }
    }

    pub fn matches(&self, t: DateTime<Utc>) -> bool {
        let [min, hour, dom, mon, dow] = &self.sets;
        let day_ok = {
            let d = dom[t.day() as usize];
            let w = dow[t.weekday().num_days_from_sunday() as usize];
            match (self.dom_star, self.dow_star) {
                (false, false) => d || w,
                _ => d && w,
            }
        };
        min[t.minute() as usize] && hour[t.hour() as usize] && mon[t.month() as usize] && day_ok
    }

    /// First matching minute strictly after `after` and no later than
    /// `until`. Days whose date cannot match are stepped over whole, since
    /// none of their minutes can.
    pub fn next(&self, after: DateTime<Utc>, until: DateTime<Utc>) -> Option<DateTime<Utc>> {
        let mut t = after.with_second(0).unwrap().with_nanosecond(0).unwrap() + TimeDelta::minutes(1);
        while t <= until {
            if !self.day_matches(t) {
                t = (t.date_naive() + chrono::Days::new(1)).and_hms_opt(0, 0, 0).unwrap().and_utc();
                continue;
            }
            if self.matches(t) {
                return Some(t);
            }
            t += TimeDelta::minutes(1);
        }
        None
    }

    fn day_matches(&self, t: DateTime<Utc>) -> bool {
        let [_, _, dom, mon, dow] = &self.sets;
        let d = dom[t.day() as usize];
        let w = dow[t.weekday().num_days_from_sunday() as usize];
        let day_ok = if !self.dom_star && !self.dow_star { d || w } else { d && w };
        mon[t.month() as usize] && day_ok
    }
}

/// A random valid cron expression.
pub fn random_cron(rng: &mut impl Rng) -> String {
    let field = |rng: &mut dyn rand::RngCore, (lo, hi): (u32, u32)| -> String {
        let one = |rng: &mut dyn rand::RngCore| -> String {
            match rng.random_range(0..6) {
                0 => "*".into(),
                1 => rng.random_range(lo..=hi).to_string(),
                2 => {
                    let a = rng.random_range(lo..=hi);
                    let b = rng.random_range(a..=hi);
                    format!("{a}-{b}")
                }
                3 => format!("*/{}", rng.random_range(1..=(hi - lo + 1).min(15))),
                4 => {
                    let a = rng.random_range(lo..=hi);
                    let b = rng.random_range(a..=hi);
                    format!("{a}-{b}/{}", rng.random_range(1..=5))
                }
                _ => format!("{},{}", rng.random_range(lo..=hi), rng.random_range(lo..=hi)),
            }
        };
        let n = if rng.random_bool(0.2) { rng.random_range(2..=3) } else { 1 };
        let parts: Vec<String> = (0..n).map(|_| one(rng)).collect();
        let rest: Vec<String> = parts.iter().filter(|p| *p != "*").cloned().collect();
        if rest.is_empty() {
            "*".into()
        } else {
            rest.join(",")
        }
    };
    BOUNDS.iter().map(|&b| field(rng, b)).collect::<Vec<_>>().join(" ")
}

// ---- crash trials ----

#[derive(Debug, Default, Clone)]
pub struct TrialOutcome {
    pub crashes: u32,
    pub generated: u64,
    pub stored: u64,
    pub exact: bool,
    pub unique_keys: bool,
    pub log_drained: bool,
    /// committed_offset never went backwards for one file identity
    pub monotone_checkpoint: bool,
}

impl TrialOutcome {
    pub fn ok(&self) -> bool {
        self.exact && self.unique_keys && self.log_drained && self.monotone_checkpoint
    }
}

pub struct TrialDirs {
    _tmp: tempfile::TempDir,
    pub log: PathBuf,
    pub sink: PathBuf,
    pub archive: PathBuf,
}

pub fn trial_dirs() -> TrialDirs {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_owned();
    TrialDirs { log: root.join("honeyd.log"), sink: root.join("sink"), archive: root.join("archive"), _tmp: tmp }
}

fn open_compactor(
    log: &Path,
    sink: &Path,
    mode: &RotationMode,
    faults: SharedFaults,
    batch: usize,
) -> Compactor<FileSink> {
    let paths = LogPaths::new(log, sink);
    let opts =
        CompactorOptions { mode: mode.clone(), batch_size: batch, faults: Arc::clone(&faults), ..Default::default() };
    let sink = FileSink::open(sink).unwrap().with_faults(faults);
    Compactor::open(paths, sink, opts).unwrap()
}

/// Appends lines in rounds, compacting after each round with a randomly
/// placed kill-point, then finishes with one clean run and compares the
/// sink against everything written.
pub fn crash_trial(seed: u64) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = trial_dirs();
    let mode = match rng.random_range(0..3) {
        0 => RotationMode::TruncateInPlace,
        1 => RotationMode::RotateDelete,
        _ => RotationMode::RotateArchive(dirs.archive.clone()),
    };
    let batch = rng.random_range(5..60);
    let lines = flood_lines(seed, rng.random_range(200..600));
    let mut writer = LogWriter::open(&dirs.log).unwrap();
    let mut out = TrialOutcome { generated: lines.len() as u64, ..Default::default() };

    let mut written = 0;
    let mut seen_offsets: HashMap<String, u64> = HashMap::new();
    out.monotone_checkpoint = true;
    let paths = LogPaths::new(&dirs.log, &dirs.sink);
    let mut observe = |out: &mut TrialOutcome| {
        if let Ok(Some(cp)) = logreaper::compactor::Checkpoint::load(&paths.checkpoint) {
            let prev = seen_offsets.entry(format!("{:?}", cp.file_identity)).or_insert(0);
            out.monotone_checkpoint &= cp.committed_offset >= *prev;
            *prev = cp.committed_offset;
        }
    };
    let rounds = rng.random_range(3..7);
    for round in 0..rounds {
        let take =
            if round + 1 == rounds { lines.len() - written } else { rng.random_range(0..=(lines.len() - written) / 2) };
        for l in &lines[written..written + take] {
            writer.append_line(l.as_bytes()).unwrap();
        }
        written += take;
        let crash: SharedFaults = if rng.random_bool(0.8) {
            let point = FaultPoint::ALL[rng.random_range(0..FaultPoint::ALL.len())];
            CrashAt::new(point, rng.random_range(0..3))
        } else {
            logreaper::fault::no_faults()
        };
        let mut c = open_compactor(&dirs.log, &dirs.sink, &mode, crash, batch);
        match c.compact_once() {
            Ok(_) => {}
            Err(e) if e.is_injected_crash() => out.crashes += 1,
            Err(e) => panic!("seed {seed}: {e}"),
        }
        drop(c);
        observe(&mut out);
    }
    let mut c = open_compactor(&dirs.log, &dirs.sink, &mode, logreaper::fault::no_faults(), batch);
    c.compact_once().unwrap_or_else(|e: CompactError| panic!("seed {seed}: {e}"));
    observe(&mut out);

    let records = stored(c.sink());
    out.stored = records.len() as u64;
    let keys: std::collections::HashSet<_> = records.iter().map(StoredRecord::key).collect();
    out.unique_keys = keys.len() == records.len();
    out.exact = multiset(records.iter().map(|r| r.record.to_string())) == multiset(lines);
    out.log_drained = std::fs::metadata(&dirs.log).map_or(0, |m| m.len()) == 0 && !c.paths().staging.exists();
    out
}

// ---- log line oracle: builds lines from parts with its own formatting ----

pub fn random_line(rng: &mut impl Rng) -> (String, logreaper::LogRecord) {
    use logreaper::{Detail, LogRecord, Protocol, Timestamp};
    use std::net::Ipv4Addr;

    let (y, mo) = (rng.random_range(1970..=2099), rng.random_range(1..=12u32));
    let days = chrono::NaiveDate::from_ymd_opt(y, mo, 1)
        .unwrap()
        .checked_add_months(chrono::Months::new(1))
        .unwrap()
        .pred_opt()
        .unwrap()
        .day();
    let d = rng.random_range(1..=days);
    let (h, mi, s, frac) = (
        rng.random_range(0..24u32),
        rng.random_range(0..60u32),
        rng.random_range(0..60u32),
        rng.random_range(0..10_000u32),
    );
    let ts_text = format!("{y:04}-{mo:02}-{d:02}-{h:02}:{mi:02}:{s:02}.{frac:04}");
    let secs = chrono::NaiveDate::from_ymd_opt(y, mo, d).unwrap().and_hms_opt(h, mi, s).unwrap().and_utc().timestamp();
    let timestamp = Timestamp::from_micros(secs * 1_000_000 + i64::from(frac) * 100);

    let src = Ipv4Addr::from(rng.random::<u32>());
    let dst = Ipv4Addr::from(rng.random::<u32>());
    let protocol = match rng.random_range(0..5) {
        0 => Protocol::Icmp,
        1 => Protocol::Udp,
        _ => Protocol::Tcp,
    };
    if protocol == Protocol::Icmp {
        let (t, c, size) = (rng.random::<u8>(), rng.random::<u8>(), rng.random_range(1..=u32::MAX));
        let line = format!("{ts_text} icmp(1) - {src} {dst}: {t}({c}): {size}");
        let rec = LogRecord {
            timestamp,
            protocol,
            src_addr: src,
            src_port: 0,
            dst_addr: dst,
            dst_port: 0,
            detail: Detail::IcmpPacket { icmp_type: t, code: c, size },
        };
        return (line, rec);
    }
    let proto_text = if protocol == Protocol::Tcp { "tcp(6)" } else { "udp(17)" };
    let (sport, dport) = (rng.random::<u16>(), rng.random::<u16>());
    let head = |tag: &str| format!("{ts_text} {proto_text} {tag} {src} {sport} {dst} {dport}");
    let (line, detail) = match rng.random_range(0..5) {
        0 => (head("S"), Detail::Start { comment: None }),
        1 => {
            const WORDS: [&str; 6] = ["Windows XP SP1", "Linux 2.6", "x]y", "[nested]", "ünïcode", " padded "];
            let c = WORDS[rng.random_range(0..WORDS.len())];
            (format!("{} [{c}]", head("S")), Detail::Start { comment: Some(c.to_owned()) })
        }
        2 => {
            let (a, b) =
                (rng.random::<u64>() >> rng.random_range(0..64), rng.random::<u64>() >> rng.random_range(0..64));
            (format!("{}: {a} {b}", head("E")), Detail::End { sent: a, received: b })
        }
        3 => {
            let size = rng.random_range(1..=65535u32);
            (format!("{}: {size}", head("-")), Detail::Packet { size, flags: None })
        }
        _ => {
            const FLAGS: [&str; 5] = ["S", "SA", "PA", "FA", "R"];
            let size = rng.random_range(1..=65535u32);
            let f = FLAGS[rng.random_range(0..FLAGS.len())];
            (format!("{}: {size} {f}", head("-")), Detail::Packet { size, flags: Some(f.to_owned()) })
        }
    };
    let rec = LogRecord { timestamp, protocol, src_addr: src, src_port: sport, dst_addr: dst, dst_port: dport, detail };
    (line, rec)
}

/// One random edit of `line`.
pub fn mutate(rng: &mut impl Rng, line: &str) -> Vec<u8> {
    let mut b = line.as_bytes().to_vec();
    const NOISE: &[u8] = b" :()[]-.0123456789abSE\x00\xff\n\t";
    let n = rng.random_range(1..=3);
    for _ in 0..n {
        let len = b.len();
        match rng.random_range(0..5) {
            0 if len > 0 => {
                b.remove(rng.random_range(0..len));
            }
            1 => b.insert(rng.random_range(0..=len), NOISE[rng.random_range(0..NOISE.len())]),
            2 if len > 0 => b[rng.random_range(0..len)] = NOISE[rng.random_range(0..NOISE.len())],
            3 => b.truncate(rng.random_range(0..=len)),
            _ if len > 1 => {
                let (i, j) = (rng.random_range(0..len), rng.random_range(0..len));
                b.swap(i, j);
            }
            _ => b.push(b' '),
        }
    }
    b
}

// ---- group-by over an exported CSV, independent of the sink's aggregation ----

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CsvFlow {
    pub key: (String, String, u16, String, u16),
    pub count: u64,
    pub packet_bytes: u64,
    pub sent: u64,
    pub received: u64,
    pub first: String,
    pub last: String,
}

pub fn group_csv(csv_text: &str) -> Vec<CsvFlow> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ts, proto, src, sport, dst, dport, sent, recv, size) = (
        col("ts"),
        col("proto"),
        col("src"),
        col("sport"),
        col("dst"),
        col("dport"),
        col("sent"),
        col("recv"),
        col("size"),
    );
    let num = |s: &str| if s.is_empty() { 0 } else { s.parse::<u64>().unwrap() };
    let mut flows: HashMap<(String, String, u16, String, u16), CsvFlow> = HashMap::new();
    for row in reader.records() {
        let row = row.unwrap();
        let key = (
            row[proto].to_owned(),
            row[src].to_owned(),
            num(&row[sport]) as u16,
            row[dst].to_owned(),
            num(&row[dport]) as u16,
        );
        let f = flows.entry(key.clone()).or_insert_with(|| CsvFlow {
            key,
            count: 0,
            packet_bytes: 0,
            sent: 0,
            received: 0,
            first: row[ts].to_owned(),
            last: row[ts].to_owned(),
        });
        f.count += 1;
        f.packet_bytes += num(&row[size]);
        f.sent += num(&row[sent]);
        f.received += num(&row[recv]);
        f.first = f.first.clone().min(row[ts].to_owned());
        f.last = f.last.clone().max(row[ts].to_owned());
    }
    let mut out: Vec<CsvFlow> = flows.into_values().collect();
    out.sort();
    out
}

pub fn flows_as_csv_flows(flows: &[logreaper::sink::FlowAggregate]) -> Vec<CsvFlow> {
    let mut out: Vec<CsvFlow> = flows
        .iter()
        .map(|a| CsvFlow {
            key: (
                a.flow.protocol.name().to_owned(),
                a.flow.src_addr.to_string(),
                a.flow.src_port,
                a.flow.dst_addr.to_string(),
                a.flow.dst_port,
            ),
            count: a.record_count,
            packet_bytes: a.packet_bytes,
            sent: a.sent_bytes,
            received: a.received_bytes,
            first: a.first_seen.to_string(),
            last: a.last_seen.to_string(),
        })
        .collect();
    out.sort();
    out
}

/// Writes `good` valid lines from the oracle plus `bad` mutated ones,
/// interleaved. Returns the valid lines and the count of rejected ones.
pub fn mixed_log(path: &Path, seed: u64, good: usize, bad: usize) -> (Vec<String>, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = LogWriter::open(path).unwrap();
    let mut valid = Vec::new();
    let mut rejected = 0;
    let total = good + bad;
    let mut left_bad = bad;
    for i in 0..total {
        let (line, _) = random_line(&mut rng);
        if left_bad > 0 && rng.random_range(0..total - i) < left_bad {
            left_bad -= 1;
            let m = mutate(&mut rng, &line);
            if m.contains(&b'\n') || logreaper::parse_line(&m).is_ok() {
                // keep the corpus to one line per entry and guaranteed rejects
                w.append_line(b"#garbage").unwrap();
            } else {
                w.append_line(&m).unwrap();
            }
            rejected += 1;
        } else {
            w.append_line(line.as_bytes()).unwrap();
            valid.push(line);
        }
    }
    (valid, rejected)
}

// ---- live path: sensor, flood and daemon together ----

#[derive(Debug, Default)]
pub struct LiveOutcome {
    pub completed: u64,
    pub accepted: u64,
    pub failed: u64,
    pub lines_written: u64,
    pub write_errors: u64,
    pub parse_errors: u64,
    pub stored: u64,
    pub starts: u64,
    pub ends: u64,
    pub unique_keys: bool,
    pub duplicate_lines: u64,
    pub runs: usize,
    pub failed_runs: usize,
    pub log_left: u64,
}

impl LiveOutcome {
    pub fn ok(&self) -> bool {
        self.completed > 0
            && self.write_errors == 0
            && self.parse_errors == 0
            && self.stored == self.lines_written
            && self.starts == self.ends
            && self.ends == self.completed
            && self.accepted == self.starts
            && self.unique_keys
            && self.duplicate_lines == 0
            && self.failed_runs == 0
            && self.log_left == 0
    }
}

pub fn live_trial(threads: u32, secs: u64, every_secs: u64, rate: f64) -> LiveOutcome {
    use logreaper::compactor::{run_daemon, DaemonConfig};
    use logreaper::schedule::Trigger;
    use logreaper::traffic::{flood, FloodConfig, SensorConfig, SensorCounters};
    use logreaper::Event;
    use std::time::Duration;

    let d = trial_dirs();
    let mut cfg = DaemonConfig::new(&d.log, &d.sink, Trigger::Every(Duration::from_secs(every_secs)));
    cfg.drain_on_shutdown = true;
    cfg.sensor = Some(SensorConfig {
        tcp_ports: vec![0],
        udp_ports: vec![],
        bind: std::net::Ipv4Addr::LOCALHOST,
        log_path: d.log.clone(),
        max_lifetime: Duration::from_secs(30),
    });
    let daemon = run_daemon(cfg).unwrap();
    let target = daemon.sensor_tcp_addrs()[0];
    let mut fc = FloodConfig::new(target, threads, Duration::from_secs(secs));
    fc.per_thread_rate = Some(rate);
    fc.payload = 16;
    let report = flood(&fc).unwrap();
    let report_d = daemon.shutdown().unwrap();
    let counters = report_d.sensor.clone().unwrap();

    let sink = FileSink::open_read_only(&d.sink).unwrap();
    let records = stored(&sink);
    let keys: std::collections::HashSet<_> = records.iter().map(StoredRecord::key).collect();
    let lines = multiset(records.iter().map(|r| r.record.to_string()));
    let mut all_runs: Vec<_> = report_d.runs.iter().map(|r| r.result.clone()).collect();
    all_runs.extend(report_d.drain.clone().map(Ok));
    LiveOutcome {
        completed: report.completed,
        failed: report.failed,
        accepted: SensorCounters::get(&counters.accepted),
        lines_written: SensorCounters::get(&counters.lines_written),
        write_errors: SensorCounters::get(&counters.write_errors),
        parse_errors: all_runs.iter().filter_map(|r| r.as_ref().ok()).map(|s| s.parse_errors).sum(),
        stored: records.len() as u64,
        starts: records.iter().filter(|r| r.record.event() == Event::Start).count() as u64,
        ends: records.iter().filter(|r| r.record.event() == Event::End).count() as u64,
        unique_keys: keys.len() == records.len(),
        duplicate_lines: lines.values().map(|&n| n - 1).sum(),
        runs: all_runs.len(),
        failed_runs: all_runs.iter().filter(|r| r.is_err()).count(),
        log_left: std::fs::metadata(&d.log).map_or(0, |m| m.len()),
    }
}
