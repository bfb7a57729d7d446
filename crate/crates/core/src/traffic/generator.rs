use std::io::Write;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrafficError;
use crate::parser::{Detail, LogRecord, Protocol, Timestamp};

/// Log volume per flood thread per hour used for full-scale previews
/// (85 MB / 10 threads, 446 MB / 50, 844 MB / 90 over 8 hours, averaged).
pub const BYTES_PER_THREAD_HOUR: f64 = 1.1e6;

/// Expected log size for a flood of `threads` lasting `hours`.
pub fn full_scale_bytes(threads: u32, hours: f64) -> f64 {
    BYTES_PER_THREAD_HOUR * f64::from(threads) * hours
}

const FINGERPRINTS: [&str; 4] = ["Windows XP SP1", "Linux 2.6.1-2.6.14", "FreeBSD 5.0", "Windows 2000 SP4"];
const TCP_FLAGS: [&str; 5] = ["S", "A", "PA", "FA", "R"];

/// Description of a simulated TCP connection flood.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodProfile {
    /// Concurrent flood workers.
    pub threads: u32,
    pub lines_per_thread_per_sec: f64,
    pub duration_secs: u64,
    pub seed: u64,
    /// Distinct spoofed source addresses.
    pub src_pool_size: u32,
    pub target: SocketAddrV4,
    /// Timestamp of the first line.
    pub start: Timestamp,
}

impl Default for FloodProfile {
    fn default() -> Self {
        FloodProfile {
            threads: 10,
            lines_per_thread_per_sec: 1.0,
            duration_secs: 10,
            seed: 0,
            src_pool_size: 1024,
            target: SocketAddrV4::new(Ipv4Addr::new(192, 168, 1, 20), 80),
            // 2019-08-21T00:00:00Z
            start: Timestamp::from_micros(1_566_345_600_000_000),
        }
    }
}

impl FloodProfile {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let bad = |m: &str| Err(TrafficError::InvalidProfile(m.to_owned()));
        if self.threads == 0 {
            return bad("threads must be positive");
        }
        if !(self.lines_per_thread_per_sec.is_finite() && self.lines_per_thread_per_sec > 0.0) {
            return bad("rate must be positive");
        }
        if self.duration_secs == 0 {
            return bad("duration must be positive");
        }
        if self.src_pool_size == 0 {
            return bad("source pool must be non-empty");
        }
        if !self.start.is_canonical() {
            return bad("start timestamp out of range");
        }
        let exact = self.exact_lines();
        if (exact - exact.round()).abs() > 1e-6 {
            return bad("threads x rate x duration must be a whole number of lines");
        }
        Ok(())
    }

    fn exact_lines(&self) -> f64 {
        f64::from(self.threads) * self.lines_per_thread_per_sec * self.duration_secs as f64
    }

    /// threads x rate x duration.
    pub fn expected_lines(&self) -> u64 {
        self.exact_lines().round() as u64
    }

    pub fn duration(&self) -> Duration {
        Duration::from_secs(self.duration_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GeneratorReport {
    pub lines_emitted: u64,
    pub bytes_emitted: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy)]
struct Session {
    src: Ipv4Addr,
    sport: u16,
    packets_left: u8,
    started: bool,
}

/// Deterministic stream of flood records, in timestamp order.
///
/// Line `i` belongs to thread `i mod threads`. Each thread runs sessions of
/// one `S`, zero to three packets and one `E`; a thread with a single line
/// left emits a lone packet so the total is exact.
pub struct SyntheticFlood {
    profile: FloodProfile,
    rng: ChaCha8Rng,
    pool: Vec<Ipv4Addr>,
    sessions: Vec<Option<Session>>,
    remaining: Vec<u64>,
    total: u64,
    next: u64,
}

impl SyntheticFlood {
    pub fn new(profile: FloodProfile) -> Result<Self, TrafficError> {
        profile.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        let pool = (0..profile.src_pool_size)
            .map(|_| loop {
                let a = Ipv4Addr::from(rng.random::<u32>());
                let first = a.octets()[0];
                if (1..=223).contains(&first) && first != 10 && first != 127 && a.octets()[3] != 0 {
                    break a;
                }
            })
            .collect();
        let total = profile.expected_lines();
        let threads = u64::from(profile.threads);
        let remaining = (0..threads).map(|t| total / threads + u64::from(t < total % threads)).collect();
        Ok(SyntheticFlood {
            sessions: vec![None; profile.threads as usize],
            profile,
            rng,
            pool,
            remaining,
            total,
            next: 0,
        })
    }

    pub fn total_lines(&self) -> u64 {
        self.total
    }

    pub fn profile(&self) -> &FloodProfile {
        &self.profile
    }

    /// Timestamp of line `i`: evenly spread over the duration, on 100 us ticks.
    fn timestamp(&self, i: u64) -> Timestamp {
        let span = u128::from(self.profile.duration_secs) * 1_000_000;
        let offset = (u128::from(i) * span / u128::from(self.total.max(1))) as i64;
        Timestamp::from_micros(self.profile.start.as_micros() + offset).truncate_to_tick()
    }
}

impl Iterator for SyntheticFlood {
    type Item = LogRecord;

    fn next(&mut self) -> Option<LogRecord> {
        if self.next >= self.total {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let thread = (i % u64::from(self.profile.threads)) as usize;
        let timestamp = self.timestamp(i);
        let left = self.remaining[thread];
        self.remaining[thread] -= 1;
        let target = self.profile.target;
        let rng = &mut self.rng;

        let session = match self.sessions[thread] {
            Some(s) => s,
            None => {
                let src = self.pool[rng.random_range(0..self.pool.len())];
                let sport = rng.random_range(1024..=65535);
                if left == 1 {
                    return Some(LogRecord {
                        timestamp,
                        protocol: Protocol::Tcp,
                        src_addr: src,
                        src_port: sport,
                        dst_addr: *target.ip(),
                        dst_port: target.port(),
                        detail: Detail::Packet { size: rng.random_range(40..=1500), flags: Some("S".into()) },
                    });
                }
                let packets = rng.random_range(0..=3u64).min(left - 2) as u8;
                Session { src, sport, packets_left: packets, started: false }
            }
        };

        let detail = if !session.started {
            let comment =
                rng.random_bool(0.3).then(|| FINGERPRINTS[rng.random_range(0..FINGERPRINTS.len())].to_owned());
            self.sessions[thread] = Some(Session { started: true, ..session });
            Detail::Start { comment }
        } else if session.packets_left > 0 {
            self.sessions[thread] = Some(Session { packets_left: session.packets_left - 1, ..session });
            Detail::Packet {
                size: rng.random_range(40..=1500),
                flags: Some(TCP_FLAGS[rng.random_range(0..TCP_FLAGS.len())].to_owned()),
            }
        } else {
            self.sessions[thread] = None;
            Detail::End { sent: rng.random_range(0..2000), received: rng.random_range(0..2000) }
        };
        Some(LogRecord {
            timestamp,
            protocol: Protocol::Tcp,
            src_addr: session.src,
            src_port: session.sport,
            dst_addr: *target.ip(),
            dst_port: target.port(),
            detail,
        })
    }
}

/// Writes exactly `profile.expected_lines()` canonical lines to `out`.
///
/// On a write failure the error is returned together with what was written
/// before it.
pub fn generate_log<W: Write>(
    profile: &FloodProfile,
    out: W,
) -> Result<GeneratorReport, (TrafficError, GeneratorReport)> {
    let started = Instant::now();
    let mut report = GeneratorReport::default();
    let flood = SyntheticFlood::new(profile.clone()).map_err(|e| (e, report))?;
    let mut out = std::io::BufWriter::with_capacity(1 << 16, out);
    let mut line = String::with_capacity(128);
    for rec in flood {
        use std::fmt::Write as _;
        line.clear();
        let _ = writeln!(line, "{rec}");
        if let Err(e) = out.write_all(line.as_bytes()) {
            report.wall_time = started.elapsed();
            return Err((e.into(), report));
        }
        report.lines_emitted += 1;
        report.bytes_emitted += line.len() as u64;
    }
    if let Err(e) = out.flush() {
        report.wall_time = started.elapsed();
        return Err((e.into(), report));
    }
    report.wall_time = started.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_line, Event};

    fn profile(threads: u32, rate: f64, secs: u64) -> FloodProfile {
        FloodProfile { threads, lines_per_thread_per_sec: rate, duration_secs: secs, seed: 7, ..Default::default() }
    }

    fn generate(p: &FloodProfile) -> (Vec<u8>, GeneratorReport) {
        let mut out = Vec::new();
        let report = generate_log(p, &mut out).unwrap();
        (out, report)
    }

    #[test]
    fn emits_exact_line_count() {
        let (out, report) = generate(&profile(10, 1.0, 10));
        assert_eq!(report.lines_emitted, 100);
        assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), 100);
        assert_eq!(report.bytes_emitted, out.len() as u64);
    }

    #[test]
    fn fractional_rates_allowed_when_total_is_whole() {
        let (_, report) = generate(&profile(4, 0.25, 10));
        assert_eq!(report.lines_emitted, 10);
        assert!(profile(3, 0.25, 10).validate().is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let p = profile(10, 3.0, 20);
        assert_eq!(generate(&p).0, generate(&p).0);
        let other = FloodProfile { seed: 8, ..p.clone() };
        assert_ne!(generate(&p).0, generate(&other).0);
    }

    #[test]
    fn every_line_parses_and_time_is_monotone() {
        let p = profile(7, 13.0, 30);
        let (out, _) = generate(&p);
        let mut last = Timestamp::MIN;
        let text = String::from_utf8(out).unwrap();
        for line in text.lines() {
            let rec = parse_line(line).unwrap();
            assert_eq!(rec.to_string(), line);
            assert!(rec.timestamp >= last);
            last = rec.timestamp;
            assert!(rec.timestamp < Timestamp::from_micros(p.start.as_micros() + 30_000_000));
        }
    }

    #[test]
    fn sessions_are_well_formed() {
        let p = profile(3, 50.0, 10);
        let mut open = std::collections::HashMap::new();
        for rec in SyntheticFlood::new(p).unwrap() {
            let key = (rec.src_addr, rec.src_port);
            match rec.event() {
                Event::Start => assert!(open.insert(key, 0).is_none()),
                Event::Packet => {
                    if let Some(n) = open.get_mut(&key) {
                        *n += 1;
                        assert!(*n <= 3);
                    }
                }
                Event::End => assert!(open.remove(&key).is_some()),
            }
        }
    }

    #[test]
    fn bytes_scale_with_threads() {
        let small = generate(&profile(10, 20.0, 60)).1.bytes_emitted as f64;
        let large = generate(&profile(90, 20.0, 60)).1.bytes_emitted as f64;
        let ratio = large / small;
        assert!((ratio - 9.0).abs() <= 9.0 * 0.05, "ratio {ratio}");
    }

    #[test]
    fn rejects_invalid_profiles() {
        assert!(profile(0, 1.0, 10).validate().is_err());
        assert!(profile(1, 0.0, 10).validate().is_err());
        assert!(profile(1, 1.0, 0).validate().is_err());
        assert!(FloodProfile { src_pool_size: 0, ..profile(1, 1.0, 1) }.validate().is_err());
    }

    #[test]
    fn full_scale_preview() {
        // ~88 MB for 10 threads over 8 hours
        assert!((full_scale_bytes(10, 8.0) - 88e6).abs() < 1.0);
    }
}
