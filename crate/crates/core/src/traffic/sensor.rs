//! Live honeypot sensor.
//!
//! Each TCP port gets an accept loop; each accepted connection gets a worker
//! that counts inbound bytes until the peer closes. UDP ports log one packet
//! line per datagram. All lines go through a single writer thread that owns
//! the active log, so the compactor's rotation protocol sees one writer.

use std::collections::HashSet;
use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol as SockProto, Socket, Type};

use super::TrafficError;
use crate::logfile::LogWriter;
use crate::parser::{Detail, LogRecord, Protocol, Timestamp};

const POLL: Duration = Duration::from_millis(2);
const READ_TICK: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct SensorConfig {
    pub tcp_ports: Vec<u16>,
    pub udp_ports: Vec<u16>,
    pub bind: Ipv4Addr,
    pub log_path: PathBuf,
    /// Connections open longer than this are closed by the sensor.
    pub max_lifetime: Duration,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.tcp_ports.is_empty() && self.udp_ports.is_empty() {
            return Err(TrafficError::InvalidProfile("sensor needs at least one port".into()));
        }
        for (name, ports) in [("tcp", &self.tcp_ports), ("udp", &self.udp_ports)] {
            let mut seen = HashSet::new();
            if let Some(p) = ports.iter().find(|&&p| p != 0 && !seen.insert(p)) {
                return Err(TrafficError::InvalidProfile(format!("{name} port {p} listed twice")));
            }
        }
        if self.max_lifetime.is_zero() {
            return Err(TrafficError::InvalidProfile("max connection lifetime must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct SensorCounters {
    pub accepted: AtomicU64,
    pub closed: AtomicU64,
    pub datagrams: AtomicU64,
    pub lines_written: AtomicU64,
    pub write_errors: AtomicU64,
}

impl SensorCounters {
    pub fn get(c: &AtomicU64) -> u64 {
        c.load(Ordering::SeqCst)
    }
}

/// Running sensor. Dropping it without [`shutdown`](Self::shutdown) leaves
/// the threads running until process exit.
pub struct SensorHandle {
    stop: Arc<AtomicBool>,
    tcp_addrs: Vec<SocketAddr>,
    udp_addrs: Vec<SocketAddr>,
    counters: Arc<SensorCounters>,
    loops: Vec<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

impl SensorHandle {
    pub fn tcp_addrs(&self) -> &[SocketAddr] {
        &self.tcp_addrs
    }

    pub fn udp_addrs(&self) -> &[SocketAddr] {
        &self.udp_addrs
    }

    pub fn counters(&self) -> &SensorCounters {
        &self.counters
    }

    /// Stops listening after draining pending connections, closes open
    /// sessions (logging their `E` lines) and flushes the log.
    pub fn shutdown(mut self) -> Arc<SensorCounters> {
        self.stop.store(true, Ordering::SeqCst);
        for h in self.loops.drain(..) {
            let _ = h.join();
        }
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        Arc::clone(&self.counters)
    }
}

fn v4(addr: SocketAddr) -> Option<SocketAddrV4> {
    match addr {
        SocketAddr::V4(a) => Some(a),
        SocketAddr::V6(a) => a.ip().to_ipv4_mapped().map(|ip| SocketAddrV4::new(ip, a.port())),
    }
}

fn record(protocol: Protocol, src: SocketAddrV4, dst: SocketAddrV4, detail: Detail) -> LogRecord {
    LogRecord {
        timestamp: Timestamp::now(),
        protocol,
        src_addr: *src.ip(),
        src_port: src.port(),
        dst_addr: *dst.ip(),
        dst_port: dst.port(),
        detail,
    }
}

fn bind_tcp(addr: SocketAddrV4) -> Result<TcpListener, TrafficError> {
    let wrap = |source| TrafficError::Bind { addr: addr.into(), source };
    let sock = Socket::new(Domain::IPV4, Type::STREAM, Some(SockProto::TCP)).map_err(wrap)?;
    sock.set_reuse_address(true).map_err(wrap)?;
    sock.bind(&SocketAddr::from(addr).into()).map_err(wrap)?;
    sock.listen(1024).map_err(wrap)?;
    let listener: TcpListener = sock.into();
    listener.set_nonblocking(true).map_err(wrap)?;
    Ok(listener)
}

/// Binds every configured port and starts logging to `cfg.log_path`.
pub fn run_sensor(cfg: SensorConfig) -> Result<SensorHandle, TrafficError> {
    cfg.validate()?;
    let mut writer = LogWriter::open(&cfg.log_path)?;

    let tcp: Vec<TcpListener> =
        cfg.tcp_ports.iter().map(|&p| bind_tcp(SocketAddrV4::new(cfg.bind, p))).collect::<Result<_, _>>()?;
    let udp: Vec<UdpSocket> = cfg
        .udp_ports
        .iter()
        .map(|&p| {
            let addr = SocketAddr::from(SocketAddrV4::new(cfg.bind, p));
            let s = UdpSocket::bind(addr).map_err(|source| TrafficError::Bind { addr, source })?;
            s.set_read_timeout(Some(READ_TICK))?;
            Ok(s)
        })
        .collect::<Result<_, TrafficError>>()?;

    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(SensorCounters::default());
    let (tx, rx) = mpsc::channel::<LogRecord>();

    let writer_counters = Arc::clone(&counters);
    let writer_thread = thread::Builder::new().name("sensor-log".into()).spawn(move || {
        for rec in rx {
            let line = rec.to_string();
            match writer.append_line(line.as_bytes()) {
                Ok(()) => writer_counters.lines_written.fetch_add(1, Ordering::SeqCst),
                Err(e) => {
                    tracing::warn!(error = %e, "sensor log append failed");
                    writer_counters.write_errors.fetch_add(1, Ordering::SeqCst)
                }
            };
        }
    })?;

    let mut tcp_addrs = Vec::new();
    let mut udp_addrs = Vec::new();
    let mut loops = Vec::new();
    for listener in tcp {
        tcp_addrs.push(listener.local_addr()?);
        let (stop, counters, tx) = (Arc::clone(&stop), Arc::clone(&counters), tx.clone());
        let lifetime = cfg.max_lifetime;
        loops.push(
            thread::Builder::new()
                .name("sensor-tcp".into())
                .spawn(move || accept_loop(listener, stop, counters, tx, lifetime))?,
        );
    }
    for socket in udp {
        udp_addrs.push(socket.local_addr()?);
        let (stop, counters, tx) = (Arc::clone(&stop), Arc::clone(&counters), tx.clone());
        loops.push(
            thread::Builder::new().name("sensor-udp".into()).spawn(move || udp_loop(socket, stop, counters, tx))?,
        );
    }
    drop(tx);

    Ok(SensorHandle { stop, tcp_addrs, udp_addrs, counters, loops, writer: Some(writer_thread) })
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    counters: Arc<SensorCounters>,
    tx: mpsc::Sender<LogRecord>,
    lifetime: Duration,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    loop {
        match listener.accept() {
            Ok((stream, peer)) => {
                let local = stream.local_addr().ok().and_then(v4);
                let (Some(peer), Some(local)) = (v4(peer), local) else { continue };
                counters.accepted.fetch_add(1, Ordering::SeqCst);
                let _ = tx.send(record(Protocol::Tcp, peer, local, Detail::Start { comment: None }));
                let (stop, counters, tx) = (Arc::clone(&stop), Arc::clone(&counters), tx.clone());
                let spawned = thread::Builder::new()
                    .name("sensor-conn".into())
                    .spawn(move || session(stream, peer, local, stop, counters, tx, lifetime));
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => tracing::warn!(error = %e, "cannot spawn connection worker"),
                }
                if workers.len() > 256 {
                    workers.retain(|h| !h.is_finished());
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                // the backlog is drained; only now is it safe to stop
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                thread::sleep(POLL);
            }
            Err(e) => {
                tracing::debug!(error = %e, "accept failed");
                thread::sleep(POLL);
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn session(
    mut stream: TcpStream,
    peer: SocketAddrV4,
    local: SocketAddrV4,
    stop: Arc<AtomicBool>,
    counters: Arc<SensorCounters>,
    tx: mpsc::Sender<LogRecord>,
    lifetime: Duration,
) {
    let opened = Instant::now();
    let mut received = 0u64;
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(READ_TICK));
    let mut buf = [0u8; 4096];
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => received += n as u64,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) || opened.elapsed() >= lifetime {
                    break;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    drop(stream);
    counters.closed.fetch_add(1, Ordering::SeqCst);
    let _ = tx.send(record(Protocol::Tcp, peer, local, Detail::End { sent: 0, received }));
}

fn udp_loop(socket: UdpSocket, stop: Arc<AtomicBool>, counters: Arc<SensorCounters>, tx: mpsc::Sender<LogRecord>) {
    let local = socket.local_addr().ok().and_then(v4);
    let mut buf = vec![0u8; 65536];
    while !stop.load(Ordering::SeqCst) {
        match socket.recv_from(&mut buf) {
            Ok((n, peer)) => {
                let (Some(peer), Some(local)) = (v4(peer), local) else { continue };
                if n == 0 {
                    continue;
                }
                counters.datagrams.fetch_add(1, Ordering::SeqCst);
                let _ = tx.send(record(Protocol::Udp, peer, local, Detail::Packet { size: n as u32, flags: None }));
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => {
                tracing::debug!(error = %e, "udp receive failed");
            }
        }
    }
}
