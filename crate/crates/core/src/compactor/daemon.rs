use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};

use super::{CompactError, CompactionStats, Compactor, CompactorOptions, LogPaths};
use crate::schedule::{JobPolicy, RunLog, Scheduler, SystemClock, Trigger};
use crate::sink::{FileSink, SinkError};
use crate::traffic::{run_sensor, SensorConfig, SensorCounters, SensorHandle, TrafficError};

#[derive(Debug, Clone)]
pub struct DaemonConfig {
    pub log_path: PathBuf,
    pub sink_dir: PathBuf,
    pub trigger: Trigger,
    pub options: CompactorOptions,
    /// Stop after this many failed runs in a row.
    pub max_consecutive_failures: u32,
    /// Run a sensor writing to `log_path` alongside the compactor.
    pub sensor: Option<SensorConfig>,
    /// One last run after the schedule stops, once the sensor is down.
    pub drain_on_shutdown: bool,
}

impl DaemonConfig {
    pub fn new(log_path: impl Into<PathBuf>, sink_dir: impl Into<PathBuf>, trigger: Trigger) -> Self {
        DaemonConfig {
            log_path: log_path.into(),
            sink_dir: sink_dir.into(),
            trigger,
            options: CompactorOptions::default(),
            max_consecutive_failures: 3,
            sensor: None,
            drain_on_shutdown: false,
        }
    }

    pub fn paths(&self) -> LogPaths {
        LogPaths::new(&self.log_path, &self.sink_dir)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DaemonError {
    #[error(transparent)]
    Compact(#[from] CompactError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Sensor(#[from] TrafficError),
    #[error("{failures} consecutive runs failed; last error: {last}")]
    TooManyFailures { failures: u32, last: String },
    #[error("daemon thread panicked")]
    Panicked,
}

/// Outcome of one scheduled compaction.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scheduled: DateTime<Utc>,
    pub result: Result<CompactionStats, String>,
}

#[derive(Debug)]
pub struct DaemonReport {
    pub runs: Vec<RunRecord>,
    pub schedule: RunLog,
    pub drain: Option<CompactionStats>,
    pub sensor: Option<Arc<SensorCounters>>,
}

impl DaemonReport {
    /// Sum over successful runs, drain included.
    pub fn totals(&self) -> CompactionStats {
        let mut total = CompactionStats::default();
        for r in &self.runs {
            if let Ok(s) = &r.result {
                total.absorb(s.clone());
            }
        }
        if let Some(d) = &self.drain {
            total.absorb(d.clone());
        }
        total
    }
}

type LoopResult = Result<(RunLog, Option<CompactionStats>), DaemonError>;

pub struct DaemonHandle {
    stop: Arc<AtomicBool>,
    runs: Arc<Mutex<Vec<RunRecord>>>,
    sensor: Option<SensorHandle>,
    thread: Option<JoinHandle<LoopResult>>,
    sensor_stopped: Arc<AtomicBool>,
}

impl DaemonHandle {
    /// Raising this flag has the same effect as [`shutdown`](Self::shutdown)
    /// minus the wait.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn sensor_tcp_addrs(&self) -> &[SocketAddr] {
        self.sensor.as_ref().map_or(&[], |s| s.tcp_addrs())
    }

    pub fn sensor_udp_addrs(&self) -> &[SocketAddr] {
        self.sensor.as_ref().map_or(&[], |s| s.udp_addrs())
    }

    pub fn sensor_counters(&self) -> Option<&SensorCounters> {
        self.sensor.as_ref().map(|s| s.counters())
    }

    /// Results so far.
    pub fn runs(&self) -> Vec<RunRecord> {
        self.runs.lock().unwrap().clone()
    }

    /// True once the scheduler loop has ended on its own or been stopped.
    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Stops the sensor, lets an in-flight run finish, then drains if configured.
    pub fn shutdown(mut self) -> Result<DaemonReport, DaemonError> {
        let sensor = self.sensor.take().map(SensorHandle::shutdown);
        self.sensor_stopped.store(true, Ordering::SeqCst);
        self.stop.store(true, Ordering::SeqCst);
        self.finish(sensor)
    }

    fn finish(mut self, sensor: Option<Arc<SensorCounters>>) -> Result<DaemonReport, DaemonError> {
        let joined = self.thread.take().map(|t| t.join());
        self.collect(joined, sensor)
    }

    fn collect(
        &mut self,
        joined: Option<std::thread::Result<LoopResult>>,
        sensor: Option<Arc<SensorCounters>>,
    ) -> Result<DaemonReport, DaemonError> {
        let (schedule, drain) = match joined {
            Some(Ok(r)) => r?,
            Some(Err(_)) => return Err(DaemonError::Panicked),
            None => (RunLog::default(), None),
        };
        Ok(DaemonReport { runs: self.runs(), schedule, drain, sensor })
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(s) = self.sensor.take() {
            s.shutdown();
        }
        self.sensor_stopped.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn open_compactor(cfg: &DaemonConfig) -> Result<Compactor<FileSink>, DaemonError> {
    let sink = FileSink::open(&cfg.sink_dir)?;
    Ok(Compactor::open(cfg.paths(), sink, cfg.options.clone())?)
}

/// Starts the sensor (if configured) and the compaction schedule on a
/// background thread. The compactor instance lock is taken before this
/// returns, so a second daemon on the same log fails here.
pub fn run_daemon(cfg: DaemonConfig) -> Result<DaemonHandle, DaemonError> {
    let compactor = open_compactor(&cfg)?;
    let sensor = cfg.sensor.clone().map(run_sensor).transpose()?;
    let stop = Arc::new(AtomicBool::new(false));
    let sensor_stopped = Arc::new(AtomicBool::new(sensor.is_none()));
    let runs = Arc::new(Mutex::new(Vec::new()));

    let thread = {
        let stop = Arc::clone(&stop);
        let runs = Arc::clone(&runs);
        let sensor_stopped = Arc::clone(&sensor_stopped);
        std::thread::Builder::new()
            .name("compactor".into())
            .spawn(move || daemon_loop(cfg, compactor, stop, runs, sensor_stopped))
            .map_err(|e| DaemonError::Sensor(TrafficError::Io(e)))?
    };
    Ok(DaemonHandle { stop, runs, sensor, thread: Some(thread), sensor_stopped })
}

fn daemon_loop(
    cfg: DaemonConfig,
    compactor: Compactor<FileSink>,
    stop: Arc<AtomicBool>,
    runs: Arc<Mutex<Vec<RunRecord>>>,
    sensor_stopped: Arc<AtomicBool>,
) -> LoopResult {
    let scheduler = Scheduler::new(cfg.trigger, JobPolicy::default(), SystemClock).with_stop_flag(Arc::clone(&stop));
    let mut compactor = Some(compactor);
    let consecutive = std::cell::Cell::new(0u32);
    let mut last_error = String::new();
    let limit = cfg.max_consecutive_failures.max(1);

    let schedule = scheduler.run_while(
        None,
        |ctx| {
            // after a failure the sink may be poisoned; start over from disk
            let result = match compactor.as_mut() {
                Some(c) => c.compact_once().map_err(|e| e.to_string()),
                None => open_compactor(&cfg)
                    .map_err(|e| e.to_string())
                    .and_then(|c| compactor.insert(c).compact_once().map_err(|e| e.to_string())),
            };
            let record = match result {
                Ok(stats) => {
                    consecutive.set(0);
                    tracing::info!(
                        run = ctx.run,
                        records = stats.records_committed,
                        errors = stats.parse_errors,
                        bytes = stats.bytes_consumed,
                        "compaction finished"
                    );
                    RunRecord { scheduled: ctx.scheduled, result: Ok(stats) }
                }
                Err(e) => {
                    consecutive.set(consecutive.get() + 1);
                    tracing::error!(run = ctx.run, error = %e, "compaction failed");
                    last_error = e.clone();
                    compactor = None;
                    RunRecord { scheduled: ctx.scheduled, result: Err(e) }
                }
            };
            let err = record.result.as_ref().err().cloned();
            runs.lock().unwrap().push(record);
            err.map_or(Ok(()), Err)
        },
        |_| consecutive.get() < limit,
    );
    if consecutive.get() >= limit {
        return Err(DaemonError::TooManyFailures { failures: consecutive.get(), last: last_error });
    }

    let mut drain = None;
    if cfg.drain_on_shutdown {
        while !sensor_stopped.load(Ordering::SeqCst) {
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        let mut c = match compactor {
            Some(c) => c,
            None => open_compactor(&cfg)?,
        };
        drain = Some(c.compact_once()?);
    }
    Ok((schedule, drain))
}
