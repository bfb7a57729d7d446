//! Before/after measurements of log growth with and without periodic
//! compaction, at desk scale.
//!
//! A case replays a synthetic flood into a log through [`LogWriter`] on a
//! simulated clock: lines are written in timestamp order, the log size is
//! probed at fixed steps, and at every compaction boundary the compactor runs
//! to completion before more lines are written. Only the compaction runs are
//! timed (wall clock). The baseline arm never compacts and instead ingests
//! the whole log once at the end.

mod report;
mod suite;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use report::{parse_svg_values, render_csv, render_markdown, render_svg, write_report, Metric, ReportFiles};
pub use suite::{default_suite, parse_rotation, parse_suite_file, published_rows, SuiteCase, SuiteFile};

use crate::compactor::{CompactError, Compactor, CompactorOptions, LogPaths, RotationMode};
use crate::logfile::LogWriter;
use crate::sink::{FileSink, Sink, SinkError};
use crate::traffic::{FloodProfile, SyntheticFlood, TrafficError};

pub const DEFAULT_QUOTA_BYTES: u64 = 1_000_000_000;
pub const DEFAULT_BASE_DISK_PCT: f64 = 10.0;
/// Log size probes per compaction interval.
pub const SAMPLES_PER_INTERVAL: u64 = 10;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid case: {0}")]
    InvalidSpec(String),
    #[error("negative reduction: after ({after}) exceeds before ({before})")]
    NegativeReduction { before: f64, after: f64 },
    #[error("reduction needs a positive before value, got {0}")]
    NonPositiveBefore(f64),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Compact(#[from] CompactError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("bench I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite file: {0}")]
    SuiteFile(String),
}

/// Percentage saved going from `before` to `after`, rounded half up to an
/// integer.
pub fn reduction(before: f64, after: f64) -> Result<u32, BenchError> {
    if !(before > 0.0 && before.is_finite()) {
        return Err(BenchError::NonPositiveBefore(before));
    }
    if after.is_nan() || after < 0.0 || after > before {
        return Err(BenchError::NegativeReduction { before, after });
    }
    let pct = 100.0 * (before - after) / before;
    // tolerance keeps exact halves (e.g. 87.5) from rounding down on float error
    Ok((pct + 0.5 + 1e-9).floor() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub label: String,
    pub flood: FloodProfile,
    /// Seconds between compaction runs; `None` for the baseline arm.
    pub compaction_interval: Option<u64>,
    pub disk_quota_bytes: u64,
    pub base_disk_pct: f64,
    pub rotation: RotationMode,
}

impl CaseSpec {
    pub fn new(label: impl Into<String>, flood: FloodProfile, compaction_interval: Option<u64>) -> Self {
        CaseSpec {
            label: label.into(),
            flood,
            compaction_interval,
            disk_quota_bytes: DEFAULT_QUOTA_BYTES,
            base_disk_pct: DEFAULT_BASE_DISK_PCT,
            rotation: RotationMode::TruncateInPlace,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.flood.validate()?;
        let bad = |m: String| Err(BenchError::InvalidSpec(format!("{}: {m}", self.label)));
        if let Some(interval) = self.compaction_interval {
            if interval == 0 {
                return bad("compaction interval must be positive".into());
            }
            if self.flood.duration_secs < 2 * interval {
                return bad(format!(
                    "duration {}s spans fewer than two {}s intervals",
                    self.flood.duration_secs, interval
                ));
            }
        }
        if self.disk_quota_bytes == 0 {
            return bad("disk quota must be positive".into());
        }
        if !(0.0..=100.0).contains(&self.base_disk_pct) {
            return bad("base disk usage must be within 0..=100%".into());
        }
        Ok(())
    }

    /// Same case with compaction switched off.
    pub fn baseline(&self) -> Self {
        CaseSpec { compaction_interval: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub peak_log_bytes: u64,
    pub total_emitted_bytes: u64,
    pub lines_emitted: u64,
    /// `base + 100 x peak / quota`, clamped to 100.
    pub disk_pct_peak: f64,
    pub disk_overflow: bool,
    /// Sum of all compaction runs (one full ingestion for the baseline).
    pub ingest_wall_time: Duration,
    /// Longest single run.
    pub max_run_wall_time: Duration,
    /// Each run's wall time, in order.
    #[serde(default)]
    pub run_wall_times: Vec<Duration>,
    pub runs: u32,
    pub sink_record_count: u64,
    pub parse_errors: u64,
}

impl CaseMetrics {
    /// Metrics given directly in report units (MB, percent, minutes).
    pub fn published(size_mb: f64, disk_pct: f64, minutes: f64) -> Self {
        let bytes = (size_mb * 1e6).round() as u64;
        let time = Duration::from_secs_f64(minutes * 60.0);
        CaseMetrics {
            peak_log_bytes: bytes,
            total_emitted_bytes: bytes,
            lines_emitted: 0,
            disk_pct_peak: disk_pct,
            disk_overflow: disk_pct >= 100.0,
            ingest_wall_time: time,
            max_run_wall_time: time,
            run_wall_times: vec![time],
            runs: 1,
            sink_record_count: 0,
            parse_errors: 0,
        }
    }

    pub fn size_mb(&self) -> f64 {
        self.peak_log_bytes as f64 / 1e6
    }

    /// The time column: how long one ingestion run takes.
    pub fn time_minutes(&self) -> f64 {
        self.max_run_wall_time.as_secs_f64() / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub before: CaseMetrics,
    pub after: CaseMetrics,
    pub size_reduction_pct: u32,
    pub time_reduction_pct: u32,
}

impl ComparisonRow {
    pub fn new(label: impl Into<String>, before: CaseMetrics, after: CaseMetrics) -> Result<Self, BenchError> {
        Ok(ComparisonRow {
            label: label.into(),
            size_reduction_pct: reduction(before.peak_log_bytes as f64, after.peak_log_bytes as f64)?,
            time_reduction_pct: reduction(
                before.max_run_wall_time.as_secs_f64(),
                after.max_run_wall_time.as_secs_f64(),
            )?,
            before,
            after,
        })
    }
}

pub fn disk_pct(base_pct: f64, bytes: u64, quota: u64) -> (f64, bool) {
    let pct = base_pct + 100.0 * bytes as f64 / quota as f64;
    if pct > 100.0 {
        (100.0, true)
    } else {
        (pct, false)
    }
}

struct WorkDir(PathBuf);

impl WorkDir {
    fn create() -> std::io::Result<Self> {
        static SEQ: AtomicU64 = AtomicU64::new(0);
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.subsec_nanos());
        let name = format!("logreaper-bench-{}-{}-{nanos}", std::process::id(), SEQ.fetch_add(1, Ordering::SeqCst));
        let dir = std::env::temp_dir().join(name);
        std::fs::create_dir_all(&dir)?;
        Ok(WorkDir(dir))
    }
}

impl Drop for WorkDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

/// Runs one case in a scratch directory that is removed afterwards.
pub fn run_case(spec: &CaseSpec) -> Result<CaseMetrics, BenchError> {
    let work = WorkDir::create()?;
    run_case_in(spec, &work.0)
}

/// Runs one case using `dir` (which should be empty) for the log and sink.
pub fn run_case_in(spec: &CaseSpec, dir: &Path) -> Result<CaseMetrics, BenchError> {
    spec.validate()?;
    let log = dir.join("honeyd.log");
    let sink_dir = dir.join("sink");
    let paths = LogPaths::new(&log, &sink_dir);
    let opts = CompactorOptions { mode: spec.rotation.clone(), ..CompactorOptions::default() };
    let open = || -> Result<Compactor<FileSink>, BenchError> {
        Ok(Compactor::open(paths.clone(), FileSink::open(&sink_dir)?, opts.clone())?)
    };

    let duration_us = spec.flood.duration_secs * 1_000_000;
    let (step_us, interval_us) = match spec.compaction_interval {
        Some(i) => (i * 1_000_000 / SAMPLES_PER_INTERVAL, Some(i * 1_000_000)),
        None => (duration_us / 100, None),
    };
    let step_us = step_us.max(1);
    let start = spec.flood.start.as_micros();

    let mut writer = LogWriter::open(&log)?;
    let mut compactor = match interval_us {
        Some(_) => Some(open()?),
        None => None,
    };
    let mut m = CaseMetrics {
        peak_log_bytes: 0,
        total_emitted_bytes: 0,
        lines_emitted: 0,
        disk_pct_peak: 0.0,
        disk_overflow: false,
        ingest_wall_time: Duration::ZERO,
        max_run_wall_time: Duration::ZERO,
        run_wall_times: Vec::new(),
        runs: 0,
        sink_record_count: 0,
        parse_errors: 0,
    };

    let boundary = |t_us: u64, m: &mut CaseMetrics, compactor: &mut Option<Compactor<FileSink>>| {
        m.peak_log_bytes = m.peak_log_bytes.max(std::fs::metadata(&log)?.len());
        if let (Some(c), Some(iv)) = (compactor.as_mut(), interval_us) {
            if t_us > 0 && t_us.is_multiple_of(iv) {
                let stats = c.compact_once()?;
                m.runs += 1;
                m.ingest_wall_time += stats.duration;
                m.max_run_wall_time = m.max_run_wall_time.max(stats.duration);
                m.run_wall_times.push(stats.duration);
                m.parse_errors += stats.parse_errors;
            }
        }
        Ok::<_, BenchError>(())
    };

    let mut next = step_us;
    let mut line = String::with_capacity(128);
    for rec in SyntheticFlood::new(spec.flood.clone())? {
        let t = (rec.timestamp.as_micros() - start) as u64;
        while t >= next {
            boundary(next, &mut m, &mut compactor)?;
            next += step_us;
        }
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{rec}");
        writer.append_line(line.as_bytes())?;
        m.lines_emitted += 1;
        m.total_emitted_bytes += line.len() as u64 + 1;
    }
    while next <= duration_us {
        boundary(next, &mut m, &mut compactor)?;
        next += step_us;
    }
    m.peak_log_bytes = m.peak_log_bytes.max(std::fs::metadata(&log)?.len());

    let compactor = match compactor {
        Some(c) => c,
        None => {
            let mut c = open()?;
            let stats = c.compact_once()?;
            m.runs = 1;
            m.ingest_wall_time = stats.duration;
            m.max_run_wall_time = stats.duration;
            m.run_wall_times = vec![stats.duration];
            m.parse_errors = stats.parse_errors;
            c
        }
    };
    m.sink_record_count = compactor.sink().stats().total_records;
    (m.disk_pct_peak, m.disk_overflow) = disk_pct(spec.base_disk_pct, m.peak_log_bytes, spec.disk_quota_bytes);
    Ok(m)
}

/// Runs each (baseline, compacted) pair in order. A failing case fails only its row.
pub fn run_suite(pairs: &[(CaseSpec, CaseSpec)]) -> Vec<Result<ComparisonRow, BenchError>> {
    pairs
        .iter()
        .map(|(before, after)| {
            if before.flood != after.flood {
                return Err(BenchError::InvalidSpec(format!("{}: arms use different floods", after.label)));
            }
            if before.compaction_interval.is_some() || after.compaction_interval.is_none() {
                return Err(BenchError::InvalidSpec(format!(
                    "{}: expected a baseline and a compacted arm",
                    after.label
                )));
            }
            tracing::info!(case = %after.label, "running baseline");
            let b = run_case(before)?;
            tracing::info!(case = %after.label, "running with compaction");
            let a = run_case(after)?;
            ComparisonRow::new(after.label.clone(), b, a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_reductions() {
        for (b, a, want) in [
            (85.0, 11.0, 87),
            (35.0, 4.0, 89),
            (446.0, 56.0, 87),
            (190.0, 23.0, 88),
            (844.0, 118.0, 86),
            (320.0, 40.0, 88),
        ] {
            assert_eq!(reduction(b, a).unwrap(), want, "{b} -> {a}");
        }
    }

    #[test]
    fn reduction_edges() {
        assert_eq!(reduction(7.0, 7.0).unwrap(), 0);
        assert_eq!(reduction(7.0, 0.0).unwrap(), 100);
        assert_eq!(reduction(8.0, 1.0).unwrap(), 88);
        assert!(matches!(reduction(5.0, 6.0), Err(BenchError::NegativeReduction { .. })));
        assert!(matches!(reduction(0.0, 0.0), Err(BenchError::NonPositiveBefore(_))));
    }

    #[test]
    fn disk_pct_clamps() {
        assert_eq!(disk_pct(10.0, 10_000_000, 1_000_000_000), (11.0, false));
        assert_eq!(disk_pct(95.0, 100_000_000, 1_000_000_000), (100.0, true));
    }

    #[test]
    fn spec_validation() {
        let flood = FloodProfile { duration_secs: 15, ..FloodProfile::default() };
        assert!(CaseSpec::new("c", flood.clone(), Some(10)).validate().is_err());
        assert!(CaseSpec::new("c", flood.clone(), Some(0)).validate().is_err());
        assert!(CaseSpec::new("c", flood.clone(), None).validate().is_ok());
        assert!(CaseSpec::new("c", flood, Some(5)).validate().is_ok());
    }

    #[test]
    fn small_case_conserves_records() {
        let flood =
            FloodProfile { threads: 4, lines_per_thread_per_sec: 50.0, duration_secs: 8, ..FloodProfile::default() };
        let after = run_case(&CaseSpec::new("c", flood.clone(), Some(2))).unwrap();
        let before = run_case(&CaseSpec::new("c", flood, None)).unwrap();
        assert_eq!(before.peak_log_bytes, before.total_emitted_bytes);
        assert_eq!(after.total_emitted_bytes, before.total_emitted_bytes);
        assert_eq!(after.sink_record_count, 1600);
        assert_eq!(before.sink_record_count, 1600);
        assert_eq!(after.runs, 4);
        assert!(after.peak_log_bytes < before.peak_log_bytes / 3);
    }

    proptest! {
        #[test]
        fn reduction_is_scale_invariant(b in 1u32..100_000, frac in 0.0f64..=1.0, k in 1u32..1000) {
            let a = (f64::from(b) * frac).floor();
            let b = f64::from(b);
            let k = f64::from(k);
            prop_assert_eq!(reduction(k * b, k * a).unwrap(), reduction(b, a).unwrap());
        }
    }
}
