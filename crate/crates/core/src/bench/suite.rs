use serde::Deserialize;

use super::{BenchError, CaseMetrics, CaseSpec, ComparisonRow, DEFAULT_BASE_DISK_PCT, DEFAULT_QUOTA_BYTES};
use crate::compactor::RotationMode;
use crate::traffic::FloodProfile;

/// Three cases at 10, 50 and 90 flood threads, 80 s each, compacted every
/// 10 s (eight intervals). Case 3 writes about 9 MB.
pub fn default_suite() -> Vec<(CaseSpec, CaseSpec)> {
    [10, 50, 90]
        .into_iter()
        .enumerate()
        .map(|(i, threads)| {
            let flood = FloodProfile {
                threads,
                lines_per_thread_per_sec: 16.0,
                duration_secs: 80,
                seed: 1000 + i as u64,
                ..FloodProfile::default()
            };
            let after = CaseSpec::new((i + 1).to_string(), flood, Some(10));
            (after.baseline(), after)
        })
        .collect()
}

/// The published before/after figures of the three flood cases (size in MB,
/// disk in %, time in minutes).
pub fn published_rows() -> Result<Vec<ComparisonRow>, BenchError> {
    const CASES: [(&str, [f64; 3], [f64; 3]); 3] = [
        ("1", [85.0, 95.0, 35.0], [11.0, 94.0, 4.0]),
        ("2", [446.0, 91.0, 190.0], [56.0, 85.0, 23.0]),
        ("3", [844.0, 100.0, 320.0], [118.0, 91.0, 40.0]),
    ];
    CASES
        .iter()
        .map(|(label, [bs, bd, bt], [as_, ad, at])| {
            ComparisonRow::new(*label, CaseMetrics::published(*bs, *bd, *bt), CaseMetrics::published(*as_, *ad, *at))
        })
        .collect()
}

/// A suite read from TOML:
///
/// ```toml
/// quota_bytes = 1000000000   # optional
/// base_disk_pct = 10.0       # optional
///
/// [[case]]
/// label = "1"
/// threads = 10
/// lines_per_thread_per_sec = 16.0
/// duration_secs = 80
/// interval_secs = 10
/// seed = 1                   # optional
/// rotation = "truncate"      # optional: truncate | delete | archive:<dir>
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub quota_bytes: Option<u64>,
    pub base_disk_pct: Option<f64>,
    #[serde(rename = "case")]
    pub cases: Vec<SuiteCase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteCase {
    pub label: String,
    pub threads: u32,
    pub lines_per_thread_per_sec: f64,
    pub duration_secs: u64,
    pub interval_secs: u64,
    #[serde(default)]
    pub seed: u64,
    pub rotation: Option<String>,
}

pub fn parse_rotation(text: &str) -> Result<RotationMode, String> {
    match text {
        "truncate" => Ok(RotationMode::TruncateInPlace),
        "delete" => Ok(RotationMode::RotateDelete),
        _ => match text.strip_prefix("archive:") {
            Some(dir) if !dir.is_empty() => Ok(RotationMode::RotateArchive(dir.into())),
            _ => Err(format!("unknown rotation mode {text:?} (truncate, delete, archive:<dir>)")),
        },
    }
}

pub fn parse_suite_file(text: &str) -> Result<Vec<(CaseSpec, CaseSpec)>, BenchError> {
    let file: SuiteFile = toml::from_str(text).map_err(|e| BenchError::SuiteFile(e.to_string()))?;
    if file.cases.is_empty() {
        return Err(BenchError::SuiteFile("no [[case]] entries".into()));
    }
    file.cases
        .iter()
        .map(|c| {
            let flood = FloodProfile {
                threads: c.threads,
                lines_per_thread_per_sec: c.lines_per_thread_per_sec,
                duration_secs: c.duration_secs,
                seed: c.seed,
                ..FloodProfile::default()
            };
            let mut after = CaseSpec::new(c.label.clone(), flood, Some(c.interval_secs));
            after.disk_quota_bytes = file.quota_bytes.unwrap_or(DEFAULT_QUOTA_BYTES);
            after.base_disk_pct = file.base_disk_pct.unwrap_or(DEFAULT_BASE_DISK_PCT);
            if let Some(r) = &c.rotation {
                after.rotation = parse_rotation(r).map_err(BenchError::SuiteFile)?;
            }
            after.validate()?;
            Ok((after.baseline(), after))
        })
        .collect()
}
