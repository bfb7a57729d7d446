use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use super::{BenchError, CaseMetrics, ComparisonRow};

/// Charted quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Size,
    Disk,
    Time,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Size, Metric::Disk, Metric::Time];

    pub fn title(self) -> &'static str {
        match self {
            Metric::Size => "Size (MB)",
            Metric::Disk => "Disk Space Used (%)",
            Metric::Time => "Time (minutes)",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Metric::Size => "size.svg",
            Metric::Disk => "disk.svg",
            Metric::Time => "time.svg",
        }
    }

    pub fn value(self, m: &CaseMetrics) -> f64 {
        match self {
            Metric::Size => m.size_mb(),
            Metric::Disk => m.disk_pct_peak,
            Metric::Time => m.time_minutes(),
        }
    }
}

/// Whole numbers print bare; others get up to six decimals, trailing zeros trimmed.
fn num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        return format!("{}", v.round() as i64);
    }
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

pub fn render_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    out.push_str("| Case | Size (MB) | Disk Space Used (%) | Time (minutes) | Cron-Job |\n");
    out.push_str("|------|-----------|---------------------|----------------|----------|\n");
    for r in rows {
        for (label, m, mark) in [(r.label.as_str(), &r.before, "x"), ("", &r.after, "√")] {
            let disk = if m.disk_overflow { format!("{} (full)", num(m.disk_pct_peak)) } else { num(m.disk_pct_peak) };
            let _ = writeln!(out, "| {label} | {} | {disk} | {} | {mark} |", num(m.size_mb()), num(m.time_minutes()));
        }
    }
    out.push_str("\n| Case | Size reduction (%) | Time reduction (%) |\n");
    out.push_str("|------|--------------------|--------------------|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {} | {} |", r.label, r.size_reduction_pct, r.time_reduction_pct);
    }
    out
}

const CSV_COLUMNS: [&str; 14] = [
    "case",
    "cron_job",
    "size_mb",
    "disk_pct",
    "disk_overflow",
    "time_minutes",
    "ingest_total_minutes",
    "peak_log_bytes",
    "total_emitted_bytes",
    "lines_emitted",
    "sink_record_count",
    "runs",
    "size_reduction_pct",
    "time_reduction_pct",
];

pub fn render_csv(rows: &[ComparisonRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| BenchError::Io(io::Error::other(e));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        for (m, cron) in [(&r.before, false), (&r.after, true)] {
            w.write_record([
                r.label.clone(),
                cron.to_string(),
                num(m.size_mb()),
                num(m.disk_pct_peak),
                m.disk_overflow.to_string(),
                num(m.time_minutes()),
                num(m.ingest_wall_time.as_secs_f64() / 60.0),
                m.peak_log_bytes.to_string(),
                m.total_emitted_bytes.to_string(),
                m.lines_emitted.to_string(),
                m.sink_record_count.to_string(),
                m.runs.to_string(),
                r.size_reduction_pct.to_string(),
                r.time_reduction_pct.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart, before and after per case. Every bar carries a text
/// label with its value, tagged with `data-case` and `data-arm`.
pub fn render_svg(rows: &[ComparisonRow], metric: Metric) -> String {
    const GROUP: f64 = 140.0;
    const BAR: f64 = 44.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 50.0;
    const PLOT_H: f64 = 240.0;
    let width = LEFT + GROUP * rows.len().max(1) as f64 + 140.0;
    let height = TOP + PLOT_H + 60.0;
    let max = rows.iter().flat_map(|r| [metric.value(&r.before), metric.value(&r.after)]).fold(0.0f64, f64::max);
    let scale = if max > 0.0 { PLOT_H / max } else { 0.0 };
    let base_y = TOP + PLOT_H;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="15" text-anchor="middle">Comparing {} before and after compaction</text>"#,
        width / 2.0,
        escape(metric.title())
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{base_y}" x2="{}" y2="{base_y}" stroke="black"/>"#, width - 120.0);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base_y}" stroke="black"/>"#);
    for (i, r) in rows.iter().enumerate() {
        let gx = LEFT + 20.0 + GROUP * i as f64;
        for (j, (arm, m, color)) in
            [("before", &r.before, "#c0504d"), ("after", &r.after, "#4f81bd")].into_iter().enumerate()
        {
            let v = metric.value(m);
            let h = v * scale;
            let x = gx + j as f64 * (BAR + 6.0);
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="{BAR}" height="{h}" fill="{color}"/>"#, base_y - h);
            let _ = writeln!(
                s,
                r#"<text class="value" data-case="{}" data-arm="{arm}" x="{}" y="{}" text-anchor="middle">{}</text>"#,
                escape(&r.label),
                x + BAR / 2.0,
                base_y - h - 4.0,
                num(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">Case {}</text>"#,
            gx + BAR + 3.0,
            base_y + 18.0,
            escape(&r.label)
        );
    }
    let lx = width - 110.0;
    let _ = writeln!(s, r##"<rect x="{lx}" y="{TOP}" width="12" height="12" fill="#c0504d"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="{}">without</text>"#, lx + 18.0, TOP + 11.0);
    let _ = writeln!(s, r##"<rect x="{lx}" y="{}" width="12" height="12" fill="#4f81bd"/>"##, TOP + 20.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">with compaction</text>"#, lx + 18.0, TOP + 31.0);
    s.push_str("</svg>\n");
    s
}

/// Reads back `(case, arm, value)` from the value labels of a chart made by
/// [`render_svg`].
pub fn parse_svg_values(svg: &str) -> Vec<(String, String, f64)> {
    let attr = |tag: &str, name: &str| -> Option<String> {
        let start = tag.find(&format!("{name}=\""))? + name.len() + 2;
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].replace("&quot;", "\"").replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&"))
    };
    svg.lines()
        .filter(|l| l.starts_with("<text class=\"value\""))
        .filter_map(|l| {
            let open_end = l.find('>')?;
            let close = l.rfind("</text>")?;
            let value = l[open_end + 1..close].parse().ok()?;
            Some((attr(&l[..open_end], "data-case")?, attr(&l[..open_end], "data-arm")?, value))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Writes `report.md`, `metrics.csv`, `size.svg`, `disk.svg` and `time.svg` into `dir`.
pub fn write_report(rows: &[ComparisonRow], dir: &Path) -> Result<ReportFiles, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::InvalidSpec("report needs at least one row".into()));
    }
    std::fs::create_dir_all(dir)?;
    let markdown = dir.join("report.md");
    std::fs::write(&markdown, format!("# Log size before and after compaction\n\n{}", render_markdown(rows)))?;
    let csv = dir.join("metrics.csv");
    std::fs::write(&csv, render_csv(rows)?)?;
    let mut charts = Vec::new();
    for metric in Metric::ALL {
        let path = dir.join(metric.file_name());
        std::fs::write(&path, render_svg(rows, metric))?;
        charts.push(path);
    }
    Ok(ReportFiles { markdown, csv, charts })
}
