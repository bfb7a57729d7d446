mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, SocketAddrV4};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use logreaper::bench::{self, ComparisonRow};
use logreaper::compactor::{run_daemon, Compactor, CompactorOptions, DaemonConfig, LogPaths};
use logreaper::schedule::{next_fire, parse_cron};
use logreaper::sink::{FileSink, Filter, Sink, TimeRange};
use logreaper::traffic::{self, FloodConfig, FloodProfile, SensorConfig, SensorCounters};
use logreaper::Timestamp;

use config::{Config, Layer, ScheduleSpec, Source};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Honeypot log compaction: ingest honeyd-format logs into a record store on
/// a schedule and keep the active log small.
#[derive(Parser, Debug)]
#[command(name = "logreaper", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all subcommands. Each can also come from the
/// environment (`LOGREAPER_<NAME>`) or the config file (`<name> = value`).
#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Config file of `key = value` lines [env: LOGREAPER_CONFIG]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Active honeyd log [default: honeyd.log]
    #[arg(long, global = true)]
    log: Option<String>,
    /// Record store directory [default: logreaper-sink]
    #[arg(long, global = true)]
    sink: Option<String>,
    /// Compaction schedule as a 5-field cron expression [default: "0 * * * *"]
    #[arg(long, global = true, conflicts_with = "every")]
    cron: Option<String>,
    /// Compact every N seconds instead of on a cron schedule
    #[arg(long, global = true)]
    every: Option<String>,
    /// truncate | delete | archive:<dir> [default: truncate]
    #[arg(long, global = true)]
    rotation: Option<String>,
    /// Comma-separated TCP ports for the sensor (0 picks a free port)
    #[arg(long, global = true)]
    tcp_ports: Option<String>,
    /// Comma-separated UDP ports for the sensor
    #[arg(long, global = true)]
    udp_ports: Option<String>,
    /// Sensor bind address [default: 127.0.0.1]
    #[arg(long, global = true)]
    bind: Option<String>,
    /// Records per sink commit [default: 10000]
    #[arg(long, global = true)]
    batch_size: Option<String>,
    /// Disk quota used for the disk-usage column, in bytes [default: 1000000000]
    #[arg(long, global = true)]
    quota_bytes: Option<String>,
    /// Disk usage before any log is written, in percent [default: 10]
    #[arg(long, global = true)]
    base_disk_pct: Option<String>,
    /// error | warn | info | debug | trace [default: info]
    #[arg(long, global = true)]
    verbosity: Option<String>,
}

impl GlobalArgs {
    fn layer(&self) -> Layer {
        let mut l = Layer::new(Source::Flag);
        let pairs = [
            ("log", &self.log),
            ("sink", &self.sink),
            ("cron", &self.cron),
            ("every", &self.every),
            ("rotation", &self.rotation),
            ("tcp_ports", &self.tcp_ports),
            ("udp_ports", &self.udp_ports),
            ("bind", &self.bind),
            ("batch_size", &self.batch_size),
            ("quota_bytes", &self.quota_bytes),
            ("base_disk_pct", &self.base_disk_pct),
            ("verbosity", &self.verbosity),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                l.set(k, v.clone());
            }
        }
        l
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the compaction daemon, with the sensor when ports are configured
    Run {
        /// Validate the configuration, print it and the next fire times, touch nothing
        #[arg(long)]
        dry_run: bool,
        /// Compact once more after shutdown so the log is left empty
        #[arg(long)]
        drain_on_exit: bool,
        /// Consecutive failed runs before the daemon gives up
        #[arg(long, default_value_t = 3)]
        max_failures: u32,
        /// Stop after this many seconds instead of waiting for a signal
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Run only the honeypot sensor, appending to the log
    Sense {
        /// Stop after this many seconds instead of waiting for a signal
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Open and close TCP connections against a target
    Flood {
        #[arg(long)]
        target: SocketAddr,
        #[arg(long, default_value_t = 10)]
        threads: u32,
        /// Seconds
        #[arg(long, default_value_t = 10)]
        duration: u64,
        /// Connections per second per thread; unpaced when absent
        #[arg(long)]
        rate: Option<f64>,
        /// Bytes sent on each connection
        #[arg(long, default_value_t = 0)]
        payload: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write a deterministic synthetic flood log
    Generate {
        #[arg(long, default_value_t = 10)]
        threads: u32,
        /// Lines per thread per second
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Seconds of simulated traffic
        #[arg(long, default_value_t = 10)]
        duration: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distinct source addresses
        #[arg(long, default_value_t = 1024)]
        src_pool: u32,
        /// Attacked address recorded in the log
        #[arg(long, default_value = "192.168.1.20:80")]
        target: SocketAddrV4,
        /// Output file; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest the log into the sink once and remove the consumed part
    Compact {
        /// Single pass (the only mode; accepted for scripts)
        #[arg(long)]
        once: bool,
        /// Print run statistics as JSON
        #[arg(long)]
        json: bool,
    },
    /// Run a before/after benchmark suite and write the report
    Bench {
        /// default | paper-replay | file:<suite.toml>
        #[arg(long, default_value = "default")]
        suite: String,
        /// Report directory
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Print the comparison rows as JSON instead of markdown
        #[arg(long)]
        json: bool,
    },
    /// Render report files from saved `bench --json` output
    Report {
        /// JSON rows from `bench --json`
        #[arg(long, required_unless_present = "published")]
        input: Option<PathBuf>,
        /// Use the published figures instead of an input file
        #[arg(long, conflicts_with = "input")]
        published: bool,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Export sink records as CSV
    Export {
        /// Inclusive start, RFC 3339
        #[arg(long)]
        from: Option<String>,
        /// Exclusive end, RFC 3339
        #[arg(long)]
        to: Option<String>,
        /// Output file; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print only the number of matching records
        #[arg(long)]
        count: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match config::load_config(cli.global.config.as_deref(), std::env::vars(), cli.global.layer()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("logreaper: configuration error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cfg.verbosity))
        .init();
    match dispatch(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("logreaper: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(command: Command, cfg: &Config) -> anyhow::Result<()> {
    match command {
        Command::Run { dry_run, drain_on_exit, max_failures, duration } => {
            if dry_run {
                dry_run_report(cfg)
            } else {
                run(cfg, drain_on_exit, max_failures, duration)
            }
        }
        Command::Sense { duration } => sense(cfg, duration),
        Command::Flood { target, threads, duration, rate, payload, json } => {
            let mut fc = FloodConfig::new(target, threads, Duration::from_secs(duration));
            fc.per_thread_rate = rate;
            fc.payload = payload;
            let r = traffic::flood(&fc)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({ "attempts": r.attempts, "completed": r.completed, "failed": r.failed })
                );
            } else {
                println!("attempts {} completed {} failed {}", r.attempts, r.completed, r.failed);
            }
            Ok(())
        }
        Command::Generate { threads, rate, duration, seed, src_pool, target, out } => {
            let profile = FloodProfile {
                threads,
                lines_per_thread_per_sec: rate,
                duration_secs: duration,
                seed,
                src_pool_size: src_pool,
                target,
                ..FloodProfile::default()
            };
            let report = match out {
                Some(path) => {
                    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    traffic::generate_log(&profile, BufWriter::new(f))
                }
                None => traffic::generate_log(&profile, io::stdout().lock()),
            }
            .map_err(|(e, _)| e)?;
            tracing::info!(lines = report.lines_emitted, bytes = report.bytes_emitted, "generated");
            Ok(())
        }
        Command::Compact { once: _, json } => compact(cfg, json),
        Command::Bench { suite, out, json } => bench_cmd(cfg, &suite, &out, json),
        Command::Report { input, published, out } => {
            let rows = if published {
                bench::published_rows()?
            } else {
                let path = input.expect("clap enforces input or --published");
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            };
            let files = bench::write_report(&rows, &out)?;
            tracing::info!(dir = %out.display(), "report written");
            print!("{}", bench::render_markdown(&rows));
            drop(files);
            Ok(())
        }
        Command::Export { from, to, out, count } => export(cfg, from, to, out, count),
    }
}

fn options(cfg: &Config) -> CompactorOptions {
    CompactorOptions { mode: cfg.rotation.clone(), batch_size: cfg.batch_size, ..CompactorOptions::default() }
}

fn sensor_config(cfg: &Config) -> Option<SensorConfig> {
    if cfg.tcp_ports.is_empty() && cfg.udp_ports.is_empty() {
        return None;
    }
    Some(SensorConfig {
        tcp_ports: cfg.tcp_ports.clone(),
        udp_ports: cfg.udp_ports.clone(),
        bind: cfg.bind,
        log_path: cfg.log.clone(),
        max_lifetime: Duration::from_secs(300),
    })
}

/// Raised by SIGINT or SIGTERM.
fn shutdown_flag() -> anyhow::Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, Arc::clone(&flag))?;
    }
    Ok(flag)
}

fn wait_until(stop: &AtomicBool, deadline: Option<Instant>, mut done: impl FnMut() -> bool) {
    while !stop.load(Ordering::SeqCst) && !done() && deadline.is_none_or(|d| Instant::now() < d) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn dry_run_report(cfg: &Config) -> anyhow::Result<()> {
    print!("{}", cfg.render());
    if let Some(s) = sensor_config(cfg) {
        s.validate()?;
    }
    if let ScheduleSpec::Cron(expr) = &cfg.schedule {
        let s = parse_cron(expr)?;
        let mut t = chrono::Utc::now();
        for _ in 0..3 {
            t = next_fire(&s, t)?;
            println!("next fire: {}", t.to_rfc3339());
        }
    }
    Ok(())
}

fn run(cfg: &Config, drain: bool, max_failures: u32, duration: Option<u64>) -> anyhow::Result<()> {
    let stop = shutdown_flag()?;
    let mut dc = DaemonConfig::new(&cfg.log, &cfg.sink, cfg.schedule.trigger());
    dc.options = options(cfg);
    dc.sensor = sensor_config(cfg);
    dc.max_consecutive_failures = max_failures;
    dc.drain_on_shutdown = drain;
    let daemon = run_daemon(dc)?;
    for addr in daemon.sensor_tcp_addrs() {
        tracing::info!(%addr, "sensor listening (tcp)");
    }
    for addr in daemon.sensor_udp_addrs() {
        tracing::info!(%addr, "sensor listening (udp)");
    }
    let deadline = duration.map(|s| Instant::now() + Duration::from_secs(s));
    wait_until(&stop, deadline, || daemon.is_finished());
    tracing::info!("shutting down");
    let report = daemon.shutdown()?;
    let totals = report.totals();
    tracing::info!(
        runs = report.runs.len(),
        records = totals.records_committed,
        errors = totals.parse_errors,
        "daemon stopped"
    );
    Ok(())
}

fn sense(cfg: &Config, duration: Option<u64>) -> anyhow::Result<()> {
    let Some(sc) = sensor_config(cfg) else { bail!("no sensor ports configured (tcp_ports / udp_ports)") };
    let stop = shutdown_flag()?;
    let sensor = traffic::run_sensor(sc)?;
    for addr in sensor.tcp_addrs().iter().chain(sensor.udp_addrs()) {
        println!("listening {addr}");
    }
    io::stdout().flush()?;
    wait_until(&stop, duration.map(|s| Instant::now() + Duration::from_secs(s)), || false);
    let c = sensor.shutdown();
    tracing::info!(
        accepted = SensorCounters::get(&c.accepted),
        datagrams = SensorCounters::get(&c.datagrams),
        lines = SensorCounters::get(&c.lines_written),
        "sensor stopped"
    );
    Ok(())
}

fn compact(cfg: &Config, json: bool) -> anyhow::Result<()> {
    let sink = FileSink::open(&cfg.sink)?;
    let mut c = Compactor::open(LogPaths::new(&cfg.log, &cfg.sink), sink, options(cfg))?;
    let stats = c.compact_once()?;
    if json {
        println!("{}", serde_json::to_string(&stats)?);
    } else {
        println!(
            "committed {} records ({} parse errors, {} replayed) from {} bytes in {:?}",
            stats.records_committed, stats.parse_errors, stats.records_replayed, stats.bytes_consumed, stats.duration
        );
        for s in &stats.error_samples {
            println!("  line {}: {}", s.line_number, s.error);
        }
    }
    Ok(())
}

fn bench_cmd(cfg: &Config, suite: &str, out: &std::path::Path, json: bool) -> anyhow::Result<()> {
    let results: Vec<anyhow::Result<ComparisonRow>> = match suite {
        "paper-replay" => bench::published_rows()?.into_iter().map(Ok).collect(),
        _ => {
            let pairs = if suite == "default" {
                let mut pairs = bench::default_suite();
                for spec in pairs.iter_mut().flat_map(|(b, a)| [b, a]) {
                    spec.disk_quota_bytes = cfg.quota_bytes;
                    spec.base_disk_pct = cfg.base_disk_pct;
                    spec.rotation = cfg.rotation.clone();
                }
                pairs
            } else if let Some(path) = suite.strip_prefix("file:") {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading suite {path}"))?;
                bench::parse_suite_file(&text)?
            } else {
                bail!("unknown suite {suite:?} (default, paper-replay, file:<path>)");
            };
            bench::run_suite(&pairs).into_iter().map(|r| r.map_err(Into::into)).collect()
        }
    };
    let mut rows = Vec::new();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failures += 1;
                tracing::error!(error = %e, "case failed");
            }
        }
    }
    bench::write_report(&rows, out)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", bench::render_markdown(&rows));
    }
    if failures > 0 {
        bail!("{failures} case(s) failed");
    }
    Ok(())
}

fn parse_instant(text: &str) -> anyhow::Result<Timestamp> {
    let dt = chrono::DateTime::parse_from_rfc3339(text).with_context(|| format!("bad time {text:?}"))?;
    Ok(Timestamp::from_datetime(dt.with_timezone(&chrono::Utc)))
}

fn export(
    cfg: &Config,
    from: Option<String>,
    to: Option<String>,
    out: Option<PathBuf>,
    count: bool,
) -> anyhow::Result<()> {
    let range = TimeRange {
        start: from.as_deref().map(parse_instant).transpose()?,
        end: to.as_deref().map(parse_instant).transpose()?,
    };
    let sink = FileSink::open_read_only(&cfg.sink)?;
    if count {
        println!("{}", sink.count(&Filter { range, ..Filter::default() })?);
        return Ok(());
    }
    let rows = match out {
        Some(path) => {
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            let n = sink.export_csv(&mut w, range)?;
            w.flush()?;
            n
        }
        None => sink.export_csv(&mut io::stdout().lock(), range)?,
    };
    tracing::info!(rows, "exported");
    Ok(())
}
