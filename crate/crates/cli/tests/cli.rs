use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_logreaper"));
    for (k, _) in std::env::vars() {
        if k.starts_with("LOGREAPER_") {
            c.env_remove(k);
        }
    }
    c.env("LOGREAPER_VERBOSITY", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a.log", "b.log"] {
        let o = run(
            d.path(),
            &["generate", "--threads", "10", "--rate", "1", "--duration", "10", "--seed", "7", "--out", out],
        );
        assert!(o.status.success(), "{o:?}");
    }
    let a = std::fs::read(d.path().join("a.log")).unwrap();
    assert_eq!(a, std::fs::read(d.path().join("b.log")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 100);
}

#[test]
fn compact_then_export_keeps_every_line() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["generate", "--threads", "4", "--rate", "25", "--duration", "10", "--out", "a.log"]);
    assert!(o.status.success());
    let lines = std::fs::read_to_string(d.path().join("a.log")).unwrap().lines().count();
    let o = run(d.path(), &["compact", "--log", "a.log", "--sink", "s", "--once", "--json"]);
    assert!(o.status.success(), "{o:?}");
    let stats: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(stats["records_committed"], lines as u64);
    assert_eq!(std::fs::metadata(d.path().join("a.log")).unwrap().len(), 0);

    let o = run(d.path(), &["export", "--sink", "s", "--out", "x.csv"]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(d.path().join("x.csv")).unwrap();
    assert_eq!(csv.lines().count(), lines + 1);
    let o = run(d.path(), &["export", "--sink", "s", "--count"]);
    assert_eq!(stdout(&o).trim(), lines.to_string());
    let o = run(d.path(), &["export", "--sink", "s", "--count", "--to", "2000-01-01T00:00:00Z"]);
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["compact", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["run", "--dry-run", "--every", "0"]).status.code(), Some(2));
    std::fs::write(d.path().join("bad.conf"), "every = 0\n").unwrap();
    assert_eq!(run(d.path(), &["--config", "bad.conf", "run", "--dry-run"]).status.code(), Some(2));
    std::fs::write(d.path().join("odd.conf"), "colour = red\n").unwrap();
    let o = run(d.path(), &["--config", "odd.conf", "run", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("odd.conf:1"));
    let o = bin().current_dir(d.path()).env("LOGREAPER_COLOUR", "red").args(["run", "--dry-run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(run(d.path(), &["--help"]).status.success());
}

#[test]
fn runtime_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["export", "--sink", "missing"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["sense", "--duration", "1"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["bench", "--suite", "nope"]).status.code(), Some(1));
}

#[test]
fn dry_run_touches_nothing_and_shows_precedence() {
    let d = tempfile::tempdir().unwrap();
    let conf = d.path().join("l.conf");
    std::fs::write(&conf, "log = from-file.log\nsink = file-sink\nbatch_size = 11\ncron = 5 4 * * *\n").unwrap();
    let o = bin()
        .current_dir(d.path())
        .env("LOGREAPER_SINK", "env-sink")
        .env("LOGREAPER_BATCH_SIZE", "12")
        .args(["--config", "l.conf", "run", "--dry-run", "--batch-size", "13", "--tcp-ports", "0,2222"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    for want in [
        "log = from-file.log  # file",
        "sink = env-sink  # env",
        "batch_size = 13  # flag",
        "cron = 5 4 * * *  # file",
        "tcp_ports = 0,2222  # flag",
        "rotation = truncate  # default",
    ] {
        assert!(out.contains(want), "{want}\n{out}");
    }
    assert_eq!(out.matches("next fire: ").count(), 3);
    let entries: Vec<_> = std::fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, [std::ffi::OsString::from("l.conf")]);
}

#[test]
fn published_figures_bench_and_report() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["bench", "--suite", "paper-replay", "--out", "r", "--json"]);
    assert!(o.status.success(), "{o:?}");
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let got: Vec<u64> = rows
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| [r["size_reduction_pct"].as_u64().unwrap(), r["time_reduction_pct"].as_u64().unwrap()])
        .collect();
    assert_eq!(got, [87, 89, 87, 88, 86, 88]);
    for f in ["report.md", "metrics.csv", "size.svg", "disk.svg", "time.svg"] {
        assert!(d.path().join("r").join(f).exists(), "{f}");
    }
    std::fs::write(d.path().join("rows.json"), stdout(&o)).unwrap();
    let o = run(d.path(), &["report", "--input", "rows.json", "--out", "r2"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        std::fs::read(d.path().join("r/report.md")).unwrap(),
        std::fs::read(d.path().join("r2/report.md")).unwrap()
    );
    assert!(stdout(&o).contains("| Case | Size (MB) |"));
}

#[test]
fn bench_from_suite_file() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("s.toml"),
        "[[case]]\nlabel = \"tiny\"\nthreads = 2\nlines_per_thread_per_sec = 20.0\nduration_secs = 40\ninterval_secs = 5\n",
    )
    .unwrap();
    let o = run(d.path(), &["bench", "--suite", "file:s.toml", "--out", "r"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("| tiny"));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn daemon_with_sensor_stops_on_sigterm_and_drains() {
    let d = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut daemon = bin()
        .current_dir(d.path())
        .args([
            "run",
            "--log",
            "h.log",
            "--sink",
            "s",
            "--every",
            "1",
            "--tcp-ports",
            &port.to_string(),
            "--drain-on-exit",
        ])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let o = run(
        d.path(),
        &[
            "flood",
            "--target",
            &format!("127.0.0.1:{port}"),
            "--threads",
            "2",
            "--duration",
            "2",
            "--rate",
            "20",
            "--json",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let flood: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let completed = flood["completed"].as_u64().unwrap();
    assert!(completed > 0);

    let killed = Command::new("kill").args(["-TERM", &daemon.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = daemon.wait().unwrap();
    assert!(status.success(), "{status:?}");
    assert_eq!(std::fs::metadata(d.path().join("h.log")).unwrap().len(), 0);
    let o = run(d.path(), &["export", "--sink", "s", "--count"]);
    assert_eq!(stdout(&o).trim(), (2 * completed).to_string());
}
