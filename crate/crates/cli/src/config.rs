//! Layered configuration: flag > `LOGREAPER_*` environment > config file > default.
//!
//! The file format is one `key = value` per line. `#` starts a comment when it
//! begins a line or follows whitespace.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use logreaper::bench::{parse_rotation, DEFAULT_BASE_DISK_PCT, DEFAULT_QUOTA_BYTES};
use logreaper::compactor::{RotationMode, DEFAULT_BATCH_SIZE};
use logreaper::schedule::{parse_cron, Trigger};

pub const ENV_PREFIX: &str = "LOGREAPER_";

pub const KEYS: [&str; 12] = [
    "log",
    "sink",
    "cron",
    "every",
    "rotation",
    "tcp_ports",
    "udp_ports",
    "bind",
    "batch_size",
    "quota_bytes",
    "base_disk_pct",
    "verbosity",
];

pub const DEFAULT_CRON: &str = "0 * * * *";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Syntax { path: PathBuf, line: usize, msg: String },
    #[error("unknown configuration key {key:?} ({origin})")]
    UnknownKey { key: String, origin: Source },
    #[error("invalid value {value:?} for {key} ({origin}): {reason}")]
    Invalid { key: String, value: String, origin: Source, reason: String },
    #[error("cron and every are both set by {0}; pick one")]
    ScheduleConflict(Source),
}

/// Raw key/value settings from one source.
#[derive(Debug, Clone, Default)]
pub struct Layer {
    pub source: Option<Source>,
    pub values: BTreeMap<String, String>,
}

impl Layer {
    pub fn new(source: Source) -> Self {
        Layer { source: Some(source), values: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_owned(), value.into());
    }

    fn source(&self) -> Source {
        self.source.unwrap_or(Source::Default)
    }

    fn check_keys(&self) -> Result<(), ConfigError> {
        match self.values.keys().find(|k| !KEYS.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey { key: k.clone(), origin: self.source() }),
            None => Ok(()),
        }
    }
}

pub fn parse_file_text(path: &Path, text: &str) -> Result<Layer, ConfigError> {
    let mut layer = Layer::new(Source::File);
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: &str| ConfigError::Syntax { path: path.to_owned(), line: i + 1, msg: msg.to_owned() };
        let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(syntax("missing key"));
        }
        if !KEYS.contains(&key) {
            return Err(syntax(&format!("unknown key {key:?}")));
        }
        if layer.values.contains_key(key) {
            return Err(syntax(&format!("{key} set twice")));
        }
        layer.set(key, value.trim());
    }
    Ok(layer)
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

pub fn load_file(path: &Path) -> Result<Layer, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_file_text(path, &text)
}

/// Collects `LOGREAPER_<KEY>` variables. `LOGREAPER_CONFIG` names the config
/// file and is returned separately.
pub fn env_layer<I: IntoIterator<Item = (String, String)>>(vars: I) -> Result<(Layer, Option<PathBuf>), ConfigError> {
    let mut layer = Layer::new(Source::Env);
    let mut config = None;
    for (name, value) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        if rest == "CONFIG" {
            config = Some(PathBuf::from(value));
            continue;
        }
        layer.set(&rest.to_ascii_lowercase(), value);
    }
    layer.check_keys()?;
    Ok((layer, config))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Cron(String),
    Every(u64),
}

impl ScheduleSpec {
    pub fn trigger(&self) -> Trigger {
        match self {
            ScheduleSpec::Cron(expr) => Trigger::Cron(parse_cron(expr).expect("validated at load")),
            ScheduleSpec::Every(secs) => Trigger::Every(Duration::from_secs(*secs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub log: PathBuf,
    pub sink: PathBuf,
    pub schedule: ScheduleSpec,
    pub rotation: RotationMode,
    pub tcp_ports: Vec<u16>,
    pub udp_ports: Vec<u16>,
    pub bind: Ipv4Addr,
    pub batch_size: usize,
    pub quota_bytes: u64,
    pub base_disk_pct: f64,
    pub verbosity: String,
    /// Where each key's effective value came from.
    pub sources: BTreeMap<String, Source>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            log: "honeyd.log".into(),
            sink: "logreaper-sink".into(),
            schedule: ScheduleSpec::Cron(DEFAULT_CRON.into()),
            rotation: RotationMode::TruncateInPlace,
            tcp_ports: Vec::new(),
            udp_ports: Vec::new(),
            bind: Ipv4Addr::LOCALHOST,
            batch_size: DEFAULT_BATCH_SIZE,
            quota_bytes: DEFAULT_QUOTA_BYTES,
            base_disk_pct: DEFAULT_BASE_DISK_PCT,
            verbosity: "info".into(),
            sources: KEYS.iter().map(|k| (k.to_string(), Source::Default)).collect(),
        }
    }
}

impl Config {
    /// Effective settings as `key = value` lines, in the config file format.
    pub fn render(&self) -> String {
        let ports = |p: &[u16]| p.iter().map(u16::to_string).collect::<Vec<_>>().join(",");
        let rotation = match &self.rotation {
            RotationMode::TruncateInPlace => "truncate".to_owned(),
            RotationMode::RotateDelete => "delete".to_owned(),
            RotationMode::RotateArchive(dir) => format!("archive:{}", dir.display()),
        };
        let (cron, every) = match &self.schedule {
            ScheduleSpec::Cron(c) => (Some(c.clone()), None),
            ScheduleSpec::Every(s) => (None, Some(s.to_string())),
        };
        let mut pairs = vec![
            ("log", Some(self.log.display().to_string())),
            ("sink", Some(self.sink.display().to_string())),
            ("cron", cron),
            ("every", every),
            ("rotation", Some(rotation)),
            ("tcp_ports", Some(ports(&self.tcp_ports))),
            ("udp_ports", Some(ports(&self.udp_ports))),
            ("bind", Some(self.bind.to_string())),
            ("batch_size", Some(self.batch_size.to_string())),
            ("quota_bytes", Some(self.quota_bytes.to_string())),
            ("base_disk_pct", Some(self.base_disk_pct.to_string())),
            ("verbosity", Some(self.verbosity.clone())),
        ];
        let mut out = String::new();
        for (k, v) in pairs.drain(..) {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}  # {}\n", self.sources[k]));
            }
        }
        out
    }
}

/// Merges layers in precedence order and validates every value.
pub fn merge(file: Option<Layer>, env: Layer, flags: Layer) -> Result<Config, ConfigError> {
    let layers: Vec<Layer> = [file, Some(env), Some(flags)].into_iter().flatten().collect();
    for l in &layers {
        l.check_keys()?;
        if l.values.contains_key("cron") && l.values.contains_key("every") {
            return Err(ConfigError::ScheduleConflict(l.source()));
        }
    }
    let mut cfg = Config::default();
    // later layers win
    for layer in &layers {
        let source = layer.source();
        for (key, value) in &layer.values {
            let invalid = |reason: String| ConfigError::Invalid {
                key: key.clone(),
                value: value.clone(),
                origin: source,
                reason,
            };
            match key.as_str() {
                "log" => cfg.log = non_empty(value).map_err(invalid)?.into(),
                "sink" => cfg.sink = non_empty(value).map_err(invalid)?.into(),
                "cron" => {
                    parse_cron(value).map_err(|e| invalid(e.to_string()))?;
                    cfg.schedule = ScheduleSpec::Cron(value.clone());
                    cfg.sources.insert("every".into(), source);
                }
                "every" => {
                    let secs: u64 = value.parse().map_err(|e| invalid(format!("{e}")))?;
                    if secs == 0 {
                        return Err(invalid("interval must be positive".into()));
                    }
                    cfg.schedule = ScheduleSpec::Every(secs);
                    cfg.sources.insert("cron".into(), source);
                }
                "rotation" => cfg.rotation = parse_rotation(value).map_err(invalid)?,
                "tcp_ports" => cfg.tcp_ports = parse_ports(value).map_err(invalid)?,
                "udp_ports" => cfg.udp_ports = parse_ports(value).map_err(invalid)?,
                "bind" => cfg.bind = value.parse().map_err(|e| invalid(format!("{e}")))?,
                "batch_size" => {
                    cfg.batch_size = value.parse().map_err(|e| invalid(format!("{e}")))?;
                    if cfg.batch_size == 0 {
                        return Err(invalid("batch size must be positive".into()));
                    }
                }
                "quota_bytes" => {
                    cfg.quota_bytes = value.parse().map_err(|e| invalid(format!("{e}")))?;
                    if cfg.quota_bytes == 0 {
                        return Err(invalid("quota must be positive".into()));
                    }
                }
                "base_disk_pct" => {
                    let pct: f64 = value.parse().map_err(|e| invalid(format!("{e}")))?;
                    if !(0.0..=100.0).contains(&pct) {
                        return Err(invalid("must be within 0..=100".into()));
                    }
                    cfg.base_disk_pct = pct;
                }
                "verbosity" => {
                    if !["error", "warn", "info", "debug", "trace"].contains(&value.as_str()) {
                        return Err(invalid("one of error, warn, info, debug, trace".into()));
                    }
                    cfg.verbosity = value.clone();
                }
                _ => unreachable!("keys checked above"),
            }
            cfg.sources.insert(key.clone(), source);
        }
    }
    Ok(cfg)
}

fn non_empty(v: &str) -> Result<&str, String> {
    if v.is_empty() {
        Err("must not be empty".into())
    } else {
        Ok(v)
    }
}

fn parse_ports(v: &str) -> Result<Vec<u16>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    let ports = v
        .split(',')
        .map(|p| p.trim().parse::<u16>().map_err(|e| format!("port {p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::HashSet::new();
    if let Some(p) = ports.iter().find(|&&p| p != 0 && !seen.insert(p)) {
        return Err(format!("port {p} listed twice"));
    }
    Ok(ports)
}

/// Resolves the full configuration from an optional explicit path, the
/// process environment and flag values.
pub fn load_config<I>(path: Option<&Path>, env: I, flags: Layer) -> Result<Config, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let (env, env_path) = env_layer(env)?;
    let file = match path.map(Path::to_owned).or(env_path) {
        Some(p) => Some(load_file(&p)?),
        None => None,
    };
    merge(file, env, flags)
}
