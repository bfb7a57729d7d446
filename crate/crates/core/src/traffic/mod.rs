//! Load production: a deterministic synthetic flood log, a live sensor that
//! logs real TCP/UDP traffic, and a TCP connection flooder to drive it.

mod flood;
mod generator;
mod sensor;

use std::io;
use std::net::SocketAddr;

pub use flood::{flood, FloodConfig, FloodReport};
pub use generator::{
    full_scale_bytes, generate_log, FloodProfile, GeneratorReport, SyntheticFlood, BYTES_PER_THREAD_HOUR,
};
pub use sensor::{run_sensor, SensorConfig, SensorCounters, SensorHandle};

#[derive(Debug, thiserror::Error)]
pub enum TrafficError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}
