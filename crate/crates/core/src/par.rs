//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) batch work is spread over the rayon
//! pool; without it the same functions run on the calling thread. Both paths
//! produce identical output in identical order.

use crate::parser::{parse_line, LogRecord, ParseError};

/// Execution strategy for batch helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Sequential,
    #[default]
    Parallel,
}

pub fn is_parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
pub fn map<T, U, F>(mode: Mode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        Mode::Parallel => items.par_iter().with_min_len(256).map(f).collect(),
        Mode::Sequential => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(_mode: Mode, items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Parses a batch of raw lines, preserving order.
pub fn parse_batch<L: AsRef<[u8]> + Sync>(mode: Mode, lines: &[L]) -> Vec<Result<LogRecord, ParseError>> {
    map(mode, lines, |l| parse_line(l.as_ref()))
}
