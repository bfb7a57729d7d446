//! Kill-point injection for crash-consistency tests.
//!
//! Components call [`FaultInjector::hit`] at each point where a process could
//! die. An injector returning `true` makes the component stop immediately,
//! leaving on-disk state exactly as a killed process would.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultPoint {
    /// Compactor: after claiming a new generation in the checkpoint.
    AfterClaim,
    /// Compactor: after renaming the active log to its staging name.
    AfterRename,
    /// Sink: after writing part of a batch's records.
    MidBatchWrite,
    /// Sink: after all records of a batch, before the commit trailer.
    BeforeTrailer,
    /// Sink: trailer durable, batch index not yet updated.
    AfterTrailer,
    /// Compactor: batch committed, checkpoint not yet written.
    AfterCommit,
    /// Compactor: checkpoint written after a batch.
    AfterCheckpoint,
    /// Compactor: before truncating or deleting the consumed log.
    BeforeTruncate,
    /// Compactor: consumed log truncated, checkpoint not yet advanced.
    AfterTruncate,
    /// Compactor: staging file archived or deleted.
    AfterRetire,
}

impl FaultPoint {
    pub const ALL: [FaultPoint; 10] = [
        FaultPoint::AfterClaim,
        FaultPoint::AfterRename,
        FaultPoint::MidBatchWrite,
        FaultPoint::BeforeTrailer,
        FaultPoint::AfterTrailer,
        FaultPoint::AfterCommit,
        FaultPoint::AfterCheckpoint,
        FaultPoint::BeforeTruncate,
        FaultPoint::AfterTruncate,
        FaultPoint::AfterRetire,
    ];
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub trait FaultInjector: Send + Sync {
    /// Returns true if the process should "die" at `point`.
    fn hit(&self, point: FaultPoint) -> bool;
}

/// Never crashes.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoFaults;

impl FaultInjector for NoFaults {
    fn hit(&self, _: FaultPoint) -> bool {
        false
    }
}

/// Crashes on the `nth` (0-based) time `point` is reached, once.
#[derive(Debug)]
pub struct CrashAt {
    point: FaultPoint,
    nth: u64,
    seen: AtomicU64,
}

impl CrashAt {
    pub fn new(point: FaultPoint, nth: u64) -> Arc<Self> {
        Arc::new(CrashAt { point, nth, seen: AtomicU64::new(0) })
    }

    pub fn fired(&self) -> bool {
        self.seen.load(Ordering::SeqCst) > self.nth
    }
}

impl FaultInjector for CrashAt {
    fn hit(&self, point: FaultPoint) -> bool {
        point == self.point && self.seen.fetch_add(1, Ordering::SeqCst) == self.nth
    }
}

pub type SharedFaults = Arc<dyn FaultInjector>;

pub fn no_faults() -> SharedFaults {
    Arc::new(NoFaults)
}
