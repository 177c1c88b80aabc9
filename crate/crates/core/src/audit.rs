//! Process-wide normalization audit.
//!
//! Every [`LogDistribution`](crate::LogDistribution) and
//! [`ListenerPosterior`](crate::listeners::ListenerPosterior) built through
//! the checked constructors records its probability-space normalization error
//! here. Counters only grow; take a [`snapshot`] before and after a run to
//! inspect it.

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistKind {
    Speaker,
    Listener,
    Suppressor,
}

struct Counter {
    checks: AtomicU64,
    // Bit pattern of a non-negative f64; such patterns order like the values.
    max_error_bits: AtomicU64,
}

impl Counter {
    const fn new() -> Self {
        Self { checks: AtomicU64::new(0), max_error_bits: AtomicU64::new(0) }
    }
}

static SPEAKER: Counter = Counter::new();
static LISTENER: Counter = Counter::new();
static SUPPRESSOR: Counter = Counter::new();

fn counter(kind: DistKind) -> &'static Counter {
    match kind {
        DistKind::Speaker => &SPEAKER,
        DistKind::Listener => &LISTENER,
        DistKind::Suppressor => &SUPPRESSOR,
    }
}

pub fn record(kind: DistKind, error: f64) {
    let c = counter(kind);
    c.checks.fetch_add(1, Ordering::Relaxed);
    let bits = if error.is_nan() { f64::INFINITY.to_bits() } else { error.abs().to_bits() };
    c.max_error_bits.fetch_max(bits, Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindStats {
    pub checks: u64,
    pub max_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub speaker: KindStats,
    pub listener: KindStats,
    pub suppressor: KindStats,
}

pub fn snapshot() -> Snapshot {
    let read = |kind| {
        let c = counter(kind);
        KindStats {
            checks: c.checks.load(Ordering::Relaxed),
            max_error: f64::from_bits(c.max_error_bits.load(Ordering::Relaxed)),
        }
    };
    Snapshot {
        speaker: read(DistKind::Speaker),
        listener: read(DistKind::Listener),
        suppressor: read(DistKind::Suppressor),
    }
}
