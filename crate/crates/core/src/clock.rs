use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

/// Milliseconds since the Unix epoch, or simulated time in tests.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Simulated time that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock {
            now: AtomicU64::new(start_ms),
        }
    }

    pub fn advance(&self, ms: u64) -> u64 {
        self.now.fetch_add(ms, Ordering::SeqCst) + ms
    }

    pub fn set(&self, ms: u64) {
        self.now.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

/// Wraps a clock so readings never go backwards.
pub struct MonotoneClock {
    inner: Arc<dyn Clock>,
    last: AtomicU64,
}

impl MonotoneClock {
    pub fn new(inner: Arc<dyn Clock>) -> Self {
        MonotoneClock {
            inner,
            last: AtomicU64::new(0),
        }
    }
}

impl Clock for MonotoneClock {
    fn now_ms(&self) -> u64 {
        let now = self.inner.now_ms();
        let prev = self.last.fetch_max(now, Ordering::SeqCst);
        prev.max(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_clock_never_goes_back() {
        let manual = Arc::new(ManualClock::new(1000));
        let mono = MonotoneClock::new(manual.clone());
        assert_eq!(mono.now_ms(), 1000);
        manual.set(500);
        assert_eq!(mono.now_ms(), 1000);
        manual.advance(1000);
        assert_eq!(mono.now_ms(), 1500);
    }
}
