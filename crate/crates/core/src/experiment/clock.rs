use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::error::Result;
use crate::hooks::{RunContext, SessionRunHook, SessionState};

/// Source of elapsed time for evaluation scheduling.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

/// Wall-clock time measured from construction.
#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Manually driven clock for deterministic schedules.
#[derive(Debug, Clone, Default)]
pub struct MockClock {
    now: Arc<Mutex<Duration>>,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap_or_else(|p| p.into_inner()) += d;
    }

    /// A hook that advances this clock by `per_step` after every training step.
    pub fn tick_hook(&self, per_step: Duration) -> ClockTickHook {
        ClockTickHook {
            clock: self.clone(),
            per_step,
        }
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// See [`MockClock::tick_hook`].
#[derive(Debug, Clone)]
pub struct ClockTickHook {
    clock: MockClock,
    per_step: Duration,
}

impl SessionRunHook for ClockTickHook {
    fn after_run(&mut self, _loss: f64, _ctx: &mut RunContext, _session: &dyn SessionState) -> Result<()> {
        self.clock.advance(self.per_step);
        Ok(())
    }
}
