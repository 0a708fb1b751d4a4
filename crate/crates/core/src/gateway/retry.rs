use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statuses treated as transient by default.
pub const DEFAULT_RETRYABLE: [u16; 6] = [408, 429, 500, 502, 503, 504];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    /// Context window in estimated tokens.
    pub context_window: usize,
    pub retryable_statuses: BTreeSet<u16>,
    pub max_attempts: u32,
    /// (min, max) inter-attempt delay in seconds.
    pub backoff_bounds: (f64, f64),
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            context_window: 512_000,
            retryable_statuses: DEFAULT_RETRYABLE.into_iter().collect(),
            max_attempts: 10,
            backoff_bounds: (1.0, 300.0),
        }
    }
}

impl BackendProfile {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.backoff_bounds;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!(
                "backoff bounds must satisfy 0 <= min < max, got ({lo}, {hi})"
            )));
        }
        if self.max_attempts < 1 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.context_window == 0 {
            return Err(Error::Config("context_window must be positive".into()));
        }
        Ok(())
    }

    pub fn is_retryable(&self, status: u16) -> bool {
        self.retryable_statuses.contains(&status)
    }

    /// Delay before attempt `failed + 1`: min doubling per failure, capped at max.
    pub fn backoff_delay(&self, failed: u32) -> Duration {
        let (lo, hi) = self.backoff_bounds;
        let exp = failed.saturating_sub(1).min(62);
        let secs = (lo.max(f64::MIN_POSITIVE) * 2f64.powi(exp as i32)).clamp(lo, hi);
        Duration::from_secs_f64(secs)
    }
}

/// Clock used between retries; swapped for a recorder under test.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().expect("sleeper poisoned").clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().expect("sleeper poisoned").push(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_doubles_and_caps() {
        let p = BackendProfile::default();
        let secs: Vec<f64> = (1..=10).map(|k| p.backoff_delay(k).as_secs_f64()).collect();
        assert_eq!(
            secs,
            vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 300.0]
        );
    }

    #[test]
    fn bounds_validated() {
        let mut p = BackendProfile {
            backoff_bounds: (5.0, 5.0),
            ..Default::default()
        };
        assert!(p.validate().is_err());
        p.backoff_bounds = (1.0, 300.0);
        p.max_attempts = 0;
        assert!(p.validate().is_err());
    }
}
