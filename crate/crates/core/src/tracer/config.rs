use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds and windows of the expert tracing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracerConfig {
    /// Number of most recent scoreable posts in the recent window (N).
    pub recent_posts: usize,
    /// Minimum distinct posting days among those recent posts (K).
    pub min_span_days: usize,
    /// Long-term window length in years (T), measured as `T * 365` calendar days.
    pub long_term_years: f64,
    /// Long-term accuracy threshold (P1).
    pub long_term_threshold: f64,
    /// Recent accuracy threshold (P2).
    pub recent_threshold: f64,
    /// Posts later than `market close - cutoff_offset_secs` are ignored for the day.
    pub cutoff_offset_secs: i64,
    /// Minimum scoreable posts inside the long-term window before it is trusted.
    pub min_long_term_posts: usize,
    /// Market close as a UTC wall-clock time.
    pub market_close_utc: NaiveTime,
    /// Outcome horizon in trading days (1 for the main pipeline).
    pub horizon_days: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            recent_posts: 20,
            min_span_days: 5,
            long_term_years: 2.0,
            long_term_threshold: 0.65,
            recent_threshold: 0.80,
            cutoff_offset_secs: 300,
            min_long_term_posts: 40,
            market_close_utc: NaiveTime::from_hms_opt(21, 0, 0).expect("valid time"),
            horizon_days: 1,
        }
    }
}

impl TracerConfig {
    pub fn validate(&self) -> Result<()> {
        let p1 = self.long_term_threshold;
        let p2 = self.recent_threshold;
        if !(p2 > 0.5 && p2 <= 1.0) {
            return Err(Error::Config(format!(
                "recent_threshold must be in (0.5, 1], got {p2}"
            )));
        }
        if !(p1 > 0.5 && p1 <= p2) {
            return Err(Error::Config(format!(
                "long_term_threshold must be in (0.5, recent_threshold], got {p1}"
            )));
        }
        if !(self.recent_posts >= self.min_span_days && self.min_span_days >= 1) {
            return Err(Error::Config(
                "need recent_posts >= min_span_days >= 1".into(),
            ));
        }
        if !(self.long_term_years > 0.0 && self.long_term_years.is_finite()) {
            return Err(Error::Config("long_term_years must be positive".into()));
        }
        if self.cutoff_offset_secs < 0 {
            return Err(Error::Config(
                "cutoff_offset_secs must be non-negative".into(),
            ));
        }
        if self.horizon_days == 0 {
            return Err(Error::Config("horizon_days must be at least 1".into()));
        }
        Ok(())
    }

    pub fn long_term_calendar_days(&self) -> i64 {
        (self.long_term_years * 365.0).round() as i64
    }
}
