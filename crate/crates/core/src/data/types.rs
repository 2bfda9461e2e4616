use std::collections::HashMap;
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sector label assigned to symbols missing from the sectors file.
pub const UNKNOWN_SECTOR: &str = "UNKNOWN";

/// Self-assigned label on a post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Bullish,
    Bearish,
}

impl Sentiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bullish" => Some(Sentiment::Bullish),
            "bearish" => Some(Sentiment::Bearish),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Bullish => "Bullish",
            Sentiment::Bearish => "Bearish",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sentiment::Bullish => Sentiment::Bearish,
            Sentiment::Bearish => Sentiment::Bullish,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sentiment-labelled message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub user_id: String,
    pub symbol: String,
    pub created_at: DateTime<Utc>,
    pub sentiment: Sentiment,
}

/// Daily OHLCV bar plus optional fundamental columns.
///
/// The symbol is implied by the bar's slot in [`MarketPanel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub day: usize,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub fundamentals: Vec<f64>,
}

impl Bar {
    /// Checks the price and volume invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(format!(
                "non-positive or non-finite price (o={}, h={}, l={}, c={})",
                self.open, self.high, self.low, self.close
            ));
        }
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if self.low > lo || hi > self.high {
            return Err(format!(
                "inconsistent range: low {} / high {} vs open {} close {}",
                self.low, self.high, self.open, self.close
            ));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("invalid volume {}", self.volume));
        }
        if self.fundamentals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite fundamental value".to_string());
        }
        Ok(())
    }
}

/// Close-to-close fractional change.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ReturnRatio(f64);

impl ReturnRatio {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `(c_t1 - c_t) / c_t`.
pub fn compute_return(c_t: f64, c_t1: f64) -> Result<ReturnRatio> {
    if !(c_t > 0.0 && c_t.is_finite() && c_t1 > 0.0 && c_t1.is_finite()) {
        return Err(Error::Domain(format!(
            "prices must be positive and finite, got {c_t} and {c_t1}"
        )));
    }
    Ok(ReturnRatio((c_t1 - c_t) / c_t))
}

/// Dense symbol-by-day bar store with a trading calendar and sector map.
///
/// Symbols are kept sorted; everything downstream refers to them by index.
#[derive(Debug, Clone)]
pub struct MarketPanel {
    calendar: Vec<NaiveDate>,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    sectors: Vec<String>,
    fundamental_names: Vec<String>,
    // bars[symbol][day]
    bars: Vec<Vec<Option<Bar>>>,
}

impl MarketPanel {
    /// Builds a panel. `bars` is indexed `[symbol][day]` in the order of `symbols`.
    pub fn new(
        calendar: Vec<NaiveDate>,
        symbols: Vec<String>,
        sectors: Vec<String>,
        fundamental_names: Vec<String>,
        bars: Vec<Vec<Option<Bar>>>,
    ) -> Result<Self> {
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("calendar must be strictly increasing".into()));
        }
        if symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("symbols must be sorted and distinct".into()));
        }
        if sectors.len() != symbols.len() || bars.len() != symbols.len() {
            return Err(Error::Format(
                "symbol, sector and bar tables disagree in length".into(),
            ));
        }
        for (s, row) in bars.iter().enumerate() {
            if row.len() != calendar.len() {
                return Err(Error::Format(format!(
                    "bar row for {} has {} days, calendar has {}",
                    symbols[s],
                    row.len(),
                    calendar.len()
                )));
            }
            for (d, bar) in row.iter().enumerate() {
                if let Some(bar) = bar {
                    if bar.day != d {
                        return Err(Error::Format(format!(
                            "bar for {} stored at day {d} claims day {}",
                            symbols[s], bar.day
                        )));
                    }
                    if bar.fundamentals.len() != fundamental_names.len() {
                        return Err(Error::Format(format!(
                            "bar for {} on {} has {} fundamentals, expected {}",
                            symbols[s],
                            calendar[d],
                            bar.fundamentals.len(),
                            fundamental_names.len()
                        )));
                    }
                    bar.validate().map_err(|e| {
                        Error::Format(format!("{} on {}: {e}", symbols[s], calendar[d]))
                    })?;
                }
            }
        }
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            calendar,
            symbols,
            index,
            sectors,
            fundamental_names,
            bars,
        })
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn sector(&self, idx: usize) -> &str {
        &self.sectors[idx]
    }

    pub fn sectors(&self) -> &[String] {
        &self.sectors
    }

    pub fn fundamental_names(&self) -> &[String] {
        &self.fundamental_names
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.calendar[day]
    }

    /// Calendar index of `date`, if it is a trading day.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// First trading day on or after `date`.
    pub fn day_on_or_after(&self, date: NaiveDate) -> Option<usize> {
        let i = self.calendar.partition_point(|d| *d < date);
        (i < self.calendar.len()).then_some(i)
    }

    pub fn bar(&self, symbol: usize, day: usize) -> Option<&Bar> {
        self.bars.get(symbol)?.get(day)?.as_ref()
    }

    pub fn close(&self, symbol: usize, day: usize) -> Option<f64> {
        self.bar(symbol, day).map(|b| b.close)
    }

    /// Return realised on `day`, i.e. close of `day - 1` to close of `day`.
    pub fn daily_return(&self, symbol: usize, day: usize) -> Option<f64> {
        if day == 0 {
            return None;
        }
        let prev = self.close(symbol, day - 1)?;
        let cur = self.close(symbol, day)?;
        compute_return(prev, cur).ok().map(ReturnRatio::value)
    }

    /// Return from close of `day` to close of `day + horizon`.
    pub fn forward_return(&self, symbol: usize, day: usize, horizon: usize) -> Option<f64> {
        self.forward_return_ratio(symbol, day, horizon)
            .map(ReturnRatio::value)
    }

    pub fn forward_return_ratio(
        &self,
        symbol: usize,
        day: usize,
        horizon: usize,
    ) -> Option<ReturnRatio> {
        let from = self.close(symbol, day)?;
        let to = self.close(symbol, day.checked_add(horizon)?)?;
        compute_return(from, to).ok()
    }

    /// Symbols with a bar on `day`, in index order.
    pub fn present(&self, day: usize) -> Vec<usize> {
        (0..self.n_symbols())
            .filter(|&s| self.bar(s, day).is_some())
            .collect()
    }

    /// Replaces a bar in place. Intended for fixtures and mutation tests.
    pub fn set_bar(&mut self, symbol: usize, day: usize, bar: Option<Bar>) -> Result<()> {
        if let Some(b) = &bar {
            b.validate().map_err(Error::Format)?;
            if b.day != day || b.fundamentals.len() != self.fundamental_names.len() {
                return Err(Error::Format("bar does not fit its slot".into()));
            }
        }
        self.bars[symbol][day] = bar;
        Ok(())
    }

    /// Names of the feature columns produced by normalisation.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["open", "high", "low", "close", "volume"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.fundamental_names.iter().cloned());
        names
    }

    pub fn feature_dim(&self) -> usize {
        5 + self.fundamental_names.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compute_return_examples() {
        assert_eq!(compute_return(100.0, 105.0).unwrap().value(), 0.05);
        assert_eq!(compute_return(100.0, 100.0).unwrap().value(), 0.0);
        assert!((compute_return(50.0, 45.0).unwrap().value() + 0.10).abs() < 1e-15);
        assert!(compute_return(0.0, 1.0).is_err());
        assert!(compute_return(1.0, -2.0).is_err());
    }

    #[test]
    fn bar_invariants() {
        let mut b = Bar {
            day: 0,
            open: 10.0,
            high: 11.0,
            low: 9.0,
            close: 10.5,
            volume: 100.0,
            fundamentals: vec![],
        };
        assert!(b.validate().is_ok());
        b.high = 10.2;
        assert!(b.validate().is_err());
        b.high = 11.0;
        b.close = 0.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn sentiment_parsing() {
        assert_eq!(Sentiment::parse("Bullish"), Some(Sentiment::Bullish));
        assert_eq!(Sentiment::parse(" bearish "), Some(Sentiment::Bearish));
        assert_eq!(Sentiment::parse("neutral"), None);
        assert_eq!(Sentiment::Bullish.flipped(), Sentiment::Bearish);
    }

    proptest::proptest! {
        #[test]
        fn returns_compose(a in 0.01f64..1e4, b in 0.01f64..1e4, c in 0.01f64..1e4) {
            let r1 = compute_return(a, b).unwrap().value();
            let r2 = compute_return(b, c).unwrap().value();
            let lhs = (1.0 + r1) * (1.0 + r2);
            proptest::prop_assert!((lhs - c / a).abs() <= 1e-12 * (c / a).max(1.0));
            proptest::prop_assert!(r1 > -1.0);
        }
    }
}
