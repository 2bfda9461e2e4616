//! Expert calls to continuous signals, and the per-node input vector.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{csv_err, MarketPanel, Sentiment};
use crate::error::{Error, Result};
use crate::tracer::{ExpertCall, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Rise,
    Fall,
}

impl From<Sentiment> for Direction {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Bullish => Direction::Rise,
            Sentiment::Bearish => Direction::Fall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    /// Trading days of return history looked at, ending the day before the call.
    pub window_days: usize,
    /// Below this many valid returns in the window the signal is 0.
    pub min_history: usize,
    /// Replace the conditional mean by +1 / -1.
    pub binary: bool,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            window_days: 30,
            min_history: 5,
            binary: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendSignal {
    pub value: f64,
    /// Set when the window was too short to use.
    pub short_history: bool,
}

/// Mean return over the up days (`Rise`) or down days (`Fall`) among the
/// `window_days` trading-day returns ending at `day - 1`.
pub fn transform_trend_signal(
    panel: &MarketPanel,
    symbol: usize,
    day: usize,
    direction: Direction,
    cfg: &SignalConfig,
) -> TrendSignal {
    let first = day.saturating_sub(cfg.window_days);
    let returns: Vec<f64> = (first.max(1)..day)
        .filter_map(|k| panel.daily_return(symbol, k))
        .collect();
    if returns.len() < cfg.min_history {
        log::debug!(
            "{} on {}: {} returns of history, signal set to 0",
            panel.symbol(symbol),
            panel.date(day.min(panel.n_days() - 1)),
            returns.len()
        );
        return TrendSignal {
            value: 0.0,
            short_history: true,
        };
    }
    let picked: Vec<f64> = returns
        .into_iter()
        .filter(|r| match direction {
            Direction::Rise => *r > 0.0,
            Direction::Fall => *r < 0.0,
        })
        .collect();
    let value = if picked.is_empty() {
        0.0
    } else if cfg.binary {
        match direction {
            Direction::Rise => 1.0,
            Direction::Fall => -1.0,
        }
    } else {
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    TrendSignal {
        value,
        short_history: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSignalEvent {
    pub day: usize,
    pub symbol: usize,
    pub direction: Direction,
    pub value: f64,
    pub role: Role,
}

/// Turns one day's calls into signal events. Calls on symbols outside the
/// panel or without a bar that day are skipped.
pub fn events_from_calls(
    calls: &[ExpertCall],
    panel: &MarketPanel,
    cfg: &SignalConfig,
) -> Vec<ExpertSignalEvent> {
    calls
        .iter()
        .filter(|c| c.role != Role::None)
        .filter_map(|c| {
            let symbol = panel.symbol_index(&c.symbol)?;
            panel.bar(symbol, c.day)?;
            let direction = Direction::from(c.effective_sentiment());
            let sig = transform_trend_signal(panel, symbol, c.day, direction, cfg);
            Some(ExpertSignalEvent {
                day: c.day,
                symbol,
                direction,
                value: sig.value,
                role: c.role,
            })
        })
        .collect()
}

/// Majority vote on direction, then the mean of the winning side's values.
/// Ties give `(1, 0)`, no events `(0, 0)`.
pub fn aggregate_signals(events: &[ExpertSignalEvent]) -> (f64, f64) {
    if events.is_empty() {
        return (0.0, 0.0);
    }
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for e in events {
        match e.direction {
            Direction::Rise => up.push(e.value),
            Direction::Fall => down.push(e.value),
        }
    }
    let side = match up.len().cmp(&down.len()) {
        std::cmp::Ordering::Greater => up,
        std::cmp::Ordering::Less => down,
        std::cmp::Ordering::Equal => return (1.0, 0.0),
    };
    (1.0, side.iter().sum::<f64>() / side.len() as f64)
}

/// Input vector of one stock node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub pretrain_estimate: f64,
    pub availability: f64,
    pub signal: f64,
}

impl NodeFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.pretrain_estimate, self.availability, self.signal]
    }
}

pub fn assemble_node_features(
    pretrain_estimate: f64,
    availability: f64,
    signal: f64,
) -> Result<NodeFeatures> {
    if availability != 0.0 && availability != 1.0 {
        return Err(Error::Contract(format!(
            "availability must be 0 or 1, got {availability}"
        )));
    }
    if availability == 0.0 && signal != 0.0 {
        return Err(Error::Contract(format!(
            "signal {signal} given for a node without expert availability"
        )));
    }
    if !pretrain_estimate.is_finite() || !signal.is_finite() {
        return Err(Error::Contract("node features must be finite".into()));
    }
    Ok(NodeFeatures {
        pretrain_estimate,
        availability,
        signal,
    })
}

/// One row of `signals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub day: String,
    pub symbol: String,
    pub availability: u8,
    pub signal: f64,
    /// `E<experts>/I<inverse experts>` contributing to the row.
    pub role_mix: String,
}

/// Aggregated signal rows for every day, keyed by `(day, symbol)` order.
pub fn build_signal_rows(
    calls: &[ExpertCall],
    panel: &MarketPanel,
    cfg: &SignalConfig,
) -> Vec<SignalRow> {
    let events = events_from_calls(calls, panel, cfg);
    let mut grouped: BTreeMap<(usize, usize), Vec<ExpertSignalEvent>> = BTreeMap::new();
    for e in events {
        grouped.entry((e.day, e.symbol)).or_default().push(e);
    }
    grouped
        .into_iter()
        .map(|((day, symbol), evs)| {
            let (_, signal) = aggregate_signals(&evs);
            let experts = evs.iter().filter(|e| e.role == Role::Expert).count();
            SignalRow {
                day: panel.date(day).to_string(),
                symbol: panel.symbol(symbol).to_string(),
                availability: 1,
                signal,
                role_mix: format!("E{}/I{}", experts, evs.len() - experts),
            }
        })
        .collect()
}

pub fn write_signals<W: Write>(w: W, rows: &[SignalRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("signals", e))
}

pub fn read_signals<R: Read>(r: R) -> Result<Vec<SignalRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

/// Dense `(availability, signal)` lookup per `[day][symbol]`.
#[derive(Debug, Clone)]
pub struct SignalTable {
    n_symbols: usize,
    availability: Vec<f64>,
    signal: Vec<f64>,
}

impl SignalTable {
    pub fn empty(n_days: usize, n_symbols: usize) -> Self {
        Self {
            n_symbols,
            availability: vec![0.0; n_days * n_symbols],
            signal: vec![0.0; n_days * n_symbols],
        }
    }

    pub fn from_rows(rows: &[SignalRow], panel: &MarketPanel) -> Result<Self> {
        let mut t = Self::empty(panel.n_days(), panel.n_symbols());
        for r in rows {
            let date = r
                .day
                .parse()
                .map_err(|_| Error::Format(format!("bad signal date {}", r.day)))?;
            let day = panel.day_of(date).ok_or_else(|| {
                Error::Format(format!("signal date {} is not a trading day", r.day))
            })?;
            let sym = panel
                .symbol_index(&r.symbol)
                .ok_or_else(|| Error::Format(format!("unknown symbol {} in signals", r.symbol)))?;
            t.set(day, sym, r.availability as f64, r.signal);
        }
        Ok(t)
    }

    pub fn set(&mut self, day: usize, symbol: usize, availability: f64, signal: f64) {
        let i = day * self.n_symbols + symbol;
        self.availability[i] = availability;
        self.signal[i] = signal;
    }

    pub fn get(&self, day: usize, symbol: usize) -> (f64, f64) {
        let i = day * self.n_symbols + symbol;
        (self.availability[i], self.signal[i])
    }

    /// Share of `(symbol, day)` slots with an expert signal over `days`.
    pub fn coverage(&self, days: std::ops::Range<usize>) -> f64 {
        let lo = days.start * self.n_symbols;
        let hi = days.end * self.n_symbols;
        if hi <= lo {
            return 0.0;
        }
        self.availability[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bar;
    use chrono::NaiveDate;

    fn panel(closes: &[f64]) -> MarketPanel {
        let cal: Vec<NaiveDate> = (0..closes.len())
            .map(|i| NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(i as u64))
            .collect();
        let row = closes
            .iter()
            .enumerate()
            .map(|(d, c)| {
                Some(Bar {
                    day: d,
                    open: *c,
                    high: *c,
                    low: *c,
                    close: *c,
                    volume: 1.0,
                    fundamentals: vec![],
                })
            })
            .collect();
        MarketPanel::new(cal, vec!["AAA".into()], vec!["X".into()], vec![], vec![row]).unwrap()
    }

    fn closes_from_returns(rs: &[f64]) -> Vec<f64> {
        let mut c = vec![100.0];
        for r in rs {
            let last = *c.last().unwrap();
            c.push(last * (1.0 + r));
        }
        c
    }

    fn ev(direction: Direction, value: f64, role: Role) -> ExpertSignalEvent {
        ExpertSignalEvent {
            day: 0,
            symbol: 0,
            direction,
            value,
            role,
        }
    }

    #[test]
    fn rise_averages_up_days() {
        let c = closes_from_returns(&[0.01, -0.02, 0.03, -0.01, 0.02, -0.03]);
        let p = panel(&c);
        let cfg = SignalConfig::default();
        let s = transform_trend_signal(&p, 0, c.len(), Direction::Rise, &cfg);
        assert!((s.value - 0.02).abs() < 1e-12);
        let s = transform_trend_signal(&p, 0, c.len(), Direction::Fall, &cfg);
        assert!((s.value + 0.02).abs() < 1e-12);
    }

    #[test]
    fn no_down_days_gives_zero() {
        let c = closes_from_returns(&[0.01, 0.02, 0.01, 0.03, 0.02, 0.01]);
        let p = panel(&c);
        let s = transform_trend_signal(&p, 0, c.len(), Direction::Fall, &SignalConfig::default());
        assert_eq!(s.value, 0.0);
        assert!(!s.short_history);
    }

    #[test]
    fn short_history_gives_zero() {
        let c = closes_from_returns(&[0.01, 0.02, 0.01]);
        let p = panel(&c);
        let s = transform_trend_signal(&p, 0, c.len(), Direction::Rise, &SignalConfig::default());
        assert_eq!(s.value, 0.0);
        assert!(s.short_history);
    }

    #[test]
    fn binary_mode_uses_unit_magnitude() {
        let c = closes_from_returns(&[0.01, -0.02, 0.03, -0.01, 0.02, -0.03]);
        let p = panel(&c);
        let cfg = SignalConfig {
            binary: true,
            ..Default::default()
        };
        assert_eq!(
            transform_trend_signal(&p, 0, c.len(), Direction::Fall, &cfg).value,
            -1.0
        );
    }

    #[test]
    fn inverse_bullish_reads_down_days() {
        let c = closes_from_returns(&[0.01, -0.02, 0.03, -0.04, 0.02, 0.01]);
        let p = panel(&c);
        let call = ExpertCall {
            day: c.len() - 1,
            user_id: "u".into(),
            symbol: "AAA".into(),
            role: Role::InverseExpert,
            sentiment: Sentiment::Bullish,
        };
        let evs = events_from_calls(&[call], &p, &SignalConfig::default());
        assert_eq!(evs[0].direction, Direction::Fall);
        assert!((evs[0].value + 0.03).abs() < 1e-12);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_signals(&[]), (0.0, 0.0));
        assert_eq!(
            aggregate_signals(&[ev(Direction::Rise, 0.02, Role::Expert)]),
            (1.0, 0.02)
        );
        let tie = [
            ev(Direction::Rise, 0.02, Role::Expert),
            ev(Direction::Fall, -0.01, Role::InverseExpert),
        ];
        assert_eq!(aggregate_signals(&tie), (1.0, 0.0));
        let (a, s) = aggregate_signals(&[
            ev(Direction::Rise, 0.02, Role::Expert),
            ev(Direction::Rise, 0.04, Role::Expert),
            ev(Direction::Fall, -0.05, Role::Expert),
        ]);
        assert_eq!(a, 1.0);
        assert!((s - 0.03).abs() < 1e-15);
    }

    #[test]
    fn node_feature_contract() {
        let f = assemble_node_features(0.005, 1.0, 0.02).unwrap();
        assert_eq!(f.as_array(), [0.005, 1.0, 0.02]);
        assert!(matches!(
            assemble_node_features(0.005, 0.0, 0.3),
            Err(Error::Contract(_))
        ));
        assert_eq!(
            assemble_node_features(0.005, 0.0, 0.0).unwrap().as_array(),
            [0.005, 0.0, 0.0]
        );
    }

    proptest::proptest! {
        #[test]
        fn sign_coherent_and_causal(
            rs in proptest::collection::vec(-0.05f64..0.05, 8..45),
            tail in proptest::collection::vec(-0.05f64..0.05, 1..5),
            cut in 6usize..40,
        ) {
            let cfg = SignalConfig::default();
            let c = closes_from_returns(&rs);
            let day = cut.min(c.len() - 1);
            let p = panel(&c);
            let up = transform_trend_signal(&p, 0, day, Direction::Rise, &cfg).value;
            let down = transform_trend_signal(&p, 0, day, Direction::Fall, &cfg).value;
            proptest::prop_assert!(up >= 0.0 && down <= 0.0);

            // rewrite everything from `day` on
            let mut mutated = c[..day].to_vec();
            for r in &tail {
                let last = *mutated.last().unwrap();
                mutated.push(last * (1.0 + r) + 1.0);
            }
            let q = panel(&mutated);
            if day < mutated.len() {
                let up2 = transform_trend_signal(&q, 0, day, Direction::Rise, &cfg).value;
                proptest::prop_assert_eq!(up, up2);
            }
        }
    }
}
