//! Prediction metrics and the decile long-short backtest.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::csv_err;
use crate::error::{Error, Result};
use crate::stats::{average_ranks, mean, pearson, std_pop};

pub const PERIODS_PER_YEAR: f64 = 252.0;

/// One test day: predictions and realised next-day returns, aligned by symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPrediction {
    pub date: String,
    pub symbols: Vec<String>,
    pub pred: Vec<f64>,
    pub realized: Vec<f64>,
}

impl DailyPrediction {
    pub fn new(
        date: impl Into<String>,
        symbols: Vec<String>,
        pred: Vec<f64>,
        realized: Vec<f64>,
    ) -> Result<Self> {
        if symbols.len() != pred.len() || pred.len() != realized.len() {
            return Err(Error::Contract(
                "prediction, return and symbol lists differ in length".into(),
            ));
        }
        if pred.iter().chain(&realized).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite prediction or return".into()));
        }
        Ok(Self {
            date: date.into(),
            symbols,
            pred,
            realized,
        })
    }
}

/// Correct-sign counts, excluding pairs with a zero realised return.
pub fn sign_hits(pred: &[f64], realized: &[f64]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (p, r) in pred.iter().zip(realized) {
        if *r == 0.0 {
            continue;
        }
        total += 1;
        if p.signum() == r.signum() && *p != 0.0 {
            hits += 1;
        }
    }
    (hits, total)
}

/// Fraction of correct signs, `None` when every realised return is zero.
pub fn directional_accuracy(pred: &[f64], realized: &[f64]) -> Option<f64> {
    let (h, t) = sign_hits(pred, realized);
    (t > 0).then(|| h as f64 / t as f64)
}

pub fn information_coefficient(pred: &[f64], realized: &[f64]) -> Option<f64> {
    pearson(pred, realized)
}

/// Spearman correlation with tied values sharing their average rank.
pub fn rank_ic(pred: &[f64], realized: &[f64]) -> Option<f64> {
    pearson(&average_ranks(pred), &average_ranks(realized))
}

/// `(mean, mean / population std)`; the ratio is `None` for fewer than two days or zero spread.
pub fn ic_series_stats(ics: &[f64]) -> (f64, Option<f64>) {
    let m = mean(ics);
    if ics.len() < 2 {
        return (m, None);
    }
    let s = std_pop(ics);
    let ratio = (s > 1e-15 * m.abs().max(1e-300)).then(|| m / s);
    (m, ratio)
}

/// `(annual return, Sharpe ratio)` from daily net returns.
pub fn annualize(returns: &[f64]) -> Result<(f64, Option<f64>)> {
    if returns.len() < 2 {
        return Err(Error::Domain("annualising needs at least two days".into()));
    }
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    let ar = growth.powf(PERIODS_PER_YEAR / returns.len() as f64) - 1.0;
    let s = std_pop(returns);
    let m = mean(returns);
    let sr = (s > 1e-15 * m.abs().max(1e-300)).then(|| m / s * PERIODS_PER_YEAR.sqrt());
    Ok((ar, sr))
}

/// Leg-normalised weights: the long leg sums to +1, the short leg to -1.
pub type Holdings = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct LongShortDay {
    pub long: Vec<String>,
    pub short: Vec<String>,
    pub gross: f64,
    pub turnover: f64,
    pub net: f64,
    pub holdings: Holdings,
}

/// Long the top and short the bottom `ceil(decile * n)` symbols, ranked by
/// `(prediction, symbol)`, so equal predictions fall back to symbol order.
///
/// Returns `None` when the legs would overlap.
pub fn long_short_day(
    day: &DailyPrediction,
    decile: f64,
    prev: &Holdings,
    cost_rate: f64,
) -> Option<LongShortDay> {
    let n = day.pred.len();
    let k = (decile * n as f64).ceil() as usize;
    if k == 0 || 2 * k > n {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        day.pred[a]
            .total_cmp(&day.pred[b])
            .then_with(|| day.symbols[a].cmp(&day.symbols[b]))
    });
    let short_idx = &order[..k];
    let long_idx = &order[n - k..];
    let leg_mean = |idx: &[usize]| idx.iter().map(|&i| day.realized[i]).sum::<f64>() / k as f64;
    let gross = 0.5 * leg_mean(long_idx) - 0.5 * leg_mean(short_idx);

    let mut holdings = Holdings::new();
    for &i in long_idx {
        holdings.insert(day.symbols[i].clone(), 1.0 / k as f64);
    }
    for &i in short_idx {
        holdings.insert(day.symbols[i].clone(), -1.0 / k as f64);
    }
    let mut l1 = 0.0;
    for (s, w) in &holdings {
        l1 += (w - prev.get(s).copied().unwrap_or(0.0)).abs();
    }
    for (s, w) in prev {
        if !holdings.contains_key(s) {
            l1 += w.abs();
        }
    }
    let turnover = 0.5 * l1;
    let mut long: Vec<String> = long_idx.iter().map(|&i| day.symbols[i].clone()).collect();
    let mut short: Vec<String> = short_idx.iter().map(|&i| day.symbols[i].clone()).collect();
    long.sort();
    short.sort();
    Some(LongShortDay {
        long,
        short,
        gross,
        turnover,
        net: gross - cost_rate * 2.0 * turnover,
        holdings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub decile: f64,
    /// Charged as `cost_rate * 2 * turnover` per day.
    pub cost_rate: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            decile: 0.10,
            cost_rate: 0.0004,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decile > 0.0 && self.decile <= 0.5) {
            return Err(Error::Config("decile must lie in (0, 0.5]".into()));
        }
        if !(self.cost_rate >= 0.0) {
            return Err(Error::Config("cost_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRow {
    pub date: String,
    pub n: usize,
    pub ic: Option<f64>,
    pub ric: Option<f64>,
    pub gross: Option<f64>,
    pub net: Option<f64>,
    pub turnover: Option<f64>,
}

/// Conventions the numbers depend on, kept next to them in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub decile: f64,
    pub cost_rate: f64,
    pub cost_rule: String,
    pub turnover_rule: String,
    pub icir_rule: String,
    pub periods_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub model: String,
    pub n_days: usize,
    pub acc: Option<f64>,
    pub ic_mean: Option<f64>,
    pub ric_mean: Option<f64>,
    pub icir: Option<f64>,
    pub ar: Option<f64>,
    pub sr: Option<f64>,
    pub conventions: Conventions,
    #[serde(skip)]
    pub daily: Vec<DailyRow>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Runs every metric and the long-short strategy over `days` in order.
pub fn run_backtest(
    model: &str,
    days: &[DailyPrediction],
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    cfg.validate()?;
    let mut hits = (0usize, 0usize);
    let mut ics = Vec::new();
    let mut rics = Vec::new();
    let mut nets = Vec::new();
    let mut daily = Vec::with_capacity(days.len());
    let mut holdings = Holdings::new();
    for d in days {
        let (h, t) = sign_hits(&d.pred, &d.realized);
        hits.0 += h;
        hits.1 += t;
        let ic = information_coefficient(&d.pred, &d.realized);
        let ric = rank_ic(&d.pred, &d.realized);
        ics.extend(ic);
        rics.extend(ric);
        let ls = long_short_day(d, cfg.decile, &holdings, cfg.cost_rate);
        if ls.is_none() {
            log::warn!(
                "{}: {} symbols is too few for non-overlapping legs; day skipped",
                d.date,
                d.pred.len()
            );
        }
        if let Some(ls) = &ls {
            nets.push(ls.net);
            holdings = ls.holdings.clone();
        }
        daily.push(DailyRow {
            date: d.date.clone(),
            n: d.pred.len(),
            ic,
            ric,
            gross: ls.as_ref().map(|l| l.gross),
            net: ls.as_ref().map(|l| l.net),
            turnover: ls.as_ref().map(|l| l.turnover),
        });
    }
    let (ic_mean, icir) = ic_series_stats(&ics);
    let (ar, sr) = match annualize(&nets) {
        Ok((a, s)) => (finite(a), s),
        Err(_) => (None, None),
    };
    Ok(BacktestReport {
        model: model.to_string(),
        n_days: days.len(),
        acc: (hits.1 > 0).then(|| hits.0 as f64 / hits.1 as f64),
        ic_mean: finite(ic_mean),
        ric_mean: finite(mean(&rics)),
        icir,
        ar,
        sr,
        conventions: Conventions {
            decile: cfg.decile,
            cost_rate: cfg.cost_rate,
            cost_rule: "cost_rate * 2 * turnover".into(),
            turnover_rule: "half L1 change of leg-normalised weights".into(),
            icir_rule: "mean / population std of daily IC, not annualised".into(),
            periods_per_year: PERIODS_PER_YEAR,
        },
        daily,
    })
}

pub fn write_report_json<W: Write>(mut w: W, report: &BacktestReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w).map_err(|e| Error::io("report", e))
}

pub fn write_daily_csv<W: Write>(w: W, rows: &[DailyRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("daily series", e))
}
