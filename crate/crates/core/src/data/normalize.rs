use std::collections::BTreeMap;

use super::types::MarketPanel;
use crate::error::{Error, Result};

/// Raw feature vector of a bar: open, high, low, close, volume, then fundamentals.
fn raw_features(panel: &MarketPanel, symbol: usize, day: usize) -> Option<Vec<f64>> {
    let b = panel.bar(symbol, day)?;
    let mut v = Vec::with_capacity(5 + b.fundamentals.len());
    v.extend([b.open, b.high, b.low, b.close, b.volume]);
    v.extend_from_slice(&b.fundamentals);
    Some(v)
}

/// Z-scores every feature column across the symbols that have a bar on `day`.
///
/// Population standard deviation; zero-variance columns map to zero.
/// Returns `(symbol indices, rows)` in symbol order.
pub fn normalize_day(panel: &MarketPanel, day: usize) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if day >= panel.n_days() {
        return Err(Error::Domain(format!("day {day} is not in the calendar")));
    }
    let mut symbols = Vec::new();
    let mut rows = Vec::new();
    for s in 0..panel.n_symbols() {
        if let Some(v) = raw_features(panel, s, day) {
            symbols.push(s);
            rows.push(v);
        }
    }
    if rows.len() < 2 {
        return Err(Error::Domain(format!(
            "day {} has {} symbols with bars; need at least 2",
            panel.date(day),
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let dim = panel.feature_dim();
    for col in 0..dim {
        let mean = rows.iter().map(|r| r[col]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        // relative floor so rounding noise on a constant column does not blow up
        let degenerate = std == 0.0 || std <= 1e-12 * mean.abs();
        for r in rows.iter_mut() {
            r[col] = if degenerate {
                0.0
            } else {
                (r[col] - mean) / std
            };
        }
    }
    Ok((symbols, rows))
}

/// Map form of [`normalize_day`], keyed by ticker.
pub fn cross_sectional_normalize(
    panel: &MarketPanel,
    day: usize,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let (symbols, rows) = normalize_day(panel, day)?;
    Ok(symbols
        .into_iter()
        .zip(rows)
        .map(|(s, r)| (panel.symbol(s).to_string(), r))
        .collect())
}

/// Normalised features for every day, stored densely as `[day][symbol][feature]`.
#[derive(Debug, Clone)]
pub struct FeatureCube {
    n_days: usize,
    n_symbols: usize,
    dim: usize,
    values: Vec<f64>,
    present: Vec<bool>,
}

impl FeatureCube {
    /// Days with fewer than two symbols are left empty.
    pub fn build(panel: &MarketPanel) -> Self {
        let (n_days, n_symbols, dim) = (panel.n_days(), panel.n_symbols(), panel.feature_dim());
        let mut cube = Self {
            n_days,
            n_symbols,
            dim,
            values: vec![0.0; n_days * n_symbols * dim],
            present: vec![false; n_days * n_symbols],
        };
        for day in 0..n_days {
            if let Ok((symbols, rows)) = normalize_day(panel, day) {
                for (s, row) in symbols.into_iter().zip(rows) {
                    let off = (day * n_symbols + s) * dim;
                    cube.values[off..off + dim].copy_from_slice(&row);
                    cube.present[day * n_symbols + s] = true;
                }
            }
        }
        cube
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn is_present(&self, day: usize, symbol: usize) -> bool {
        self.present[day * self.n_symbols + symbol]
    }

    /// Feature row, or `None` when the symbol had no bar that day.
    pub fn get(&self, day: usize, symbol: usize) -> Option<&[f64]> {
        if !self.is_present(day, symbol) {
            return None;
        }
        let off = (day * self.n_symbols + symbol) * self.dim;
        Some(&self.values[off..off + self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::Bar;
    use chrono::NaiveDate;

    fn panel_with_closes(closes: &[Option<f64>]) -> MarketPanel {
        let cal = vec![NaiveDate::from_ymd_opt(2021, 1, 4).unwrap()];
        let symbols: Vec<String> = (0..closes.len()).map(|i| format!("S{i:03}")).collect();
        let bars = closes
            .iter()
            .map(|c| {
                vec![c.map(|c| Bar {
                    day: 0,
                    open: 5.0,
                    high: c.max(5.0),
                    low: c.min(5.0),
                    close: c,
                    volume: 10.0,
                    fundamentals: vec![],
                })]
            })
            .collect();
        MarketPanel::new(
            cal,
            symbols.clone(),
            vec!["X".into(); symbols.len()],
            vec![],
            bars,
        )
        .unwrap()
    }

    #[test]
    fn z_scores_with_population_std() {
        let p = panel_with_closes(&[Some(1.0), Some(2.0), Some(3.0)]);
        let m = cross_sectional_normalize(&p, 0).unwrap();
        let close: Vec<f64> = ["S000", "S001", "S002"].iter().map(|s| m[*s][3]).collect();
        assert!((close[0] + 1.224744871391589).abs() < 1e-12);
        assert!(close[1].abs() < 1e-15);
        assert!((close[2] - 1.224744871391589).abs() < 1e-12);
        // open and volume are constant across symbols
        assert!(m.values().all(|r| r[0] == 0.0 && r[4] == 0.0));
    }

    #[test]
    fn constant_column_is_zero() {
        let p = panel_with_closes(&[Some(5.0), Some(5.0), Some(5.0)]);
        let m = cross_sectional_normalize(&p, 0).unwrap();
        assert!(m.values().all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn missing_bar_is_excluded() {
        let p = panel_with_closes(&[Some(1.0), None, Some(3.0)]);
        let m = cross_sectional_normalize(&p, 0).unwrap();
        assert_eq!(m.len(), 2);
        assert!(!m.contains_key("S001"));
        assert!((m["S000"][3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn day_outside_calendar_errors() {
        let p = panel_with_closes(&[Some(1.0), Some(2.0)]);
        assert!(matches!(
            cross_sectional_normalize(&p, 3),
            Err(Error::Domain(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn normalised_columns_have_zero_mean_unit_std(
            closes in proptest::collection::vec(1.0f64..500.0, 2..40)
        ) {
            let p = panel_with_closes(&closes.iter().map(|c| Some(*c)).collect::<Vec<_>>());
            let (syms, rows) = normalize_day(&p, 0).unwrap();
            proptest::prop_assert_eq!(syms.len(), closes.len());
            let col: Vec<f64> = rows.iter().map(|r| r[3]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            proptest::prop_assert!(mean.abs() < 1e-10);
            if col.iter().any(|v| *v != 0.0) {
                proptest::prop_assert!((std - 1.0).abs() < 1e-8);
            }
        }
    }
}
