use std::ops::Range;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{generate_market_only, realized_direction, WorldConfig};
use crate::dualgat::{scale_signals, signal_rms, DaySet};
use crate::error::{Error, Result};
use crate::graph::{active_nodes, build_correlation_graph, build_industry_graph, GraphThresholds};
use crate::signals::{transform_trend_signal, Direction, SignalConfig};
use crate::stats::zscore;

/// A market-only world where a few nodes per day carry a directional signal
/// and sector neighbours tend to move with them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverConfig {
    pub world: WorldConfig,
    /// Share of active nodes carrying a signal each day.
    pub signal_fraction: f64,
    /// Probability that a signal's direction matches the realised next-day sign.
    pub signal_hit: f64,
    /// Leading days skipped so windows are filled.
    pub warmup: usize,
    pub thresholds: GraphThresholds,
}

impl Default for SpilloverConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig {
                n_symbols: 200,
                n_days: 300,
                n_experts: 0,
                n_inverse: 0,
                n_mob: 0,
                n_bots: 0,
                n_spammers: 0,
                n_lucky: 0,
                ..WorldConfig::default()
            },
            signal_fraction: 0.05,
            signal_hit: 0.85,
            warmup: 40,
            thresholds: GraphThresholds::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpilloverScenario {
    pub days: Vec<DaySet>,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Builds daily DualGAT inputs: the estimate column is the cross-sectionally
/// z-scored `f_alpha` of the previous close, signals are RMS-scaled on the
/// training span. Splits are 60 / 15 / 25 percent in time order.
pub fn spillover_scenario(cfg: &SpilloverConfig) -> Result<SpilloverScenario> {
    let panel = generate_market_only(&cfg.world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.world.seed);
    rng.set_stream(3);
    let sig_cfg = SignalConfig::default();
    let last = panel.n_days().saturating_sub(1);
    if cfg.warmup + 10 > last {
        return Err(Error::Config(
            "spillover world is too short for its warm-up".into(),
        ));
    }
    let mut days = Vec::new();
    for day in cfg.warmup..last {
        let nodes = active_nodes(&panel, day);
        let n = nodes.len();
        let k = ((cfg.signal_fraction * n as f64).round() as usize).clamp(1, n);
        let mut planted = vec![false; n];
        for i in sample(&mut rng, n, k) {
            planted[i] = true;
        }
        let mut features = Array2::zeros((n, 3));
        let alpha: Vec<f64> = nodes
            .iter()
            .map(|&s| panel.bar(s, day - 1).map_or(0.0, |b| b.fundamentals[0]))
            .collect();
        for (i, z) in zscore(&alpha).into_iter().enumerate() {
            features[[i, 0]] = z;
        }
        for (i, &s) in nodes.iter().enumerate() {
            if !planted[i] {
                continue;
            }
            let Some(truth) = realized_direction(&panel, s, day) else {
                continue;
            };
            let dir = if rng.random_bool(cfg.signal_hit) {
                truth
            } else {
                truth.flipped()
            };
            let sig = transform_trend_signal(&panel, s, day, Direction::from(dir), &sig_cfg);
            features[[i, 1]] = 1.0;
            features[[i, 2]] = sig.value;
        }
        let mut labelled = Vec::new();
        let mut returns = Vec::new();
        for (i, &s) in nodes.iter().enumerate() {
            if let Some(r) = panel.forward_return(s, day, 1) {
                labelled.push(i);
                returns.push(r);
            }
        }
        days.push(DaySet {
            day,
            features,
            g_ind: build_industry_graph(&panel, day, &nodes),
            g_cor: build_correlation_graph(&panel, day, &nodes, &planted, &cfg.thresholds)?,
            labelled,
            returns,
        });
    }
    let n = days.len();
    let train = 0..n * 60 / 100;
    let val = train.end..n * 75 / 100;
    let test = val.end..n;
    let rms = signal_rms(&days[train.clone()]);
    scale_signals(&mut days, 1.0 / rms);
    Ok(SpilloverScenario {
        days,
        train,
        val,
        test,
    })
}
