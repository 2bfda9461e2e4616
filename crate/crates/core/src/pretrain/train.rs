use std::io::{Read, Write};
use std::ops::Range;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ic::ic_with_gradient;
use super::model::MsLstm;
use crate::data::{csv_err, FeatureCube, MarketPanel};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig};

/// Inputs and labels of one trading day.
///
/// The window for a prediction dated `day` holds features of days
/// `day - L .. day - 1`; the label is the return from close `day` to close `day + 1`.
#[derive(Debug, Clone)]
pub struct DaySample {
    pub day: usize,
    pub symbols: Vec<usize>,
    /// `N x L x d`.
    pub x: Array3<f64>,
    /// Next-day returns, empty when built without labels.
    pub returns: Vec<f64>,
}

/// Builds the sample of `day` over symbols with a full window and a bar on `day`.
/// With `labels`, symbols without a next-day return are dropped too.
pub fn day_sample(
    panel: &MarketPanel,
    cube: &FeatureCube,
    day: usize,
    lookback: usize,
    labels: bool,
) -> Option<DaySample> {
    if day < lookback || day >= panel.n_days() {
        return None;
    }
    let mut symbols = Vec::new();
    let mut returns = Vec::new();
    for s in 0..panel.n_symbols() {
        if panel.bar(s, day).is_none() || !(day - lookback..day).all(|t| cube.is_present(t, s)) {
            continue;
        }
        if labels {
            match panel.forward_return(s, day, 1) {
                Some(r) => returns.push(r),
                None => continue,
            }
        }
        symbols.push(s);
    }
    if symbols.is_empty() {
        return None;
    }
    let d = cube.dim();
    let mut x = Array3::zeros((symbols.len(), lookback, d));
    for (i, &s) in symbols.iter().enumerate() {
        for (j, t) in (day - lookback..day).enumerate() {
            let row = cube.get(t, s).expect("presence checked");
            for (k, v) in row.iter().enumerate() {
                x[[i, j, k]] = *v;
            }
        }
    }
    Some(DaySample {
        day,
        symbols,
        x,
        returns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm clip, 0 to disable.
    pub clip: f64,
    /// Use every `day_stride`-th training day.
    pub day_stride: usize,
    /// Days averaged per optimizer step.
    pub days_per_step: usize,
    /// Permute labels across symbols within each training day (null check).
    pub shuffle_labels: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            patience: 8,
            optimizer: OptimizerConfig::default(),
            clip: 1.0,
            day_stride: 1,
            days_per_step: 1,
            shuffle_labels: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// Loss or parameters stopped being finite; the last good parameters are kept.
    Diverged {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MsLstm,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Mean IC of `model` over the labelled samples of `days`; degenerate days are skipped.
pub fn mean_ic(
    model: &MsLstm,
    panel: &MarketPanel,
    cube: &FeatureCube,
    days: Range<usize>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for day in days {
        let Some(s) = day_sample(panel, cube, day, model.config.lookback, true) else {
            continue;
        };
        let pred = model.predict(s.x.view())?;
        if let Ok((ic, _)) = ic_with_gradient(&pred, &s.returns) {
            total += ic;
            used += 1;
        }
    }
    Ok(if used == 0 {
        f64::NAN
    } else {
        total / used as f64
    })
}

/// `-mean IC` over `samples` and its parameter gradient.
///
/// Degenerate days are skipped; if all are, the step is an error.
pub fn ic_loss_and_gradients(
    model: &MsLstm,
    samples: &[DaySample],
) -> Result<(f64, crate::params::ParamSet)> {
    let mut grad = model.params.zeros_like();
    let mut total = 0.0;
    let mut used = 0usize;
    for s in samples {
        let (pred, cache) = model.forward(s.x.view())?;
        let Ok((ic, dic)) = ic_with_gradient(&pred, &s.returns) else {
            continue;
        };
        let dpred: Vec<f64> = dic.iter().map(|g| -g).collect();
        grad.axpy(1.0, &model.backward(&cache, &dpred));
        total -= ic;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateCrossSection(
            "every day in the batch is degenerate".into(),
        ));
    }
    grad.scale(1.0 / used as f64);
    Ok((total / used as f64, grad))
}

/// Fits `model` on `train_days`, early-stopping on mean IC over `val_days`.
pub fn train_pretrain(
    mut model: MsLstm,
    panel: &MarketPanel,
    cube: &FeatureCube,
    train_days: Range<usize>,
    val_days: Range<usize>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_days.end > val_days.start && !val_days.is_empty() {
        return Err(Error::Config(
            "training range must precede the validation range".into(),
        ));
    }
    let lookback = model.config.lookback;
    let days: Vec<usize> = train_days
        .clone()
        .step_by(cfg.day_stride.max(1))
        .filter(|&d| d >= lookback)
        .collect();
    if days.is_empty() {
        return Err(Error::Config(
            "no training days with a full lookback window".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), model.params.len()).with_clip(cfg.clip);
    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, model.params.clone(), 0usize);
    let mut since_best = 0;
    let mut stop = StopReason::Completed;

    for epoch in 1..=cfg.epochs {
        let epoch_start = model.params.clone();
        let mut order = days.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut diverged = false;
        for chunk in order.chunks(cfg.days_per_step.max(1)) {
            let mut samples: Vec<DaySample> = chunk
                .iter()
                .filter_map(|&d| day_sample(panel, cube, d, lookback, true))
                .collect();
            if cfg.shuffle_labels {
                for s in &mut samples {
                    s.returns.shuffle(&mut rng);
                }
            }
            let (loss, grad) = match ic_loss_and_gradients(&model, &samples) {
                Ok(v) => v,
                Err(Error::DegenerateCrossSection(_)) => continue,
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grad.all_finite() {
                diverged = true;
                break;
            }
            opt.step(&mut model.params, &grad);
            loss_sum += loss;
            steps += 1;
        }
        if diverged || !model.params.all_finite() {
            log::warn!("pretraining diverged at epoch {epoch}; keeping last good parameters");
            model.params = epoch_start;
            stop = StopReason::Diverged { epoch };
            break;
        }
        let train_loss = if steps == 0 {
            f64::NAN
        } else {
            loss_sum / steps as f64
        };
        let val_ic = if val_days.is_empty() {
            -train_loss
        } else {
            mean_ic(&model, panel, cube, val_days.clone())?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_ic,
        });
        log::info!("pretrain epoch {epoch}: train_loss {train_loss:.5} val_ic {val_ic:.5}");
        if val_ic > best.0 {
            best = (val_ic, model.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }
    if best.2 > 0 {
        model.params = best.1;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.2,
        stop,
    })
}

pub fn write_training_log<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for e in log {
        out.serialize(e).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("training log", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub date: String,
    pub symbol: String,
    pub estimate: f64,
}

/// Predictions for every day in `days` that has eligible symbols.
pub fn predict_days(
    model: &MsLstm,
    panel: &MarketPanel,
    cube: &FeatureCube,
    days: Range<usize>,
) -> Result<Vec<EstimateRow>> {
    let mut rows = Vec::new();
    for day in days {
        let Some(s) = day_sample(panel, cube, day, model.config.lookback, false) else {
            continue;
        };
        let pred = model.predict(s.x.view())?;
        for (sym, p) in s.symbols.iter().zip(pred) {
            rows.push(EstimateRow {
                date: panel.date(day).to_string(),
                symbol: panel.symbol(*sym).to_string(),
                estimate: p,
            });
        }
    }
    Ok(rows)
}

pub fn write_estimates<W: Write>(w: W, rows: &[EstimateRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("estimates", e))
}

pub fn read_estimates<R: Read>(r: R) -> Result<Vec<EstimateRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}
