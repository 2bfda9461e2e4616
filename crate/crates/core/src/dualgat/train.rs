use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::DualGat;
use crate::error::{Error, Result};
use crate::graph::StockGraph;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParamSet;
use crate::pretrain::{ic_with_gradient, EpochLog, StopReason};

/// One day's cross-section: node features, both graphs, and realised returns.
#[derive(Debug, Clone)]
pub struct DaySet {
    pub day: usize,
    /// `N x 3`, rows in `g_ind.nodes` order.
    pub features: Array2<f64>,
    pub g_ind: StockGraph,
    pub g_cor: StockGraph,
    /// Node positions that carry a label.
    pub labelled: Vec<usize>,
    /// Next-day returns aligned with `labelled`.
    pub returns: Vec<f64>,
}

impl DaySet {
    fn labelled_ic(&self, pred: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p: Vec<f64> = self.labelled.iter().map(|&i| pred[i]).collect();
        ic_with_gradient(&p, &self.returns)
    }
}

/// Root mean square of the nonzero signals in `days`, or 1 when there are none.
pub fn signal_rms(days: &[DaySet]) -> f64 {
    let (mut ss, mut n) = (0.0, 0usize);
    for d in days {
        for v in d.features.column(2) {
            if *v != 0.0 {
                ss += v * v;
                n += 1;
            }
        }
    }
    if n == 0 || ss == 0.0 {
        1.0
    } else {
        (ss / n as f64).sqrt()
    }
}

pub fn scale_signals(days: &mut [DaySet], factor: f64) {
    for d in days {
        d.features.column_mut(2).mapv_inplace(|v| v * factor);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualGatTrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm clip, 0 to disable.
    pub clip: f64,
    pub seed: u64,
}

impl Default for DualGatTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            patience: 6,
            optimizer: OptimizerConfig::adam(0.005),
            clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualGatOutcome {
    pub model: DualGat,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// `-mean IC` over `days` and its parameter gradient; degenerate days are skipped.
pub fn dualgat_loss_and_gradients(model: &DualGat, days: &[DaySet]) -> Result<(f64, ParamSet)> {
    let mut grad = model.params.zeros_like();
    let mut total = 0.0;
    let mut used = 0usize;
    for d in days {
        let (pred, cache) = model.forward(d.features.view(), &d.g_ind, &d.g_cor)?;
        let Ok((ic, dic)) = d.labelled_ic(&pred) else {
            continue;
        };
        let mut dpred = vec![0.0; pred.len()];
        for (&i, g) in d.labelled.iter().zip(&dic) {
            dpred[i] = -g;
        }
        grad.axpy(1.0, &model.backward(&cache, &d.g_ind, &d.g_cor, &dpred));
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

/// Mean IC over non-degenerate days, NaN if there are none.
pub fn dualgat_mean_ic(model: &DualGat, days: &[DaySet]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for d in days {
        let pred = model.predict(d.features.view(), &d.g_ind, &d.g_cor)?;
        if let Ok((ic, _)) = d.labelled_ic(&pred) {
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

/// One optimizer step per training day in seeded shuffled order, early-stopping on validation IC.
pub fn train_dualgat(
    mut model: DualGat,
    train: &[DaySet],
    val: &[DaySet],
    cfg: &DualGatTrainConfig,
) -> Result<DualGatOutcome> {
    if train.is_empty() {
        return Err(Error::Config("no DualGAT training days".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer.clone(), model.params.len()).with_clip(cfg.clip);
    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, model.params.clone(), 0usize);
    let mut since_best = 0;
    let mut stop = StopReason::Completed;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let epoch_start = model.params.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut diverged = false;
        for &i in &order {
            let (loss, grad) =
                match dualgat_loss_and_gradients(&model, std::slice::from_ref(&train[i])) {
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
            log::warn!("DualGAT training diverged at epoch {epoch}; keeping last good parameters");
            model.params = epoch_start;
            stop = StopReason::Diverged { epoch };
            break;
        }
        let train_loss = if steps == 0 {
            f64::NAN
        } else {
            loss_sum / steps as f64
        };
        let val_ic = if val.is_empty() {
            -train_loss
        } else {
            dualgat_mean_ic(&model, val)?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_ic,
        });
        log::info!("dualgat epoch {epoch}: train_loss {train_loss:.5} val_ic {val_ic:.5}");
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
    Ok(DualGatOutcome {
        model,
        log,
        best_epoch: best.2,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualgat::model::DualGatConfig;
    use crate::graph::GraphFlavor;
    use rand::Rng;

    /// Sector cliques of four; one node per sector carries a signal whose sign
    /// every member's next return shares.
    fn world(n_days: usize, seed: u64) -> Vec<DaySet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 24;
        let mut ei = Vec::new();
        for s in 0..n / 4 {
            for i in 0..4 {
                for j in i + 1..4 {
                    ei.push((4 * s + i, 4 * s + j));
                }
            }
        }
        (0..n_days)
            .map(|day| {
                let mut f = Array2::zeros((n, 3));
                let mut r = vec![0.0; n];
                for s in 0..n / 4 {
                    let sig: f64 = rng.random_range(-1.0..1.0);
                    f[[4 * s, 1]] = 1.0;
                    f[[4 * s, 2]] = sig;
                    for i in 0..4 {
                        r[4 * s + i] = 0.01 * sig + 0.005 * rng.random_range(-1.0..1.0);
                    }
                }
                for v in 0..n {
                    f[[v, 0]] = rng.random_range(-1.0..1.0);
                }
                DaySet {
                    day,
                    features: f,
                    g_ind: StockGraph::from_edges(
                        day,
                        GraphFlavor::Industry,
                        (0..n).collect(),
                        ei.clone(),
                    ),
                    g_cor: StockGraph::from_edges(
                        day,
                        GraphFlavor::Correlation,
                        (0..n).collect(),
                        [],
                    ),
                    labelled: (0..n).collect(),
                    returns: r,
                }
            })
            .collect()
    }

    #[test]
    fn learns_sector_spillover() {
        let days = world(120, 1);
        let model = DualGat::new(DualGatConfig {
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = DualGatTrainConfig {
            epochs: 15,
            ..Default::default()
        };
        let out = train_dualgat(model, &days[..80], &days[80..100], &cfg).unwrap();
        let ic = dualgat_mean_ic(&out.model, &days[100..]).unwrap();
        assert!(ic > 0.5, "test IC {ic}");
    }

    #[test]
    fn same_seed_same_log() {
        let days = world(30, 3);
        let cfg = DualGatTrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let run = || {
            let m = DualGat::new(DualGatConfig {
                seed: 4,
                ..Default::default()
            })
            .unwrap();
            train_dualgat(m, &days[..20], &days[20..], &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn two_day_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let days: Vec<DaySet> = (0..2)
            .map(|day| {
                let f = Array2::from_shape_fn((6, 3), |(_, k)| {
                    if k == 1 {
                        f64::from(rng.random_bool(0.5) as u8)
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                });
                DaySet {
                    day,
                    features: f,
                    g_ind: StockGraph::from_edges(
                        day,
                        GraphFlavor::Industry,
                        (0..6).collect(),
                        [(0, 1), (1, 2), (3, 4)],
                    ),
                    g_cor: StockGraph::from_edges(
                        day,
                        GraphFlavor::Correlation,
                        (0..6).collect(),
                        [(2, 3), (4, 5), (0, 5)],
                    ),
                    labelled: (0..6).collect(),
                    returns: (0..6).map(|_| rng.random_range(-0.02..0.02)).collect(),
                }
            })
            .collect();
        let mut m = DualGat::new(DualGatConfig {
            seed: 6,
            ..Default::default()
        })
        .unwrap();
        let (_, grad) = dualgat_loss_and_gradients(&m, &days).unwrap();
        let eps = 1e-5;
        let n = m.params.len();
        let mut checked = 0;
        for idx in (0..n).step_by((n / 250).max(1)) {
            let orig = m.params.get(idx);
            m.params.set(idx, orig + eps);
            let up = dualgat_loss_and_gradients(&m, &days).unwrap().0;
            m.params.set(idx, orig - eps);
            let down = dualgat_loss_and_gradients(&m, &days).unwrap().0;
            m.params.set(idx, orig);
            let num = (up - down) / (2.0 * eps);
            let ana = grad.get(idx);
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-5);
            assert!(
                rel < 1e-4,
                "{}: analytic {ana} numeric {num}",
                m.params.name_of(idx)
            );
            checked += 1;
        }
        assert!(checked >= 200);
    }

    #[test]
    fn empty_training_set_rejected() {
        let m = DualGat::new(DualGatConfig::default()).unwrap();
        assert!(train_dualgat(m, &[], &[], &DualGatTrainConfig::default()).is_err());
    }
}
