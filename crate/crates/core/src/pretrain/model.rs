use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{lstm_backward, lstm_forward, LstmCache, LstmWeights};
use crate::error::{Error, Result};
use crate::params::{ParamSet, Tensor};

pub const MODEL_NAME: &str = "ms-lstm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsLstmConfig {
    /// Lookback length L.
    pub lookback: usize,
    pub scales: Vec<usize>,
    /// Feature dimension d; filled in from the panel when 0.
    pub input_dim: usize,
    pub hidden: usize,
    /// Width of the optional hidden layer in the head; 0 keeps the head affine.
    pub head_hidden: usize,
    pub layernorm_eps: f64,
    pub seed: u64,
}

impl Default for MsLstmConfig {
    fn default() -> Self {
        Self {
            lookback: 32,
            scales: vec![1, 2, 4],
            input_dim: 0,
            hidden: 64,
            head_hidden: 0,
            layernorm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl MsLstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        for (i, &s) in self.scales.iter().enumerate() {
            if s == 0 || self.lookback % s != 0 {
                return Err(Error::Config(format!(
                    "scale {s} does not divide lookback {}",
                    self.lookback
                )));
            }
            if self.scales[..i].contains(&s) {
                return Err(Error::Config(format!("scale {s} listed twice")));
            }
        }
        if self.hidden == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "hidden and input dims must be positive".into(),
            ));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(Error::Config("layernorm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Timesteps `0, s, 2s, ...` of an `N x L x d` batch.
pub fn extract_scale(x: ArrayView3<'_, f64>, s: usize) -> Result<Array3<f64>> {
    let l = x.dim().1;
    if s == 0 || l % s != 0 {
        return Err(Error::Config(format!(
            "scale {s} does not divide lookback {l}"
        )));
    }
    Ok(x.slice(s![.., ..;s, ..]).to_owned())
}

/// Multi-scale LSTM: one LSTM per scale, mean of final states, layer norm, head.
#[derive(Debug, Clone)]
pub struct MsLstm {
    pub config: MsLstmConfig,
    pub params: ParamSet,
}

struct Layout {
    n_scales: usize,
}

impl Layout {
    fn lstm(&self, i: usize) -> (usize, usize, usize) {
        (3 * i, 3 * i + 1, 3 * i + 2)
    }
    fn ln_gain(&self) -> usize {
        3 * self.n_scales
    }
    fn ln_bias(&self) -> usize {
        3 * self.n_scales + 1
    }
    fn head(&self) -> usize {
        3 * self.n_scales + 2
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct MsLstmCache {
    lstm: Vec<LstmCache>,
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    ln_out: Array2<f64>,
    hidden_act: Option<Array2<f64>>,
}

impl MsLstm {
    /// Fresh parameters, uniform in `±1/sqrt(fan_in)`.
    pub fn new(config: MsLstmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h) = (config.input_dim, config.hidden);
        let gate_bound = 1.0 / ((d + h) as f64).sqrt();
        let mut tensors = Vec::new();
        for s in &config.scales {
            tensors.push(Tensor::uniform(
                format!("lstm{s}.w"),
                &[d, 4 * h],
                gate_bound,
                &mut rng,
            ));
            tensors.push(Tensor::uniform(
                format!("lstm{s}.u"),
                &[h, 4 * h],
                gate_bound,
                &mut rng,
            ));
            tensors.push(Tensor::uniform(
                format!("lstm{s}.b"),
                &[4 * h],
                gate_bound,
                &mut rng,
            ));
        }
        tensors.push(Tensor::filled("ln.gain", &[h], 1.0));
        tensors.push(Tensor::zeros("ln.bias", &[h]));
        let hb = 1.0 / (h as f64).sqrt();
        if config.head_hidden == 0 {
            tensors.push(Tensor::uniform("head.w", &[h, 1], hb, &mut rng));
            tensors.push(Tensor::uniform("head.b", &[1], hb, &mut rng));
        } else {
            let m = config.head_hidden;
            let mb = 1.0 / (m as f64).sqrt();
            tensors.push(Tensor::uniform("head.w1", &[h, m], hb, &mut rng));
            tensors.push(Tensor::uniform("head.b1", &[m], hb, &mut rng));
            tensors.push(Tensor::uniform("head.w2", &[m, 1], mb, &mut rng));
            tensors.push(Tensor::uniform("head.b2", &[1], mb, &mut rng));
        }
        Ok(Self {
            config,
            params: ParamSet::new(tensors),
        })
    }

    /// Rebuilds a model from a config and stored parameters.
    pub fn from_parts(config: MsLstmConfig, params: ParamSet) -> Result<Self> {
        let fresh = Self::new(config)?;
        fresh.params.check_same_layout(&params)?;
        Ok(Self {
            config: fresh.config,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            n_scales: self.config.scales.len(),
        }
    }

    fn lstm_weights(&self, i: usize) -> LstmWeights<'_> {
        let (w, u, b) = self.layout().lstm(i);
        LstmWeights {
            w: self.params.tensors[w].mat(),
            u: self.params.tensors[u].mat(),
            b: &self.params.tensors[b].data,
        }
    }

    pub fn predict(&self, x: ArrayView3<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Predictions for an `N x L x d` batch plus the activations for backprop.
    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Result<(Vec<f64>, MsLstmCache)> {
        let (n, l, d) = x.dim();
        let cfg = &self.config;
        if l != cfg.lookback || d != cfg.input_dim {
            return Err(Error::Domain(format!(
                "input is {n}x{l}x{d}, model expects Nx{}x{}",
                cfg.lookback, cfg.input_dim
            )));
        }
        let h = cfg.hidden;
        let lay = self.layout();
        let mut caches = Vec::with_capacity(cfg.scales.len());
        let mut z = Array2::<f64>::zeros((n, h));
        for (i, &s) in cfg.scales.iter().enumerate() {
            let xs = extract_scale(x, s)?;
            let c = lstm_forward(xs.view(), self.lstm_weights(i))?;
            z += c.last_hidden();
            caches.push(c);
        }
        z /= cfg.scales.len() as f64;

        let gain = &self.params.tensors[lay.ln_gain()].data;
        let bias = &self.params.tensors[lay.ln_bias()].data;
        let mut xhat = Array2::zeros((n, h));
        let mut ln_out = Array2::zeros((n, h));
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = z.row(r);
            let mu = row.sum() / h as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
            let is = 1.0 / (var + cfg.layernorm_eps).sqrt();
            inv_std.push(is);
            for k in 0..h {
                let xh = (z[[r, k]] - mu) * is;
                xhat[[r, k]] = xh;
                ln_out[[r, k]] = gain[k] * xh + bias[k];
            }
        }

        let t = &self.params.tensors;
        let (pred, hidden_act) = if cfg.head_hidden == 0 {
            let w = t[lay.head()].mat();
            let b = t[lay.head() + 1].data[0];
            let out = ln_out.dot(&w);
            (out.column(0).iter().map(|v| v + b).collect(), None)
        } else {
            let w1 = t[lay.head()].mat();
            let b1 = t[lay.head() + 1].vec();
            let w2 = t[lay.head() + 2].mat();
            let b2 = t[lay.head() + 3].data[0];
            let a = (ln_out.dot(&w1) + &b1).mapv(f64::tanh);
            let out = a.dot(&w2);
            (out.column(0).iter().map(|v| v + b2).collect(), Some(a))
        };
        Ok((
            pred,
            MsLstmCache {
                lstm: caches,
                xhat,
                inv_std,
                ln_out,
                hidden_act,
            },
        ))
    }

    /// Parameter gradients given `dpred`, the loss gradient w.r.t. each prediction.
    pub fn backward(&self, cache: &MsLstmCache, dpred: &[f64]) -> ParamSet {
        let cfg = &self.config;
        let h = cfg.hidden;
        let n = dpred.len();
        let lay = self.layout();
        let t = &self.params.tensors;
        let mut g = self.params.zeros_like();
        let dp = ArrayView2::from_shape((n, 1), dpred).expect("column vector");

        let d_ln = if cfg.head_hidden == 0 {
            g.tensors[lay.head()]
                .mat_mut()
                .assign(&cache.ln_out.t().dot(&dp));
            g.tensors[lay.head() + 1].data[0] = dpred.iter().sum();
            dp.dot(&t[lay.head()].mat().t())
        } else {
            let a = cache.hidden_act.as_ref().expect("hidden head activations");
            g.tensors[lay.head() + 2].mat_mut().assign(&a.t().dot(&dp));
            g.tensors[lay.head() + 3].data[0] = dpred.iter().sum();
            let mut da = dp.dot(&t[lay.head() + 2].mat().t());
            da.zip_mut_with(a, |d, &a| *d *= 1.0 - a * a);
            g.tensors[lay.head()]
                .mat_mut()
                .assign(&cache.ln_out.t().dot(&da));
            g.tensors[lay.head() + 1]
                .vec_mut()
                .assign(&da.sum_axis(Axis(0)));
            da.dot(&t[lay.head()].mat().t())
        };

        let gain = &t[lay.ln_gain()].data;
        let mut dz = Array2::zeros((n, h));
        {
            let mut ggain = vec![0.0; h];
            let mut gbias = vec![0.0; h];
            for r in 0..n {
                let mut dxh = vec![0.0; h];
                for k in 0..h {
                    let dy = d_ln[[r, k]];
                    ggain[k] += dy * cache.xhat[[r, k]];
                    gbias[k] += dy;
                    dxh[k] = dy * gain[k];
                }
                let m1 = dxh.iter().sum::<f64>() / h as f64;
                let m2 = (0..h).map(|k| dxh[k] * cache.xhat[[r, k]]).sum::<f64>() / h as f64;
                for k in 0..h {
                    dz[[r, k]] = cache.inv_std[r] * (dxh[k] - m1 - cache.xhat[[r, k]] * m2);
                }
            }
            g.tensors[lay.ln_gain()].data = ggain;
            g.tensors[lay.ln_bias()].data = gbias;
        }

        let dh = dz / cfg.scales.len() as f64;
        for (i, c) in cache.lstm.iter().enumerate() {
            let lg = lstm_backward(c, self.lstm_weights(i), &dh);
            let (w, u, b) = lay.lstm(i);
            g.tensors[w].mat_mut().assign(&lg.w);
            g.tensors[u].mat_mut().assign(&lg.u);
            g.tensors[b].data = lg.b;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(head_hidden: usize) -> MsLstmConfig {
        MsLstmConfig {
            lookback: 8,
            scales: vec![1, 2, 4],
            input_dim: 5,
            hidden: 16,
            head_hidden,
            layernorm_eps: 1e-5,
            seed: 3,
        }
    }

    fn random_input(n: usize, l: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((n, l, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn extract_scale_picks_strided_steps() {
        let x = Array3::from_shape_fn((1, 8, 1), |(_, t, _)| t as f64);
        let e = extract_scale(x.view(), 2).unwrap();
        assert_eq!(
            e.iter().copied().collect::<Vec<_>>(),
            vec![0.0, 2.0, 4.0, 6.0]
        );
        assert_eq!(extract_scale(x.view(), 1).unwrap(), x);
        assert!(matches!(extract_scale(x.view(), 3), Err(Error::Config(_))));
    }

    #[test]
    fn config_rejects_non_divisor_scale() {
        let c = MsLstmConfig {
            scales: vec![1, 3],
            ..cfg(0)
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shape_and_sample_equivariance() {
        let m = MsLstm::new(cfg(0)).unwrap();
        let mut x = random_input(4, 8, 5, 1);
        let row = x.index_axis(Axis(0), 0).to_owned();
        x.index_axis_mut(Axis(0), 2).assign(&row);
        let p = m.predict(x.view()).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0], p[2]);

        let mut perm = x.clone();
        for (dst, src) in [(0, 3), (1, 2), (2, 1), (3, 0)] {
            perm.index_axis_mut(Axis(0), dst)
                .assign(&x.index_axis(Axis(0), src));
        }
        let q = m.predict(perm.view()).unwrap();
        assert_eq!(q, vec![p[3], p[2], p[1], p[0]]);
    }

    #[test]
    fn zero_head_weights_give_bias() {
        let mut m = MsLstm::new(cfg(0)).unwrap();
        let head = m.params.tensors.len() - 2;
        m.params.tensors[head].data.fill(0.0);
        m.params.tensors[head + 1].data[0] = 0.37;
        let p = m.predict(random_input(3, 8, 5, 2).view()).unwrap();
        assert!(p.iter().all(|v| *v == 0.37));
    }

    #[test]
    fn single_scale_matches_plain_lstm_path() {
        let c = MsLstmConfig {
            scales: vec![1],
            ..cfg(0)
        };
        let m = MsLstm::new(c).unwrap();
        let x = random_input(3, 8, 5, 4);
        let p = m.predict(x.view()).unwrap();
        // reference: one LSTM, then layer norm and the affine head by hand
        let last = lstm_forward(x.view(), m.lstm_weights(0))
            .unwrap()
            .last_hidden()
            .clone();
        let t = &m.params.tensors;
        for r in 0..3 {
            let row = last.row(r);
            let mu = row.mean().unwrap();
            let var = row.mapv(|v| (v - mu).powi(2)).mean().unwrap();
            let mut out = t[6].data[0];
            for k in 0..16 {
                let y = t[3].data[k] * (row[k] - mu) / (var + 1e-5).sqrt() + t[4].data[k];
                out += y * t[5].data[k];
            }
            assert!((out - p[r]).abs() < 1e-12);
        }
    }

    /// Central-difference check of `sum_i c_i * pred_i` for random `c`.
    fn grad_check(head_hidden: usize) {
        let m = MsLstm::new(cfg(head_hidden)).unwrap();
        let x = random_input(4, 8, 5, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |m: &MsLstm| -> f64 {
            m.predict(x.view())
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(p, c)| p * c)
                .sum()
        };
        let (_, cache) = m.forward(x.view()).unwrap();
        let g = m.backward(&cache, &coef);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let k = rng.random_range(0..m.params.len());
            let mut mp = m.clone();
            mp.params.set(k, m.params.get(k) + eps);
            let mut mm = m.clone();
            mm.params.set(k, m.params.get(k) - eps);
            let num = (f(&mp) - f(&mm)) / (2.0 * eps);
            let ana = g.get(k);
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-5);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_affine_head() {
        grad_check(0);
    }

    #[test]
    fn gradients_match_finite_differences_hidden_head() {
        grad_check(6);
    }
}
