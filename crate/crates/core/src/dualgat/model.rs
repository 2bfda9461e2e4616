use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fusion::{fusion_backward, fusion_forward};
use super::layer::{gat_backward, gat_forward, Aggregation, GatCache, GatWeights};
use crate::error::{Error, Result};
use crate::graph::StockGraph;
use crate::params::{ParamSet, Tensor};

pub const MODEL_NAME: &str = "dualgat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualGatConfig {
    pub hidden: usize,
    pub out: usize,
    pub leaky_slope: f64,
    pub aggregation: Aggregation,
    /// Multiplies each input column before the first layer.
    pub feature_scale: Vec<f64>,
    pub seed: u64,
}

impl Default for DualGatConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            out: 8,
            leaky_slope: 0.2,
            aggregation: Aggregation::Attention,
            feature_scale: vec![1.0; INPUT_DIM],
            seed: 0,
        }
    }
}

/// Node inputs: pretrain estimate, availability, signal.
pub const INPUT_DIM: usize = 3;

const HOP1_IND: usize = 0;
const HOP1_COR: usize = 3;
const FUSE1: usize = 6;
const HOP2_IND: usize = 8;
const HOP2_COR: usize = 11;
const FUSE2: usize = 14;
const HEAD: usize = 16;

pub struct DualGatCache {
    hop1: [GatCache; 2],
    beta1: Vec<(f64, f64)>,
    hop2: [GatCache; 2],
    fused2: Array2<f64>,
    beta2: Vec<(f64, f64)>,
}

impl DualGatCache {
    /// `(beta_ind, beta_cor)` per node for hop 1 and hop 2.
    pub fn betas(&self) -> (&[(f64, f64)], &[(f64, f64)]) {
        (&self.beta1, &self.beta2)
    }

    pub fn attention(&self) -> [&[Vec<f64>]; 4] {
        [
            self.hop1[0].attention(),
            self.hop1[1].attention(),
            self.hop2[0].attention(),
            self.hop2[1].attention(),
        ]
    }
}

/// Two hops of per-graph attention, each followed by softmax fusion, then an affine head.
#[derive(Debug, Clone)]
pub struct DualGat {
    pub config: DualGatConfig,
    pub params: ParamSet,
}

fn gat_tensors(prefix: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let wb = (6.0 / (din + dout) as f64).sqrt();
    let ab = 1.0 / (dout as f64).sqrt();
    vec![
        Tensor::uniform(format!("{prefix}.w"), &[din, dout], wb, rng),
        Tensor::uniform(format!("{prefix}.a1"), &[dout], ab, rng),
        Tensor::uniform(format!("{prefix}.a2"), &[dout], ab, rng),
    ]
}

impl DualGat {
    pub fn new(config: DualGatConfig) -> Result<Self> {
        if config.hidden == 0 || config.out == 0 {
            return Err(Error::Config("DualGAT dims must be positive".into()));
        }
        if config.feature_scale.len() != INPUT_DIM {
            return Err(Error::Config(format!(
                "feature_scale needs {INPUT_DIM} entries"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h, o) = (config.hidden, config.out);
        let mut t = Vec::new();
        t.extend(gat_tensors("hop1.ind", INPUT_DIM, h, &mut rng));
        t.extend(gat_tensors("hop1.cor", INPUT_DIM, h, &mut rng));
        let qb = 1.0 / (h as f64).sqrt();
        t.push(Tensor::uniform("fuse1.q_ind", &[h], qb, &mut rng));
        t.push(Tensor::uniform("fuse1.q_cor", &[h], qb, &mut rng));
        t.extend(gat_tensors("hop2.ind", h, o, &mut rng));
        t.extend(gat_tensors("hop2.cor", h, o, &mut rng));
        let qb = 1.0 / (o as f64).sqrt();
        t.push(Tensor::uniform("fuse2.q_ind", &[o], qb, &mut rng));
        t.push(Tensor::uniform("fuse2.q_cor", &[o], qb, &mut rng));
        t.push(Tensor::uniform("head.w", &[o], qb, &mut rng));
        t.push(Tensor::zeros("head.b", &[1]));
        Ok(Self {
            config,
            params: ParamSet::new(t),
        })
    }

    pub fn from_parts(config: DualGatConfig, params: ParamSet) -> Result<Self> {
        let fresh = Self::new(config)?;
        fresh.params.check_same_layout(&params)?;
        Ok(Self {
            config: fresh.config,
            params,
        })
    }

    fn gat(&self, base: usize) -> GatWeights<'_> {
        let t = &self.params.tensors;
        GatWeights {
            w: t[base].mat(),
            a1: &t[base + 1].data,
            a2: &t[base + 2].data,
        }
    }

    fn q(&self, base: usize) -> (&[f64], &[f64]) {
        (
            &self.params.tensors[base].data,
            &self.params.tensors[base + 1].data,
        )
    }

    pub fn predict(
        &self,
        features: ArrayView2<'_, f64>,
        g_ind: &StockGraph,
        g_cor: &StockGraph,
    ) -> Result<Vec<f64>> {
        Ok(self.forward(features, g_ind, g_cor)?.0)
    }

    /// Predictions for the `N x 3` node features of one day.
    pub fn forward(
        &self,
        features: ArrayView2<'_, f64>,
        g_ind: &StockGraph,
        g_cor: &StockGraph,
    ) -> Result<(Vec<f64>, DualGatCache)> {
        if g_ind.nodes != g_cor.nodes {
            return Err(Error::Contract(
                "industry and correlation graphs cover different nodes".into(),
            ));
        }
        if features.nrows() != g_ind.n_nodes() || features.ncols() != INPUT_DIM {
            return Err(Error::Contract(format!(
                "features are {}x{}, graph has {} nodes",
                features.nrows(),
                features.ncols(),
                g_ind.n_nodes()
            )));
        }
        let cfg = &self.config;
        let mut x = features.to_owned();
        for (k, mut col) in x.columns_mut().into_iter().enumerate() {
            col *= cfg.feature_scale[k];
        }
        let (slope, mode) = (cfg.leaky_slope, cfg.aggregation);
        let a = gat_forward(x.view(), g_ind, self.gat(HOP1_IND), slope, mode);
        let b = gat_forward(x.view(), g_cor, self.gat(HOP1_COR), slope, mode);
        let (qi, qc) = self.q(FUSE1);
        let (fused1, beta1) = fusion_forward(a.output().view(), b.output().view(), qi, qc);
        let c = gat_forward(fused1.view(), g_ind, self.gat(HOP2_IND), slope, mode);
        let d = gat_forward(fused1.view(), g_cor, self.gat(HOP2_COR), slope, mode);
        let (qi, qc) = self.q(FUSE2);
        let (fused2, beta2) = fusion_forward(c.output().view(), d.output().view(), qi, qc);
        let w = &self.params.tensors[HEAD].data;
        let bias = self.params.tensors[HEAD + 1].data[0];
        let pred = fused2
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + bias)
            .collect();
        Ok((
            pred,
            DualGatCache {
                hop1: [a, b],
                beta1,
                hop2: [c, d],
                fused2,
                beta2,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &DualGatCache,
        g_ind: &StockGraph,
        g_cor: &StockGraph,
        dpred: &[f64],
    ) -> ParamSet {
        let cfg = &self.config;
        let (slope, mode) = (cfg.leaky_slope, cfg.aggregation);
        let mut g = self.params.zeros_like();
        let n = dpred.len();
        let o = cfg.out;
        let w = &self.params.tensors[HEAD].data;
        let mut dfused2 = Array2::zeros((n, o));
        for v in 0..n {
            for k in 0..o {
                g.tensors[HEAD].data[k] += dpred[v] * cache.fused2[[v, k]];
                dfused2[[v, k]] = dpred[v] * w[k];
            }
        }
        g.tensors[HEAD + 1].data[0] = dpred.iter().sum();

        let (qi, qc) = self.q(FUSE2);
        let f2 = fusion_backward(
            cache.hop2[0].output().view(),
            cache.hop2[1].output().view(),
            qi,
            qc,
            &cache.beta2,
            &dfused2,
        );
        g.tensors[FUSE2].data = f2.q_ind;
        g.tensors[FUSE2 + 1].data = f2.q_cor;
        let gc = gat_backward(
            &cache.hop2[0],
            g_ind,
            self.gat(HOP2_IND),
            slope,
            mode,
            &f2.h_ind,
        );
        let gd = gat_backward(
            &cache.hop2[1],
            g_cor,
            self.gat(HOP2_COR),
            slope,
            mode,
            &f2.h_cor,
        );
        let dfused1 = &gc.h_in + &gd.h_in;
        store_gat(&mut g, HOP2_IND, gc.w, gc.a1, gc.a2);
        store_gat(&mut g, HOP2_COR, gd.w, gd.a1, gd.a2);

        let (qi, qc) = self.q(FUSE1);
        let f1 = fusion_backward(
            cache.hop1[0].output().view(),
            cache.hop1[1].output().view(),
            qi,
            qc,
            &cache.beta1,
            &dfused1,
        );
        g.tensors[FUSE1].data = f1.q_ind;
        g.tensors[FUSE1 + 1].data = f1.q_cor;
        let ga = gat_backward(
            &cache.hop1[0],
            g_ind,
            self.gat(HOP1_IND),
            slope,
            mode,
            &f1.h_ind,
        );
        let gb = gat_backward(
            &cache.hop1[1],
            g_cor,
            self.gat(HOP1_COR),
            slope,
            mode,
            &f1.h_cor,
        );
        store_gat(&mut g, HOP1_IND, ga.w, ga.a1, ga.a2);
        store_gat(&mut g, HOP1_COR, gb.w, gb.a1, gb.a2);
        g
    }
}

fn store_gat(g: &mut ParamSet, base: usize, w: Array2<f64>, a1: Vec<f64>, a2: Vec<f64>) {
    g.tensors[base].mat_mut().assign(&w);
    g.tensors[base + 1].data = a1;
    g.tensors[base + 2].data = a2;
}
