use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::graph::StockGraph;

/// How a node combines its neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Attention,
    /// Uniform weights over the neighbourhood (GCN-style ablation).
    Mean,
}

/// Borrowed parameters of one graph attention layer; `w` is `d_in x d_out`.
#[derive(Clone, Copy)]
pub struct GatWeights<'a> {
    pub w: ArrayView2<'a, f64>,
    /// Attention weights on the target (`a1`) and source (`a2`) halves.
    pub a1: &'a [f64],
    pub a2: &'a [f64],
}

pub struct GatCache {
    h_in: Array2<f64>,
    z: Array2<f64>,
    /// Per node, attention over `[v, neighbours of v...]`.
    alpha: Vec<Vec<f64>>,
    /// Per node, pre-softmax scores before LeakyReLU.
    pre: Vec<Vec<f64>>,
    out: Array2<f64>,
}

impl GatCache {
    pub fn attention(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }
}

/// `v` followed by its neighbours.
pub(crate) fn neighborhood(g: &StockGraph, v: usize) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(v).chain(g.neighbors(v).iter().copied())
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `h'_v = ReLU(sum_u alpha_vu W h_u)` with
/// `alpha_vu = softmax_u LeakyReLU(a1 . W h_v + a2 . W h_u)` over `v` and its neighbours.
pub fn gat_forward(
    h: ArrayView2<'_, f64>,
    g: &StockGraph,
    p: GatWeights<'_>,
    slope: f64,
    mode: Aggregation,
) -> GatCache {
    let n = h.nrows();
    assert_eq!(n, g.n_nodes(), "feature rows do not match graph nodes");
    let z = h.dot(&p.w);
    let d = z.ncols();
    let s1: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(p.a1).map(|(x, a)| x * a).sum())
        .collect();
    let s2: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(p.a2).map(|(x, a)| x * a).sum())
        .collect();
    let mut alpha = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut out = Array2::zeros((n, d));
    for v in 0..n {
        let scores: Vec<f64> = neighborhood(g, v).map(|u| s1[v] + s2[u]).collect();
        let a: Vec<f64> = match mode {
            Aggregation::Attention => {
                let e: Vec<f64> = scores.iter().map(|x| leaky(*x, slope)).collect();
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
                let sum: f64 = ex.iter().sum();
                ex.iter().map(|x| x / sum).collect()
            }
            Aggregation::Mean => vec![1.0 / scores.len() as f64; scores.len()],
        };
        let mut row = out.row_mut(v);
        for (k, u) in neighborhood(g, v).enumerate() {
            row.scaled_add(a[k], &z.row(u));
        }
        row.mapv_inplace(|x| x.max(0.0));
        alpha.push(a);
        pre.push(scores);
    }
    GatCache {
        h_in: h.to_owned(),
        z,
        alpha,
        pre,
        out,
    }
}

pub struct GatGrads {
    pub w: Array2<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub h_in: Array2<f64>,
}

pub fn gat_backward(
    cache: &GatCache,
    g: &StockGraph,
    p: GatWeights<'_>,
    slope: f64,
    mode: Aggregation,
    dout: &Array2<f64>,
) -> GatGrads {
    let (n, d) = cache.z.dim();
    let mut dz = Array2::zeros((n, d));
    let mut ds1 = vec![0.0; n];
    let mut ds2 = vec![0.0; n];
    for v in 0..n {
        // ReLU gate on the aggregated row
        let dagg: Vec<f64> = (0..d)
            .map(|k| {
                if cache.out[[v, k]] > 0.0 {
                    dout[[v, k]]
                } else {
                    0.0
                }
            })
            .collect();
        if dagg.iter().all(|x| *x == 0.0) {
            continue;
        }
        let alpha = &cache.alpha[v];
        let mut dalpha = Vec::with_capacity(alpha.len());
        for (k, u) in neighborhood(g, v).enumerate() {
            let zu = cache.z.row(u);
            let mut dot = 0.0;
            for c in 0..d {
                dz[[u, c]] += alpha[k] * dagg[c];
                dot += dagg[c] * zu[c];
            }
            dalpha.push(dot);
        }
        if mode == Aggregation::Mean {
            continue;
        }
        let mix: f64 = alpha.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
        for (k, u) in neighborhood(g, v).enumerate() {
            let de = alpha[k] * (dalpha[k] - mix);
            let dpre = if cache.pre[v][k] > 0.0 {
                de
            } else {
                slope * de
            };
            ds1[v] += dpre;
            ds2[u] += dpre;
        }
    }
    let mut da1 = vec![0.0; d];
    let mut da2 = vec![0.0; d];
    for v in 0..n {
        for c in 0..d {
            da1[c] += ds1[v] * cache.z[[v, c]];
            da2[c] += ds2[v] * cache.z[[v, c]];
            dz[[v, c]] += ds1[v] * p.a1[c] + ds2[v] * p.a2[c];
        }
    }
    GatGrads {
        w: cache.h_in.t().dot(&dz),
        a1: da1,
        a2: da2,
        h_in: dz.dot(&p.w.t()),
    }
}
