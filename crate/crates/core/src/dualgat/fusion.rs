use ndarray::{Array2, ArrayView2};

/// Per-node softmax mix of the industry and correlation branch outputs.
///
/// Returns the fused rows and `(beta_ind, beta_cor)` per node.
pub fn fusion_forward(
    h_ind: ArrayView2<'_, f64>,
    h_cor: ArrayView2<'_, f64>,
    q_ind: &[f64],
    q_cor: &[f64],
) -> (Array2<f64>, Vec<(f64, f64)>) {
    assert_eq!(h_ind.dim(), h_cor.dim(), "branch shapes differ");
    let (n, d) = h_ind.dim();
    let mut fused = Array2::zeros((n, d));
    let mut betas = Vec::with_capacity(n);
    for v in 0..n {
        let li: f64 = h_ind.row(v).iter().zip(q_ind).map(|(x, q)| x * q).sum();
        let lc: f64 = h_cor.row(v).iter().zip(q_cor).map(|(x, q)| x * q).sum();
        let m = li.max(lc);
        let (ei, ec) = ((li - m).exp(), (lc - m).exp());
        let (bi, bc) = (ei / (ei + ec), ec / (ei + ec));
        for k in 0..d {
            fused[[v, k]] = bi * h_ind[[v, k]] + bc * h_cor[[v, k]];
        }
        betas.push((bi, bc));
    }
    (fused, betas)
}

pub struct FusionGrads {
    pub h_ind: Array2<f64>,
    pub h_cor: Array2<f64>,
    pub q_ind: Vec<f64>,
    pub q_cor: Vec<f64>,
}

pub fn fusion_backward(
    h_ind: ArrayView2<'_, f64>,
    h_cor: ArrayView2<'_, f64>,
    q_ind: &[f64],
    q_cor: &[f64],
    betas: &[(f64, f64)],
    dfused: &Array2<f64>,
) -> FusionGrads {
    let (n, d) = h_ind.dim();
    let mut g = FusionGrads {
        h_ind: Array2::zeros((n, d)),
        h_cor: Array2::zeros((n, d)),
        q_ind: vec![0.0; d],
        q_cor: vec![0.0; d],
    };
    for v in 0..n {
        let (bi, bc) = betas[v];
        let mut dbi = 0.0;
        let mut dbc = 0.0;
        for k in 0..d {
            let df = dfused[[v, k]];
            g.h_ind[[v, k]] += bi * df;
            g.h_cor[[v, k]] += bc * df;
            dbi += df * h_ind[[v, k]];
            dbc += df * h_cor[[v, k]];
        }
        let mix = bi * dbi + bc * dbc;
        let (dli, dlc) = (bi * (dbi - mix), bc * (dbc - mix));
        for k in 0..d {
            g.q_ind[k] += dli * h_ind[[v, k]];
            g.q_cor[k] += dlc * h_cor[[v, k]];
            g.h_ind[[v, k]] += dli * q_ind[k];
            g.h_cor[[v, k]] += dlc * q_cor[k];
        }
    }
    g
}
