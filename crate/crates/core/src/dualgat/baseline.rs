use ndarray::{Array1, ArrayView1, ArrayView2};

use super::train::DaySet;
use crate::error::{Error, Result};
use crate::graph::{propagate, StockGraph};
use crate::stats::pearson;

/// `W^hops x` by repeated matrix-vector products; `w` must be row-stochastic.
pub fn baseline_propagate(
    x: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    hops: usize,
) -> Result<Array1<f64>> {
    if hops < 1 {
        return Err(Error::Domain("propagation needs at least one hop".into()));
    }
    if w.nrows() != w.ncols() || w.ncols() != x.len() {
        return Err(Error::Contract(
            "propagation matrix does not match the signal".into(),
        ));
    }
    for (i, row) in w.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "row {i} of the propagation matrix does not sum to 1"
            )));
        }
    }
    let mut cur = x.to_owned();
    for _ in 0..hops {
        cur = w.dot(&cur);
    }
    Ok(cur)
}

/// Two-hop Wx prediction over the union of both graphs.
pub fn wx_predict(g_ind: &StockGraph, g_cor: &StockGraph, x: &[f64]) -> Result<Vec<f64>> {
    propagate(&g_ind.union(g_cor)?, x, 2)
}

/// Mean daily IC of the two-hop Wx prediction built from the signal column.
pub fn wx_mean_ic(days: &[DaySet]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for d in days {
        let x: Vec<f64> = d.features.column(2).to_vec();
        let pred = wx_predict(&d.g_ind, &d.g_cor, &x)?;
        let p: Vec<f64> = d.labelled.iter().map(|&i| pred[i]).collect();
        if let Some(ic) = pearson(&p, &d.returns) {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, GraphFlavor};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn path() -> Array2<f64> {
        let g = StockGraph::from_edges(0, GraphFlavor::Industry, vec![0, 1, 2], [(0, 1), (1, 2)]);
        normalize_adjacency(&g)
    }

    #[test]
    fn path_one_hop() {
        let y = baseline_propagate(array![1.0, 0.0, 0.0].view(), path().view(), 1).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert!((y[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(y[2], 0.0);
    }

    #[test]
    fn path_two_hops_reaches_far_end() {
        let y = baseline_propagate(array![1.0, 0.0, 0.0].view(), path().view(), 2).unwrap();
        assert!((y[2] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ones_are_fixed() {
        for hops in 1..5 {
            let y = baseline_propagate(array![1.0, 1.0, 1.0].view(), path().view(), hops).unwrap();
            assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_hops_rejected() {
        assert!(matches!(
            baseline_propagate(array![1.0, 0.0, 0.0].view(), path().view(), 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn non_stochastic_rejected() {
        let w = Array2::<f64>::eye(3) * 2.0;
        assert!(baseline_propagate(array![1.0, 0.0, 0.0].view(), w.view(), 1).is_err());
    }

    proptest! {
        #[test]
        fn wx_matches_dense_square(
            n in 1usize..50,
            edges in proptest::collection::vec((0usize..50, 0usize..50), 0..120),
            split in 0usize..120,
            seed in proptest::collection::vec(-1.0f64..1.0, 50),
        ) {
            let e: Vec<_> = edges.into_iter().filter(|(i, j)| *i < n && *j < n).collect();
            let k = split.min(e.len());
            let gi = StockGraph::from_edges(0, GraphFlavor::Industry, (0..n).collect(), e[..k].to_vec());
            let gc = StockGraph::from_edges(0, GraphFlavor::Correlation, (0..n).collect(), e[k..].to_vec());
            let x = &seed[..n];
            let got = wx_predict(&gi, &gc, x).unwrap();
            let w = normalize_adjacency(&gi.union(&gc).unwrap());
            let want = w.dot(&w).dot(&Array1::from(x.to_vec()));
            for i in 0..n {
                prop_assert!((got[i] - want[i]).abs() < 1e-10);
            }
        }
    }
}
