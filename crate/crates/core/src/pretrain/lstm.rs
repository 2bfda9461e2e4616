use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Borrowed weights of one LSTM: `w` is `d x 4h`, `u` is `h x 4h`, `b` is `4h`,
/// gate blocks ordered input, forget, cell, output.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w: ArrayView2<'a, f64>,
    pub u: ArrayView2<'a, f64>,
    pub b: &'a [f64],
}

impl LstmWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.u.nrows()
    }
}

/// Activations kept for the backward pass.
pub struct LstmCache {
    /// `N x T x d` input sequence.
    xs: ndarray::Array3<f64>,
    /// Hidden states `h_0 .. h_T`, each `N x h`.
    pub hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    /// Post-activation gates per step, `N x 4h`.
    gates: Vec<Array2<f64>>,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hs.last().expect("at least the initial state")
    }
}

/// Runs the recurrence from zero state over an `N x T x d` batch.
pub fn lstm_forward(xs: ArrayView3<'_, f64>, p: LstmWeights<'_>) -> Result<LstmCache> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in LSTM input".into()));
    }
    let (n, steps, d) = xs.dim();
    let h = p.hidden();
    if p.w.dim() != (d, 4 * h) || p.u.dim() != (h, 4 * h) || p.b.len() != 4 * h {
        return Err(Error::Domain(format!(
            "LSTM weights do not match input dim {d} and hidden dim {h}"
        )));
    }
    let mut hs = Vec::with_capacity(steps + 1);
    let mut cs = Vec::with_capacity(steps + 1);
    let mut gates = Vec::with_capacity(steps);
    hs.push(Array2::zeros((n, h)));
    cs.push(Array2::zeros((n, h)));
    for t in 0..steps {
        let x = xs.index_axis(Axis(1), t);
        let mut a = x.dot(&p.w) + hs[t].dot(&p.u);
        for mut row in a.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                let z = *v + p.b[k];
                *v = if (2 * h..3 * h).contains(&k) {
                    z.tanh()
                } else {
                    sigmoid(z)
                };
            }
        }
        let mut c = Array2::zeros((n, h));
        let mut hn = Array2::zeros((n, h));
        {
            let i = a.slice(s![.., 0..h]);
            let f = a.slice(s![.., h..2 * h]);
            let g = a.slice(s![.., 2 * h..3 * h]);
            let o = a.slice(s![.., 3 * h..4 * h]);
            Zip::from(&mut c)
                .and(&cs[t])
                .and(&i)
                .and(&f)
                .and(&g)
                .for_each(|c: &mut f64, &cp, &i, &f, &g| *c = f * cp + i * g);
            Zip::from(&mut hn)
                .and(&c)
                .and(&o)
                .for_each(|h: &mut f64, &c, &o| *h = o * c.tanh());
        }
        hs.push(hn);
        cs.push(c);
        gates.push(a);
    }
    Ok(LstmCache {
        xs: xs.to_owned(),
        hs,
        cs,
        gates,
    })
}

/// Gradients of one LSTM's weights.
pub struct LstmGrads {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Vec<f64>,
}

/// Back-propagates `dh_last` (gradient w.r.t. the final hidden state) through time.
pub fn lstm_backward(cache: &LstmCache, p: LstmWeights<'_>, dh_last: &Array2<f64>) -> LstmGrads {
    let (n, steps, d) = cache.xs.dim();
    let h = p.hidden();
    let mut gw = Array2::zeros((d, 4 * h));
    let mut gu = Array2::zeros((h, 4 * h));
    let mut gb = vec![0.0; 4 * h];
    let mut dh = dh_last.clone();
    let mut dc: Array2<f64> = Array2::zeros((n, h));
    let mut da: Array2<f64> = Array2::zeros((n, 4 * h));
    for t in (0..steps).rev() {
        let a = &cache.gates[t];
        let c = &cache.cs[t + 1];
        let c_prev = &cache.cs[t];
        for r in 0..n {
            for k in 0..h {
                let (i, f, g, o) = (
                    a[[r, k]],
                    a[[r, h + k]],
                    a[[r, 2 * h + k]],
                    a[[r, 3 * h + k]],
                );
                let tc = c[[r, k]].tanh();
                let dhv = dh[[r, k]];
                let dcv = dc[[r, k]] + dhv * o * (1.0 - tc * tc);
                da[[r, k]] = dcv * g * i * (1.0 - i);
                da[[r, h + k]] = dcv * c_prev[[r, k]] * f * (1.0 - f);
                da[[r, 2 * h + k]] = dcv * i * (1.0 - g * g);
                da[[r, 3 * h + k]] = dhv * tc * o * (1.0 - o);
                dc[[r, k]] = dcv * f;
            }
        }
        let x = cache.xs.index_axis(Axis(1), t);
        gw += &x.t().dot(&da);
        gu += &cache.hs[t].t().dot(&da);
        for (k, col) in da.axis_iter(Axis(1)).enumerate() {
            gb[k] += col.sum();
        }
        dh = da.dot(&p.u.t());
    }
    LstmGrads {
        w: gw,
        u: gu,
        b: gb,
    }
}
