use crate::error::{Error, Result};

/// Predictions whose cross-sectional std falls below this are treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

fn centred(xs: &[f64]) -> (Vec<f64>, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (c, norm)
}

fn degenerate(norm: f64, n: usize) -> bool {
    !(norm / (n as f64).sqrt() > DEGENERATE_STD)
}

/// Pearson correlation between predicted and realised returns of one day.
pub fn information_coefficient(pred: &[f64], actual: &[f64]) -> Result<f64> {
    Ok(ic_with_gradient(pred, actual)?.0)
}

/// IC and its gradient with respect to each prediction.
pub fn ic_with_gradient(pred: &[f64], actual: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != actual.len() {
        return Err(Error::Domain(
            "prediction and return vectors differ in length".into(),
        ));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::DegenerateCrossSection(format!("{n} symbols")));
    }
    let (p, pn) = centred(pred);
    let (r, rn) = centred(actual);
    if degenerate(pn, n) {
        return Err(Error::DegenerateCrossSection("constant predictions".into()));
    }
    if degenerate(rn, n) {
        return Err(Error::DegenerateCrossSection("constant returns".into()));
    }
    let ic = (p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / (pn * rn)).clamp(-1.0, 1.0);
    let grad = p
        .iter()
        .zip(&r)
        .map(|(pk, rk)| rk / (pn * rn) - ic * pk / (pn * pn))
        .collect();
    Ok((ic, grad))
}
