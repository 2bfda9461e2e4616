use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::WorldConfig;
use crate::data::{Bar, MarketPanel};
use crate::error::Result;

const GICS_SECTORS: [&str; 11] = [
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Communication Services",
    "Utilities",
    "Real Estate",
];

pub const FUNDAMENTALS: [&str; 2] = ["f_alpha", "f_noise"];

/// Monday to Friday from `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub fn symbol_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("S{i:0width$}")).collect()
}

pub fn sector_name(k: usize) -> String {
    GICS_SECTORS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Sector {k}"))
}

/// Sector factor variance share giving a same-sector sign agreement of `0.5 + s / 2`
/// between two plain Gaussian members.
pub fn sector_share(spillover: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * spillover.clamp(0.0, 1.0)).sin()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Sector and theme factors plus idiosyncratic noise, with a small predictable
/// component: the return into day `t` loads on `f_alpha` of day `t - 2`, so the
/// value known at close `t - 1` predicts the return from close `t` to `t + 1`.
///
/// The random stream does not depend on the factor weights.
pub fn generate_market(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<MarketPanel> {
    let n = cfg.n_symbols;
    let calendar = business_days(cfg.start_date, cfg.n_days);
    let symbols = symbol_names(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut sector_of = vec![0usize; n];
    for (k, &s) in order.iter().enumerate() {
        sector_of[s] = k % cfg.n_sectors.max(1);
    }
    order.shuffle(rng);
    let n_theme = (cfg.theme_fraction * n as f64).round() as usize;
    let mut in_theme = vec![false; n];
    for &s in &order[..n_theme.min(n)] {
        in_theme[s] = true;
    }
    let sigma: Vec<f64> = (0..n)
        .map(|_| cfg.volatility * (0.25 * normal(rng)).exp())
        .collect();
    let mut close: Vec<f64> = (0..n)
        .map(|_| (rng.random_range(3.0f64..5.3)).exp())
        .collect();

    let w = sector_share(cfg.spillover);
    let c = cfg.theme_strength.clamp(0.0, 1.0);
    let loadings: Vec<(f64, f64, f64)> = (0..n)
        .map(|s| {
            if in_theme[s] {
                (
                    (w * (1.0 - c)).sqrt(),
                    c.sqrt(),
                    ((1.0 - w) * (1.0 - c)).sqrt(),
                )
            } else {
                (w.sqrt(), 0.0, (1.0 - w).sqrt())
            }
        })
        .collect();
    let k = cfg.alpha_strength.clamp(0.0, 0.99);
    let phi = cfg.alpha_persistence.clamp(0.0, 0.999);
    let innov = (1.0 - phi * phi).sqrt();

    let mut f_alpha: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let mut f_noise: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    // f_alpha two days back, per symbol
    let mut lag1 = f_alpha.clone();
    let mut lag2 = f_alpha.clone();
    let mut bars: Vec<Vec<Option<Bar>>> = vec![Vec::with_capacity(cfg.n_days); n];

    for day in 0..cfg.n_days {
        let sector_f: Vec<f64> = (0..cfg.n_sectors.max(1)).map(|_| normal(rng)).collect();
        let theme_f = normal(rng);
        for s in 0..n {
            let eps = normal(rng);
            let eta = normal(rng);
            let nu = normal(rng);
            let open_noise = normal(rng);
            let (hi_u, lo_u): (f64, f64) = (rng.random(), rng.random());
            let vol_noise = normal(rng);

            let prev = close[s];
            let (a_s, a_t, a_e) = loadings[s];
            let z = a_s * sector_f[sector_of[s]] + a_t * theme_f + a_e * eps;
            let r = if day == 0 {
                0.0
            } else {
                (sigma[s] * ((1.0 - k * k).sqrt() * z + k * lag2[s])).max(-0.5)
            };
            let cl = prev * (1.0 + r);
            let open = prev * (1.0 + 0.25 * sigma[s] * open_noise).max(0.5);
            let high = open.max(cl) * (1.0 + 0.5 * sigma[s] * hi_u);
            let low = open.min(cl) * (1.0 - 0.5 * sigma[s] * lo_u);
            let volume = (13.0 + 0.4 * vol_noise + 20.0 * r.abs()).exp().round();

            f_alpha[s] = phi * f_alpha[s] + innov * eta;
            f_noise[s] = phi * f_noise[s] + innov * nu;
            bars[s].push(Some(Bar {
                day,
                open,
                high,
                low,
                close: cl,
                volume,
                fundamentals: vec![f_alpha[s], f_noise[s]],
            }));
            close[s] = cl;
            lag2[s] = lag1[s];
            lag1[s] = f_alpha[s];
        }
    }
    let sectors = sector_of.iter().map(|&k| sector_name(k)).collect();
    MarketPanel::new(
        calendar,
        symbols,
        sectors,
        FUNDAMENTALS.iter().map(|s| s.to_string()).collect(),
        bars,
    )
}

/// Fraction of same-sector pairs whose same-day returns share a sign, over all days.
pub fn within_sector_sign_agreement(panel: &MarketPanel) -> f64 {
    let mut sectors: Vec<&str> = panel.sectors().iter().map(String::as_str).collect();
    sectors.sort_unstable();
    sectors.dedup();
    let sector_idx: Vec<usize> = (0..panel.n_symbols())
        .map(|s| sectors.binary_search(&panel.sector(s)).expect("listed"))
        .collect();
    let (mut agree, mut total) = (0.0f64, 0.0f64);
    for day in 1..panel.n_days() {
        let mut ups = vec![0.0f64; sectors.len()];
        let mut downs = vec![0.0f64; sectors.len()];
        for s in 0..panel.n_symbols() {
            match panel.daily_return(s, day) {
                Some(r) if r > 0.0 => ups[sector_idx[s]] += 1.0,
                Some(r) if r < 0.0 => downs[sector_idx[s]] += 1.0,
                _ => {}
            }
        }
        for (u, d) in ups.iter().zip(&downs) {
            let m = u + d;
            agree += u * (u - 1.0) / 2.0 + d * (d - 1.0) / 2.0;
            total += m * (m - 1.0) / 2.0;
        }
    }
    if total == 0.0 {
        f64::NAN
    } else {
        agree / total
    }
}

/// Realised co-movement of a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSummary {
    pub within_sector_sign_agreement: f64,
    pub mean_within_sector_corr: f64,
    pub mean_cross_sector_corr: f64,
}

pub fn market_summary(panel: &MarketPanel) -> MarketSummary {
    let n = panel.n_symbols();
    let series: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let r: Vec<f64> = (1..panel.n_days())
                .map(|d| panel.daily_return(s, d).unwrap_or(0.0))
                .collect();
            let m = r.iter().sum::<f64>() / r.len().max(1) as f64;
            let c: Vec<f64> = r.iter().map(|x| x - m).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.into_iter()
                .map(|x| if norm > 0.0 { x / norm } else { 0.0 })
                .collect()
        })
        .collect();
    let (mut ws, mut wn, mut cs, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let rho: f64 = series[i].iter().zip(&series[j]).map(|(a, b)| a * b).sum();
            if panel.sector(i) == panel.sector(j) {
                ws += rho;
                wn += 1;
            } else {
                cs += rho;
                cn += 1;
            }
        }
    }
    MarketSummary {
        within_sector_sign_agreement: within_sector_sign_agreement(panel),
        mean_within_sector_corr: ws / wn.max(1) as f64,
        mean_cross_sector_corr: cs / cn.max(1) as f64,
    }
}

/// Bisects the spillover strength until the realised same-sector sign agreement
/// is within `tol` of `target`.
pub fn calibrate_spillover(base: &WorldConfig, target: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut mid = 0.5;
    for _ in 0..30 {
        mid = 0.5 * (lo + hi);
        let cfg = WorldConfig {
            spillover: mid,
            ..base.clone()
        };
        let got = within_sector_sign_agreement(&super::generate_market_only(&cfg)?);
        if (got - target).abs() <= tol / 4.0 {
            break;
        }
        if got < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_market_only;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_symbols: 100,
            n_days: 500,
            seed,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn calendar_skips_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(
            d,
            [
                NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 8).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 9).unwrap()
            ]
        );
    }

    #[test]
    fn symbols_sort_in_index_order() {
        let s = symbol_names(1200);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s[7], "S0007");
    }

    #[test]
    fn same_seed_same_panel() {
        let a = generate_market_only(&small(1)).unwrap();
        let b = generate_market_only(&small(1)).unwrap();
        let c = generate_market_only(&small(2)).unwrap();
        assert_eq!(a.close(5, 300), b.close(5, 300));
        assert_ne!(a.close(5, 300), c.close(5, 300));
    }

    #[test]
    fn sectors_are_balanced() {
        let p = generate_market_only(&small(3)).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for s in 0..p.n_symbols() {
            *counts.entry(p.sector(s).to_string()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&c| c == 20));
    }

    #[test]
    fn no_spillover_means_coin_flip_agreement() {
        let cfg = WorldConfig {
            spillover: 0.0,
            theme_fraction: 0.0,
            ..small(4)
        };
        let a = within_sector_sign_agreement(&generate_market_only(&cfg).unwrap());
        assert!((a - 0.5).abs() < 0.03, "agreement {a}");
    }

    #[test]
    fn default_spillover_matches_target_agreement() {
        let cfg = WorldConfig {
            n_days: 500,
            seed: 5,
            ..WorldConfig::default()
        };
        let a = within_sector_sign_agreement(&generate_market_only(&cfg).unwrap());
        assert!((a - 0.704).abs() < 0.02, "agreement {a}");
    }

    #[test]
    fn calibration_hits_target() {
        let base = small(6);
        let s = calibrate_spillover(&base, 0.704, 0.02).unwrap();
        let cfg = WorldConfig {
            spillover: s,
            ..small(7)
        };
        let a = within_sector_sign_agreement(&generate_market_only(&cfg).unwrap());
        assert!((a - 0.704).abs() < 0.02, "spillover {s} gives {a}");
    }

    #[test]
    fn alpha_factor_predicts_next_return() {
        let cfg = WorldConfig {
            alpha_strength: 0.3,
            ..small(8)
        };
        let p = generate_market_only(&cfg).unwrap();
        let mut ics = Vec::new();
        for day in 2..p.n_days() - 1 {
            let f: Vec<f64> = (0..p.n_symbols())
                .map(|s| p.bar(s, day - 1).unwrap().fundamentals[0])
                .collect();
            let r: Vec<f64> = (0..p.n_symbols())
                .map(|s| p.forward_return(s, day, 1).unwrap())
                .collect();
            ics.push(crate::stats::pearson(&f, &r).unwrap());
        }
        let m = crate::stats::mean(&ics);
        assert!(m > 0.15, "mean IC {m}");
    }
}
