//! Industry and rolling-correlation stock graphs, adjacency normalisation and reach.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{csv_err, MarketPanel, UNKNOWN_SECTOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphFlavor {
    Industry,
    Correlation,
    Union,
}

impl GraphFlavor {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphFlavor::Industry => "industry",
            GraphFlavor::Correlation => "correlation",
            GraphFlavor::Union => "union",
        }
    }
}

/// Undirected graph over the active symbols of one day.
///
/// Node `i` is symbol `nodes[i]`; edges are stored once with `i < j` and no
/// self-loops, neighbour lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct StockGraph {
    pub day: usize,
    pub flavor: GraphFlavor,
    pub nodes: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

impl StockGraph {
    pub fn from_edges(
        day: usize,
        flavor: GraphFlavor,
        nodes: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut neighbors = vec![Vec::new(); nodes.len()];
        for (i, j) in edges {
            assert!(
                i < nodes.len() && j < nodes.len(),
                "edge endpoint out of range"
            );
            if i != j {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self {
            day,
            flavor,
            nodes,
            neighbors,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn union(&self, other: &StockGraph) -> Result<StockGraph> {
        if self.nodes != other.nodes {
            return Err(Error::Contract(
                "graphs are over different node sets".into(),
            ));
        }
        Ok(StockGraph::from_edges(
            self.day,
            GraphFlavor::Union,
            self.nodes.clone(),
            self.edges().chain(other.edges()),
        ))
    }

    /// Local index of each node's symbol, for lookups by symbol.
    pub fn position_of(&self) -> BTreeMap<usize, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphThresholds {
    /// Correlation needed between two nodes without expert signals.
    pub theta1: f64,
    /// Lower bar when either endpoint carries an expert signal.
    pub theta2: f64,
    /// Trading days of returns in the correlation window.
    pub window: usize,
    /// Correlate raw closes instead of daily returns.
    pub raw_close: bool,
}

impl Default for GraphThresholds {
    fn default() -> Self {
        Self {
            theta1: 0.77,
            theta2: 0.67,
            window: 30,
            raw_close: false,
        }
    }
}

impl GraphThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.theta2 && self.theta2 <= self.theta1 && self.theta1 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < theta2 <= theta1 < 1, got theta1 {} theta2 {}",
                self.theta1, self.theta2
            )));
        }
        if self.window < 2 {
            return Err(Error::Config(
                "correlation window must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Symbols with a bar on `day`.
pub fn active_nodes(panel: &MarketPanel, day: usize) -> Vec<usize> {
    panel.present(day)
}

/// Cliques of same-sector symbols; `UNKNOWN` symbols stay isolated.
pub fn build_industry_graph(panel: &MarketPanel, day: usize, nodes: &[usize]) -> StockGraph {
    let mut by_sector: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, &s) in nodes.iter().enumerate() {
        let sector = panel.sector(s);
        if sector == UNKNOWN_SECTOR {
            log::debug!(
                "{} has no sector and gets no industry edges",
                panel.symbol(s)
            );
            continue;
        }
        by_sector.entry(sector).or_default().push(i);
    }
    let mut edges = Vec::new();
    for members in by_sector.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                edges.push((i, j));
            }
        }
    }
    StockGraph::from_edges(day, GraphFlavor::Industry, nodes.to_vec(), edges)
}

/// The series correlated for `symbol` at `day`, or `None` if history is incomplete.
///
/// Returns mode: the `window` daily returns from closes `day - window - 1 ..= day - 1`.
/// Raw mode: the `window` closes `day - window ..= day - 1`.
pub fn correlation_series(
    panel: &MarketPanel,
    symbol: usize,
    day: usize,
    th: &GraphThresholds,
) -> Option<Vec<f64>> {
    if th.raw_close {
        let first = day.checked_sub(th.window)?;
        (first..day).map(|t| panel.close(symbol, t)).collect()
    } else {
        let first = day.checked_sub(th.window)?;
        if first == 0 {
            return None;
        }
        (first..day)
            .map(|t| panel.daily_return(symbol, t))
            .collect()
    }
}

/// z-scored series scaled so that the dot product of two of them is their Pearson ρ.
fn unit_series(xs: &[f64]) -> Option<Vec<f64>> {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    if !crate::stats::is_spread(ss, m, xs.len()) {
        return None;
    }
    let norm = ss.sqrt();
    Some(xs.iter().map(|x| (x - m) / norm).collect())
}

/// Edges between pairs whose window correlation exceeds `theta2` when either
/// endpoint is in `expert` (indexed like `nodes`), `theta1` otherwise.
pub fn build_correlation_graph(
    panel: &MarketPanel,
    day: usize,
    nodes: &[usize],
    expert: &[bool],
    th: &GraphThresholds,
) -> Result<StockGraph> {
    th.validate()?;
    if expert.len() != nodes.len() {
        return Err(Error::Contract(
            "expert mask does not match the node list".into(),
        ));
    }
    let series: Vec<Option<Vec<f64>>> = nodes
        .iter()
        .map(|&s| correlation_series(panel, s, day, th).and_then(|v| unit_series(&v)))
        .collect();
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        let Some(a) = &series[i] else { continue };
        for j in i + 1..nodes.len() {
            let Some(b) = &series[j] else { continue };
            let rho: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let bar = if expert[i] || expert[j] {
                th.theta2
            } else {
                th.theta1
            };
            if rho > bar {
                edges.push((i, j));
            }
        }
    }
    Ok(StockGraph::from_edges(
        day,
        GraphFlavor::Correlation,
        nodes.to_vec(),
        edges,
    ))
}

/// `D^-1 (A + I)`, rows in node order.
pub fn normalize_adjacency(g: &StockGraph) -> Array2<f64> {
    let n = g.n_nodes();
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        let deg = (g.neighbors(i).len() + 1) as f64;
        w[[i, i]] = 1.0 / deg;
        for &j in g.neighbors(i) {
            w[[i, j]] = 1.0 / deg;
        }
    }
    w
}

/// Row-normalised propagation applied `hops` times without forming the matrix.
pub fn propagate(g: &StockGraph, x: &[f64], hops: usize) -> Result<Vec<f64>> {
    if hops < 1 {
        return Err(Error::Domain("propagation needs at least one hop".into()));
    }
    if x.len() != g.n_nodes() {
        return Err(Error::Contract(
            "signal vector does not match the node list".into(),
        ));
    }
    let mut cur = x.to_vec();
    for _ in 0..hops {
        cur = (0..g.n_nodes())
            .map(|i| {
                let ns = g.neighbors(i);
                (cur[i] + ns.iter().map(|&j| cur[j]).sum::<f64>()) / (ns.len() + 1) as f64
            })
            .collect();
    }
    Ok(cur)
}

/// Nodes within `hops` edges of any seed.
pub fn reached(g: &StockGraph, seeds: &[usize], hops: usize) -> Vec<bool> {
    let mut dist = vec![usize::MAX; g.n_nodes()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist[s] != 0 {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        if dist[v] == hops {
            continue;
        }
        for &u in g.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist.iter().map(|d| *d != usize::MAX).collect()
}

/// Fraction of nodes within `hops` of a signal node in the union of both graphs.
pub fn coverage_report(
    g_ind: &StockGraph,
    g_cor: &StockGraph,
    signal_nodes: &[usize],
    hops: usize,
) -> Result<f64> {
    if hops < 1 {
        return Err(Error::Domain("coverage needs at least one hop".into()));
    }
    let u = g_ind.union(g_cor)?;
    if u.n_nodes() == 0 {
        return Ok(0.0);
    }
    let r = reached(&u, signal_nodes, hops);
    Ok(r.iter().filter(|b| **b).count() as f64 / u.n_nodes() as f64)
}

/// Average one-hop reach of a single node: its industry neighbours as a share
/// of all nodes, and the extra share its correlation-only neighbours add.
pub fn reach_stats(g_ind: &StockGraph, g_cor: &StockGraph) -> Result<(f64, f64)> {
    if g_ind.nodes != g_cor.nodes {
        return Err(Error::Contract(
            "graphs are over different node sets".into(),
        ));
    }
    let n = g_ind.n_nodes();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let (mut ind, mut extra) = (0usize, 0usize);
    for i in 0..n {
        ind += g_ind.neighbors(i).len();
        extra += g_cor
            .neighbors(i)
            .iter()
            .filter(|&&j| !g_ind.has_edge(i, j))
            .count();
    }
    let denom = (n * n) as f64;
    Ok((ind as f64 / denom, extra as f64 / denom))
}

/// Appends `day,flavor,src,dst,weight` rows.
pub fn write_edges<W: Write>(
    out: &mut csv::Writer<W>,
    panel: &MarketPanel,
    g: &StockGraph,
) -> Result<()> {
    let date = panel.date(g.day).to_string();
    for (i, j) in g.edges() {
        out.write_record([
            date.as_str(),
            g.flavor.as_str(),
            panel.symbol(g.nodes[i]),
            panel.symbol(g.nodes[j]),
            "1",
        ])
        .map_err(csv_err)?;
    }
    Ok(())
}

pub const EDGE_HEADER: [&str; 5] = ["day", "flavor", "src", "dst", "weight"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bar;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_from(closes: &[Vec<f64>], sectors: &[&str]) -> MarketPanel {
        let days = closes[0].len();
        let cal = (0..days)
            .map(|i| NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Days::new(i as u64))
            .collect();
        let bars = closes
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(d, c)| {
                        Some(Bar {
                            day: d,
                            open: *c,
                            high: *c,
                            low: *c,
                            close: *c,
                            volume: 1.0,
                            fundamentals: vec![],
                        })
                    })
                    .collect()
            })
            .collect();
        let symbols = (0..closes.len()).map(|i| format!("S{i:03}")).collect();
        MarketPanel::new(
            cal,
            symbols,
            sectors.iter().map(|s| s.to_string()).collect(),
            vec![],
            bars,
        )
        .unwrap()
    }

    fn path() -> StockGraph {
        StockGraph::from_edges(0, GraphFlavor::Union, vec![0, 1, 2], [(0, 1), (1, 2)])
    }

    #[test]
    fn industry_edges_follow_sector() {
        let c = vec![vec![1.0; 3]; 4];
        let p = panel_from(
            &c,
            &[
                "Information Technology",
                "Information Technology",
                "Energy",
                UNKNOWN_SECTOR,
            ],
        );
        let g = build_industry_graph(&p, 1, &active_nodes(&p, 1));
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(0, 2));
        assert!(g.neighbors(3).is_empty());
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn expert_endpoint_lowers_the_bar() {
        // build two return series with correlation between 0.67 and 0.77
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut a, mut b) = (vec![100.0], vec![100.0]);
        let mut rho = 0.0;
        for _ in 0..200 {
            a.truncate(1);
            b.truncate(1);
            for _ in 0..30 {
                let z: f64 = rng.random_range(-1.0..1.0);
                let e: f64 = rng.random_range(-1.0..1.0);
                let la = *a.last().unwrap();
                let lb = *b.last().unwrap();
                a.push(la * (1.0 + 0.01 * z));
                b.push(lb * (1.0 + 0.01 * (z + 0.9 * e)));
            }
            let p = panel_from(&[a.clone(), b.clone()], &["X", "Y"]);
            let s0 = correlation_series(&p, 0, 31, &GraphThresholds::default()).unwrap();
            let s1 = correlation_series(&p, 1, 31, &GraphThresholds::default()).unwrap();
            rho = crate::stats::pearson(&s0, &s1).unwrap();
            if rho > 0.68 && rho < 0.76 {
                break;
            }
        }
        assert!(rho > 0.68 && rho < 0.76);
        let mut a2 = a.clone();
        a2.push(1.0);
        let mut b2 = b.clone();
        b2.push(1.0);
        let p = panel_from(&[a2, b2], &["X", "Y"]);
        let th = GraphThresholds::default();
        let nodes = active_nodes(&p, 31);
        let plain = build_correlation_graph(&p, 31, &nodes, &[false, false], &th).unwrap();
        let expert = build_correlation_graph(&p, 31, &nodes, &[true, false], &th).unwrap();
        assert_eq!(plain.n_edges(), 0);
        assert_eq!(expert.n_edges(), 1);
    }

    #[test]
    fn five_day_correlation_matches_direct_formula() {
        let a = vec![10.0, 10.5, 10.2, 10.9, 11.0, 10.7];
        let b = vec![20.0, 20.1, 20.6, 20.4, 21.0, 21.3];
        let p = panel_from(&[a.clone(), b.clone()], &["X", "X"]);
        let th = GraphThresholds {
            window: 5,
            ..Default::default()
        };
        let ra: Vec<f64> = (1..6).map(|t| a[t] / a[t - 1] - 1.0).collect();
        let rb: Vec<f64> = (1..6).map(|t| b[t] / b[t - 1] - 1.0).collect();
        let (ma, mb) = (ra.iter().sum::<f64>() / 5.0, rb.iter().sum::<f64>() / 5.0);
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for t in 0..5 {
            num += (ra[t] - ma) * (rb[t] - mb);
            da += (ra[t] - ma).powi(2);
            db += (rb[t] - mb).powi(2);
        }
        let oracle = num / (da.sqrt() * db.sqrt());
        let ua = unit_series(&correlation_series(&p, 0, 6, &th).unwrap()).unwrap();
        let ub = unit_series(&correlation_series(&p, 1, 6, &th).unwrap()).unwrap();
        let rho: f64 = ua.iter().zip(&ub).map(|(x, y)| x * y).sum();
        assert!((rho - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_series_gets_no_correlation_edges() {
        let p = panel_from(&[vec![5.0; 40], vec![5.0; 40]], &["X", "X"]);
        let g =
            build_correlation_graph(&p, 35, &[0, 1], &[true, true], &GraphThresholds::default())
                .unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn normalized_adjacency_examples() {
        let w = normalize_adjacency(&path());
        for v in w.row(1) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let iso = StockGraph::from_edges(0, GraphFlavor::Industry, vec![0, 1], []);
        assert_eq!(normalize_adjacency(&iso), Array2::<f64>::eye(2));
    }

    #[test]
    fn propagation_examples() {
        let g = path();
        let one = propagate(&g, &[1.0, 0.0, 0.0], 1).unwrap();
        assert!(
            (one[0] - 0.5).abs() < 1e-15 && (one[1] - 1.0 / 3.0).abs() < 1e-15 && one[2] == 0.0
        );
        let two = propagate(&g, &[1.0, 0.0, 0.0], 2).unwrap();
        assert!((two[2] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(propagate(&g, &[1.0; 3], 4).unwrap(), vec![1.0; 3]);
        assert!(propagate(&g, &[1.0; 3], 0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let full = StockGraph::from_edges(
            0,
            GraphFlavor::Industry,
            (0..5).collect(),
            (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))),
        );
        let empty = StockGraph::from_edges(0, GraphFlavor::Correlation, (0..5).collect(), []);
        assert_eq!(coverage_report(&full, &empty, &[2], 1).unwrap(), 1.0);
        let e1 = StockGraph::from_edges(0, GraphFlavor::Industry, (0..100).collect(), []);
        let e2 = StockGraph::from_edges(0, GraphFlavor::Correlation, (0..100).collect(), []);
        assert!((coverage_report(&e1, &e2, &[1, 50, 99], 2).unwrap() - 0.03).abs() < 1e-15);
    }

    fn random_graph(n: usize, p: f64, seed: u64) -> StockGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        StockGraph::from_edges(0, GraphFlavor::Union, (0..n).collect(), edges)
    }

    proptest::proptest! {
        #[test]
        fn dense_two_hop_oracle(n in 1usize..50, p in 0.0f64..0.5, seed in 0u64..1000) {
            let g = random_graph(n, p, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = normalize_adjacency(&g);
            for row in w.rows() {
                proptest::prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            let xv = ndarray::Array1::from(x.clone());
            let dense = w.dot(&w.dot(&xv));
            let fast = propagate(&g, &x, 2).unwrap();
            for i in 0..n {
                proptest::prop_assert!((dense[i] - fast[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn correlation_graph_properties(seed in 0u64..500, t1 in 0.5f64..0.95, gap in 0.0f64..0.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let common: Vec<f64> = (0..45).map(|_| rng.random_range(-0.02..0.02)).collect();
            let closes: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let beta = rng.random_range(0.0..2.0);
                    let mut c = vec![50.0];
                    for r in &common {
                        let e: f64 = rng.random_range(-0.02..0.02);
                        let last = *c.last().unwrap();
                        c.push(last * (1.0 + beta * r + e));
                    }
                    c
                })
                .collect();
            let p = panel_from(&closes, &["X"; 8]);
            let nodes = active_nodes(&p, 40);
            let expert: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let t2 = (t1 - gap).max(0.01);
            let th = GraphThresholds { theta1: t1, theta2: t2, ..Default::default() };
            let g = build_correlation_graph(&p, 40, &nodes, &expert, &th).unwrap();
            for (i, j) in g.edges() {
                proptest::prop_assert!(g.has_edge(j, i));
                proptest::prop_assert!(i != j);
            }
            // raising both thresholds never adds edges
            let hi = GraphThresholds { theta1: (t1 + 0.03).min(0.99), theta2: (t2 + 0.03).min(0.99), ..th.clone() };
            let g_hi = build_correlation_graph(&p, 40, &nodes, &expert, &hi).unwrap();
            for (i, j) in g_hi.edges() {
                proptest::prop_assert!(g.has_edge(i, j));
            }
            // the expert rule only adds edges on top of the single-threshold graph
            let flat = GraphThresholds { theta2: t1, ..th.clone() };
            let g_flat = build_correlation_graph(&p, 40, &nodes, &expert, &flat).unwrap();
            for (i, j) in g_flat.edges() {
                proptest::prop_assert!(g.has_edge(i, j));
            }
            // bars from day 40 on do not matter
            let mut cut = closes.clone();
            for row in &mut cut {
                for v in row.iter_mut().skip(40) {
                    *v *= 3.0;
                }
            }
            let q = panel_from(&cut, &["X"; 8]);
            let g_cut = build_correlation_graph(&q, 40, &nodes, &expert, &th).unwrap();
            proptest::prop_assert_eq!(g, g_cut);
        }
    }
}
