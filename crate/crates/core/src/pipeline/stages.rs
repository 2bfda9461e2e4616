use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{sha256_bytes, Pipeline, Stage};
use crate::backtest::{
    run_backtest, write_daily_csv, write_report_json, BacktestReport, DailyPrediction,
};
use crate::data::{
    csv_err, load_panel_paths, load_posts_path, write_bars, write_posts, write_sectors,
    FeatureCube, MarketPanel, Sentiment,
};
use crate::dualgat::{
    self, scale_signals, signal_rms, train_dualgat, wx_predict, DaySet, DualGat, DualGatConfig,
};
use crate::error::{Error, Result};
use crate::graph::{
    active_nodes, build_correlation_graph, build_industry_graph, coverage_report, reach_stats,
    write_edges, StockGraph, EDGE_HEADER,
};
use crate::params::{load_checkpoint, save_checkpoint};
use crate::pretrain::{
    self, predict_days, read_estimates, train_pretrain, write_estimates, write_training_log,
    EpochLog, MsLstm, StopReason,
};
use crate::signals::{build_signal_rows, read_signals, write_signals, SignalTable};
use crate::stats::{mean, zscore};
use crate::synth::{
    generate_world, market_summary, write_world, MarketSummary, BARS_FILE, POSTS_FILE, ROLES_FILE,
    SECTORS_FILE,
};
use crate::tracer::{append_track_log, trace_all, write_track_log_header, ExpertCall, Role};

const WORLD_SUMMARY: &str = "world_summary.json";
const INGEST_REPORT: &str = "ingest_report.json";
const CALLS_FILE: &str = "calls.csv";
const TRACK_LOG_FILE: &str = "track_log.csv";
const SNAPSHOT_FILE: &str = "track_store.json";
const TRACE_SUMMARY: &str = "trace_summary.json";
const SIGNALS_FILE: &str = "signals.csv";
const MSLSTM_CKPT: &str = "ms_lstm.json";
const TRAINING_LOG: &str = "training_log.csv";
const ESTIMATES_FILE: &str = "estimates.csv";
const TRAIN_SUMMARY: &str = "summary.json";
const GRAPH_STATS: &str = "graph_stats.csv";
const COVERAGE_FILE: &str = "coverage.json";
const EDGES_FILE: &str = "edges.csv";
const DUALGAT_CKPT: &str = "dualgat.json";
const SCALING_FILE: &str = "scaling.json";
const PREDICTIONS_FILE: &str = "predictions.csv";
const BETAS_FILE: &str = "betas.csv";
const REPORT_JSON: &str = "report.json";
const REPORT_MD: &str = "report.md";
/// Model name, report file and daily series file of each backtested model.
const BACKTEST_MODELS: [(&str, &str, &str); 3] = [
    ("dualgat", "report_dualgat.json", "daily_dualgat.csv"),
    ("wx", "report_wx.json", "daily_wx.csv"),
    ("pretrain", "report_pretrain.json", "daily_pretrain.csv"),
];

pub(super) fn run(p: &Pipeline, stage: Stage, dir: &Path) -> Result<Vec<String>> {
    let files = match stage {
        Stage::Simulate => simulate(p, dir)?,
        Stage::Ingest => ingest(p, dir)?,
        Stage::Trace => trace(p, dir)?,
        Stage::Signals => signals(p, dir)?,
        Stage::Pretrain => pretrain_stage(p, dir)?,
        Stage::Graphs => graphs(p, dir)?,
        Stage::Train => train(p, dir)?,
        Stage::Backtest => backtest(p, dir)?,
        Stage::Report => report(p, dir)?,
    };
    Ok(files.into_iter().map(String::from).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    csv::Reader::from_reader(open(path)?)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_panel(p: &Pipeline) -> Result<MarketPanel> {
    let d = p.dir(Stage::Ingest);
    Ok(load_panel_paths(&d.join(BARS_FILE), &d.join(SECTORS_FILE))?.panel)
}

fn load_signals(p: &Pipeline, panel: &MarketPanel) -> Result<SignalTable> {
    let rows = read_signals(open(&p.dir(Stage::Signals).join(SIGNALS_FILE))?)?;
    SignalTable::from_rows(&rows, panel)
}

/// Trading-day ranges for pretrain, train, validation and test.
fn day_ranges(p: &Pipeline, panel: &MarketPanel) -> Result<[Range<usize>; 4]> {
    let names = ["pretrain", "train", "validation", "test"];
    let eff = p.config.dates.effective();
    let ranges = eff.map(|r| r.days(panel));
    for (name, r) in names.iter().zip(&ranges) {
        if r.is_empty() {
            return Err(Error::Domain(format!(
                "date range `{name}` holds no trading days of the panel"
            )));
        }
    }
    Ok(ranges)
}

#[derive(Debug, Serialize)]
struct WorldSummary {
    symbols: usize,
    days: usize,
    first_date: String,
    last_date: String,
    posts: usize,
    users: usize,
    roles: BTreeMap<String, usize>,
    market: MarketSummary,
}

fn simulate(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let mut cfg = p.config.world.clone();
    cfg.seed = p.stage_seed(Stage::Simulate);
    let world = generate_world(&cfg)?;
    write_world(&world, dir)?;
    let mut roles = BTreeMap::new();
    for r in &world.roles {
        let name = serde_json::to_value(r.role)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        *roles.entry(name).or_insert(0) += 1;
    }
    let panel = &world.panel;
    write_json(
        &dir.join(WORLD_SUMMARY),
        &WorldSummary {
            symbols: panel.n_symbols(),
            days: panel.n_days(),
            first_date: panel.date(0).to_string(),
            last_date: panel.date(panel.n_days() - 1).to_string(),
            posts: world.posts.len(),
            users: world.roles.len(),
            roles,
            market: market_summary(panel),
        },
    )?;
    Ok(vec![
        POSTS_FILE,
        BARS_FILE,
        SECTORS_FILE,
        ROLES_FILE,
        WORLD_SUMMARY,
    ])
}

#[derive(Debug, Serialize)]
struct IngestReport {
    post_lines: usize,
    posts: usize,
    skipped_posts: usize,
    symbols: usize,
    days: usize,
    first_date: String,
    last_date: String,
    rejected_bar_rows: usize,
    unknown_sector: Vec<String>,
    diagnostics: Vec<String>,
}

fn ingest(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let i = &p.config.inputs;
    let src = p.dir(Stage::Simulate);
    let pick = |o: &Option<std::path::PathBuf>, f: &str| o.clone().unwrap_or_else(|| src.join(f));
    let (posts_path, bars_path, sectors_path) = (
        pick(&i.posts, POSTS_FILE),
        pick(&i.bars, BARS_FILE),
        pick(&i.sectors, SECTORS_FILE),
    );
    let posts = load_posts_path(&posts_path)?;
    let load = load_panel_paths(&bars_path, &sectors_path)?;
    let panel = &load.panel;
    if panel.n_days() == 0 {
        return Err(Error::Domain(format!(
            "{} holds no trading days",
            bars_path.display()
        )));
    }
    day_ranges(p, panel)?;
    write_posts(create(&dir.join(POSTS_FILE))?, &posts.posts)?;
    write_bars(create(&dir.join(BARS_FILE))?, panel)?;
    write_sectors(create(&dir.join(SECTORS_FILE))?, panel)?;
    write_json(
        &dir.join(INGEST_REPORT),
        &IngestReport {
            post_lines: posts.lines,
            posts: posts.posts.len(),
            skipped_posts: posts.skipped,
            symbols: panel.n_symbols(),
            days: panel.n_days(),
            first_date: panel.date(0).to_string(),
            last_date: panel.date(panel.n_days() - 1).to_string(),
            rejected_bar_rows: load.rejected_rows,
            unknown_sector: load.unknown_sector.clone(),
            diagnostics: load.diagnostics.iter().take(100).cloned().collect(),
        },
    )?;
    Ok(vec![POSTS_FILE, BARS_FILE, SECTORS_FILE, INGEST_REPORT])
}

/// One classified call in `calls.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRow {
    pub date: String,
    pub user_id: String,
    pub symbol: String,
    pub role: String,
    pub sentiment: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceSummary {
    days: usize,
    filtered_posts: usize,
    resolved_predictions: usize,
    users: usize,
    calls_by_role: BTreeMap<String, usize>,
    classified_users_by_role: BTreeMap<String, usize>,
}

fn trace(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let panel = load_panel(p)?;
    let posts = load_posts_path(&p.dir(Stage::Ingest).join(POSTS_FILE))?.posts;
    let (days, store) = trace_all(&posts, &panel, &p.config.tracer)?;

    let calls_path = dir.join(CALLS_FILE);
    let mut calls = csv::Writer::from_writer(create(&calls_path)?);
    let log_path = dir.join(TRACK_LOG_FILE);
    let mut log = create(&log_path)?;
    write_track_log_header(&mut log).map_err(|e| Error::io(&log_path, e))?;
    let mut calls_by_role: BTreeMap<String, usize> = BTreeMap::new();
    let mut users_by_role: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let (mut filtered, mut resolved) = (0, 0);
    for (day, d) in days.iter().enumerate() {
        filtered += d.filtered_posts;
        resolved += d.resolved.len();
        for c in &d.calls {
            calls
                .serialize(CallRow {
                    date: panel.date(day).to_string(),
                    user_id: c.user_id.clone(),
                    symbol: c.symbol.clone(),
                    role: c.role.as_str().into(),
                    sentiment: c.sentiment.as_str().into(),
                })
                .map_err(csv_err)?;
            *calls_by_role.entry(c.role.as_str().into()).or_insert(0) += 1;
            users_by_role
                .entry(c.role.as_str().into())
                .or_default()
                .insert(c.user_id.clone());
        }
        append_track_log(&mut log, &d.resolved).map_err(|e| Error::io(&log_path, e))?;
    }
    calls.flush().map_err(|e| Error::io(&calls_path, e))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    write_json(&dir.join(SNAPSHOT_FILE), &store.snapshot())?;
    write_json(
        &dir.join(TRACE_SUMMARY),
        &TraceSummary {
            days: days.len(),
            filtered_posts: filtered,
            resolved_predictions: resolved,
            users: store.n_users(),
            calls_by_role,
            classified_users_by_role: users_by_role
                .into_iter()
                .map(|(k, v)| (k, v.len()))
                .collect(),
        },
    )?;
    Ok(vec![
        CALLS_FILE,
        TRACK_LOG_FILE,
        SNAPSHOT_FILE,
        TRACE_SUMMARY,
    ])
}

fn signals(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let panel = load_panel(p)?;
    let rows: Vec<CallRow> = read_csv(&p.dir(Stage::Trace).join(CALLS_FILE))?;
    let calls = rows
        .into_iter()
        .map(|r| {
            let bad = |what: &str| {
                Error::Format(format!(
                    "calls.csv: bad {what} in row for {} {}",
                    r.user_id, r.date
                ))
            };
            let date = r.date.parse().map_err(|_| bad("date"))?;
            Ok(ExpertCall {
                day: panel.day_of(date).ok_or_else(|| bad("date"))?,
                role: Role::parse(&r.role).ok_or_else(|| bad("role"))?,
                sentiment: Sentiment::parse(&r.sentiment).ok_or_else(|| bad("sentiment"))?,
                user_id: r.user_id,
                symbol: r.symbol,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = build_signal_rows(&calls, &panel, &p.config.signals);
    write_signals(create(&dir.join(SIGNALS_FILE))?, &out)?;
    Ok(vec![SIGNALS_FILE])
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    train_days: usize,
    validation_days: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_ic: Option<f64>,
    stop: StopReason,
}

fn summarize(
    train_days: usize,
    validation_days: usize,
    log: &[EpochLog],
    best_epoch: usize,
    stop: StopReason,
) -> TrainSummary {
    TrainSummary {
        train_days,
        validation_days,
        epochs_run: log.len(),
        best_epoch,
        best_val_ic: log
            .iter()
            .find(|e| e.epoch == best_epoch)
            .map(|e| e.val_ic)
            .filter(|v| v.is_finite()),
        stop,
    }
}

fn pretrain_stage(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let panel = load_panel(p)?;
    let cube = FeatureCube::build(&panel);
    let [pre, train, _, test] = day_ranges(p, &panel)?;
    if pre.len() < 2 {
        return Err(Error::Domain(
            "pretrain range needs at least two trading days".into(),
        ));
    }
    let sec = &p.config.pretrain;
    let n_val =
        ((pre.len() as f64 * sec.validation_share).round() as usize).clamp(1, pre.len() - 1);
    let split = pre.end - n_val;
    let seed = p.stage_seed(Stage::Pretrain);
    let mut mcfg = sec.model.clone();
    mcfg.seed = seed;
    if mcfg.input_dim == 0 {
        mcfg.input_dim = cube.dim();
    }
    let mut tcfg = sec.train.clone();
    tcfg.seed = seed.wrapping_add(1);
    let out = train_pretrain(
        MsLstm::new(mcfg)?,
        &panel,
        &cube,
        pre.start..split,
        split..pre.end,
        &tcfg,
    )?;
    save_checkpoint(
        &dir.join(MSLSTM_CKPT),
        pretrain::MODEL_NAME,
        &out.model.config,
        &out.model.params,
    )?;
    write_training_log(create(&dir.join(TRAINING_LOG))?, &out.log)?;
    let est = predict_days(&out.model, &panel, &cube, train.start..test.end)?;
    write_estimates(create(&dir.join(ESTIMATES_FILE))?, &est)?;
    write_json(
        &dir.join(TRAIN_SUMMARY),
        &summarize(split - pre.start, n_val, &out.log, out.best_epoch, out.stop),
    )?;
    Ok(vec![
        MSLSTM_CKPT,
        TRAINING_LOG,
        ESTIMATES_FILE,
        TRAIN_SUMMARY,
    ])
}

/// Both graphs of one day; nodes carrying an expert signal use the lower threshold.
fn day_graphs(
    p: &Pipeline,
    panel: &MarketPanel,
    table: &SignalTable,
    day: usize,
) -> Result<(Vec<bool>, StockGraph, StockGraph)> {
    let nodes = active_nodes(panel, day);
    let mask: Vec<bool> = nodes.iter().map(|&s| table.get(day, s).0 > 0.0).collect();
    let g_ind = build_industry_graph(panel, day, &nodes);
    let g_cor = build_correlation_graph(panel, day, &nodes, &mask, &p.config.graphs.thresholds)?;
    Ok((mask, g_ind, g_cor))
}

/// Content hash of a day's node set and both edge lists.
pub fn graph_digest(g_ind: &StockGraph, g_cor: &StockGraph) -> String {
    let mut s = String::new();
    for n in &g_ind.nodes {
        let _ = write!(s, "{n},");
    }
    for g in [g_ind, g_cor] {
        s.push('|');
        for (i, j) in g.edges() {
            let _ = write!(s, "{i}-{j},");
        }
    }
    sha256_bytes(s.as_bytes())
}

/// One day of `graph_stats.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStatsRow {
    pub date: String,
    pub nodes: usize,
    pub signal_nodes: usize,
    pub industry_edges: usize,
    pub correlation_edges: usize,
    pub coverage: f64,
    pub industry_reach: f64,
    pub extra_reach: f64,
    pub digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoverageSummary {
    days: usize,
    hops: usize,
    mean_signal_share: f64,
    mean_coverage: f64,
    mean_industry_reach: f64,
    mean_extra_reach: f64,
}

fn graphs(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let panel = load_panel(p)?;
    let table = load_signals(p, &panel)?;
    let [_, train, _, test] = day_ranges(p, &panel)?;
    let hops = p.config.graphs.coverage_hops;
    let edges_path = dir.join(EDGES_FILE);
    let mut edges = csv::Writer::from_writer(create(&edges_path)?);
    edges.write_record(EDGE_HEADER).map_err(csv_err)?;
    let mut rows = Vec::new();
    let mut share = Vec::new();
    for day in train.start..test.end {
        let (mask, g_ind, g_cor) = day_graphs(p, &panel, &table, day)?;
        let seeds: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let (industry_reach, extra_reach) = reach_stats(&g_ind, &g_cor)?;
        if !mask.is_empty() {
            share.push(seeds.len() as f64 / mask.len() as f64);
        }
        rows.push(GraphStatsRow {
            date: panel.date(day).to_string(),
            nodes: g_ind.n_nodes(),
            signal_nodes: seeds.len(),
            industry_edges: g_ind.n_edges(),
            correlation_edges: g_cor.n_edges(),
            coverage: coverage_report(&g_ind, &g_cor, &seeds, hops)?,
            industry_reach,
            extra_reach,
            digest: graph_digest(&g_ind, &g_cor),
        });
        if p.config.graphs.export_all_edges || day + 1 == test.end {
            write_edges(&mut edges, &panel, &g_ind)?;
            write_edges(&mut edges, &panel, &g_cor)?;
        }
    }
    edges.flush().map_err(|e| Error::io(&edges_path, e))?;
    write_csv(&dir.join(GRAPH_STATS), &rows)?;
    let col = |f: fn(&GraphStatsRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    write_json(
        &dir.join(COVERAGE_FILE),
        &CoverageSummary {
            days: rows.len(),
            hops,
            mean_signal_share: mean(&share),
            mean_coverage: col(|r| r.coverage),
            mean_industry_reach: col(|r| r.industry_reach),
            mean_extra_reach: col(|r| r.extra_reach),
        },
    )?;
    Ok(vec![GRAPH_STATS, COVERAGE_FILE, EDGES_FILE])
}

/// Everything DualGAT needs to assemble daily inputs.
struct Inputs {
    panel: MarketPanel,
    table: SignalTable,
    estimates: HashMap<(usize, usize), f64>,
    digests: HashMap<String, String>,
    ranges: [Range<usize>; 4],
}

fn load_inputs(p: &Pipeline) -> Result<Inputs> {
    let panel = load_panel(p)?;
    let table = load_signals(p, &panel)?;
    let mut estimates = HashMap::new();
    for r in read_estimates(open(&p.dir(Stage::Pretrain).join(ESTIMATES_FILE))?)? {
        let day = r.date.parse().ok().and_then(|d| panel.day_of(d));
        let sym = panel.symbol_index(&r.symbol);
        match (day, sym) {
            (Some(d), Some(s)) => {
                estimates.insert((d, s), r.estimate);
            }
            _ => {
                return Err(Error::Format(format!(
                    "estimates.csv: unknown row {} {}",
                    r.date, r.symbol
                )))
            }
        }
    }
    let digests = read_csv::<GraphStatsRow>(&p.dir(Stage::Graphs).join(GRAPH_STATS))?
        .into_iter()
        .map(|r| (r.date, r.digest))
        .collect();
    let ranges = day_ranges(p, &panel)?;
    Ok(Inputs {
        panel,
        table,
        estimates,
        digests,
        ranges,
    })
}

/// Daily DualGAT inputs: z-scored pretrain estimate (0 when missing), signal
/// availability and raw signal; graphs are rebuilt and checked against the
/// digests the graphs stage recorded.
fn day_sets(p: &Pipeline, inp: &Inputs, days: Range<usize>) -> Result<Vec<DaySet>> {
    let panel = &inp.panel;
    let mut out = Vec::new();
    for day in days {
        let (_, g_ind, g_cor) = day_graphs(p, panel, &inp.table, day)?;
        let date = panel.date(day).to_string();
        if inp.digests.get(&date) != Some(&graph_digest(&g_ind, &g_cor)) {
            return Err(Error::StaleArtifact {
                stage: Stage::Graphs.name().into(),
                detail: format!("graph for {date} no longer matches {GRAPH_STATS}"),
            });
        }
        let nodes = &g_ind.nodes;
        if nodes.len() < 2 {
            continue;
        }
        let mut features = Array2::zeros((nodes.len(), dualgat::INPUT_DIM));
        let have: Vec<(usize, f64)> = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| inp.estimates.get(&(day, s)).map(|v| (i, *v)))
            .collect();
        let z = zscore(&have.iter().map(|x| x.1).collect::<Vec<_>>());
        for ((i, _), zi) in have.iter().zip(z) {
            features[[*i, 0]] = zi;
        }
        let (mut labelled, mut returns) = (Vec::new(), Vec::new());
        for (i, &s) in nodes.iter().enumerate() {
            let (a, v) = inp.table.get(day, s);
            features[[i, 1]] = a;
            features[[i, 2]] = v;
            if let Some(r) = panel.forward_return(s, day, 1) {
                labelled.push(i);
                returns.push(r);
            }
        }
        out.push(DaySet {
            day,
            features,
            g_ind,
            g_cor,
            labelled,
            returns,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Scaling {
    /// Signals are divided by this before entering DualGAT.
    signal_rms: f64,
}

fn train(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let inp = load_inputs(p)?;
    let [_, tr, va, _] = inp.ranges.clone();
    let mut train_days = day_sets(p, &inp, tr)?;
    let mut val_days = day_sets(p, &inp, va)?;
    let rms = signal_rms(&train_days);
    scale_signals(&mut train_days, 1.0 / rms);
    scale_signals(&mut val_days, 1.0 / rms);
    let seed = p.stage_seed(Stage::Train);
    let sec = &p.config.dualgat;
    let mut mcfg = sec.model.clone();
    mcfg.seed = seed;
    let mut tcfg = sec.train.clone();
    tcfg.seed = seed.wrapping_add(1);
    let out = train_dualgat(DualGat::new(mcfg)?, &train_days, &val_days, &tcfg)?;
    save_checkpoint(
        &dir.join(DUALGAT_CKPT),
        dualgat::MODEL_NAME,
        &out.model.config,
        &out.model.params,
    )?;
    write_training_log(create(&dir.join(TRAINING_LOG))?, &out.log)?;
    write_json(&dir.join(SCALING_FILE), &Scaling { signal_rms: rms })?;
    write_json(
        &dir.join(TRAIN_SUMMARY),
        &summarize(
            train_days.len(),
            val_days.len(),
            &out.log,
            out.best_epoch,
            out.stop,
        ),
    )?;
    Ok(vec![
        DUALGAT_CKPT,
        TRAINING_LOG,
        SCALING_FILE,
        TRAIN_SUMMARY,
    ])
}

/// One labelled node on one test day in `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: String,
    pub symbol: String,
    pub dualgat: f64,
    pub wx: f64,
    pub pretrain: Option<f64>,
    pub realized: f64,
}

#[derive(Debug, Serialize)]
struct BetaRow<'a> {
    date: &'a str,
    symbol: &'a str,
    hop1_industry: f64,
    hop1_correlation: f64,
    hop2_industry: f64,
    hop2_correlation: f64,
}

fn backtest(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let inp = load_inputs(p)?;
    let panel = &inp.panel;
    let scaling: Scaling = read_json(&p.dir(Stage::Train).join(SCALING_FILE))?;
    let mut days = day_sets(p, &inp, inp.ranges[3].clone())?;
    scale_signals(&mut days, 1.0 / scaling.signal_rms);
    let (cfg, params) = load_checkpoint::<DualGatConfig>(
        &p.dir(Stage::Train).join(DUALGAT_CKPT),
        dualgat::MODEL_NAME,
    )?;
    let model = DualGat::from_parts(cfg, params)?;

    let mut preds: [Vec<DailyPrediction>; 3] = Default::default();
    let mut rows = Vec::new();
    let betas_path = dir.join(BETAS_FILE);
    let mut betas = csv::Writer::from_writer(create(&betas_path)?);
    for d in days.iter().filter(|d| !d.labelled.is_empty()) {
        let date = panel.date(d.day).to_string();
        let (dg, cache) = model.forward(d.features.view(), &d.g_ind, &d.g_cor)?;
        let wx = wx_predict(&d.g_ind, &d.g_cor, &d.features.column(2).to_vec())?;
        let symbols: Vec<String> = d
            .g_ind
            .nodes
            .iter()
            .map(|&s| panel.symbol(s).to_string())
            .collect();
        let (b1, b2) = cache.betas();
        for (i, sym) in symbols.iter().enumerate() {
            betas
                .serialize(BetaRow {
                    date: &date,
                    symbol: sym,
                    hop1_industry: b1[i].0,
                    hop1_correlation: b1[i].1,
                    hop2_industry: b2[i].0,
                    hop2_correlation: b2[i].1,
                })
                .map_err(csv_err)?;
        }
        let syms: Vec<String> = d.labelled.iter().map(|&i| symbols[i].clone()).collect();
        let pick = |v: &[f64]| d.labelled.iter().map(|&i| v[i]).collect::<Vec<_>>();
        preds[0].push(DailyPrediction::new(
            &date,
            syms.clone(),
            pick(&dg),
            d.returns.clone(),
        )?);
        preds[1].push(DailyPrediction::new(
            &date,
            syms.clone(),
            pick(&wx),
            d.returns.clone(),
        )?);
        let (mut ps, mut pv, mut pr) = (Vec::new(), Vec::new(), Vec::new());
        for (k, &i) in d.labelled.iter().enumerate() {
            let est = inp.estimates.get(&(d.day, d.g_ind.nodes[i])).copied();
            if let Some(e) = est {
                ps.push(symbols[i].clone());
                pv.push(e);
                pr.push(d.returns[k]);
            }
            rows.push(PredictionRow {
                date: date.clone(),
                symbol: symbols[i].clone(),
                dualgat: dg[i],
                wx: wx[i],
                pretrain: est,
                realized: d.returns[k],
            });
        }
        if !ps.is_empty() {
            preds[2].push(DailyPrediction::new(&date, ps, pv, pr)?);
        }
    }
    betas.flush().map_err(|e| Error::io(&betas_path, e))?;
    write_csv(&dir.join(PREDICTIONS_FILE), &rows)?;

    let mut files = vec![BETAS_FILE, PREDICTIONS_FILE];
    for ((model, report_file, daily_file), days) in BACKTEST_MODELS.iter().zip(&preds) {
        let r = run_backtest(model, days, &p.config.backtest)?;
        write_report_json(create(&dir.join(report_file))?, &r)?;
        write_daily_csv(create(&dir.join(daily_file))?, &r.daily)?;
        files.push(report_file);
        files.push(daily_file);
    }
    Ok(files)
}

/// The run summary written by the `report` stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub test_start: String,
    pub test_end: String,
    pub models: Vec<BacktestReport>,
    pub tracer: serde_json::Value,
    pub graphs: serde_json::Value,
    pub pretrain: serde_json::Value,
    pub dualgat: serde_json::Value,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn report(p: &Pipeline, dir: &Path) -> Result<Vec<&'static str>> {
    let bt = p.dir(Stage::Backtest);
    let models = BACKTEST_MODELS
        .iter()
        .map(|(_, f, _)| read_json::<BacktestReport>(&bt.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let [_, _, _, test] = p.config.dates.effective();
    let rep = RunReport {
        seed: p.config.seed,
        test_start: test.start.to_string(),
        test_end: test.end.to_string(),
        models,
        tracer: read_json(&p.dir(Stage::Trace).join(TRACE_SUMMARY))?,
        graphs: read_json(&p.dir(Stage::Graphs).join(COVERAGE_FILE))?,
        pretrain: read_json(&p.dir(Stage::Pretrain).join(TRAIN_SUMMARY))?,
        dualgat: read_json(&p.dir(Stage::Train).join(TRAIN_SUMMARY))?,
    };
    write_json(&dir.join(REPORT_JSON), &rep)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(
        md,
        "Seed {}, test window {} to {}.\n",
        rep.seed, rep.test_start, rep.test_end
    );
    let _ = writeln!(md, "| model | days | ACC | IC | RIC | ICIR | AR | SR |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
    for m in &rep.models {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            m.model,
            m.n_days,
            fmt_opt(m.acc),
            fmt_opt(m.ic_mean),
            fmt_opt(m.ric_mean),
            fmt_opt(m.icir),
            fmt_opt(m.ar),
            fmt_opt(m.sr)
        );
    }
    if let Some(c) = rep.models.first().map(|m| &m.conventions) {
        let _ = writeln!(
            md,
            "\nDecile {}, cost rate {} charged as {}; turnover is the {}; ICIR is {}.",
            c.decile, c.cost_rate, c.cost_rule, c.turnover_rule, c.icir_rule
        );
    }
    let _ = writeln!(md, "\n## Tracer\n\n```json\n{}\n```", pretty(&rep.tracer));
    let _ = writeln!(md, "\n## Graphs\n\n```json\n{}\n```", pretty(&rep.graphs));
    std::fs::write(dir.join(REPORT_MD), md).map_err(|e| Error::io(dir.join(REPORT_MD), e))?;
    Ok(vec![REPORT_JSON, REPORT_MD])
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphFlavor;

    #[test]
    fn digest_sees_edge_changes() {
        let nodes = vec![0, 1, 2];
        let gi = StockGraph::from_edges(0, GraphFlavor::Industry, nodes.clone(), [(0, 1)]);
        let gc = StockGraph::from_edges(0, GraphFlavor::Correlation, nodes.clone(), [(1, 2)]);
        let gc2 = StockGraph::from_edges(0, GraphFlavor::Correlation, nodes, [(0, 2)]);
        assert_eq!(graph_digest(&gi, &gc), graph_digest(&gi, &gc));
        assert_ne!(graph_digest(&gi, &gc), graph_digest(&gi, &gc2));
        assert_ne!(graph_digest(&gi, &gc), graph_digest(&gc, &gi));
    }

    #[test]
    fn missing_optionals_render_as_na() {
        assert_eq!(fmt_opt(None), "n/a");
        assert_eq!(fmt_opt(Some(0.12345)), "0.1235");
    }
}
