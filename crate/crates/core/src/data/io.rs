//! Readers and writers for the on-disk formats.
//!
//! - posts: line-delimited JSON, fields `id`, `user_id`, `symbol`, `created_at` (RFC 3339), `sentiment`
//! - bars: CSV `date,symbol,open,high,low,close,volume[,f_*...]`
//! - sectors: CSV `symbol,gics_sector`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::types::{Bar, MarketPanel, PostRecord, Sentiment, UNKNOWN_SECTOR};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPost {
    id: String,
    user_id: String,
    symbol: String,
    created_at: String,
    sentiment: Option<String>,
}

#[derive(Debug, Serialize)]
struct PostOut<'a> {
    id: &'a str,
    user_id: &'a str,
    symbol: &'a str,
    created_at: String,
    sentiment: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct PostLoad {
    pub posts: Vec<PostRecord>,
    pub skipped: usize,
    pub lines: usize,
}

fn parse_post(line: &str) -> Option<PostRecord> {
    let raw: RawPost = serde_json::from_str(line).ok()?;
    let sentiment = Sentiment::parse(raw.sentiment.as_deref()?)?;
    let created_at = DateTime::parse_from_rfc3339(&raw.created_at)
        .ok()?
        .with_timezone(&Utc);
    if raw.user_id.is_empty() || raw.symbol.is_empty() {
        return None;
    }
    Some(PostRecord {
        post_id: raw.id,
        user_id: raw.user_id,
        symbol: raw.symbol,
        created_at,
        sentiment,
    })
}

/// Reads line-delimited posts, skipping malformed or unlabelled records.
///
/// Fails when more than half of the non-blank lines are unusable.
pub fn load_posts<R: Read>(source: R) -> Result<PostLoad> {
    let reader = BufReader::new(source);
    let mut out = PostLoad::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Format(format!("unreadable posts stream: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.lines += 1;
        match parse_post(line) {
            Some(p) => out.posts.push(p),
            None => out.skipped += 1,
        }
    }
    if out.lines > 0 && out.skipped * 2 > out.lines {
        return Err(Error::Format(format!(
            "{} of {} post records are malformed",
            out.skipped, out.lines
        )));
    }
    if out.skipped > 0 {
        log::warn!("skipped {} malformed or unlabelled posts", out.skipped);
    }
    out.posts.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
    Ok(out)
}

pub fn load_posts_path(path: &Path) -> Result<PostLoad> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    load_posts(f)
}

pub fn write_posts<W: Write>(sink: W, posts: &[PostRecord]) -> Result<()> {
    let mut w = BufWriter::new(sink);
    for p in posts {
        let out = PostOut {
            id: &p.post_id,
            user_id: &p.user_id,
            symbol: &p.symbol,
            created_at: p
                .created_at
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            sentiment: p.sentiment.as_str(),
        };
        serde_json::to_writer(&mut w, &out).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io("<posts>", e))?;
    }
    w.flush().map_err(|e| Error::io("<posts>", e))
}

#[derive(Debug, Clone)]
pub struct PanelLoad {
    pub panel: MarketPanel,
    /// Human-readable notes about rejected rows and unmapped symbols.
    pub diagnostics: Vec<String>,
    pub rejected_rows: usize,
    pub unknown_sector: Vec<String>,
}

/// Reads bars and sectors into a [`MarketPanel`].
///
/// Rows violating the price invariants are rejected with a diagnostic;
/// duplicate `(date, symbol)` rows are a hard format error.
pub fn load_panel<B: Read, S: Read>(bars_source: B, sectors_source: S) -> Result<PanelLoad> {
    let mut diagnostics = Vec::new();

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bars_source);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("bars header: {e}")))?
        .clone();
    let expected = ["date", "symbol", "open", "high", "low", "close", "volume"];
    if header.len() < expected.len() || expected.iter().zip(header.iter()).any(|(a, b)| *a != b) {
        return Err(Error::Format(format!(
            "bars header must start with {}, got {:?}",
            expected.join(","),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let fundamental_names: Vec<String> = header.iter().skip(7).map(str::to_string).collect();
    if let Some(bad) = fundamental_names.iter().find(|n| !n.starts_with("f_")) {
        return Err(Error::Format(format!(
            "extra bar column `{bad}` must be prefixed f_"
        )));
    }

    struct Row {
        date: NaiveDate,
        symbol: String,
        bar: Bar,
    }
    let mut rows = Vec::new();
    let mut seen: HashMap<(NaiveDate, String), usize> = HashMap::new();
    let mut duplicates = BTreeSet::new();
    let mut rejected = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("bars line {line}: {e}")))?;
        let parsed = (|| -> std::result::Result<Row, String> {
            if rec.len() != header.len() {
                return Err(format!(
                    "expected {} fields, got {}",
                    header.len(),
                    rec.len()
                ));
            }
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| format!("bad date `{}`: {e}", &rec[0]))?;
            let num = |j: usize| -> std::result::Result<f64, String> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| format!("bad number `{}` in column {}: {e}", &rec[j], &header[j]))
            };
            let bar = Bar {
                day: 0,
                open: num(2)?,
                high: num(3)?,
                low: num(4)?,
                close: num(5)?,
                volume: num(6)?,
                fundamentals: (7..rec.len())
                    .map(num)
                    .collect::<std::result::Result<_, _>>()?,
            };
            bar.validate()?;
            Ok(Row {
                date,
                symbol: rec[1].to_string(),
                bar,
            })
        })();
        match parsed {
            Ok(row) => {
                let key = (row.date, row.symbol.clone());
                if let Some(first) = seen.get(&key) {
                    duplicates.insert(format!("{} {} (lines {first} and {line})", key.0, key.1));
                } else {
                    seen.insert(key, line);
                    rows.push(row);
                }
            }
            Err(msg) => {
                rejected += 1;
                diagnostics.push(format!("bars line {line} rejected: {msg}"));
            }
        }
    }
    if !duplicates.is_empty() {
        return Err(Error::Format(format!(
            "duplicate (date, symbol) rows: {}",
            duplicates.into_iter().collect::<Vec<_>>().join("; ")
        )));
    }

    let mut sector_map = BTreeMap::new();
    let mut srdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(sectors_source);
    let sh = srdr
        .headers()
        .map_err(|e| Error::Format(format!("sectors header: {e}")))?
        .clone();
    if sh.len() != 2 || &sh[0] != "symbol" || &sh[1] != "gics_sector" {
        return Err(Error::Format(
            "sectors header must be `symbol,gics_sector`".into(),
        ));
    }
    for rec in srdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("sectors: {e}")))?;
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(Error::Format(format!("malformed sectors row {:?}", rec)));
        }
        let label = if rec[1].is_empty() {
            UNKNOWN_SECTOR
        } else {
            &rec[1]
        };
        sector_map.insert(rec[0].to_string(), label.to_string());
    }

    let calendar: Vec<NaiveDate> = rows
        .iter()
        .map(|r| r.date)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let symbols: Vec<String> = rows
        .iter()
        .map(|r| r.symbol.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sym_idx: HashMap<&str, usize> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut bars: Vec<Vec<Option<Bar>>> = vec![vec![None; calendar.len()]; symbols.len()];
    for row in rows {
        let d = calendar
            .binary_search(&row.date)
            .expect("date collected above");
        let s = sym_idx[row.symbol.as_str()];
        let mut bar = row.bar;
        bar.day = d;
        bars[s][d] = Some(bar);
    }
    let mut unknown_sector = Vec::new();
    let sectors = symbols
        .iter()
        .map(|s| match sector_map.get(s) {
            Some(sec) => sec.clone(),
            None => {
                unknown_sector.push(s.clone());
                UNKNOWN_SECTOR.to_string()
            }
        })
        .collect();
    for s in &unknown_sector {
        log::warn!("symbol {s} has no sector mapping; assigned {UNKNOWN_SECTOR}");
        diagnostics.push(format!(
            "symbol {s} has no sector mapping; assigned {UNKNOWN_SECTOR}"
        ));
    }

    let panel = MarketPanel::new(calendar, symbols, sectors, fundamental_names, bars)?;
    Ok(PanelLoad {
        panel,
        diagnostics,
        rejected_rows: rejected,
        unknown_sector,
    })
}

pub fn load_panel_paths(bars: &Path, sectors: &Path) -> Result<PanelLoad> {
    let b = File::open(bars).map_err(|e| Error::io(bars, e))?;
    let s = File::open(sectors).map_err(|e| Error::io(sectors, e))?;
    load_panel(b, s)
}

pub fn write_bars<W: Write>(sink: W, panel: &MarketPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["date", "symbol", "open", "high", "low", "close", "volume"];
    header.extend(panel.fundamental_names().iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for day in 0..panel.n_days() {
        let date = panel.date(day).format("%Y-%m-%d").to_string();
        for s in 0..panel.n_symbols() {
            if let Some(b) = panel.bar(s, day) {
                let mut rec = vec![
                    date.clone(),
                    panel.symbol(s).to_string(),
                    fmt_num(b.open),
                    fmt_num(b.high),
                    fmt_num(b.low),
                    fmt_num(b.close),
                    fmt_num(b.volume),
                ];
                rec.extend(b.fundamentals.iter().map(|v| fmt_num(*v)));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<bars>", e))
}

pub fn write_sectors<W: Write>(sink: W, panel: &MarketPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["symbol", "gics_sector"]).map_err(csv_err)?;
    for s in 0..panel.n_symbols() {
        w.write_record([panel.symbol(s), panel.sector(s)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<sectors>", e))
}

/// Shortest representation that round-trips exactly.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
