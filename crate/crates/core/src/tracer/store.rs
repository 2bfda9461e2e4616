//! Per-user prediction history with incrementally maintained accuracy counters.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::config::TracerConfig;
use crate::data::{MarketPanel, ReturnRatio, Sentiment};
use crate::error::{Error, Result};

/// A trading day addressed both by calendar index and by date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionDay {
    pub index: usize,
    pub date: NaiveDate,
}

impl SessionDay {
    pub fn of(panel: &MarketPanel, index: usize) -> Self {
        Self {
            index,
            date: panel.date(index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Correct,
    Incorrect,
    Excluded,
}

impl Outcome {
    pub fn is_scoreable(self) -> bool {
        matches!(self, Outcome::Correct | Outcome::Incorrect)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pending => "Pending",
            Outcome::Correct => "Correct",
            Outcome::Incorrect => "Incorrect",
            Outcome::Excluded => "Excluded",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Pending" => Outcome::Pending,
            "Correct" => Outcome::Correct,
            "Incorrect" => Outcome::Incorrect,
            "Excluded" => Outcome::Excluded,
            _ => return None,
        })
    }
}

/// Scores one call against the realised return over the outcome horizon.
///
/// A zero return counts for neither side; a missing return (symbol not traded)
/// is excluded as well.
pub fn evaluate_prediction(sentiment: Sentiment, next_return: Option<ReturnRatio>) -> Outcome {
    let Some(r) = next_return.map(ReturnRatio::value) else {
        log::debug!("no next-day return available; outcome excluded");
        return Outcome::Excluded;
    };
    match sentiment {
        _ if r == 0.0 => Outcome::Excluded,
        Sentiment::Bullish if r > 0.0 => Outcome::Correct,
        Sentiment::Bearish if r < 0.0 => Outcome::Correct,
        _ => Outcome::Incorrect,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedPost {
    pub day: usize,
    pub date: NaiveDate,
    pub symbol: String,
    pub sentiment: Sentiment,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub correct: usize,
    pub incorrect: usize,
}

impl Counters {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect
    }

    /// `T / (T + F)`, undefined on an empty window.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.correct as f64 / self.total() as f64)
    }

    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::Incorrect => self.incorrect += 1,
            _ => {}
        }
    }

    fn remove(&mut self, o: Outcome) {
        match o {
            Outcome::Correct => self.correct -= 1,
            Outcome::Incorrect => self.incorrect -= 1,
            _ => {}
        }
    }
}

/// Result of evaluating the recent-posts window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecentWindow {
    Ready {
        accuracy: f64,
        span_days: usize,
        counts: Counters,
    },
    NotEnoughHistory,
}

/// Whether a stored post may be used when evaluating on `at`.
fn usable(p: &TrackedPost, at: SessionDay, cfg: &TracerConfig) -> bool {
    p.day + cfg.horizon_days <= at.index && p.outcome.is_scoreable()
}

/// One user's prediction history plus cached window counters.
#[derive(Debug, Clone)]
pub struct UserTrackRecord {
    pub user_id: String,
    history: Vec<TrackedPost>,
    // index of the first post whose outcome is still pending
    frontier: usize,
    recent: VecDeque<usize>,
    recent_counts: Counters,
    long: VecDeque<usize>,
    long_counts: Counters,
}

impl UserTrackRecord {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            history: Vec::new(),
            frontier: 0,
            recent: VecDeque::new(),
            recent_counts: Counters::default(),
            long: VecDeque::new(),
            long_counts: Counters::default(),
        }
    }

    pub fn history(&self) -> &[TrackedPost] {
        &self.history
    }

    /// Appends a post as `Pending`. History must stay ordered by day.
    pub fn push_pending(
        &mut self,
        day: SessionDay,
        symbol: &str,
        sentiment: Sentiment,
    ) -> Result<()> {
        if let Some(last) = self.history.last() {
            if last.day > day.index {
                return Err(Error::Consistency(format!(
                    "user {} history would go backwards (day {} after {})",
                    self.user_id, day.index, last.day
                )));
            }
        }
        self.history.push(TrackedPost {
            day: day.index,
            date: day.date,
            symbol: symbol.to_string(),
            sentiment,
            outcome: Outcome::Pending,
        });
        Ok(())
    }

    /// Resolves every pending post dated at or before `posted_day`.
    fn resolve_through(
        &mut self,
        posted_day: usize,
        panel: &MarketPanel,
        cfg: &TracerConfig,
        out: &mut Vec<ResolvedRecord>,
    ) {
        while self.frontier < self.history.len() && self.history[self.frontier].day <= posted_day {
            let idx = self.frontier;
            let p = &mut self.history[idx];
            let ret = panel
                .symbol_index(&p.symbol)
                .and_then(|s| panel.forward_return_ratio(s, p.day, cfg.horizon_days));
            if ret.is_none() {
                log::debug!(
                    "{} {} on {}: no return over horizon, excluded",
                    self.user_id,
                    p.symbol,
                    p.date
                );
            }
            p.outcome = evaluate_prediction(p.sentiment, ret);
            out.push(ResolvedRecord {
                user_id: self.user_id.clone(),
                day: p.day,
                date: p.date,
                symbol: p.symbol.clone(),
                sentiment: p.sentiment,
                outcome: p.outcome,
            });
            self.admit(idx, cfg);
            self.frontier += 1;
        }
    }

    // feeds a freshly resolved post into the cached windows
    fn admit(&mut self, idx: usize, cfg: &TracerConfig) {
        let o = self.history[idx].outcome;
        if !o.is_scoreable() {
            return;
        }
        self.recent.push_back(idx);
        self.recent_counts.add(o);
        if self.recent.len() > cfg.recent_posts {
            let old = self.recent.pop_front().expect("non-empty");
            self.recent_counts.remove(self.history[old].outcome);
        }
        self.long.push_back(idx);
        self.long_counts.add(o);
    }

    /// Evicts long-window posts that fall before the window for `at`.
    pub fn advance(&mut self, at: SessionDay, cfg: &TracerConfig) {
        let start = at.date - Duration::days(cfg.long_term_calendar_days());
        while let Some(&front) = self.long.front() {
            if self.history[front].date >= start {
                break;
            }
            self.long.pop_front();
            self.long_counts.remove(self.history[front].outcome);
        }
    }

    pub fn cached_recent_counts(&self) -> Counters {
        self.recent_counts
    }

    pub fn cached_long_counts(&self) -> Counters {
        self.long_counts
    }

    /// Recent window from the cached counters. Valid once resolved through `at`.
    pub fn cached_recent_window(&self, cfg: &TracerConfig) -> RecentWindow {
        if self.recent.len() < cfg.recent_posts {
            return RecentWindow::NotEnoughHistory;
        }
        let mut days: Vec<usize> = self.recent.iter().map(|&i| self.history[i].day).collect();
        days.dedup();
        RecentWindow::Ready {
            accuracy: self.recent_counts.accuracy().expect("window is full"),
            span_days: days.len(),
            counts: self.recent_counts,
        }
    }

    /// Long-term accuracy from the cached counters. Call [`advance`](Self::advance) first.
    pub fn cached_long_term(&self, cfg: &TracerConfig) -> Option<f64> {
        if self.long_counts.total() < cfg.min_long_term_posts {
            return None;
        }
        self.long_counts.accuracy()
    }
}

/// Recent-window accuracy recomputed from the raw history.
///
/// Uses the most recent `N` scoreable posts dated strictly before `at`
/// whose outcome was knowable by `at`.
pub fn recent_window(user: &UserTrackRecord, at: SessionDay, cfg: &TracerConfig) -> RecentWindow {
    let picked: Vec<&TrackedPost> = user
        .history
        .iter()
        .rev()
        .filter(|p| usable(p, at, cfg))
        .take(cfg.recent_posts)
        .collect();
    if picked.len() < cfg.recent_posts {
        return RecentWindow::NotEnoughHistory;
    }
    let mut counts = Counters::default();
    for p in &picked {
        counts.add(p.outcome);
    }
    let mut days: Vec<usize> = picked.iter().map(|p| p.day).collect();
    days.sort_unstable();
    days.dedup();
    RecentWindow::Ready {
        accuracy: counts.accuracy().expect("non-empty"),
        span_days: days.len(),
        counts,
    }
}

/// Long-term counters recomputed from the raw history: scoreable posts dated in
/// `[at - T*365 days, at)`.
pub fn long_term_counts(user: &UserTrackRecord, at: SessionDay, cfg: &TracerConfig) -> Counters {
    let start = at.date - Duration::days(cfg.long_term_calendar_days());
    let mut counts = Counters::default();
    for p in user
        .history
        .iter()
        .filter(|p| p.date >= start && usable(p, at, cfg))
    {
        counts.add(p.outcome);
    }
    counts
}

/// Long-term accuracy, `None` when fewer than the minimum scoreable posts exist.
pub fn long_term_accuracy(
    user: &UserTrackRecord,
    at: SessionDay,
    cfg: &TracerConfig,
) -> Option<f64> {
    let counts = long_term_counts(user, at, cfg);
    if counts.total() < cfg.min_long_term_posts {
        return None;
    }
    counts.accuracy()
}

/// One resolved prediction, as written to the append-only log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedRecord {
    pub user_id: String,
    pub day: usize,
    pub date: NaiveDate,
    pub symbol: String,
    pub sentiment: Sentiment,
    pub outcome: Outcome,
}

pub const TRACK_LOG_HEADER: &str = "# expertgraph track-log v1";
const TRACK_LOG_COLUMNS: &str = "user_id,day,date,symbol,sentiment,outcome";

/// Writes the versioned header of a track log.
pub fn write_track_log_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACK_LOG_HEADER}")?;
    writeln!(w, "{TRACK_LOG_COLUMNS}")
}

pub fn append_track_log<W: Write>(mut w: W, records: &[ResolvedRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.user_id,
            r.day,
            r.date,
            r.symbol,
            r.sentiment.as_str(),
            r.outcome.as_str()
        )?;
    }
    Ok(())
}

pub fn read_track_log<R: BufRead>(r: R) -> Result<Vec<ResolvedRecord>> {
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::Format(format!("track log: {e}")))
    };
    if next()?.as_deref() != Some(TRACK_LOG_HEADER) {
        return Err(Error::Format(
            "track log: missing or unsupported version header".into(),
        ));
    }
    if next()?.as_deref() != Some(TRACK_LOG_COLUMNS) {
        return Err(Error::Format("track log: unexpected column header".into()));
    }
    let mut out = Vec::new();
    while let Some(line) = next()? {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("track log: bad record `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        out.push(ResolvedRecord {
            user_id: f[0].to_string(),
            day: f[1].parse().map_err(|_| bad())?,
            date: f[2].parse().map_err(|_| bad())?,
            symbol: f[3].to_string(),
            sentiment: Sentiment::parse(f[4]).ok_or_else(bad)?,
            outcome: Outcome::parse(f[5]).ok_or_else(bad)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub format: String,
    pub version: u32,
    pub last_day: Option<usize>,
    pub users: Vec<UserSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSnapshot {
    pub user_id: String,
    pub history: Vec<TrackedPost>,
}

const SNAPSHOT_FORMAT: &str = "expertgraph-track-snapshot";

/// All user records. Days must be processed in strictly increasing order.
#[derive(Debug, Clone, Default)]
pub struct TrackStore {
    users: Vec<UserTrackRecord>,
    index: HashMap<String, usize>,
    // (posted day, users with posts pending from that day)
    pending: VecDeque<(usize, Vec<usize>)>,
    last_day: Option<usize>,
    lookups: u64,
}

impl TrackStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_day(&self) -> Option<usize> {
        self.last_day
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &UserTrackRecord> {
        self.users.iter()
    }

    pub fn get(&self, user_id: &str) -> Option<&UserTrackRecord> {
        self.index.get(user_id).map(|&i| &self.users[i])
    }

    /// Number of per-user lookups performed by [`entry`](Self::entry).
    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    /// Index of the user's record, creating it if needed. Counts one lookup.
    pub(crate) fn entry(&mut self, user_id: &str) -> usize {
        self.lookups += 1;
        if let Some(&i) = self.index.get(user_id) {
            return i;
        }
        let i = self.users.len();
        self.users.push(UserTrackRecord::new(user_id));
        self.index.insert(user_id.to_string(), i);
        i
    }

    pub(crate) fn user_mut(&mut self, idx: usize) -> &mut UserTrackRecord {
        &mut self.users[idx]
    }

    pub(crate) fn mark_pending(&mut self, day: usize, user: usize) {
        match self.pending.back_mut() {
            Some((d, users)) if *d == day => {
                if users.last() != Some(&user) {
                    users.push(user);
                }
            }
            _ => self.pending.push_back((day, vec![user])),
        }
    }

    /// Resolves every post whose outcome became known at `day`, and records
    /// `day` as processed.
    pub(crate) fn begin_day(
        &mut self,
        day: usize,
        panel: &MarketPanel,
        cfg: &TracerConfig,
    ) -> Result<Vec<ResolvedRecord>> {
        if let Some(last) = self.last_day {
            if day <= last {
                return Err(Error::Consistency(format!(
                    "days must be traced in increasing order (got {day} after {last})"
                )));
            }
        }
        let mut resolved = Vec::new();
        while let Some((posted, _)) = self.pending.front() {
            let due = posted + cfg.horizon_days;
            if due > day {
                break;
            }
            if due < day {
                return Err(Error::Consistency(format!(
                    "posts from day {posted} are still pending at day {day}"
                )));
            }
            let (posted, users) = self.pending.pop_front().expect("front exists");
            for u in users {
                self.users[u].resolve_through(posted, panel, cfg, &mut resolved);
            }
        }
        self.last_day = Some(day);
        Ok(resolved)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: 1,
            last_day: self.last_day,
            users: self
                .users
                .iter()
                .map(|u| UserSnapshot {
                    user_id: u.user_id.clone(),
                    history: u.history.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a store (including cached counters) from a snapshot.
    pub fn restore(snap: &StoreSnapshot, cfg: &TracerConfig) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT || snap.version != 1 {
            return Err(Error::Format(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        let mut store = TrackStore {
            last_day: snap.last_day,
            ..Default::default()
        };
        let mut pending: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for u in &snap.users {
            let idx = store.users.len();
            let mut rec = UserTrackRecord::new(u.user_id.clone());
            rec.history = u.history.clone();
            while rec.frontier < rec.history.len()
                && rec.history[rec.frontier].outcome != Outcome::Pending
            {
                let i = rec.frontier;
                rec.admit(i, cfg);
                rec.frontier += 1;
            }
            if rec.history[rec.frontier..]
                .iter()
                .any(|p| p.outcome != Outcome::Pending)
            {
                return Err(Error::Consistency(format!(
                    "user {} has resolved posts after pending ones",
                    u.user_id
                )));
            }
            for p in &rec.history[rec.frontier..] {
                let users = pending.entry(p.day).or_default();
                if users.last() != Some(&idx) {
                    users.push(idx);
                }
            }
            store.index.insert(u.user_id.clone(), idx);
            store.users.push(rec);
        }
        store.pending = pending.into_iter().collect();
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_outcomes() {
        let r = |v: f64| crate::data::compute_return(100.0, 100.0 * (1.0 + v)).ok();
        assert_eq!(
            evaluate_prediction(Sentiment::Bullish, r(0.01)),
            Outcome::Correct
        );
        assert_eq!(
            evaluate_prediction(Sentiment::Bearish, r(0.01)),
            Outcome::Incorrect
        );
        assert_eq!(
            evaluate_prediction(Sentiment::Bearish, r(-0.01)),
            Outcome::Correct
        );
        assert_eq!(
            evaluate_prediction(Sentiment::Bullish, r(0.0)),
            Outcome::Excluded
        );
        assert_eq!(
            evaluate_prediction(Sentiment::Bullish, None),
            Outcome::Excluded
        );
    }

    fn day(i: usize) -> SessionDay {
        SessionDay {
            index: i,
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Duration::days(i as i64),
        }
    }

    fn user_with(outcomes: &[(usize, Outcome)]) -> UserTrackRecord {
        let mut u = UserTrackRecord::new("u");
        for &(d, o) in outcomes {
            u.push_pending(day(d), "AAA", Sentiment::Bullish).unwrap();
            u.history.last_mut().unwrap().outcome = o;
        }
        u
    }

    #[test]
    fn recent_window_ratio_and_gate() {
        let cfg = TracerConfig::default();
        let mut posts: Vec<(usize, Outcome)> = (0..20)
            .map(|i| {
                (
                    i,
                    if i < 16 {
                        Outcome::Correct
                    } else {
                        Outcome::Incorrect
                    },
                )
            })
            .collect();
        let u = user_with(&posts);
        match recent_window(&u, day(30), &cfg) {
            RecentWindow::Ready {
                accuracy,
                span_days,
                ..
            } => {
                assert!((accuracy - 0.8).abs() < 1e-15);
                assert_eq!(span_days, 20);
            }
            other => panic!("{other:?}"),
        }
        posts.pop();
        let u = user_with(&posts);
        assert_eq!(
            recent_window(&u, day(30), &cfg),
            RecentWindow::NotEnoughHistory
        );
    }

    #[test]
    fn recent_span_counts_distinct_days() {
        let cfg = TracerConfig::default();
        let posts: Vec<(usize, Outcome)> = (0..20).map(|i| (i / 7, Outcome::Correct)).collect();
        let u = user_with(&posts);
        match recent_window(&u, day(10), &cfg) {
            RecentWindow::Ready { span_days, .. } => assert_eq!(span_days, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn excluded_and_pending_posts_do_not_count() {
        let cfg = TracerConfig::default();
        let mut posts: Vec<(usize, Outcome)> = (0..20).map(|i| (i, Outcome::Correct)).collect();
        posts.insert(5, (5, Outcome::Excluded));
        posts.push((25, Outcome::Pending));
        let u = user_with(&posts);
        match recent_window(&u, day(30), &cfg) {
            RecentWindow::Ready { counts, .. } => assert_eq!(counts.total(), 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_term_accuracy_examples() {
        let cfg = TracerConfig::default();
        // 100 posts spread over two years, 60 correct
        let posts: Vec<(usize, Outcome)> = (0..100)
            .map(|i| {
                (
                    i * 7,
                    if i % 5 < 3 {
                        Outcome::Correct
                    } else {
                        Outcome::Incorrect
                    },
                )
            })
            .collect();
        let u = user_with(&posts);
        let at = day(700);
        assert!((long_term_accuracy(&u, at, &cfg).unwrap() - 0.60).abs() < 1e-15);

        let u = user_with(&posts[..30]);
        assert_eq!(long_term_accuracy(&u, day(300), &cfg), None);

        // a post dated on the evaluation day itself is never part of the window
        let mut posts: Vec<(usize, Outcome)> = (0..40).map(|i| (i, Outcome::Incorrect)).collect();
        posts.push((50, Outcome::Correct));
        let u = user_with(&posts);
        let c = long_term_counts(&u, day(50), &cfg);
        assert_eq!(c.correct, 0);
        assert_eq!(c.total(), 40);
    }

    #[test]
    fn long_term_window_starts_two_years_back() {
        let cfg = TracerConfig::default();
        let posts: Vec<(usize, Outcome)> = (0..50).map(|i| (i, Outcome::Correct)).collect();
        let u = user_with(&posts);
        // window for day 739 starts at day 9
        let c = long_term_counts(&u, day(739), &cfg);
        assert_eq!(c.total(), 41);
    }

    #[test]
    fn track_log_round_trip() {
        let recs = vec![ResolvedRecord {
            user_id: "u1".into(),
            day: 3,
            date: day(3).date,
            symbol: "AAA".into(),
            sentiment: Sentiment::Bearish,
            outcome: Outcome::Correct,
        }];
        let mut buf = Vec::new();
        write_track_log_header(&mut buf).unwrap();
        append_track_log(&mut buf, &recs).unwrap();
        assert_eq!(read_track_log(buf.as_slice()).unwrap(), recs);
        assert!(read_track_log("user_id\n".as_bytes()).is_err());
    }
}
