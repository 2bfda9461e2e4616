use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::config::TracerConfig;
use super::store::{
    long_term_accuracy, recent_window, RecentWindow, ResolvedRecord, SessionDay, TrackStore,
    UserTrackRecord,
};
use crate::data::{MarketPanel, PostRecord, Sentiment};
use crate::error::Result;

// guards `>=`/`<=` threshold tests against rounding in 1 - P
const THRESHOLD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Expert,
    InverseExpert,
    None,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Expert => "Expert",
            Role::InverseExpert => "InverseExpert",
            Role::None => "None",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Expert" => Role::Expert,
            "InverseExpert" => Role::InverseExpert,
            "None" => Role::None,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub role: Role,
    pub a_recent: f64,
    pub a_long: f64,
    pub span_days: usize,
}

/// The three-way decision once both accuracies are known.
pub fn classify(
    a_recent: f64,
    a_long: f64,
    span_days: usize,
    cfg: &TracerConfig,
) -> Classification {
    let p1 = cfg.long_term_threshold;
    let p2 = cfg.recent_threshold;
    let role = if span_days < cfg.min_span_days {
        Role::None
    } else if a_recent >= p2 - THRESHOLD_EPS && a_long >= p1 - THRESHOLD_EPS {
        Role::Expert
    } else if a_recent <= 1.0 - p2 + THRESHOLD_EPS && a_long <= 1.0 - p1 + THRESHOLD_EPS {
        Role::InverseExpert
    } else {
        Role::None
    };
    Classification {
        role,
        a_recent,
        a_long,
        span_days,
    }
}

/// Classifies a user from their raw history; `None` if either window lacks history.
pub fn classify_user(
    user: &UserTrackRecord,
    at: SessionDay,
    cfg: &TracerConfig,
) -> Option<Classification> {
    let RecentWindow::Ready {
        accuracy,
        span_days,
        ..
    } = recent_window(user, at, cfg)
    else {
        return None;
    };
    let a_long = long_term_accuracy(user, at, cfg)?;
    Some(classify(accuracy, a_long, span_days, cfg))
}

fn classify_cached(
    user: &mut UserTrackRecord,
    at: SessionDay,
    cfg: &TracerConfig,
) -> Option<Classification> {
    user.advance(at, cfg);
    let RecentWindow::Ready {
        accuracy,
        span_days,
        ..
    } = user.cached_recent_window(cfg)
    else {
        return None;
    };
    let a_long = user.cached_long_term(cfg)?;
    Some(classify(accuracy, a_long, span_days, cfg))
}

/// Keeps, per `(user, symbol)`, the latest post at or before `close_time - cutoff`.
///
/// Output is ordered by `(user_id, symbol)`.
pub fn filter_daily_latest(
    posts: &[PostRecord],
    close_time: DateTime<Utc>,
    cfg: &TracerConfig,
) -> Vec<PostRecord> {
    let cutoff = close_time - Duration::seconds(cfg.cutoff_offset_secs);
    let mut latest: BTreeMap<(&str, &str), &PostRecord> = BTreeMap::new();
    for p in posts.iter().filter(|p| p.created_at <= cutoff) {
        latest
            .entry((p.user_id.as_str(), p.symbol.as_str()))
            .and_modify(|cur| {
                if (p.created_at, &p.post_id) > (cur.created_at, &cur.post_id) {
                    *cur = p;
                }
            })
            .or_insert(p);
    }
    latest.into_values().cloned().collect()
}

/// Buckets posts by trading session: the post's UTC date, or the next trading
/// day when that date is not one. Posts after the last session are dropped.
pub fn assign_sessions(posts: &[PostRecord], panel: &MarketPanel) -> Vec<Vec<PostRecord>> {
    let mut sessions = vec![Vec::new(); panel.n_days()];
    for p in posts {
        if let Some(day) = panel.day_on_or_after(p.created_at.date_naive()) {
            sessions[day].push(p.clone());
        }
    }
    sessions
}

pub fn close_time(at: SessionDay, cfg: &TracerConfig) -> DateTime<Utc> {
    at.date.and_time(cfg.market_close_utc).and_utc()
}

/// A classified user's call on one symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertCall {
    pub day: usize,
    pub user_id: String,
    pub symbol: String,
    pub role: Role,
    pub sentiment: Sentiment,
}

impl ExpertCall {
    /// Sentiment to act on: inverse experts are faded.
    pub fn effective_sentiment(&self) -> Sentiment {
        match self.role {
            Role::InverseExpert => self.sentiment.flipped(),
            _ => self.sentiment,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DayTrace {
    pub calls: Vec<ExpertCall>,
    /// Predictions whose outcome became known on this day.
    pub resolved: Vec<ResolvedRecord>,
    /// Posts retained after the daily filter.
    pub filtered_posts: usize,
}

/// Runs the tracing rule for one trading day.
///
/// Resolves outcomes that became known at `day`, classifies every user who
/// posted in the session from their history before `day`, emits their calls,
/// then appends the session's posts to the store as pending.
pub fn trace_day(
    session_posts: &[PostRecord],
    panel: &MarketPanel,
    store: &mut TrackStore,
    day: usize,
    cfg: &TracerConfig,
) -> Result<DayTrace> {
    let at = SessionDay::of(panel, day);
    let resolved = store.begin_day(day, panel, cfg)?;
    let filtered = filter_daily_latest(session_posts, close_time(at, cfg), cfg);

    let mut calls = Vec::new();
    let mut i = 0;
    while i < filtered.len() {
        let user_id = filtered[i].user_id.as_str();
        let mut j = i;
        while j < filtered.len() && filtered[j].user_id == user_id {
            j += 1;
        }
        let idx = store.entry(user_id);
        let rec = store.user_mut(idx);
        if let Some(c) = classify_cached(rec, at, cfg) {
            if c.role != Role::None {
                calls.extend(filtered[i..j].iter().map(|p| ExpertCall {
                    day,
                    user_id: p.user_id.clone(),
                    symbol: p.symbol.clone(),
                    role: c.role,
                    sentiment: p.sentiment,
                }));
            }
        }
        for p in &filtered[i..j] {
            rec.push_pending(at, &p.symbol, p.sentiment)?;
        }
        store.mark_pending(day, idx);
        i = j;
    }
    Ok(DayTrace {
        calls,
        resolved,
        filtered_posts: filtered.len(),
    })
}

/// Traces every calendar day in order over a fresh store.
pub fn trace_all(
    posts: &[PostRecord],
    panel: &MarketPanel,
    cfg: &TracerConfig,
) -> Result<(Vec<DayTrace>, TrackStore)> {
    cfg.validate()?;
    let sessions = assign_sessions(posts, panel);
    let mut store = TrackStore::new();
    let mut out = Vec::with_capacity(panel.n_days());
    for (day, session) in sessions.iter().enumerate() {
        out.push(trace_day(session, panel, &mut store, day, cfg)?);
    }
    Ok((out, store))
}
