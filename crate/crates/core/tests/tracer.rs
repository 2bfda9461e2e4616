use std::collections::BTreeSet;

use chrono::Duration;

use expertgraph::data::{MarketPanel, PostRecord, Sentiment};
use expertgraph::synth::{generate_market_only, generate_world, realized_direction, WorldConfig};
use expertgraph::tracer::{
    assign_sessions, classify_user, close_time, filter_daily_latest, long_term_counts,
    recent_window, trace_all, trace_day, Role, SessionDay, TracerConfig, TrackStore,
};

fn small_world(seed: u64) -> WorldConfig {
    WorldConfig {
        n_symbols: 40,
        n_days: 300,
        n_mob: 10,
        n_bots: 3,
        n_spammers: 2,
        seed,
        ..WorldConfig::default()
    }
}

/// A post an hour before the close of `day`.
fn post_on(
    panel: &MarketPanel,
    cfg: &TracerConfig,
    user: &str,
    sym: usize,
    day: usize,
    s: Sentiment,
) -> PostRecord {
    PostRecord {
        post_id: format!("{user}-{day}-{sym}"),
        user_id: user.into(),
        symbol: panel.symbol(sym).into(),
        created_at: close_time(SessionDay::of(panel, day), cfg) - Duration::hours(1),
        sentiment: s,
    }
}

#[test]
fn cached_counters_match_recount() {
    let world = generate_world(&small_world(3)).unwrap();
    let cfg = TracerConfig::default();
    let sessions = assign_sessions(&world.posts, &world.panel);
    let mut store = TrackStore::new();
    let mut compared = 0;
    for (day, session) in sessions.iter().enumerate() {
        let trace = trace_day(session, &world.panel, &mut store, day, &cfg).unwrap();
        let at = SessionDay::of(&world.panel, day);
        let posters: BTreeSet<String> = filter_daily_latest(session, close_time(at, &cfg), &cfg)
            .into_iter()
            .map(|p| p.user_id)
            .collect();
        for u in &posters {
            let rec = store.get(u).unwrap();
            assert_eq!(
                rec.cached_recent_window(&cfg),
                recent_window(rec, at, &cfg),
                "{u} on day {day}"
            );
            assert_eq!(
                rec.cached_long_counts(),
                long_term_counts(rec, at, &cfg),
                "{u} on day {day}"
            );
            let want = classify_user(rec, at, &cfg).map_or(Role::None, |c| c.role);
            let got: BTreeSet<Role> = trace
                .calls
                .iter()
                .filter(|c| &c.user_id == u)
                .map(|c| c.role)
                .collect();
            match want {
                Role::None => assert!(got.is_empty(), "{u} on day {day}"),
                r => assert_eq!(got, BTreeSet::from([r]), "{u} on day {day}"),
            }
            compared += 1;
        }
    }
    assert!(compared > 1000);
}

#[test]
fn calls_ignore_later_posts() {
    let world = generate_world(&small_world(5)).unwrap();
    let cfg = TracerConfig::default();
    let (full, _) = trace_all(&world.posts, &world.panel, &cfg).unwrap();
    let t = 200;
    let cutoff = world.panel.date(t);
    let early: Vec<PostRecord> = world
        .posts
        .iter()
        .filter(|p| p.created_at.date_naive() <= cutoff)
        .cloned()
        .collect();
    let (part, _) = trace_all(&early, &world.panel, &cfg).unwrap();
    let n: usize = full[..=t].iter().map(|d| d.calls.len()).sum();
    assert!(n > 0);
    for day in 0..=t {
        assert_eq!(full[day].calls, part[day].calls, "day {day}");
    }
}

#[test]
fn shotgun_user_is_never_classified() {
    let cfg = TracerConfig::default();
    let panel = generate_market_only(&small_world(9)).unwrap();
    // perfectly accurate, but every call lands on a single day per burst
    let mut posts = Vec::new();
    for day in (0..panel.n_days()).step_by(10) {
        for s in 0..panel.n_symbols() {
            if let Some(dir) = realized_direction(&panel, s, day) {
                posts.push(post_on(&panel, &cfg, "shotgun", s, day, dir));
            }
        }
    }
    let (days, store) = trace_all(&posts, &panel, &cfg).unwrap();
    assert!(days.iter().all(|d| d.calls.is_empty()));
    let rec = store.get("shotgun").unwrap();
    assert!(rec.history().len() > 500);
}

#[test]
fn planted_oracle_users_are_found() {
    let cfg = TracerConfig::default();
    let panel = generate_market_only(&small_world(13)).unwrap();
    let mut posts = Vec::new();
    for day in 0..panel.n_days() {
        let s = day % panel.n_symbols();
        if let Some(dir) = realized_direction(&panel, s, day) {
            // a shade below perfect so the windows are not degenerate
            let miss = day % 10 == 0;
            let right = if miss { dir.flipped() } else { dir };
            posts.push(post_on(&panel, &cfg, "oracle", s, day, right));
            posts.push(post_on(&panel, &cfg, "contrarian", s, day, right.flipped()));
            posts.push(post_on(
                &panel,
                &cfg,
                "coin",
                s,
                day,
                if day % 2 == 0 { dir } else { dir.flipped() },
            ));
        }
    }
    let (days, _) = trace_all(&posts, &panel, &cfg).unwrap();
    let role_of = |u: &str| {
        days.iter()
            .flat_map(|d| &d.calls)
            .filter(|c| c.user_id == u)
            .last()
            .map(|c| c.role)
    };
    assert_eq!(role_of("oracle"), Some(Role::Expert));
    assert_eq!(role_of("contrarian"), Some(Role::InverseExpert));
    let coin_calls = days
        .iter()
        .flat_map(|d| &d.calls)
        .filter(|c| c.user_id == "coin")
        .count();
    assert_eq!(coin_calls, 0);
    // nobody is classified before enough long-term history exists
    let first = days.iter().position(|d| !d.calls.is_empty()).unwrap();
    assert!(first >= cfg.min_long_term_posts);
}
