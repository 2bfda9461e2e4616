use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{PlantedRole, RoleRow, WorldConfig};
use crate::data::{MarketPanel, PostRecord, Sentiment};

/// Regular posts land between 14:35 and 20:50 UTC; late ones after the cutoff.
const SESSION_START: u32 = 14 * 3600 + 35 * 60;
const SESSION_END: u32 = 20 * 3600 + 50 * 60;
const LATE_START: u32 = 20 * 3600 + 56 * 60;
const LATE_END: u32 = 21 * 3600 + 30 * 60;

fn at(date: NaiveDate, secs: u32) -> DateTime<Utc> {
    let t = NaiveTime::from_num_seconds_from_midnight_opt(secs % 86_400, 0).expect("in range");
    date.and_time(t).and_utc() + Duration::days(i64::from(secs / 86_400))
}

/// Sign of the return from close `day` to close `day + 1`, if it exists and is nonzero.
pub fn realized_direction(panel: &MarketPanel, symbol: usize, day: usize) -> Option<Sentiment> {
    let r = panel.forward_return(symbol, day, 1)?;
    if r > 0.0 {
        Some(Sentiment::Bullish)
    } else if r < 0.0 {
        Some(Sentiment::Bearish)
    } else {
        None
    }
}

fn coin(rng: &mut ChaCha8Rng) -> Sentiment {
    if rng.random_bool(0.5) {
        Sentiment::Bullish
    } else {
        Sentiment::Bearish
    }
}

/// The realised direction when `correct`, its opposite otherwise; a coin flip when unknown.
fn call(
    panel: &MarketPanel,
    symbol: usize,
    day: usize,
    correct: bool,
    rng: &mut ChaCha8Rng,
) -> Sentiment {
    match realized_direction(panel, symbol, day) {
        Some(s) if correct => s,
        Some(s) => s.flipped(),
        None => coin(rng),
    }
}

struct Draft {
    user: usize,
    symbol: usize,
    created_at: DateTime<Utc>,
    sentiment: Sentiment,
}

fn session_time(date: NaiveDate, late_prob: f64, rng: &mut ChaCha8Rng) -> DateTime<Utc> {
    if rng.random_bool(late_prob) {
        at(date, rng.random_range(LATE_START..LATE_END))
    } else {
        at(date, rng.random_range(SESSION_START..SESSION_END))
    }
}

/// Focused posting on a few symbols with per-post hit probability from `hit(k)`,
/// where `k` counts the user's earlier posts.
fn focused_user(
    user: usize,
    panel: &MarketPanel,
    cfg: &WorldConfig,
    first_day: usize,
    hit: &mut dyn FnMut(usize, &mut ChaCha8Rng) -> bool,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Draft>,
) {
    let universe: Vec<usize> = (0..panel.n_symbols()).collect();
    let focus: Vec<usize> = universe
        .choose_multiple(rng, cfg.expert_focus.min(universe.len()))
        .copied()
        .collect();
    let mut k = 0;
    for day in first_day..panel.n_days() {
        if !rng.random_bool(cfg.expert_post_prob) {
            continue;
        }
        let m = if rng.random_bool(0.3) { 2 } else { 1 };
        for &symbol in focus.choose_multiple(rng, m) {
            let correct = hit(k, rng);
            k += 1;
            let sentiment = call(panel, symbol, day, correct, rng);
            out.push(Draft {
                user,
                symbol,
                created_at: session_time(panel.date(day), cfg.late_post_prob, rng),
                sentiment,
            });
        }
    }
}

/// Posts for every planted user; `roles[u]` is the role of user index `u`.
pub fn generate_posts(
    panel: &MarketPanel,
    cfg: &WorldConfig,
    roles: &[PlantedRole],
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, String, DateTime<Utc>, Sentiment)> {
    let n = panel.n_symbols();
    let mut drafts = Vec::new();
    for (user, role) in roles.iter().enumerate() {
        match role {
            PlantedRole::Expert | PlantedRole::InverseExpert => {
                let p = if *role == PlantedRole::Expert {
                    cfg.expert_hit
                } else {
                    cfg.inverse_hit
                };
                focused_user(
                    user,
                    panel,
                    cfg,
                    0,
                    &mut |_, r| r.random_bool(p),
                    rng,
                    &mut drafts,
                );
            }
            PlantedRole::Lucky => {
                let streak = cfg.lucky_streak_posts;
                // exactly round(streak * hot) hits among the first `streak` posts
                let hits = (streak as f64 * cfg.lucky_hot_hit).round() as usize;
                let mut plan: Vec<bool> = (0..streak).map(|i| i < hits).collect();
                plan.shuffle(rng);
                let first = rng.random_range(0..(panel.n_days() / 4).max(1));
                let cold = cfg.mob_hit;
                focused_user(
                    user,
                    panel,
                    cfg,
                    first,
                    &mut |k, r| {
                        if k < streak {
                            plan[k]
                        } else {
                            r.random_bool(cold)
                        }
                    },
                    rng,
                    &mut drafts,
                );
            }
            PlantedRole::Mob => {
                for day in 0..panel.n_days() {
                    if !rng.random_bool(cfg.mob_post_prob) {
                        continue;
                    }
                    // react to the biggest recent movers in a random sample
                    let mut sample: Vec<usize> = (0..n)
                        .collect::<Vec<_>>()
                        .choose_multiple(rng, 20.min(n))
                        .copied()
                        .collect();
                    let last = |s: usize| {
                        day.checked_sub(1)
                            .and_then(|d| panel.daily_return(s, d))
                            .unwrap_or(0.0)
                            .abs()
                    };
                    sample.sort_by(|a, b| last(*b).total_cmp(&last(*a)).then(a.cmp(b)));
                    let m = rng.random_range(1..=3usize);
                    for &symbol in sample.iter().take(m) {
                        let correct = rng.random_bool(cfg.mob_hit);
                        let sentiment = call(panel, symbol, day, correct, rng);
                        drafts.push(Draft {
                            user,
                            symbol,
                            created_at: session_time(panel.date(day), 0.05, rng),
                            sentiment,
                        });
                    }
                    // occasional weekend chatter, scored against the next session
                    if rng.random_bool(0.05) {
                        let symbol = rng.random_range(0..n);
                        let date = panel.date(day) + Duration::days(1);
                        drafts.push(Draft {
                            user,
                            symbol,
                            created_at: at(date, rng.random_range(SESSION_START..SESSION_END)),
                            sentiment: coin(rng),
                        });
                    }
                }
            }
            PlantedRole::Bot => {
                let symbols: Vec<usize> = (0..n)
                    .collect::<Vec<_>>()
                    .choose_multiple(rng, 2.min(n))
                    .copied()
                    .collect();
                let secs = 15 * 3600 + 60 * (user as u32 % 240);
                for day in 0..panel.n_days() {
                    for &symbol in &symbols {
                        drafts.push(Draft {
                            user,
                            symbol,
                            created_at: at(panel.date(day), secs),
                            sentiment: Sentiment::Bullish,
                        });
                    }
                }
            }
            PlantedRole::Spammer => {
                let symbol = rng.random_range(0..n);
                for day in 0..panel.n_days() {
                    if !rng.random_bool(cfg.spam_day_prob) {
                        continue;
                    }
                    let count = rng.random_range(201..=240u32);
                    let start = 15 * 3600 + rng.random_range(0..3600u32);
                    let sentiment = coin(rng);
                    for i in 0..count {
                        drafts.push(Draft {
                            user,
                            symbol,
                            created_at: at(panel.date(day), start + 20 * i),
                            sentiment,
                        });
                    }
                }
            }
        }
    }
    drafts
        .into_iter()
        .map(|d| {
            (
                d.user,
                panel.symbol(d.symbol).to_string(),
                d.created_at,
                d.sentiment,
            )
        })
        .collect()
}

/// Shuffles users into ids and numbers posts in time order.
pub fn finalize(
    drafts: Vec<(usize, String, DateTime<Utc>, Sentiment)>,
    roles: &[PlantedRole],
    rng: &mut ChaCha8Rng,
) -> (Vec<PostRecord>, Vec<RoleRow>) {
    let mut ids: Vec<usize> = (0..roles.len()).collect();
    ids.shuffle(rng);
    let width = roles.len().to_string().len().max(4);
    let user_id = |u: usize| format!("u{:0width$}", ids[u]);
    let mut posts: Vec<PostRecord> = drafts
        .into_iter()
        .map(|(u, symbol, created_at, sentiment)| PostRecord {
            post_id: String::new(),
            user_id: user_id(u),
            symbol,
            created_at,
            sentiment,
        })
        .collect();
    posts.sort_by(|a, b| {
        (a.created_at, &a.user_id, &a.symbol).cmp(&(b.created_at, &b.user_id, &b.symbol))
    });
    for (i, p) in posts.iter_mut().enumerate() {
        p.post_id = format!("p{i:09}");
    }
    let mut rows: Vec<RoleRow> = roles
        .iter()
        .enumerate()
        .map(|(u, r)| RoleRow {
            user_id: user_id(u),
            role: *r,
        })
        .collect();
    rows.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    (posts, rows)
}
