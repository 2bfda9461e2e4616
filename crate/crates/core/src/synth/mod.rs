//! Seeded synthetic market and posting population with planted user roles.
//!
//! The role table is ground truth for scoring and is written to its own file;
//! nothing downstream of ingestion reads it.

mod market;
mod posts;
mod spillover;

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{csv_err, write_bars, write_posts, write_sectors, MarketPanel, PostRecord};
use crate::error::{Error, Result};

pub use market::{
    business_days, calibrate_spillover, generate_market, market_summary, sector_share,
    symbol_names, within_sector_sign_agreement, MarketSummary, FUNDAMENTALS,
};
pub use posts::realized_direction;
pub use spillover::{spillover_scenario, SpilloverConfig, SpilloverScenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_symbols: usize,
    pub n_days: usize,
    pub n_sectors: usize,
    pub start_date: NaiveDate,
    pub n_experts: usize,
    pub n_inverse: usize,
    pub n_mob: usize,
    pub n_bots: usize,
    pub n_spammers: usize,
    pub n_lucky: usize,
    /// Per-post probability that the call matches the realised next-day sign.
    pub expert_hit: f64,
    pub inverse_hit: f64,
    pub mob_hit: f64,
    /// Hit rate over a lucky user's first `lucky_streak_posts` posts.
    pub lucky_hot_hit: f64,
    pub lucky_streak_posts: usize,
    /// Symbols an expert, inverse expert or lucky user follows.
    pub expert_focus: usize,
    /// Daily posting probability of focused users.
    pub expert_post_prob: f64,
    pub mob_post_prob: f64,
    /// Share of a focused user's posts sent after the daily cutoff.
    pub late_post_prob: f64,
    /// Daily probability that a spammer floods its symbol.
    pub spam_day_prob: f64,
    /// Same-sector co-movement; plain members agree in sign with probability `0.5 + s / 2`.
    pub spillover: f64,
    /// Share of symbols loading on one cross-sector theme factor.
    pub theme_fraction: f64,
    /// Theme factor variance share of theme members.
    pub theme_strength: f64,
    pub volatility: f64,
    /// Loading of the next-day return on the lagged `f_alpha` column.
    pub alpha_strength: f64,
    pub alpha_persistence: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_symbols: 500,
            n_days: 750,
            n_sectors: 5,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 2).expect("valid date"),
            n_experts: 5,
            n_inverse: 5,
            n_mob: 50,
            n_bots: 20,
            n_spammers: 5,
            n_lucky: 3,
            expert_hit: 0.85,
            inverse_hit: 0.15,
            mob_hit: 0.5,
            lucky_hot_hit: 0.9,
            lucky_streak_posts: 20,
            expert_focus: 6,
            expert_post_prob: 0.5,
            mob_post_prob: 0.3,
            late_post_prob: 0.03,
            spam_day_prob: 0.2,
            spillover: 0.565,
            theme_fraction: 0.35,
            theme_strength: 0.88,
            volatility: 0.02,
            alpha_strength: 0.15,
            alpha_persistence: 0.9,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("expert_hit", self.expert_hit),
            ("inverse_hit", self.inverse_hit),
            ("mob_hit", self.mob_hit),
            ("lucky_hot_hit", self.lucky_hot_hit),
            ("expert_post_prob", self.expert_post_prob),
            ("mob_post_prob", self.mob_post_prob),
            ("late_post_prob", self.late_post_prob),
            ("spam_day_prob", self.spam_day_prob),
            ("spillover", self.spillover),
            ("theme_fraction", self.theme_fraction),
            ("theme_strength", self.theme_strength),
            ("alpha_strength", self.alpha_strength),
            ("alpha_persistence", self.alpha_persistence),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.n_symbols == 0 || self.n_days < 2 || self.n_sectors == 0 {
            return Err(Error::Config(
                "world needs symbols, sectors and at least two days".into(),
            ));
        }
        if !(self.volatility > 0.0 && self.volatility < 0.2) {
            return Err(Error::Config("volatility must lie in (0, 0.2)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedRole {
    Expert,
    InverseExpert,
    Mob,
    Bot,
    Spammer,
    Lucky,
}

impl PlantedRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PlantedRole::Expert => "expert",
            PlantedRole::InverseExpert => "inverse_expert",
            PlantedRole::Mob => "mob",
            PlantedRole::Bot => "bot",
            PlantedRole::Spammer => "spammer",
            PlantedRole::Lucky => "lucky",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRow {
    pub user_id: String,
    pub role: PlantedRole,
}

#[derive(Debug, Clone)]
pub struct World {
    pub panel: MarketPanel,
    pub posts: Vec<PostRecord>,
    /// Ground truth, sorted by user id.
    pub roles: Vec<RoleRow>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate_market_only(cfg: &WorldConfig) -> Result<MarketPanel> {
    cfg.validate()?;
    generate_market(cfg, &mut stream(cfg.seed, 1))
}

/// Market, posts and role table; the market and the posts draw from separate streams.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    let panel = generate_market_only(cfg)?;
    let mut roles = Vec::new();
    for (role, count) in [
        (PlantedRole::Expert, cfg.n_experts),
        (PlantedRole::InverseExpert, cfg.n_inverse),
        (PlantedRole::Mob, cfg.n_mob),
        (PlantedRole::Bot, cfg.n_bots),
        (PlantedRole::Spammer, cfg.n_spammers),
        (PlantedRole::Lucky, cfg.n_lucky),
    ] {
        roles.extend(std::iter::repeat_n(role, count));
    }
    let mut rng = stream(cfg.seed, 2);
    let drafts = posts::generate_posts(&panel, cfg, &roles, &mut rng);
    let (posts, roles) = posts::finalize(drafts, &roles, &mut rng);
    Ok(World {
        panel,
        posts,
        roles,
    })
}

pub const POSTS_FILE: &str = "posts.jsonl";
pub const BARS_FILE: &str = "bars.csv";
pub const SECTORS_FILE: &str = "sectors.csv";
pub const ROLES_FILE: &str = "roles.csv";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes posts, bars, sectors and the private role table into `dir`.
pub fn write_world(world: &World, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_posts(create(&dir.join(POSTS_FILE))?, &world.posts)?;
    write_bars(create(&dir.join(BARS_FILE))?, &world.panel)?;
    write_sectors(create(&dir.join(SECTORS_FILE))?, &world.panel)?;
    write_roles(create(&dir.join(ROLES_FILE))?, &world.roles)
}

pub fn write_roles<W: Write>(w: W, roles: &[RoleRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in roles {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io(ROLES_FILE, e))
}

pub fn read_roles<R: Read>(r: R) -> Result<Vec<RoleRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_panel, load_posts};
    use crate::tracer::{filter_daily_latest, trace_all, Role, TracerConfig};
    use std::collections::{BTreeMap, BTreeSet};

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            n_symbols: 60,
            n_days: 400,
            n_mob: 10,
            n_bots: 3,
            n_spammers: 2,
            seed,
            ..WorldConfig::default()
        }
    }

    fn role_of(world: &World) -> BTreeMap<String, PlantedRole> {
        world
            .roles
            .iter()
            .map(|r| (r.user_id.clone(), r.role))
            .collect()
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_world(&small(1)).unwrap();
        let b = generate_world(&small(1)).unwrap();
        let c = generate_world(&small(2)).unwrap();
        assert_eq!(a.posts, b.posts);
        assert_eq!(a.roles, b.roles);
        assert_ne!(a.posts, c.posts);
    }

    #[test]
    fn planted_expert_accuracy_is_near_target() {
        let w = generate_world(&small(3)).unwrap();
        let roles = role_of(&w);
        let mut per_user: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for p in &w.posts {
            if roles[&p.user_id] != PlantedRole::Expert {
                continue;
            }
            let s = w.panel.symbol_index(&p.symbol).unwrap();
            let day = w.panel.day_of(p.created_at.date_naive()).unwrap();
            if let Some(truth) = realized_direction(&w.panel, s, day) {
                per_user
                    .entry(&p.user_id)
                    .or_default()
                    .push(truth == p.sentiment);
            }
        }
        assert_eq!(per_user.len(), 5);
        for hits in per_user.values() {
            let first: Vec<bool> = hits.iter().take(100).copied().collect();
            assert_eq!(first.len(), 100);
            let acc = first.iter().filter(|h| **h).count() as f64 / 100.0;
            assert!((0.75..=0.95).contains(&acc), "accuracy {acc}");
        }
    }

    #[test]
    fn spammer_floods_one_symbol_and_filter_keeps_one() {
        let w = generate_world(&small(4)).unwrap();
        let roles = role_of(&w);
        let mut per_day: BTreeMap<(String, String, NaiveDate), Vec<PostRecord>> = BTreeMap::new();
        for p in w
            .posts
            .iter()
            .filter(|p| roles[&p.user_id] == PlantedRole::Spammer)
        {
            per_day
                .entry((
                    p.user_id.clone(),
                    p.symbol.clone(),
                    p.created_at.date_naive(),
                ))
                .or_default()
                .push(p.clone());
        }
        assert!(!per_day.is_empty());
        let cfg = TracerConfig::default();
        for ((_, _, date), posts) in per_day {
            assert!(posts.len() > 200);
            let close = date.and_time(cfg.market_close_utc).and_utc();
            assert_eq!(filter_daily_latest(&posts, close, &cfg).len(), 1);
        }
    }

    #[test]
    fn lucky_user_is_hot_then_never_classified() {
        let cfg = WorldConfig {
            n_lucky: 3,
            ..small(5)
        };
        let w = generate_world(&cfg).unwrap();
        let roles = role_of(&w);
        let lucky: BTreeSet<&String> = roles
            .iter()
            .filter(|(_, r)| **r == PlantedRole::Lucky)
            .map(|(u, _)| u)
            .collect();
        for u in &lucky {
            let mut hits = Vec::new();
            for p in w.posts.iter().filter(|p| &&p.user_id == u) {
                let s = w.panel.symbol_index(&p.symbol).unwrap();
                let day = w.panel.day_of(p.created_at.date_naive()).unwrap();
                if let Some(truth) = realized_direction(&w.panel, s, day) {
                    hits.push(truth == p.sentiment);
                }
            }
            let hot = hits[..20].iter().filter(|h| **h).count();
            assert!(hot >= 16, "hot streak {hot}/20");
            let rest = &hits[20..];
            let cold = rest.iter().filter(|h| **h).count() as f64 / rest.len() as f64;
            assert!((cold - 0.5).abs() < 0.1, "later accuracy {cold}");
        }
        let (days, _) = trace_all(&w.posts, &w.panel, &TracerConfig::default()).unwrap();
        for d in &days {
            for c in &d.calls {
                assert!(c.role != Role::None);
                assert!(
                    !lucky.contains(&c.user_id),
                    "lucky user classified on day {}",
                    c.day
                );
            }
        }
    }

    #[test]
    fn files_round_trip_through_the_loaders() {
        let w = generate_world(&small(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_world(&w, dir.path()).unwrap();
        let load = load_panel(
            File::open(dir.path().join(BARS_FILE)).unwrap(),
            File::open(dir.path().join(SECTORS_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(load.rejected_rows, 0);
        assert_eq!(load.panel.n_symbols(), 60);
        assert_eq!(load.panel.close(7, 123), w.panel.close(7, 123));
        let posts = load_posts(File::open(dir.path().join(POSTS_FILE)).unwrap()).unwrap();
        assert_eq!(posts.skipped, 0);
        assert_eq!(posts.posts.len(), w.posts.len());
        let roles = read_roles(File::open(dir.path().join(ROLES_FILE)).unwrap()).unwrap();
        assert_eq!(roles, w.roles);
        // the pipeline inputs never mention roles
        let raw = fs::read_to_string(dir.path().join(POSTS_FILE)).unwrap();
        assert!(!raw.contains("expert") && !raw.contains("spammer"));
    }

    #[test]
    fn invalid_probability_rejected() {
        let cfg = WorldConfig {
            expert_hit: 1.5,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg), Err(Error::Config(_))));
    }
}
