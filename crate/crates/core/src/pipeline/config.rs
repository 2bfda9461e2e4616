use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::BacktestConfig;
use crate::data::MarketPanel;
use crate::dualgat::{DualGatConfig, DualGatTrainConfig};
use crate::error::{Error, Result};
use crate::graph::GraphThresholds;
use crate::pretrain::{MsLstmConfig, TrainConfig};
use crate::signals::SignalConfig;
use crate::synth::WorldConfig;
use crate::tracer::TracerConfig;

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    /// Trading-day indices of the panel inside the range.
    pub fn days(&self, panel: &MarketPanel) -> Range<usize> {
        let cal = panel.calendar();
        let lo = cal.partition_point(|d| *d < self.start);
        let hi = cal.partition_point(|d| *d <= self.end);
        lo..hi.max(lo)
    }

    fn clamp(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> DateRange {
        DateRange {
            start: start.map_or(self.start, |s| s.max(self.start)),
            end: end.map_or(self.end, |e| e.min(self.end)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRanges {
    pub pretrain: DateRange,
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    /// Optional global window every range is clipped to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
}

impl Default for DateRanges {
    fn default() -> Self {
        let d = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        Self {
            pretrain: DateRange {
                start: d(2019, 2, 27),
                end: d(2020, 2, 25),
            },
            train: DateRange {
                start: d(2020, 2, 26),
                end: d(2020, 12, 1),
            },
            validation: DateRange {
                start: d(2020, 12, 2),
                end: d(2021, 2, 23),
            },
            test: DateRange {
                start: d(2021, 2, 24),
                end: d(2021, 11, 16),
            },
            start: None,
            end: None,
        }
    }
}

impl DateRanges {
    /// The four ranges after clipping to the global window.
    pub fn effective(&self) -> [DateRange; 4] {
        [self.pretrain, self.train, self.validation, self.test]
            .map(|r| r.clamp(self.start, self.end))
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["pretrain", "train", "validation", "test"];
        let eff = self.effective();
        for (name, r) in names.iter().zip(&eff) {
            if r.start > r.end {
                return Err(Error::Config(format!(
                    "date range `{name}` is empty ({} > {})",
                    r.start, r.end
                )));
            }
        }
        let [p, t, v, s] = eff;
        if !(p.end < t.start) {
            return Err(Error::Config(
                "pretrain range must end before train starts".into(),
            ));
        }
        if !(t.end < v.start) {
            return Err(Error::Config(
                "train range must end before validation starts".into(),
            ));
        }
        if !(v.end < s.start) {
            return Err(Error::Config(
                "validation range must end before test starts".into(),
            ));
        }
        Ok(())
    }
}

/// Explicit market and post files; unset entries come from the `simulate` stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub posts: Option<PathBuf>,
    pub bars: Option<PathBuf>,
    pub sectors: Option<PathBuf>,
}

impl InputPaths {
    pub fn is_external(&self) -> bool {
        self.posts.is_some() || self.bars.is_some() || self.sectors.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub thresholds: GraphThresholds,
    /// Hops used for the coverage statistic.
    pub coverage_hops: usize,
    /// Write every day's edges instead of the last test day only.
    pub export_all_edges: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            thresholds: GraphThresholds::default(),
            coverage_hops: 2,
            export_all_edges: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub model: MsLstmConfig,
    pub train: TrainConfig,
    /// Trailing share of the pretrain range used for early stopping.
    pub validation_share: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            model: MsLstmConfig::default(),
            train: TrainConfig::default(),
            validation_share: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualGatSection {
    pub model: DualGatConfig,
    pub train: DualGatTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub inputs: InputPaths,
    #[serde(default)]
    pub dates: DateRanges,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub tracer: TracerConfig,
    #[serde(default)]
    pub signals: SignalConfig,
    #[serde(default)]
    pub graphs: GraphSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub dualgat: DualGatSection,
    #[serde(default)]
    pub backtest: BacktestConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            &mut self.inputs.posts,
            &mut self.inputs.bars,
            &mut self.inputs.sectors,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dates.validate()?;
        let i = &self.inputs;
        if i.is_external() && (i.posts.is_none() || i.bars.is_none() || i.sectors.is_none()) {
            return Err(Error::Config(
                "inputs need posts, bars and sectors together".into(),
            ));
        }
        if !i.is_external() {
            self.world.validate()?;
        }
        self.tracer.validate()?;
        self.graphs.thresholds.validate()?;
        if self.graphs.coverage_hops == 0 {
            return Err(Error::Config("coverage_hops must be at least 1".into()));
        }
        // input_dim 0 means "take it from the panel", filled in by the pretrain stage
        let mut model = self.pretrain.model.clone();
        model.input_dim = model.input_dim.max(1);
        model.validate()?;
        if !(self.pretrain.validation_share > 0.0 && self.pretrain.validation_share < 1.0) {
            return Err(Error::Config(
                "pretrain validation_share must lie in (0, 1)".into(),
            ));
        }
        self.backtest.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "seed = 3\n"
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = PipelineConfig::from_toml(minimal()).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dates, DateRanges::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
        assert!(PipelineConfig::from_toml("seed = 1\n[tracer]\nnope = 1\n").is_err());
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let text = r#"
seed = 1
[dates]
pretrain = { start = "2019-02-01", end = "2019-06-30" }
train = { start = "2019-06-01", end = "2019-09-30" }
validation = { start = "2019-10-01", end = "2019-11-30" }
test = { start = "2019-12-01", end = "2019-12-31" }
"#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn global_window_clips_ranges() {
        let mut d = DateRanges::default();
        d.end = NaiveDate::from_ymd_opt(2021, 6, 30);
        assert_eq!(
            d.effective()[3].end,
            NaiveDate::from_ymd_opt(2021, 6, 30).unwrap()
        );
        d.end = NaiveDate::from_ymd_opt(2020, 1, 1);
        assert!(d.validate().is_err());
    }

    #[test]
    fn partial_inputs_rejected() {
        let mut cfg = PipelineConfig::from_toml(minimal()).unwrap();
        cfg.inputs.posts = Some("posts.jsonl".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let mut cfg = PipelineConfig::from_toml("seed = 1\nout_dir = \"out\"\n").unwrap();
        cfg.resolve_paths(Path::new("/tmp/cfg"));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/cfg/out"));
    }
}
