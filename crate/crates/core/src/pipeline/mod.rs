//! Stage orchestration. Each stage writes into `<out_dir>/<stage>/` next to a
//! manifest holding the config hash, seeds and the content hashes of what it
//! read and wrote; a stage runs only when its upstream manifests check out.

mod config;
mod manifest;
mod stages;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

pub use config::{
    DateRange, DateRanges, DualGatSection, GraphSection, InputPaths, PipelineConfig,
    PretrainSection,
};
pub use manifest::{derive_seed, hash_json, sha256_bytes, sha256_file, Manifest, MANIFEST_FILE};
pub use stages::{graph_digest, CallRow, GraphStatsRow, PredictionRow, RunReport};

use crate::error::{Error, Result};
use manifest::{MANIFEST_FORMAT, MANIFEST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Ingest,
    Trace,
    Signals,
    Pretrain,
    Graphs,
    Train,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Simulate,
        Stage::Ingest,
        Stage::Trace,
        Stage::Signals,
        Stage::Pretrain,
        Stage::Graphs,
        Stage::Train,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Trace => "trace",
            Stage::Signals => "signals",
            Stage::Pretrain => "pretrain",
            Stage::Graphs => "graphs",
            Stage::Train => "train",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// Stages whose artifacts this stage reads directly.
    pub fn upstream(self, cfg: &PipelineConfig) -> Vec<Stage> {
        use Stage::*;
        match self {
            Simulate => vec![],
            Ingest if cfg.inputs.is_external() => vec![],
            Ingest => vec![Simulate],
            Trace => vec![Ingest],
            Signals => vec![Ingest, Trace],
            Pretrain => vec![Ingest],
            Graphs => vec![Ingest, Signals],
            Train => vec![Ingest, Signals, Pretrain, Graphs],
            Backtest => vec![Ingest, Signals, Pretrain, Graphs, Train],
            Report => vec![Trace, Pretrain, Graphs, Train, Backtest],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone)]
enum Freshness {
    Fresh(Manifest),
    /// The named stage has never run or lost its manifest.
    Missing(Stage),
    /// The named stage's artifacts no longer match what produced them.
    Stale(Stage, String),
}

pub struct Pipeline {
    pub config: PipelineConfig,
    memo: RefCell<HashMap<Stage, Freshness>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            memo: RefCell::new(HashMap::new()),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.config.out_dir.join(stage.name())
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.config.seed, stage.name())
    }

    /// Hash of the config sections `stage` reads.
    pub fn config_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let [pretrain, train, validation, test] = c.dates.effective();
        let v = match stage {
            Stage::Simulate => serde_json::json!({ "world": c.world }),
            Stage::Ingest => {
                serde_json::json!({ "inputs": c.inputs, "dates": [pretrain, train, validation, test] })
            }
            Stage::Trace => serde_json::json!({ "tracer": c.tracer }),
            Stage::Signals => serde_json::json!({ "signals": c.signals }),
            Stage::Pretrain => {
                serde_json::json!({ "pretrain": c.pretrain, "dates": [pretrain, train, test] })
            }
            Stage::Graphs => serde_json::json!({ "graphs": c.graphs, "dates": [train, test] }),
            Stage::Train => {
                serde_json::json!({ "dualgat": c.dualgat, "dates": [train, validation] })
            }
            Stage::Backtest => serde_json::json!({ "backtest": c.backtest, "dates": [test] }),
            Stage::Report => serde_json::json!({}),
        };
        hash_json(&serde_json::json!({ "stage": stage.name(), "seed": c.seed, "config": v }))
    }

    /// External input files by label, for an ingest that does not read `simulate`.
    fn external_inputs(&self) -> Vec<(String, PathBuf)> {
        let i = &self.config.inputs;
        [
            ("posts", &i.posts),
            ("bars", &i.bars),
            ("sectors", &i.sectors),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.clone().map(|p| (format!("file:{k}"), p)))
        .collect()
    }

    fn check(&self, stage: Stage) -> Result<Freshness> {
        if let Some(f) = self.memo.borrow().get(&stage) {
            return Ok(f.clone());
        }
        let f = self.check_uncached(stage)?;
        self.memo.borrow_mut().insert(stage, f.clone());
        Ok(f)
    }

    fn check_uncached(&self, stage: Stage) -> Result<Freshness> {
        let dir = self.dir(stage);
        let Some(m) = Manifest::read(&dir)? else {
            return Ok(Freshness::Missing(stage));
        };
        if m.stage != stage.name() {
            return Ok(Freshness::Stale(
                stage,
                "manifest belongs to another stage".into(),
            ));
        }
        if m.config_hash != self.config_hash(stage) {
            return Ok(Freshness::Stale(
                stage,
                "configuration or seed changed".into(),
            ));
        }
        for (name, hash) in &m.outputs {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(Freshness::Stale(stage, format!("output {name} is missing")));
            }
            if &sha256_file(&path)? != hash {
                return Ok(Freshness::Stale(
                    stage,
                    format!("output {name} was modified"),
                ));
            }
        }
        for up in stage.upstream(&self.config) {
            match self.check(up)? {
                Freshness::Fresh(um) => {
                    if m.inputs.get(up.name()) != Some(&um.digest()) {
                        return Ok(Freshness::Stale(
                            stage,
                            format!("upstream `{up}` changed since it ran"),
                        ));
                    }
                }
                other => return Ok(other),
            }
        }
        if stage == Stage::Ingest {
            for (label, path) in self.external_inputs() {
                if !path.exists() || m.inputs.get(&label) != Some(&sha256_file(&path)?) {
                    return Ok(Freshness::Stale(
                        stage,
                        format!("input {} changed", path.display()),
                    ));
                }
            }
        }
        Ok(Freshness::Fresh(m))
    }

    /// Runs `stage` unless its artifacts are already current.
    pub fn run(&self, stage: Stage) -> Result<StageStatus> {
        self.memo.borrow_mut().clear();
        let mut inputs = BTreeMap::new();
        for up in stage.upstream(&self.config) {
            match self.check(up)? {
                Freshness::Fresh(m) => {
                    inputs.insert(up.name().to_string(), m.digest());
                }
                Freshness::Missing(s) => {
                    return Err(Error::MissingUpstream {
                        stage: s.name().into(),
                        detail: format!(
                            "`{stage}` needs the artifacts of `{s}` under {}",
                            self.dir(s).display()
                        ),
                    })
                }
                Freshness::Stale(s, detail) => {
                    return Err(Error::StaleArtifact {
                        stage: s.name().into(),
                        detail,
                    })
                }
            }
        }
        if let Freshness::Fresh(_) = self.check(stage)? {
            return Ok(StageStatus::UpToDate);
        }
        if stage == Stage::Ingest {
            for (label, path) in self.external_inputs() {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "input file {} does not exist",
                        path.display()
                    )));
                }
                inputs.insert(label, sha256_file(&path)?);
            }
        }

        let dir = self.dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            std::fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        }
        log::info!("running stage {stage}");
        let files = stages::run(self, stage, &dir)?;
        let mut outputs = BTreeMap::new();
        for f in files {
            let hash = sha256_file(&dir.join(&f))?;
            outputs.insert(f, hash);
        }
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            stage: stage.name().into(),
            config_hash: self.config_hash(stage),
            seed: self.config.seed,
            stage_seed: self.stage_seed(stage),
            inputs,
            outputs,
        }
        .write(&dir)?;
        self.memo.borrow_mut().clear();
        Ok(StageStatus::Ran)
    }

    /// Runs every stage in order, skipping `simulate` when inputs are external.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Simulate && self.config.inputs.is_external() {
                continue;
            }
            out.push((stage, self.run(stage)?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()), Some(s));
        }
        assert_eq!(Stage::parse("nope"), None);
    }

    #[test]
    fn upstream_precedes_stage() {
        let cfg = PipelineConfig::from_toml("seed = 1").unwrap();
        for s in Stage::ALL {
            for u in s.upstream(&cfg) {
                assert!(u < s, "{u} listed after {s}");
            }
        }
    }

    #[test]
    fn config_hash_tracks_relevant_sections() {
        let base = PipelineConfig::from_toml("seed = 1").unwrap();
        let mut other = base.clone();
        other.backtest.cost_rate = 0.001;
        let (a, b) = (Pipeline::new(base).unwrap(), Pipeline::new(other).unwrap());
        assert_eq!(a.config_hash(Stage::Train), b.config_hash(Stage::Train));
        assert_ne!(
            a.config_hash(Stage::Backtest),
            b.config_hash(Stage::Backtest)
        );
    }
}
