//! Stage orchestration: crawl, extract, parse, crack, analyze, report.
//!
//! Stages are looked up by name in a [`StageRegistry`]. Each stage reads
//! what earlier stages wrote to the store, writes its own outputs, and drops
//! a `stages/<name>.done` marker holding its summary. Re-running a stage is
//! safe: fetched blobs are reused and outputs are rewritten whole.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{normalize_domain, PipelineConfig, SiteEntry, YearRange};
pub use stages::{
    Analyze, ConfigCaptureRow, CrackKeys, CrawlConfigs, CrawlFailure, CrawlSites, ExtractPixels,
    ParseConfigs, ParsedConfigRow, Report, SiteSnapshot,
};

use crate::archive::{ArchiveClient, ArchiveError};
use crate::cracker::CrackError;
use crate::store::{SnapshotStore, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} needs the output of {missing}; run it first")]
    MissingPrerequisite { stage: String, missing: String },
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Crack(#[from] CrackError),
}

impl PipelineError {
    /// Stable identifier for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::MissingPrerequisite { .. } => "MissingPrerequisite",
            PipelineError::UnknownStage(_) => "UnknownStage",
            PipelineError::Config(_) => "InvalidConfig",
            PipelineError::Io { .. } => "Io",
            PipelineError::Store(StoreError::StorageIo { .. }) => "StorageIo",
            PipelineError::Store(_) => "Store",
            PipelineError::Archive(ArchiveError::ArchiveUnavailable { .. }) => "ArchiveUnavailable",
            PipelineError::Archive(_) => "Archive",
            PipelineError::Crack(CrackError::EmptyDictionary) => "EmptyDictionary",
            PipelineError::Crack(_) => "Crack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub counts: BTreeMap<String, u64>,
}

impl StageSummary {
    pub fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), counts: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: impl TryInto<u64>) -> &mut Self {
        self.counts.insert(key.to_string(), value.try_into().unwrap_or(u64::MAX));
        self
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }
}

/// Everything a stage needs: configuration, store and archive client.
pub struct PipelineContext {
    pub config: PipelineConfig,
    pub store: SnapshotStore,
    pub client: ArchiveClient,
}

impl PipelineContext {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let store = SnapshotStore::open(&config.storage_root)?;
        let client = ArchiveClient::new(config.endpoints.clone(), config.policy.clone())?;
        Ok(Self { config, store, client })
    }

    pub fn with_client(mut self, client: ArchiveClient) -> Self {
        self.client = client;
        self
    }

    fn marker(&self, stage: &str) -> PathBuf {
        self.store.root().join("stages").join(format!("{stage}.done"))
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.marker(stage).exists()
    }

    pub fn summary_of(&self, stage: &str) -> Option<StageSummary> {
        let text = fs::read_to_string(self.marker(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn mark_done(&self, summary: &StageSummary) -> Result<(), PipelineError> {
        let path = self.marker(&summary.stage);
        let dir = path.parent().expect("marker has a parent");
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
        let text = serde_json::to_string_pretty(summary).expect("summary serializes");
        fs::write(&path, text).map_err(|source| PipelineError::Io { path, source })
    }
}

pub trait Stage: Send + Sync {
    fn name(&self) -> &'static str;
    /// Stages whose outputs must exist before this one runs.
    fn prerequisites(&self) -> &'static [&'static str];
    fn run(&self, ctx: &PipelineContext) -> Result<StageSummary, PipelineError>;
}

pub struct StageRegistry {
    stages: Vec<Box<dyn Stage>>,
}

impl StageRegistry {
    pub fn empty() -> Self {
        Self { stages: Vec::new() }
    }

    /// All stages in execution order.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(CrawlSites));
        r.register(Box::new(ExtractPixels));
        r.register(Box::new(CrawlConfigs));
        r.register(Box::new(ParseConfigs));
        r.register(Box::new(CrackKeys));
        r.register(Box::new(Analyze));
        r.register(Box::new(Report));
        r
    }

    pub fn register(&mut self, stage: Box<dyn Stage>) {
        self.stages.retain(|s| s.name() != stage.name());
        self.stages.push(stage);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Stage> {
        self.stages.iter().find(|s| s.name() == name).map(|s| s.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    /// Run one stage after checking its prerequisites.
    pub fn run_stage(&self, name: &str, ctx: &PipelineContext) -> Result<StageSummary, PipelineError> {
        let stage = self.get(name).ok_or_else(|| PipelineError::UnknownStage(name.to_string()))?;
        for pre in stage.prerequisites() {
            if !ctx.is_done(pre) {
                return Err(PipelineError::MissingPrerequisite {
                    stage: name.to_string(),
                    missing: pre.to_string(),
                });
            }
        }
        log::info!("stage {name}: starting");
        let summary = stage.run(ctx)?;
        ctx.mark_done(&summary)?;
        log::info!("stage {name}: done {:?}", summary.counts);
        Ok(summary)
    }

    /// Run every stage in order, stopping at the first error.
    pub fn run_all(&self, ctx: &PipelineContext) -> Result<Vec<StageSummary>, PipelineError> {
        self.names().into_iter().map(|n| self.run_stage(n, ctx)).collect()
    }
}
