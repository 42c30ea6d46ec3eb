//! Headless campaigns: both drivers scripted, corner cases auto-labelled from
//! the hazard that made the safety driver brake.

use super::config::{SessionConfig, StopCondition};
use super::rig::{Rig, RigError};
use crate::agents::{safety_assessment, semantic_policy, HazardKind, SafetyDriver};
use crate::arbitration::InterventionCause;
use crate::capture::{CaptureError, CornerCaseRecord, Persister};
use crate::eval::{campaign_stats, CampaignLog, CampaignStats, EvalError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const LOG_FILE: &str = "campaign_log.json";
pub const STATS_FILE: &str = "campaign_stats.json";
pub const RECORDS_DIR: &str = "records";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid stop condition: {0}")]
    Stop(String),
    #[error("storage error: {0}")]
    Storage(String),
}

pub fn cause_for(kind: HazardKind) -> InterventionCause {
    match kind {
        HazardKind::Walker => InterventionCause::OverlookedWalker,
        HazardKind::Vehicle => InterventionCause::OverlookedVehicle,
        HazardKind::RedLight => InterventionCause::TrafficRuleViolation,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub log: CampaignLog,
    pub records: Vec<CornerCaseRecord>,
    /// Interventions that fired before the buffer held a full clip.
    pub uncaptured: usize,
}

impl CampaignOutput {
    pub fn stats(&self) -> Result<CampaignStats, EvalError> {
        campaign_stats(&self.log)
    }
}

fn should_stop(rig: &Rig, stop: &StopCondition, max_ticks: u64, kept: usize) -> bool {
    stop.max_km.is_some_and(|k| rig.world.odometer_km >= k)
        || stop.max_minutes.is_some_and(|m| rig.world.clock / 60.0 >= m)
        || stop.max_cc.is_some_and(|n| kept >= n)
        || rig.world.tick >= max_ticks
}

/// Drive until `stop` (or `cfg.max_ticks`) is reached. Deterministic in `cfg`.
pub fn run_headless_campaign(cfg: &SessionConfig, stop: &StopCondition) -> Result<CampaignOutput, CampaignError> {
    run_with(cfg, stop, |_| Ok(()))
}

/// Like [`run_headless_campaign`], handing each record to `sink` as soon as
/// it is captured.
pub fn run_with(cfg: &SessionConfig, stop: &StopCondition, sink: impl FnMut(&CornerCaseRecord) -> Result<(), CampaignError>) -> Result<CampaignOutput, CampaignError> {
    run_filtered(cfg, stop, |_| true, sink)
}

/// Only records passing `keep` are returned, handed to `sink` and counted
/// against `stop.max_cc`; the log still lists every intervention.
pub fn run_filtered(
    cfg: &SessionConfig,
    stop: &StopCondition,
    keep: impl Fn(&CornerCaseRecord) -> bool,
    mut sink: impl FnMut(&CornerCaseRecord) -> Result<(), CampaignError>,
) -> Result<CampaignOutput, CampaignError> {
    stop.validate().map_err(|e| CampaignError::Stop(e.to_string()))?;
    let mut rig = Rig::from_config(cfg)?;
    let mut safety_driver = SafetyDriver::new(&cfg.safety_policy);
    let view = cfg.world.view;
    let mut records = Vec::new();
    while !should_stop(&rig, stop, cfg.max_ticks, records.len()) {
        let obs = rig.observe();
        let semantic = semantic_policy(&obs.predicted, &obs.hud, &view, &cfg.semantic_policy);
        let assessment = safety_assessment(&obs.truth, &obs.hud, &view, semantic.brake, &cfg.safety_policy);
        let (safety, hazard) = safety_driver.tick(assessment);
        let cause = hazard.map_or(InterventionCause::Boredom, |h| cause_for(h.kind));
        let out = rig.advance(obs, semantic, safety, cause)?;
        if let Some(record) = out.capture.and_then(|c| c.record).filter(|r| keep(r)) {
            sink(&record)?;
            records.push(record);
        }
    }
    Ok(CampaignOutput { log: rig.log.clone(), records, uncaptured: rig.uncaptured() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub stats: CampaignStats,
    pub uncaptured: usize,
    pub collisions: u64,
    pub records: Vec<String>,
}

/// Run a campaign and write `campaign_log.json`, `campaign_stats.json` and
/// every record under `<out>/records`. Records are persisted on a background
/// thread while the campaign keeps driving.
pub fn run_and_persist(cfg: &SessionConfig, stop: &StopCondition, out: &Path) -> Result<(CampaignOutput, Vec<PathBuf>), CampaignError> {
    let records_root = out.join(RECORDS_DIR);
    fs::create_dir_all(&records_root).map_err(|e| CampaignError::Storage(format!("{}: {e}", records_root.display())))?;
    let persister = Persister::spawn(records_root);
    let output = run_with(cfg, stop, |r| persister.submit(r.clone()).map_err(CampaignError::from))?;
    let written = persister.finish()?;
    write_log(&output, out)?;
    Ok((output, written))
}

pub fn write_log(output: &CampaignOutput, out: &Path) -> Result<(), CampaignError> {
    let write = |name: &str, bytes: Vec<u8>| {
        let p = out.join(name);
        fs::write(&p, bytes).map_err(|e| CampaignError::Storage(format!("{}: {e}", p.display())))
    };
    write(LOG_FILE, serde_json::to_vec_pretty(&output.log).expect("log serialises"))?;
    let summary = CampaignSummary {
        stats: output.stats()?,
        uncaptured: output.uncaptured,
        collisions: output.log.collisions,
        records: output.records.iter().map(|r| r.id.clone()).collect(),
    };
    write(STATS_FILE, serde_json::to_vec_pretty(&summary).expect("summary serialises"))
}

pub fn read_log(dir: &Path) -> Result<CampaignLog, CampaignError> {
    let p = dir.join(LOG_FILE);
    let bytes = fs::read(&p).map_err(|e| CampaignError::Storage(format!("{}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CampaignError::Storage(format!("{}: {e}", p.display())))
}
