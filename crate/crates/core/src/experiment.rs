//! The training comparison end to end: natural data, a low-quality campaign
//! to harvest corner cases, the three training sets, three models, and their
//! scores on held-out corner cases and natural validation scenes.

use crate::capture::CornerCaseRecord;
use crate::curation::{
    build_pedestrian_enriched, class_stats, dataset_from_records, generate_with_validation, swap_in_corner_cases, CurationError, Dataset,
    EnrichmentReport, SceneSampler,
};
use crate::eval::{compare_report, CompareReport, EvalError, SeedRun};
use crate::grid::ClassId;
use crate::perception::{train, DegradationParams, PerceiverModel, PerceptionError, TrainConfig};
use crate::seed::mix;
use crate::arbitration::InterventionCause;
use crate::service::campaign::{run_filtered, CampaignError};
use crate::service::config::{PerceptionSource, SessionConfig, StopCondition};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NATURAL: &str = "natural";
pub const PEDESTRIAN_ENRICHED: &str = "pedestrian_enriched";
pub const CC_ENRICHED: &str = "cc_enriched";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("campaign produced {got} corner cases, {need} needed")]
    TooFewCornerCases { got: usize, need: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: usize,
    /// Scenes generated in total, training plus validation.
    pub scenes: usize,
    pub frames_per_scene: usize,
    pub validation_fraction: f64,
    /// Corner cases swapped into training.
    pub cc_train: usize,
    /// Corner cases held out as the safety-critical test set.
    pub cc_test: usize,
    /// Perception quality of the harvesting campaign.
    pub campaign_quality: f64,
    pub campaign_max_km: f64,
    pub enrich_tol: f64,
    pub sampler: SceneSampler,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 5,
            scenes: 25,
            frames_per_scene: 12,
            validation_fraction: 0.2,
            cc_train: 2,
            cc_test: 2,
            campaign_quality: 0.2,
            campaign_max_km: 60.0,
            enrich_tol: 0.05,
            sampler: SceneSampler::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.seeds == 0 || self.scenes < 2 || self.frames_per_scene == 0 {
            return Err("seeds, scenes (>= 2) and frames_per_scene must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err("validation_fraction must lie in [0, 1)".into());
        }
        if self.cc_test == 0 {
            return Err("cc_test must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.campaign_quality) {
            return Err("campaign_quality must lie in [0, 1]".into());
        }
        if !(self.enrich_tol > 0.0 && self.enrich_tol <= 0.2) {
            return Err("enrich_tol must lie in (0, 0.2]".into());
        }
        if !(self.campaign_max_km > 0.0) {
            return Err("campaign_max_km must be > 0".into());
        }
        Ok(())
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }
}

/// The three training sets and both test sets for one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub natural: Dataset,
    pub cc_enriched: Dataset,
    pub pedestrian_enriched: Dataset,
    pub enrichment: EnrichmentReport,
    pub validation: Dataset,
    pub cc_test: Dataset,
    pub cc_records: Vec<CornerCaseRecord>,
}

impl SeedData {
    pub fn training_sets(&self) -> [(&'static str, &Dataset); 3] {
        [(NATURAL, &self.natural), (PEDESTRIAN_ENRICHED, &self.pedestrian_enriched), (CC_ENRICHED, &self.cc_enriched)]
    }
}

/// Drive a low-quality campaign until enough overlooked-walker corner cases
/// are captured.
pub fn harvest_corner_cases(base: &SessionConfig, quality: f64, n: usize, max_km: f64, seed: u64) -> Result<Vec<CornerCaseRecord>, ExperimentError> {
    let params = match &base.perception {
        PerceptionSource::Channel(p) => p.clone(),
        PerceptionSource::Model(_) => DegradationParams::default(),
    };
    let mut cfg = base.clone();
    cfg.world.seed = mix(seed, 0xcc);
    cfg.perception = PerceptionSource::Channel(DegradationParams { quality, seed: mix(seed, 0xdd), ..params });
    let stop = StopCondition { max_cc: Some(n), max_km: Some(max_km), max_minutes: None };
    let out = run_filtered(&cfg, &stop, |r| r.event.cause == InterventionCause::OverlookedWalker, |_| Ok(()))?;
    if out.records.len() < n {
        return Err(ExperimentError::TooFewCornerCases { got: out.records.len(), need: n });
    }
    Ok(out.records)
}

pub fn build_seed_data(session: &SessionConfig, cfg: &ExperimentConfig, seed: u64) -> Result<SeedData, ExperimentError> {
    let records = harvest_corner_cases(session, cfg.campaign_quality, cfg.cc_train + cfg.cc_test, cfg.campaign_max_km, seed)?;
    build_seed_data_from(cfg, seed, records)
}

/// As [`build_seed_data`] with corner cases already at hand: the first
/// `cc_train` go into training, the next `cc_test` form the test set.
pub fn build_seed_data_from(cfg: &ExperimentConfig, seed: u64, records: Vec<CornerCaseRecord>) -> Result<SeedData, ExperimentError> {
    let need = cfg.cc_train + cfg.cc_test;
    if records.len() < need {
        return Err(ExperimentError::TooFewCornerCases { got: records.len(), need });
    }
    let (natural, validation) = generate_with_validation(&cfg.sampler, cfg.scenes, cfg.frames_per_scene, cfg.validation_fraction, seed)?;
    let (train_cc, rest) = records.split_at(cfg.cc_train);
    let test_cc = &rest[..cfg.cc_test];
    let cc_enriched = swap_in_corner_cases(&natural, train_cc, seed)?;
    let target = class_stats(&cc_enriched)?.mean(ClassId::Pedestrian);
    let (pedestrian_enriched, enrichment) = build_pedestrian_enriched(&natural, target, cfg.enrich_tol, &cfg.sampler, seed)?;
    let cc_test = dataset_from_records("safety_critical", test_cc)?;
    Ok(SeedData { seed, natural, cc_enriched, pedestrian_enriched, enrichment, validation, cc_test, cc_records: records })
}

pub fn train_models(data: &SeedData, train_cfg: &TrainConfig) -> Result<Vec<(String, PerceiverModel)>, ExperimentError> {
    data.training_sets()
        .iter()
        .map(|(name, ds)| {
            let cfg = TrainConfig { seed: mix(data.seed, train_cfg.seed), ..train_cfg.clone() };
            Ok((name.to_string(), train(ds, &cfg)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: CompareReport,
    pub data: Vec<SeedData>,
    pub models: Vec<Vec<(String, PerceiverModel)>>,
}

/// Run every seed, training with `session.train`, and assemble the
/// comparison report with each training set's pedestrian cells per scene
/// averaged over seeds.
pub fn run_experiment(session: &SessionConfig, cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    use rayon::prelude::*;
    let per_seed = cfg
        .seed_values()
        .into_par_iter()
        .map(|seed| {
            let data = build_seed_data(session, cfg, seed)?;
            let models = train_models(&data, &session.train)?;
            Ok((data, models))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let (data, models): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    let runs: Vec<SeedRun<'_>> = data
        .iter()
        .zip(&models)
        .map(|(d, m)| SeedRun { seed: d.seed, models: m, safety_critical: &d.cc_test, natural: &d.validation })
        .collect();
    let mut report = compare_report(&runs)?;
    for row in &mut report.rows {
        let means = data
            .iter()
            .map(|d| d.training_sets().into_iter().find(|(n, _)| *n == row.training).map(|(_, ds)| class_stats(ds)))
            .collect::<Option<Result<Vec<_>, _>>>();
        if let Some(Ok(stats)) = means {
            row.pedestrian_mean_cells = Some(stats.iter().map(|s| s.mean(ClassId::Pedestrian)).sum::<f64>() / stats.len() as f64);
        }
    }
    Ok(ExperimentOutcome { report, data, models })
}
