//! IoU bookkeeping, campaign interval statistics and the three-way training
//! comparison report.

use crate::arbitration::InterventionCause;
use crate::curation::Dataset;
use crate::grid::{ClassId, GridError, SemanticGrid, NUM_CLASSES};
use crate::perception::{predict, PerceiverModel};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const REPORT_FORMAT: &str = "aeye-eval/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Shape(#[from] GridError),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    pub counts: [ClassCounts; NUM_CLASSES],
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, predicted: &SemanticGrid, truth: &SemanticGrid) -> Result<(), EvalError> {
        predicted.check_same_shape(truth)?;
        for (&p, &t) in predicted.as_bytes().iter().zip(truth.as_bytes()) {
            if p == t {
                self.counts[p as usize].tp += 1;
            } else {
                self.counts[p as usize].fp += 1;
                self.counts[t as usize].fn_ += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }

    pub fn get(&self, class: ClassId) -> ClassCounts {
        self.counts[class.index()]
    }

    /// `None` when the class never occurs in either grid.
    pub fn iou(&self, class: ClassId) -> Option<f64> {
        let c = self.get(class);
        let denom = c.tp + c.fp + c.fn_;
        (denom > 0).then(|| c.tp as f64 / denom as f64)
    }

    pub fn present_classes(&self) -> Vec<ClassId> {
        ClassId::ALL.into_iter().filter(|&c| self.iou(c).is_some()).collect()
    }

    /// Mean IoU over the given classes that are present; `None` if none is.
    pub fn miou_over(&self, classes: &[ClassId]) -> Option<f64> {
        let vals: Vec<f64> = classes.iter().filter_map(|&c| self.iou(c)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn miou(&self) -> Option<f64> {
        self.miou_over(&ClassId::ALL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub odometer_km: f64,
    pub time_min: f64,
    pub cause: InterventionCause,
    /// Corner-case record id; `None` when the buffer was not yet full.
    #[serde(default)]
    pub record_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignLog {
    pub events: Vec<LoggedEvent>,
    pub distance_km: f64,
    pub time_min: f64,
    #[serde(default)]
    pub collisions: u64,
    #[serde(default)]
    pub ticks: u64,
}

impl CampaignLog {
    pub fn validate(&self) -> Result<(), EvalError> {
        let mut prev = (0.0, 0.0);
        for e in &self.events {
            if !(e.odometer_km >= prev.0 && e.time_min >= prev.1) {
                return Err(EvalError::Input("event odometers and times must be non-decreasing from zero".into()));
            }
            prev = (e.odometer_km, e.time_min);
        }
        if prev.0 > self.distance_km + 1e-9 || prev.1 > self.time_min + 1e-9 {
            return Err(EvalError::Input("event beyond campaign totals".into()));
        }
        Ok(())
    }

    pub fn from_km(events_km: &[f64], distance_km: f64) -> Self {
        Self {
            events: events_km
                .iter()
                .map(|&k| LoggedEvent { odometer_km: k, time_min: k, cause: InterventionCause::OverlookedWalker, record_id: None })
                .collect(),
            distance_km,
            time_min: distance_km,
            collisions: 0,
            ticks: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub distance_km: f64,
    pub time_min: f64,
    pub n_cc: usize,
    /// km per corner case; absent below two events.
    pub d_cc: Option<IntervalStats>,
    /// minutes per corner case; absent below two events.
    pub t_cc: Option<IntervalStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn intervals(points: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut prev = 0.0;
    points
        .map(|p| {
            let d = p - prev;
            prev = p;
            d
        })
        .collect()
}

fn sample_stats(xs: &[f64]) -> IntervalStats {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    IntervalStats { mean, std: var.sqrt() }
}

/// Intervals are measured from the campaign start to the first event and then
/// between successive events.
pub fn campaign_stats(log: &CampaignLog) -> Result<CampaignStats, EvalError> {
    log.validate()?;
    let n = log.events.len();
    let (d_cc, t_cc, note) = if n < 2 {
        (None, None, Some(format!("{n} corner case(s); interval statistics need at least 2")))
    } else {
        (
            Some(sample_stats(&intervals(log.events.iter().map(|e| e.odometer_km)))),
            Some(sample_stats(&intervals(log.events.iter().map(|e| e.time_min)))),
            None,
        )
    };
    Ok(CampaignStats { distance_km: log.distance_km, time_min: log.time_min, n_cc: n, d_cc, t_cc, note })
}

/// Distance intervals between events, the first measured from the start.
pub fn distance_intervals(log: &CampaignLog) -> Vec<f64> {
    intervals(log.events.iter().map(|e| e.odometer_km))
}

pub fn confusion_on(model: &PerceiverModel, ds: &Dataset) -> Result<ConfusionAccumulator, EvalError> {
    if ds.is_empty() {
        return Err(EvalError::Input(format!("test set {:?} is empty", ds.name)));
    }
    let mut acc = ConfusionAccumulator::new();
    for f in ds.frames() {
        acc.accumulate(&predict(model, &f.appearance), &f.label)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub pedestrian_iou: Option<f64>,
    pub miou: Option<f64>,
}

impl Score {
    pub fn of(acc: &ConfusionAccumulator) -> Self {
        Self { pedestrian_iou: acc.iou(ClassId::Pedestrian), miou: acc.miou() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub safety_critical: Score,
    pub natural: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Training set name, e.g. "natural".
    pub training: String,
    #[serde(default)]
    pub pedestrian_mean_cells: Option<f64>,
    pub per_seed: Vec<SeedScores>,
    pub mean_safety_critical: Score,
    pub mean_natural: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub report: String,
    pub rows: Vec<ReportRow>,
}

/// One seed's inputs: a model per training set and the two test sets.
pub struct SeedRun<'a> {
    pub seed: u64,
    pub models: &'a [(String, PerceiverModel)],
    pub safety_critical: &'a Dataset,
    pub natural: &'a Dataset,
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Score every model on both test sets for every seed and average per
/// training set. All seeds must name the same training sets in the same order.
pub fn compare_report(runs: &[SeedRun<'_>]) -> Result<CompareReport, EvalError> {
    let first = runs.first().ok_or_else(|| EvalError::Input("no runs to compare".into()))?;
    let names: Vec<&str> = first.models.iter().map(|(n, _)| n.as_str()).collect();
    let mut rows: Vec<ReportRow> = names
        .iter()
        .map(|n| ReportRow {
            training: n.to_string(),
            pedestrian_mean_cells: None,
            per_seed: Vec::new(),
            mean_safety_critical: Score { pedestrian_iou: None, miou: None },
            mean_natural: Score { pedestrian_iou: None, miou: None },
        })
        .collect();
    for run in runs {
        if run.models.iter().map(|(n, _)| n.as_str()).ne(names.iter().copied()) {
            return Err(EvalError::Input(format!("seed {} has a different set of models", run.seed)));
        }
        for (row, (_, model)) in rows.iter_mut().zip(run.models) {
            row.per_seed.push(SeedScores {
                seed: run.seed,
                safety_critical: Score::of(&confusion_on(model, run.safety_critical)?),
                natural: Score::of(&confusion_on(model, run.natural)?),
            });
        }
    }
    for row in &mut rows {
        row.mean_safety_critical = Score {
            pedestrian_iou: mean_opt(row.per_seed.iter().map(|s| s.safety_critical.pedestrian_iou)),
            miou: mean_opt(row.per_seed.iter().map(|s| s.safety_critical.miou)),
        };
        row.mean_natural = Score {
            pedestrian_iou: mean_opt(row.per_seed.iter().map(|s| s.natural.pedestrian_iou)),
            miou: mean_opt(row.per_seed.iter().map(|s| s.natural.miou)),
        };
    }
    Ok(CompareReport { report: REPORT_FORMAT.into(), rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl CompareReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>14} {:>10} {:>14} {:>10}",
            "training", "ped/scene", "cc ped IoU", "cc mIoU", "nat ped IoU", "nat mIoU"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:>12} {:>14} {:>10} {:>14} {:>10}",
                r.training,
                r.pedestrian_mean_cells.map_or_else(|| "-".into(), |m| format!("{m:.1}")),
                cell(r.mean_safety_critical.pedestrian_iou),
                cell(r.mean_safety_critical.miou),
                cell(r.mean_natural.pedestrian_iou),
                cell(r.mean_natural.miou),
            );
        }
        s
    }

    pub fn row(&self, training: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.training == training)
    }
}
