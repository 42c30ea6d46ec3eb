//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, even under output capture.

use aeye_core::arbitration::{ControlCommand, InterventionCause, InterventionEvent};
use aeye_core::capture::{CornerCaseRecord, FrameRecord};
use aeye_core::curation::{class_stats, swap_in_corner_cases, Dataset, FrameSample, Origin, Scene};
use aeye_core::eval::{campaign_stats, CampaignLog, ConfusionAccumulator};
use aeye_core::experiment::{build_seed_data, run_experiment, ExperimentOutcome, CC_ENRICHED, NATURAL, PEDESTRIAN_ENRICHED};
use aeye_core::grid::{AppearanceGrid, ClassId, SemanticGrid, NUM_CLASSES};
use aeye_core::perception::{feature_dim, loss_and_grad, DegradationParams, PerceiverModel};
use aeye_core::service::campaign::run_headless_campaign;
use aeye_core::service::config::{PerceptionSource, SessionConfig, StopCondition};
use aeye_core::world::DEFAULT_DT;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn channel_config(seed: u64, quality: f64) -> SessionConfig {
    let mut cfg = SessionConfig::default().with_seed(seed);
    cfg.perception = PerceptionSource::Channel(DegradationParams { quality, seed, ..DegradationParams::default() });
    cfg
}

fn capture_fidelity() -> Verdict {
    let cfg = channel_config(7, 0.3);
    let out = run_headless_campaign(&cfg, &StopCondition { max_cc: Some(50), max_km: Some(100.0), max_minutes: None }).map_err(|e| e.to_string())?;
    ensure(out.records.len() == 50, format!("{} records, expected 50", out.records.len()))?;
    for r in &out.records {
        ensure(r.frames.len() == 30, format!("{} has {} frames", r.id, r.frames.len()))?;
        let ticks = r.frames.last().unwrap().tick_index - r.frames[0].tick_index;
        ensure(ticks == 29 && (r.span_seconds() - 2.9).abs() < 1e-9, format!("{} spans {} ticks / {} s", r.id, ticks, r.span_seconds()))?;
        let trigger = (r.event.timestamp / DEFAULT_DT).round() as u64;
        ensure(r.frames.last().unwrap().tick_index + 1 == trigger, format!("{} does not end on the tick before its trigger", r.id))?;
    }
    let frames: usize = out.records.iter().map(|r| r.frames.len()).sum();
    ensure(frames == 1500, format!("{frames} frames"))?;
    Ok(format!("50 records x 30 frames = {frames}, each spanning 2.9 s and ending one tick before its trigger ({:.1} km)", out.log.distance_km))
}

fn random_grid(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> SemanticGrid {
    SemanticGrid::from_cells(rows, cols, (0..rows * cols).map(|_| r.random_range(0..NUM_CLASSES as u8)).collect()).unwrap()
}

fn random_record(r: &mut ChaCha8Rng, id: String, len: usize) -> CornerCaseRecord {
    let frames = (0..len)
        .map(|i| {
            let truth = random_grid(r, 4, 4);
            FrameRecord {
                tick_index: i as u64,
                timestamp: i as f64 * DEFAULT_DT,
                predicted: truth.clone(),
                truth,
                appearance: AppearanceGrid::filled(4, 4, [0.5; 3]),
                ego_speed_kmh: 30.0,
                effective_cmd: ControlCommand::ZERO,
            }
        })
        .collect();
    CornerCaseRecord {
        id,
        frames,
        event: InterventionEvent { timestamp: len as f64 * DEFAULT_DT, odometer_km: 1.0, cause: InterventionCause::OverlookedWalker, comment: String::new() },
        km_driven_at_event: 1.0,
        ride_duration_at_event: 1.0,
        fps: 10,
    }
}

fn fixed_size_curation() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(0x5a5a);
    for case in 0..100 {
        let scenes: Vec<Scene> = (0..r.random_range(2..8))
            .map(|s| {
                let id = format!("scene-{s:03}");
                let frames = (0..r.random_range(1..12))
                    .map(|_| FrameSample { appearance: AppearanceGrid::filled(4, 4, [0.2; 3]), label: random_grid(&mut r, 4, 4), origin: Origin::Base, scene_id: id.clone() })
                    .collect();
                Scene { scene_id: id, frames }
            })
            .collect();
        let base = Dataset::new("base", case, scenes).map_err(|e| e.to_string())?;
        let mut budget = base.n_frames();
        let mut ccs = Vec::new();
        for k in 0..r.random_range(0..4) {
            if budget == 0 {
                break;
            }
            let len = r.random_range(1..=budget.min(30));
            budget -= len;
            ccs.push(random_record(&mut r, format!("cc-{k:04}"), len));
        }
        let inserted: usize = ccs.iter().map(|c| c.frames.len()).sum();
        let out = swap_in_corner_cases(&base, &ccs, case).map_err(|e| format!("case {case}: {e}"))?;
        ensure(out.n_frames() == base.n_frames(), format!("case {case}: {} frames became {}", base.n_frames(), out.n_frames()))?;
        ensure(out.count_origin(Origin::CornerCase) == inserted, format!("case {case}: {} corner-case frames, {inserted} inserted", out.count_origin(Origin::CornerCase)))?;
        ensure(out.count_origin(Origin::Base) == base.n_frames() - inserted, format!("case {case}: base frame count off"))?;
        for cc in &ccs {
            let scene = out.scenes.iter().find(|s| s.scene_id == cc.id).ok_or(format!("case {case}: {} missing", cc.id))?;
            ensure(scene.frames.iter().zip(&cc.frames).all(|(a, b)| a.label == b.truth), format!("case {case}: {} frames altered", cc.id))?;
        }
    }
    Ok("100 random swaps keep the frame count and provenance counts".into())
}

fn pixel_matching(outcome: Option<&ExperimentOutcome>) -> Verdict {
    let session = SessionConfig::default();
    let t = Instant::now();
    let a = build_seed_data(&session, &session.experiment, 0).map_err(|e| e.to_string())?;
    let single = t.elapsed();
    let b = build_seed_data(&session, &session.experiment, 0).map_err(|e| e.to_string())?;
    ensure(a.pedestrian_enriched == b.pedestrian_enriched && a.cc_enriched == b.cc_enriched, "rebuilding seed 0 gave different datasets")?;
    ensure(single < Duration::from_secs(60), format!("one seed took {:.1} s", single.as_secs_f64()))?;
    let mut worst = 0.0f64;
    let mut seeds = vec![&a];
    if let Some(o) = outcome {
        seeds.extend(o.data.iter());
    }
    for d in seeds {
        let target = class_stats(&d.cc_enriched).map_err(|e| e.to_string())?.mean(ClassId::Pedestrian);
        let got = class_stats(&d.pedestrian_enriched).map_err(|e| e.to_string())?.mean(ClassId::Pedestrian);
        let rel = (got - target).abs() / target;
        ensure(rel <= 0.05, format!("seed {}: {got:.1} vs {target:.1} cells/scene ({:.1}%)", d.seed, rel * 100.0))?;
        ensure(d.pedestrian_enriched.n_frames() == d.natural.n_frames(), format!("seed {}: enrichment changed the frame count", d.seed))?;
        worst = worst.max(rel);
    }
    Ok(format!(
        "seed 0 {:.1} vs {:.1} cells/scene, worst over all seeds {:.2}% (<= 5%), deterministic, {:.1} s per seed",
        class_stats(&a.pedestrian_enriched).unwrap().mean(ClassId::Pedestrian),
        class_stats(&a.cc_enriched).unwrap().mean(ClassId::Pedestrian),
        worst * 100.0,
        single.as_secs_f64()
    ))
}

fn enrichment_effect(outcome: &Result<ExperimentOutcome, String>) -> Verdict {
    let o = outcome.as_ref().map_err(|e| e.clone())?;
    let row = |name: &str| o.report.row(name).ok_or(format!("missing row {name}"));
    let (nat, ped, cc) = (row(NATURAL)?, row(PEDESTRIAN_ENRICHED)?, row(CC_ENRICHED)?);
    let mean = |r: &aeye_core::eval::ReportRow| r.mean_safety_critical.pedestrian_iou.unwrap_or(f64::NAN);
    let wins = cc
        .per_seed
        .iter()
        .zip(&nat.per_seed)
        .filter(|(c, n)| c.safety_critical.pedestrian_iou.unwrap_or(0.0) > n.safety_critical.pedestrian_iou.unwrap_or(0.0))
        .count();
    let summary = format!(
        "safety-critical pedestrian IoU: natural {:.4}, pedestrian-enriched {:.4}, cc-enriched {:.4}; cc beats natural in {wins}/{} seeds",
        mean(nat),
        mean(ped),
        mean(cc),
        cc.per_seed.len()
    );
    ensure(cc.per_seed.len() == 5, format!("{} seeds", cc.per_seed.len()))?;
    ensure(mean(cc) > mean(nat) && mean(cc) >= mean(ped) && wins >= 4, summary.clone())?;
    Ok(summary)
}

fn frequency_effect() -> Verdict {
    let qualities = [0.3, 0.6, 0.9];
    let stop = StopCondition { max_cc: Some(8), max_km: Some(40.0), max_minutes: None };
    let mut lines = Vec::new();
    let mut increasing = 0;
    for seed in 0..5u64 {
        let mut means = Vec::new();
        for q in qualities {
            let out = run_headless_campaign(&channel_config(seed, q), &stop).map_err(|e| e.to_string())?;
            let stats = campaign_stats(&out.log).map_err(|e| e.to_string())?;
            // fewer than two corner cases: the whole drive is a lower bound on the interval
            means.push(stats.d_cc.map_or(stats.distance_km, |d| d.mean));
        }
        let ok = means.windows(2).all(|w| w[1] > w[0]);
        increasing += ok as usize;
        lines.push(format!("{seed}:[{}]", means.iter().map(|m| format!("{m:.2}")).collect::<Vec<_>>().join(",")));
    }
    let summary = format!("mean km between corner cases at q=0.3/0.6/0.9 increasing in {increasing}/5 seeds {}", lines.join(" "));
    ensure(increasing >= 4, summary.clone())?;
    Ok(summary)
}

fn brute_iou(pred: &SemanticGrid, truth: &SemanticGrid, class: u8) -> Option<f64> {
    let p: Vec<usize> = (0..pred.len()).filter(|&i| pred.as_bytes()[i] == class).collect();
    let t: Vec<usize> = (0..truth.len()).filter(|&i| truth.as_bytes()[i] == class).collect();
    let inter = p.iter().filter(|i| t.contains(i)).count();
    let union = p.len() + t.len() - inter;
    (union > 0).then(|| inter as f64 / union as f64)
}

fn metric_oracles() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(0x10);
    for pair in 0..100 {
        let (p, t) = (random_grid(&mut r, 16, 16), random_grid(&mut r, 16, 16));
        let mut acc = ConfusionAccumulator::new();
        acc.accumulate(&p, &t).map_err(|e| e.to_string())?;
        let brute: Vec<Option<f64>> = (0..NUM_CLASSES as u8).map(|c| brute_iou(&p, &t, c)).collect();
        for (c, b) in ClassId::ALL.iter().zip(&brute) {
            ensure(acc.iou(*c) == *b, format!("pair {pair}: iou({c:?}) {:?} vs brute {b:?}", acc.iou(*c)))?;
        }
        let present: Vec<f64> = brute.iter().flatten().copied().collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        ensure(acc.miou() == Some(miou), format!("pair {pair}: miou {:?} vs brute {miou}", acc.miou()))?;
    }

    let stats = |km: &[f64], total: f64| campaign_stats(&CampaignLog::from_km(km, total)).map_err(|e| e.to_string());
    let even = stats(&[2.0, 4.0, 6.0], 10.0)?.d_cc.ok_or("no stats for [2,4,6]")?;
    ensure((even.mean - 2.0).abs() < 1e-12 && even.std.abs() < 1e-12, format!("[2,4,6] -> {even:?}"))?;
    let spread = stats(&[2.0, 6.0, 14.0], 20.0)?.d_cc.ok_or("no stats for [2,6,14]")?;
    ensure((spread.mean - 14.0 / 3.0).abs() < 1e-12 && (spread.std - (28.0f64 / 3.0).sqrt()).abs() < 1e-12, format!("[2,6,14] -> {spread:?}"))?;
    ensure((spread.mean - 4.667).abs() < 5e-4 && (spread.std - 3.055).abs() < 5e-4, "hand values 4.667 / 3.055 not reproduced")?;
    let none = stats(&[], 10.0)?;
    ensure(none.n_cc == 0 && none.d_cc.is_none() && none.t_cc.is_none(), "zero events must give absent stats")?;

    let mut worst = 0.0f64;
    let h = 1e-5;
    for m in 0..10 {
        let radius = m % 2;
        let d = feature_dim(radius);
        let model = PerceiverModel {
            window_radius: radius,
            weights: (0..NUM_CLASSES * d).map(|_| r.random_range(-1.0..1.0)).collect(),
            bias: (0..NUM_CLASSES).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let batch: Vec<(Vec<f64>, ClassId)> =
            (0..16).map(|_| ((0..d).map(|_| r.random_range(0.0..1.0)).collect(), ClassId::ALL[r.random_range(0..NUM_CLASSES)])).collect();
        let (_, grad) = loss_and_grad(&model, &batch).map_err(|e| e.to_string())?;
        let n_w = model.weights.len();
        for k in 0..n_w + model.bias.len() {
            let nudge = |delta: f64| {
                let mut m2 = model.clone();
                if k < n_w {
                    m2.weights[k] += delta;
                } else {
                    m2.bias[k - n_w] += delta;
                }
                loss_and_grad(&m2, &batch).map(|(l, _)| l)
            };
            let numeric = (nudge(h).map_err(|e| e.to_string())? - nudge(-h).map_err(|e| e.to_string())?) / (2.0 * h);
            let analytic = if k < n_w { grad.weights[k] } else { grad.bias[k - n_w] };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            ensure(rel <= 1e-4, format!("model {m} coordinate {k}: analytic {analytic} vs numeric {numeric}"))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("100 grid pairs match brute-force IoU/mIoU exactly; campaign_stats hand cases exact; 10 gradient checks, worst relative error {worst:.2e}"))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"perception": {"channel": {"quality": 0.2}}, "stop": {"max_km": 3.0}}"#).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_aeye"))
            .args(["campaign", "--seed", "21", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), format!("campaign exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)))?;
        Ok(tree(&out))
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure(a.keys().any(|p| p.ends_with("campaign_log.json")), "no campaign log written")?;
    let records = a.keys().filter(|p| p.starts_with("records") && p.ends_with("manifest.json")).count().saturating_sub(1);
    ensure(records > 0, "campaign captured no records to compare")?;
    ensure(a == b, "outputs differ between runs")?;
    Ok(format!("two `aeye campaign` runs wrote {} byte-identical files ({records} records)", a.len()))
}

fn main() {
    // positional arguments select criteria by substring, as libtest filters do
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let (mut failed, mut ran) = (0, 0);
    let mut report = |name: &str, budget: Option<Duration>, run: &mut dyn FnMut() -> Verdict| {
        if !selected(name) {
            return;
        }
        ran += 1;
        let t = Instant::now();
        let verdict = run();
        let secs = t.elapsed();
        let verdict = match (verdict, budget) {
            (Ok(_), Some(b)) if secs > b => Err(format!("took {:.1} s, budget {:.0} s", secs.as_secs_f64(), b.as_secs_f64())),
            (v, _) => v,
        };
        match verdict {
            Ok(msg) => println!("PASS {name}: {msg} [{:.1} s]", secs.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{:.1} s]", secs.as_secs_f64());
            }
        }
    };
    report("capture_fidelity", Some(Duration::from_secs(60)), &mut capture_fidelity);
    report("fixed_size_curation", None, &mut fixed_size_curation);
    let t = Instant::now();
    let session = SessionConfig::default();
    let experiment = if selected("pixel_matching") || selected("enrichment_effect") {
        run_experiment(&session, &session.experiment).map_err(|e| e.to_string())
    } else {
        Err("not run".into())
    };
    let experiment_secs = t.elapsed();
    report("pixel_matching", None, &mut || pixel_matching(experiment.as_ref().ok()));
    report("enrichment_effect", None, &mut || {
        let v = enrichment_effect(&experiment);
        match v {
            Ok(msg) if experiment_secs > Duration::from_secs(600) => Err(format!("{msg}; took {:.0} s, budget 600 s", experiment_secs.as_secs_f64())),
            Ok(msg) => Ok(format!("{msg} (experiment {:.1} s)", experiment_secs.as_secs_f64())),
            e => e,
        }
    });
    report("frequency_effect", Some(Duration::from_secs(300)), &mut frequency_effect);
    report("metric_oracles", None, &mut metric_oracles);
    report("determinism", None, &mut determinism);
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
