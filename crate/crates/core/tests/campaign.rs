//! Headless campaign behaviour through the public API.

use aeye_core::arbitration::InterventionCause;
use aeye_core::capture::load_all;
use aeye_core::perception::DegradationParams;
use aeye_core::service::campaign::{read_log, run_and_persist, run_headless_campaign};
use aeye_core::service::config::{PerceptionSource, SessionConfig, StopCondition};
use aeye_core::service::wire::replay;

fn at_quality(seed: u64, quality: f64) -> SessionConfig {
    let mut cfg = SessionConfig::default().with_seed(seed);
    cfg.perception = PerceptionSource::Channel(DegradationParams { quality, seed, ..DegradationParams::default() });
    cfg
}

#[test]
fn perfect_perception_needs_no_rescue_over_ten_km() {
    let out = run_headless_campaign(&at_quality(2, 1.0), &StopCondition::km(10.0)).unwrap();
    assert!(out.log.distance_km >= 10.0);
    let perception_caused = out.log.events.iter().filter(|e| e.cause != InterventionCause::Boredom).count();
    assert_eq!(perception_caused, 0, "{:?}", out.log.events);
}

#[test]
fn same_config_same_log() {
    let cfg = at_quality(5, 0.3);
    let a = run_headless_campaign(&cfg, &StopCondition::km(2.0)).unwrap();
    let b = run_headless_campaign(&cfg, &StopCondition::km(2.0)).unwrap();
    assert_eq!(serde_json::to_vec(&a.log).unwrap(), serde_json::to_vec(&b.log).unwrap());
    assert_eq!(a.records, b.records);
}

#[test]
fn persisted_records_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let (out, written) = run_and_persist(&at_quality(3, 0.3), &StopCondition::cc(3), dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    assert_eq!(load_all(&dir.path().join("records")).unwrap(), out.records);
    assert_eq!(read_log(dir.path()).unwrap(), out.log);
    let frames = replay(&out.records[0]);
    assert_eq!(frames.len(), 30);
    assert!(frames.windows(2).all(|w| w[1].tick == w[0].tick + 1) && frames.iter().all(|f| f.replay));
    for e in &out.log.events {
        assert_ne!(e.cause, InterventionCause::Boredom, "headless events are auto-labelled");
    }
}
