//! `aeye`: campaigns, curation, training, evaluation, live serving and replay.
//!
//! Exit codes: 0 success, 2 bad config or arguments, 3 anything failing at run time.

use aeye_core::capture::{load, load_all, load_dir};
use aeye_core::curation::{class_stats, generate_with_validation, load_dataset, save_dataset, ClassPixelStats, EnrichmentReport};
use aeye_core::eval::{confusion_on, Score};
use aeye_core::experiment::{build_seed_data, build_seed_data_from, run_experiment};
use aeye_core::grid::ClassId;
use aeye_core::perception::{train, PerceiverModel};
use aeye_core::service::campaign::{run_and_persist, RECORDS_DIR, STATS_FILE};
use aeye_core::service::config::{default_data_dir, SessionConfig, StopCondition};
use aeye_core::service::server::serve_blocking;
use aeye_core::service::wire::{encode, replay, WireMessage};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const MODEL_FILE: &str = "model.bin";

#[derive(Parser)]
#[command(name = "aeye", version, about = "Corner-case capture and curation for a two-driver rig")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Session config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to a subdirectory of $AEYE_DATA_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Drive a headless campaign and write its log, stats and records.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_km: Option<f64>,
        #[arg(long)]
        max_cc: Option<usize>,
        #[arg(long)]
        max_minutes: Option<f64>,
    },
    /// Train a perceiver on a saved dataset, or on freshly generated natural scenes.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Build the natural, corner-case-enriched and pedestrian-enriched training sets.
    Curate {
        #[command(flatten)]
        common: Common,
        /// Records directory to take corner cases from instead of harvesting.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Score one model on one dataset, or run the full training comparison.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "dataset")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        dataset: Option<PathBuf>,
    },
    /// Run a live two-driver session over websockets.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Emit a recorded corner case as wire frames, one JSON message per line.
    Replay {
        #[command(flatten)]
        common: Common,
        /// A record directory, or a record id under --records.
        record: String,
        #[arg(long)]
        records: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(common: &Common) -> Result<SessionConfig, Failure> {
    let cfg = match &common.config {
        Some(path) => SessionConfig::load(path).map_err(|e| Failure::Config(e.into()))?,
        None => SessionConfig::default(),
    };
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn out_dir(common: &Common, name: &str) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| default_data_dir().join(name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Campaign { common, max_km, max_cc, max_minutes } => {
            let cfg = load_config(&common)?;
            let stop = if max_km.is_some() || max_cc.is_some() || max_minutes.is_some() {
                StopCondition { max_km, max_cc, max_minutes }
            } else {
                cfg.stop
            };
            stop.validate().map_err(|e| Failure::Config(e.into()))?;
            let out = out_dir(&common, "campaign")?;
            let (output, written) = run_and_persist(&cfg, &stop, &out)?;
            let stats = output.stats()?;
            println!(
                "{:.3} km, {:.2} min, {} corner cases ({} uncaptured), {} collisions",
                stats.distance_km, stats.time_min, stats.n_cc, output.uncaptured, output.log.collisions
            );
            if let Some(d) = stats.d_cc {
                println!("km between corner cases: {:.3} +/- {:.3}", d.mean, d.std);
            }
            println!("{} records in {}, summary in {}", written.len(), out.join(RECORDS_DIR).display(), out.join(STATS_FILE).display());
        }
        Command::Train { common, dataset } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "train")?;
            let (train_set, validation) = match dataset {
                Some(dir) => (load_dataset(&dir)?, None),
                None => {
                    let e = &cfg.experiment;
                    let (t, v) = generate_with_validation(&e.sampler, e.scenes, e.frames_per_scene, e.validation_fraction, e.seed)?;
                    (t, Some(v))
                }
            };
            let model = train(&train_set, &cfg.train)?;
            let path = out.join(MODEL_FILE);
            fs::write(&path, model.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
            #[derive(Serialize)]
            struct TrainReport {
                dataset: String,
                frames: usize,
                training: Score,
                validation: Option<Score>,
            }
            let report = TrainReport {
                dataset: train_set.name.clone(),
                frames: train_set.n_frames(),
                training: Score::of(&confusion_on(&model, &train_set)?),
                validation: validation.as_ref().map(|v| confusion_on(&model, v).map(|c| Score::of(&c))).transpose()?,
            };
            write_json(&out.join("train_report.json"), &report)?;
            println!("model written to {}", path.display());
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Curate { common, records } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "curate")?;
            let e = &cfg.experiment;
            let data = match records {
                Some(dir) => build_seed_data_from(e, e.seed, load_all(&dir)?)?,
                None => build_seed_data(&cfg, e, e.seed)?,
            };
            #[derive(Serialize)]
            struct SetSummary {
                name: String,
                scenes: usize,
                frames: usize,
                pedestrian_cells_per_scene: f64,
                stats: ClassPixelStats,
            }
            #[derive(Serialize)]
            struct CurationSummary {
                seed: u64,
                sets: Vec<SetSummary>,
                enrichment: EnrichmentReport,
                corner_cases: Vec<String>,
            }
            let mut sets = Vec::new();
            let named = data.training_sets().into_iter().chain([("validation", &data.validation), ("safety_critical", &data.cc_test)]);
            for (name, ds) in named {
                save_dataset(ds, &out.join(name))?;
                let stats = class_stats(ds)?;
                sets.push(SetSummary {
                    name: name.into(),
                    scenes: ds.n_scenes(),
                    frames: ds.n_frames(),
                    pedestrian_cells_per_scene: stats.mean(ClassId::Pedestrian),
                    stats,
                });
            }
            let summary = CurationSummary {
                seed: data.seed,
                sets,
                enrichment: data.enrichment.clone(),
                corner_cases: data.cc_records.iter().map(|r| r.id.clone()).collect(),
            };
            write_json(&out.join("curation.json"), &summary)?;
            for s in &summary.sets {
                println!("{:<20} {:>4} scenes {:>5} frames {:>9.1} pedestrian cells/scene", s.name, s.scenes, s.frames, s.pedestrian_cells_per_scene);
            }
        }
        Command::Evaluate { common, model, dataset } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, "evaluate")?;
            if let (Some(model), Some(dataset)) = (model, dataset) {
                let bytes = fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
                let m = PerceiverModel::from_bytes(&bytes)?;
                let ds = load_dataset(&dataset)?;
                let score = Score::of(&confusion_on(&m, &ds)?);
                write_json(&out.join("score.json"), &score)?;
                println!("{}", serde_json::to_string_pretty(&score)?);
            } else {
                let outcome = run_experiment(&cfg, &cfg.experiment)?;
                write_json(&out.join("report.json"), &outcome.report)?;
                print!("{}", outcome.report.to_table());
            }
        }
        Command::Serve { common, listen, static_dir } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            if static_dir.is_some() {
                cfg.static_dir = static_dir;
            }
            let out = out_dir(&common, "live")?;
            let summary = serve_blocking(cfg, out)?;
            println!("session ended: {} labelled records", summary.persisted.len());
        }
        Command::Replay { common, record, records } => {
            load_config(&common)?;
            let path = PathBuf::from(&record);
            let rec = if path.join("manifest.json").is_file() {
                load_dir(&path)?
            } else {
                let root = records.unwrap_or_else(|| default_data_dir().join("campaign").join(RECORDS_DIR));
                if !root.is_dir() {
                    return Err(anyhow!("no record {record:?}: {} is not a directory", root.display()).into());
                }
                load(&root, &record)?
            };
            let lines: Vec<String> =
                replay(&rec).into_iter().enumerate().map(|(i, f)| encode(i as u64 + 1, &WireMessage::StateFrame(f))).collect();
            match &common.out {
                Some(_) => {
                    let out = out_dir(&common, "replay")?;
                    let path = out.join(format!("{}.jsonl", rec.id));
                    let mut file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                    for l in &lines {
                        writeln!(file, "{l}")?;
                    }
                    eprintln!("{} frames of {} written to {}", lines.len(), rec.id, path.display());
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    for l in &lines {
                        writeln!(stdout, "{l}")?;
                    }
                }
            }
        }
    }
    Ok(())
}
