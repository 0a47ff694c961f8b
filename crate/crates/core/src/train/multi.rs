use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{train_run, EpochRecord, Representations, RunResult};
use crate::analysis::{BenchmarkEntry, PartialMetrics};
use crate::binfmt::{self, Header};
use crate::bundle::FeatureBundle;
use crate::error::{Error, Result};
use crate::models::save_checkpoint;

pub const RUN_CONFIG: &str = "config.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const REPS_FILE: &str = "reps.bin";
pub const REPS_INDEX: &str = "reps.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricStats { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: PartialMetrics,
}

/// Per-metric mean and std of the test metrics over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model_name: String,
    pub dataset_name: String,
    pub seeds: Vec<u64>,
    pub acc2: MetricStats,
    pub f1: MetricStats,
    pub mae: MetricStats,
    /// Absent when any seed's test correlation was undefined.
    pub corr: Option<MetricStats>,
    pub runs: Vec<SeedSummary>,
}

impl Aggregate {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Validation("cannot aggregate zero runs".into()))?;
        let pick = |f: fn(&PartialMetrics) -> f64| MetricStats::of(&runs.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
        let corrs: Option<Vec<f64>> = runs.iter().map(|r| r.test.corr).collect();
        Ok(Aggregate {
            model_name: first.config.model.model_name.clone(),
            dataset_name: first.config.dataset_name.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            acc2: pick(|m| m.acc2),
            f1: pick(|m| m.f1),
            mae: pick(|m| m.mae),
            corr: corrs.map(|c| MetricStats::of(&c)),
            runs: runs
                .iter()
                .map(|r| SeedSummary {
                    seed: r.seed,
                    best_epoch: r.best_epoch,
                    epochs_run: r.history.len(),
                    test: r.test,
                })
                .collect(),
        })
    }

    /// Mean metrics for a benchmark table; an undefined correlation renders
    /// as "-".
    pub fn benchmark_entry(&self) -> BenchmarkEntry {
        BenchmarkEntry {
            acc2: self.acc2.mean,
            f1: self.f1.mean,
            mae: self.mae.mean,
            corr: self.corr.map(|c| c.mean),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiSeedResult {
    pub aggregate: Aggregate,
    pub runs: Vec<RunResult>,
    /// Parent directory of the seed directories, when written.
    pub out_dir: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RepsIndex {
    ids: Vec<String>,
    /// Record names and `[N, d]` shapes, in file order.
    records: Vec<(String, Vec<usize>)>,
}

fn write_reps(reps: &Representations, dir: &Path) -> Result<()> {
    let n = reps.ids.len();
    let preds: Vec<f32> = reps.preds.iter().map(|&v| v as f32).collect();
    let labels: Vec<f32> = reps.labels.iter().map(|&v| v as f32).collect();
    let mut records: Vec<(String, usize, &[f32])> = vec![("fusion".into(), reps.fusion.shape()[1], reps.fusion.data())];
    for (m, t) in &reps.uni {
        records.push((format!("uni.{m}"), t.shape()[1], t.data()));
    }
    records.push(("pred".into(), 1, &preds));
    records.push(("label".into(), 1, &labels));
    let path = dir.join(REPS_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for (_, d, data) in &records {
        binfmt::write_record(&mut w, Header { n, t: 1, d: *d }, data).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let index = RepsIndex {
        ids: reps.ids.clone(),
        records: records.iter().map(|(name, d, _)| (name.clone(), vec![n, *d])).collect(),
    };
    write_text(&dir.join(REPS_INDEX), &(serde_json::to_string_pretty(&index)? + "\n"))
}

/// Writes `config.json`, `history.jsonl`, `checkpoint/` and `reps.bin` for
/// one seed.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(RUN_CONFIG), &(serde_json::to_string_pretty(&result.config)? + "\n"))?;
    write_text(&dir.join(HISTORY_FILE), &history_jsonl(&result.history)?)?;
    save_checkpoint(&result.model, &dir.join(CHECKPOINT_DIR))?;
    write_reps(&result.reps, dir)
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

pub fn write_aggregate(aggregate: &Aggregate, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join(AGGREGATE_FILE), &(serde_json::to_string_pretty(aggregate)? + "\n"))
}

pub fn read_aggregate(path: &Path) -> Result<Aggregate> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Creates `<base>/<model>/<timestamp>` (suffixed if it already exists).
pub fn timestamped_run_root(base: &Path, model_name: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let parent = base.join(model_name);
    let mut dir = parent.join(&stamp);
    let mut k = 1;
    while dir.exists() {
        dir = parent.join(format!("{stamp}-{k}"));
        k += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Trains every seed in `config.seeds` (concurrently on the worker pool),
/// writing each seed directory as soon as it finishes and `aggregate.json`
/// once all succeeded.
pub fn multi_seed_run(config: &TrainConfig, bundle: &FeatureBundle, out_dir: Option<&Path>) -> Result<MultiSeedResult> {
    config.validate()?;
    let outcomes: Vec<Result<RunResult>> = crate::worker_pool().install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let run = train_run(config, bundle, seed)?;
                if let Some(dir) = out_dir {
                    write_run(&run, &dir.join(seed_dir_name(seed)))?;
                }
                Ok(run)
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(outcomes.len());
    for (outcome, &seed) in outcomes.into_iter().zip(&config.seeds) {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                return Err(Error::SeedFailed {
                    seed,
                    source: Box::new(e),
                })
            }
        }
    }
    let aggregate = Aggregate::from_runs(&runs)?;
    if let Some(dir) = out_dir {
        write_aggregate(&aggregate, dir)?;
    }
    Ok(MultiSeedResult {
        aggregate,
        runs,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}
