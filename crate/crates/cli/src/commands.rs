use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use msa_core::analysis::{
    compute_metrics_lenient, curve_csv, make_benchmark_report, pca_project, read_history, write_projection_csv,
    BenchmarkResults, MetricOptions, ProjectionRow,
};
use msa_core::bundle::{read_bundle, write_bundle, FeatureBundle, Modality, Split};
use msa_core::extract::{
    extract_sample, read_wav, run_dataset, sample_bundle, stft, DatasetOptions, Extractor, ExtractorConfig,
    FailurePolicy, LabelRow, Window,
};
use msa_core::models::{load_checkpoint, Model};
use msa_core::robustness::{
    evaluate_tagged, perturb_bundle, render_tagged_table, synthesize_variants, PerturbationSpec, TaggedEvalOptions,
    TaggedEvalReport,
};
use msa_core::train::{
    get_config_regression, multi_seed_run, read_aggregate, timestamped_run_root, predict_indices, TrainConfig,
    AGGREGATE_FILE, CHECKPOINT_DIR, HISTORY_FILE, RUN_CONFIG,
};
use msa_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{EvalArgs, ExtractArgs, PerturbArgs, PerturbFlags, PredictArgs, ReportArgs, Style, TrainArgs};

pub const METRICS_FILE: &str = "metrics.json";
pub const TAGGED_FILE: &str = "tagged.json";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const FUSION_FILE: &str = "fusion.csv";
pub const STFT_FILE: &str = "stft.csv";

const EVAL_BATCH: usize = 64;
const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

fn print_json(value: &Value) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Table label for a registry model name.
pub fn display_name(model_name: &str) -> String {
    match model_name {
        "mult" | "mult_lite" => "MulT".into(),
        other => other.to_ascii_uppercase(),
    }
}

/// Extraction config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractSpec {
    extractors: Vec<ExtractorConfig>,
    #[serde(default)]
    dataset_name: Option<String>,
    #[serde(default)]
    label_range: Option<(f64, f64)>,
    /// Tolerated share of failed samples; any failure aborts when absent.
    #[serde(default)]
    max_failure_fraction: Option<f64>,
}

impl ExtractSpec {
    fn load(path: &Path) -> CliResult<Self> {
        serde_json::from_str(&read_text(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
    }
}

pub fn extract(a: &ExtractArgs) -> CliResult<()> {
    let spec = ExtractSpec::load(&a.config)?;
    let defaults = DatasetOptions::default();
    let options = DatasetOptions {
        dataset_name: spec.dataset_name.unwrap_or(defaults.dataset_name),
        label_range: spec.label_range.unwrap_or(defaults.label_range),
        policy: match spec.max_failure_fraction {
            Some(f) => FailurePolicy::Lenient { max_failure_fraction: f },
            None => FailurePolicy::Strict,
        },
    };
    let labels = a.labels.clone().unwrap_or_else(|| a.dataset_dir.join("labels.csv"));
    let bundle = run_dataset(&a.dataset_dir, &spec.extractors, &labels, &options)?;
    write_bundle(&bundle, &a.out)?;
    let dims: BTreeMap<String, usize> = bundle.blocks.iter().map(|(m, b)| (m.to_string(), b.feature_dim)).collect();
    print_json(&json!({ "bundle": a.out, "samples": bundle.len(), "feature_dims": dims }))
}

fn train_config(a: &TrainArgs, bundle: &FeatureBundle) -> CliResult<TrainConfig> {
    let dataset = &bundle.manifest.dataset_name;
    let mut config = match (&a.config, &a.model) {
        (Some(path), model) => {
            let text = read_text(path)?;
            let raw: Value = serde_json::from_str(&text)?;
            let mut c = TrainConfig::from_json(&text)?;
            if let Some(m) = model {
                if raw.pointer("/model/model_name").is_some() && c.model.model_name != *m {
                    return Err(CliError::Usage(format!(
                        "--model {m} conflicts with model '{}' in {}",
                        c.model.model_name,
                        path.display()
                    )));
                }
                let base = get_config_regression(m, dataset)?;
                c.model.model_name = base.model.model_name;
                c.model.multitask = base.model.multitask;
            }
            if raw.get("dataset_name").is_none() {
                c.dataset_name = dataset.clone();
            }
            c
        }
        (None, Some(m)) => get_config_regression(m, dataset)?,
        (None, None) => return Err(CliError::Usage("train needs --model or --config".into())),
    };
    config.apply_overrides(&a.overrides)?;
    if !a.seeds.is_empty() {
        config.seeds = a.seeds.clone();
    }
    config.validate()?;
    Ok(config)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let bundle = read_bundle(&a.bundle)?;
    let config = train_config(a, &bundle)?;
    let out = match &a.out {
        Some(dir) => dir.clone(),
        None => timestamped_run_root(Path::new(DEFAULT_RUNS_DIR), &config.model.model_name)?,
    };
    let result = multi_seed_run(&config, &bundle, Some(&out))?;
    print_json(&json!({ "run_dir": out, "aggregate": result.aggregate }))
}

/// Accepts a checkpoint directory or a seed run directory holding one.
fn resolve_checkpoint(path: &Path) -> (PathBuf, Option<PathBuf>) {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.is_dir() {
        (nested, Some(path.to_path_buf()))
    } else {
        let run_dir = path.parent().filter(|p| p.join(HISTORY_FILE).is_file()).map(Path::to_path_buf);
        (path.to_path_buf(), run_dir)
    }
}

fn perturbation_specs(flags: &PerturbFlags) -> CliResult<Vec<PerturbationSpec>> {
    let mut specs = Vec::new();
    match (flags.snr_db, flags.modality) {
        (Some(snr), Some(m)) => specs.push(PerturbationSpec::noise(m, snr, flags.seed)),
        (Some(_), None) => return Err(CliError::Usage("--snr-db needs --modality".into())),
        _ => {}
    }
    if let Some(m) = flags.drop {
        specs.push(PerturbationSpec::missing(m));
    }
    Ok(specs)
}

/// Serialized form of `tagged.json`.
#[derive(Serialize, Deserialize)]
struct TaggedFile {
    model: String,
    report: TaggedEvalReport,
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (ckpt, run_dir) = resolve_checkpoint(&a.checkpoint);
    let model: Model<f32> = load_checkpoint(&ckpt)?;
    let bundle = read_bundle(&a.bundle)?;
    let metric_opts = match run_dir.as_ref().map(|d| d.join(RUN_CONFIG)).filter(|p| p.is_file()) {
        Some(p) => TrainConfig::from_json(&read_text(&p)?)?.metrics,
        None => MetricOptions::default(),
    };
    let specs = perturbation_specs(&a.perturb)?;
    let indices = bundle.indices_of(a.split);
    if indices.is_empty() {
        return Err(Error::EmptySplit(a.split).into());
    }
    let mut evaluated = bundle.clone();
    for spec in &specs {
        evaluated = perturb_bundle(&evaluated, spec, Some(&indices))?;
    }
    let reps = predict_indices(&model, &evaluated, &indices, EVAL_BATCH)?;
    let metrics = compute_metrics_lenient(&reps.preds, &reps.labels, &metric_opts)?;
    let mut outputs = vec![METRICS_FILE, TAGGED_FILE];

    let explained = match pca_project(&reps.fusion, 3) {
        Ok(projection) => {
            let rows: Vec<ProjectionRow> = (0..reps.ids.len())
                .map(|i| ProjectionRow {
                    id: &reps.ids[i],
                    label: reps.labels[i],
                    pred: reps.preds[i],
                })
                .collect();
            fs::create_dir_all(&a.out).map_err(|source| Error::Io {
                path: a.out.clone(),
                source,
            })?;
            write_projection_csv(&a.out.join(PROJECTION_FILE), &projection, &rows)?;
            outputs.push(PROJECTION_FILE);
            Some(projection.explained_variance)
        }
        Err(e) => {
            log::warn!("skipping PCA projection: {e}");
            None
        }
    };

    let tagged = evaluate_tagged(
        &model,
        &bundle,
        &specs,
        &TaggedEvalOptions {
            split: Some(a.split),
            batch_size: EVAL_BATCH,
            metrics: metric_opts,
        },
    )?;
    let tagged = TaggedFile {
        model: display_name(model.name()),
        report: tagged,
    };
    write_text(&a.out.join(TAGGED_FILE), &(serde_json::to_string_pretty(&tagged)? + "\n"))?;

    if let Some(history) = run_dir.map(|d| d.join(HISTORY_FILE)).filter(|p| p.is_file()) {
        let records = read_history(&read_text(&history)?, &history)?;
        write_text(&a.out.join(CURVE_FILE), &curve_csv(&records))?;
        outputs.push(CURVE_FILE);
    }

    let summary = json!({
        "model": model.name(),
        "checkpoint": ckpt,
        "split": a.split,
        "n": reps.ids.len(),
        "perturbations": specs,
        "metrics": metrics,
        "explained_variance": explained,
    });
    write_text(&a.out.join(METRICS_FILE), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    print_json(&json!({ "out": a.out, "files": outputs, "metrics": metrics }))
}

fn matrix_csv(header_prefix: &str, cols: usize, rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = (0..cols).map(|j| format!("{header_prefix}{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// STFT frame parameters of the audio extractor, or the registry defaults.
fn stft_params(spec: &ExtractSpec, base: &Path) -> CliResult<(usize, usize)> {
    let audio = spec.extractors.iter().find(|c| c.modality == Modality::Audio);
    let resolved = match audio {
        Some(c) => c.resolve(base)?,
        None => ExtractorConfig::new(Modality::Audio, "stft").resolve(base)?,
    };
    Ok(match resolved {
        Extractor::Stft { n_fft, hop, .. } | Extractor::Mfcc { n_fft, hop, .. } => (n_fft, hop),
        _ => match ExtractorConfig::new(Modality::Audio, "stft").resolve(base)? {
            Extractor::Stft { n_fft, hop, .. } => (n_fft, hop),
            _ => unreachable!("stft resolves to Extractor::Stft"),
        },
    })
}

fn absolute(path: &Path) -> CliResult<String> {
    let abs = std::path::absolute(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(abs.to_string_lossy().into_owned())
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    if a.sample.is_none() && a.tokens.is_none() && a.vision.is_none() {
        return Err(CliError::Usage("predict needs at least one of --sample, --tokens, --vision".into()));
    }
    let (ckpt, _) = resolve_checkpoint(&a.checkpoint);
    let model: Model<f32> = load_checkpoint(&ckpt)?;
    let spec = ExtractSpec::load(&a.config)?;
    let base = a
        .dataset_dir
        .as_deref()
        .unwrap_or_else(|| a.config.parent().unwrap_or(Path::new(".")));

    let mut row = LabelRow::unlabelled("sample");
    row.text = a.tokens.clone();
    row.audio_path = a.sample.as_deref().map(absolute).transpose()?;
    row.vision_path = a.vision.as_deref().map(absolute).transpose()?;
    let features = extract_sample(&spec.extractors, base, &row)?;
    let dims: BTreeMap<Modality, usize> = model.config().inputs.iter().map(|(&m, d)| (m, d.feature_dim)).collect();
    let bundle = sample_bundle(&row.id, &features, &dims)?;
    let reps = predict_indices(&model, &bundle, &[0], 1)?;

    let fusion_path = a.out.join(FUSION_FILE);
    let width = reps.fusion.shape()[1];
    let fusion_row: Vec<f64> = reps.fusion.data().iter().map(|&v| v as f64).collect();
    write_text(&fusion_path, &matrix_csv("f", width, std::iter::once(fusion_row)))?;

    let (stft_path, stft_shape) = match &a.sample {
        Some(wav) => {
            let (n_fft, hop) = stft_params(&spec, base)?;
            let spectrogram = stft(&read_wav(wav)?, n_fft, hop, Window::Hann)?;
            let path = a.out.join(STFT_FILE);
            let rows = (0..spectrogram.frames).map(|f| spectrogram.frame(f).to_vec());
            write_text(&path, &matrix_csv("bin", spectrogram.bins, rows))?;
            (Some(path), Some([spectrogram.frames, spectrogram.bins]))
        }
        None => (None, None),
    };
    let missing: Vec<Modality> = bundle.samples()[0].missing.clone();
    print_json(&json!({
        "pred": reps.preds[0],
        "fusion_rep_path": fusion_path,
        "stft_path": stft_path,
        "stft_shape": stft_shape,
        "missing_modalities": missing,
    }))
}

pub fn perturb(a: &PerturbArgs) -> CliResult<()> {
    let specs = perturbation_specs(&a.perturb)?;
    if specs.is_empty() {
        return Err(CliError::Usage("perturb needs --snr-db with --modality, or --drop".into()));
    }
    let bundle = read_bundle(&a.bundle)?;
    let out = if a.variants {
        synthesize_variants(&bundle, &bundle.indices_of(Split::Test), &specs)?
    } else {
        let indices = a.split.map(|s| bundle.indices_of(s));
        let mut b = bundle;
        for spec in &specs {
            b = perturb_bundle(&b, spec, indices.as_deref())?;
        }
        b
    };
    write_bundle(&out, &a.out)?;
    print_json(&json!({ "bundle": a.out, "samples": out.len(), "perturbations": specs }))
}

/// Files named `name` under `root`, in path order.
fn find_files(root: &Path, name: &str) -> CliResult<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::Validation(format!("runs directory {} does not exist", root.display())).into());
    }
    let mut found = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Validation(format!("cannot scan {}: {e}", root.display())))?;
        if entry.file_type().is_file() && entry.file_name() == name {
            found.push(entry.into_path());
        }
    }
    if found.is_empty() {
        return Err(Error::Validation(format!("no {name} found under {}", root.display())).into());
    }
    Ok(found)
}

pub fn report(a: &ReportArgs) -> CliResult<()> {
    let text = match a.style {
        Style::Table4 => {
            let mut results: BenchmarkResults = IndexMap::new();
            for path in find_files(&a.runs, AGGREGATE_FILE)? {
                let agg = read_aggregate(&path)?;
                let row = results.entry(display_name(&agg.model_name)).or_default();
                if row.insert(agg.dataset_name.clone(), agg.benchmark_entry()).is_some() {
                    log::warn!(
                        "{}: replaces an earlier {} / {} result",
                        path.display(),
                        agg.model_name,
                        agg.dataset_name
                    );
                }
            }
            make_benchmark_report(&results, a.format)?
        }
        Style::Table5 => {
            let mut reports = IndexMap::new();
            for path in find_files(&a.runs, TAGGED_FILE)? {
                let file: TaggedFile = serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
                let mut name = file.model.clone();
                let mut k = 2;
                while reports.contains_key(&name) {
                    name = format!("{} #{k}", file.model);
                    k += 1;
                }
                reports.insert(name, file.report);
            }
            render_tagged_table(&reports, a.format)?
        }
    };
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
