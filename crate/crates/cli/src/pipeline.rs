//! Pipeline stages. Each reads the artifacts of the stages before it from
//! the output directory, so a long run can be resumed stage by stage.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use tmc_core::epoching::{
    balance, eligible_patient, label_spans, read_manifest, select_lead_seizures, split,
    to_timeline, window_spans, write_manifest, EpochError, FileExtent, LabeledSpan, Sample,
    SpanIssue, Split, WindowDataset,
};
use tmc_core::evaluation::{compare_reports, Comparison, EvalReport};
use tmc_core::experiment::{align_to, score_samples};
use tmc_core::models::{Model, ModelConfig};
use tmc_core::signal::{
    format_offsets, format_summary, parse_offsets, parse_summary, read_edf_file, synth_recording,
    write_edf, Recording, SeizureAnnotation,
};
use tmc_core::training::{cross_validate, history_tsv, train, EpochRecord};
use tmc_core::{Error, ErrorKind, Scalar};

use crate::config::{DataConfig, ExperimentConfig, Precision};
use crate::ConfigError;

pub const CONFIG_FILE: &str = "config.toml";
pub const INGEST_FILE: &str = "ingest.json";
pub const SPANS_FILE: &str = "spans.json";
pub const WINDOWS_FILE: &str = "windows.tsv";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_FILE: &str = "model.toml";
pub const HISTORY_FILE: &str = "history.tsv";
pub const TRAIN_FILE: &str = "train.json";
pub const CV_FILE: &str = "cv.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const COMPARISON_FILE: &str = "comparison.json";

/// Converts a core error and attaches context, keeping the typed error in
/// the chain for [`exit_code`].
trait CoreContext<T> {
    fn ctx(self, what: impl Display) -> Result<T>;
}

impl<T, E: Into<Error>> CoreContext<T> for std::result::Result<T, E> {
    fn ctx(self, what: impl Display) -> Result<T> {
        self.map_err(|e| anyhow::Error::new(e.into()).context(what.to_string()))
    }
}

/// Process exit status for a failed command: 2 configuration, 3 data,
/// 4 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if cause.is::<IneligiblePatient>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            };
        }
    }
    3
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))
        .ctx("reading input")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::io(path.display().to_string(), e))
        .ctx("writing output")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read(path)
        .with_context(|| format!("{} is missing; run the earlier stage first", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write(path, text)
}

/// Validates the config, creates the output directory and records the
/// config there. An existing record must describe the same experiment;
/// `jobs` and `allow_ineligible` do not change results and may differ.
pub fn claim_output(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::io(out.display().to_string(), e))
        .ctx("creating output directory")?;
    let path = out.join(CONFIG_FILE);
    if path.exists() {
        let previous = ExperimentConfig::load(&path)?;
        let neutral = |c: &ExperimentConfig| ExperimentConfig {
            jobs: 1,
            allow_ineligible: false,
            ..c.clone()
        };
        if neutral(&previous) != neutral(cfg) {
            return Err(ConfigError(format!(
                "{} holds artifacts of a different config; choose another output directory",
                out.display()
            ))
            .into());
        }
    }
    write(&path, cfg.to_toml())?;
    Ok(out)
}

// ------------------------------------------------------------------ data

/// Per-patient facts established at ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub patient: String,
    pub channels: Vec<String>,
    pub files: Vec<FileExtent>,
    /// Seizures on the patient timeline, sorted by onset.
    pub annotations: Vec<SeizureAnnotation>,
    pub lead_seizures: usize,
    pub eligible: bool,
}

fn edf_path(dir: &Path, file_id: &str) -> PathBuf {
    dir.join(format!("{file_id}.edf"))
}

/// Reads every file in the summary, placing each on the patient timeline.
fn ingest_edf(
    dir: &Path,
    summary: &Path,
    offsets: Option<&Path>,
    channels: &[String],
) -> Result<(Vec<FileExtent>, Vec<SeizureAnnotation>)> {
    let per_file = parse_summary(&read(&dir.join(summary))?).ctx("parsing seizure summary")?;
    let explicit = match offsets {
        Some(p) => Some(parse_offsets(&read(&dir.join(p))?).ctx("parsing file offsets")?),
        None => None,
    };
    let mut files = Vec::with_capacity(per_file.len());
    let mut starts = IndexMap::new();
    let mut cursor = 0.0;
    for file_id in per_file.keys() {
        let start = match &explicit {
            Some(map) => *map
                .get(file_id)
                .ok_or_else(|| anyhow!(Error::from(EpochError::MissingOffset(file_id.clone()))))?,
            None => cursor,
        };
        let rec = read_edf_file(&edf_path(dir, file_id), Some(channels))
            .ctx(format!("reading {file_id}"))?
            .with_start_time(start);
        log::info!("{file_id}: {:.0} s at {start} s", rec.duration());
        cursor = rec.end_time();
        starts.insert(file_id.clone(), start);
        files.push(FileExtent::of(&rec));
    }
    let annotations = to_timeline(&per_file, &starts).ctx("placing seizures on the timeline")?;
    Ok((files, annotations))
}

/// Loads the recordings named in `needed`, positioned as at ingest.
fn load_recordings(
    cfg: &ExperimentConfig,
    ingest: &IngestSummary,
    needed: &HashSet<&str>,
) -> Result<Vec<Recording>> {
    match &cfg.data {
        DataConfig::Synthetic { synth } => {
            let (rec, _) = synth_recording(synth).ctx("generating synthetic recording")?;
            Ok(vec![rec])
        }
        DataConfig::Edf { dir, channels, .. } => ingest
            .files
            .iter()
            .filter(|f| needed.contains(f.file_id.as_str()))
            .map(|f| {
                Ok(read_edf_file(&edf_path(dir, &f.file_id), Some(channels))
                    .ctx(format!("reading {}", f.file_id))?
                    .with_start_time(f.start))
            })
            .collect(),
    }
}

/// Writes the synthetic recording as EDF plus its summary and offsets, in
/// `<out>/synth`, so it can be fed back through the EDF path.
pub fn synth(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let DataConfig::Synthetic { synth } = &cfg.data else {
        return Err(ConfigError("synth needs data.source = \"synthetic\"".into()).into());
    };
    let out = claim_output(cfg)?.join("synth");
    std::fs::create_dir_all(&out)
        .map_err(|e| Error::io(out.display().to_string(), e))
        .ctx("creating synth directory")?;
    let (rec, annotations) = synth_recording(synth).ctx("generating synthetic recording")?;
    write(&edf_path(&out, &rec.file_id), write_edf(&rec))?;
    let summary = IndexMap::from([(rec.file_id.clone(), annotations)]);
    write(&out.join("summary.txt"), format_summary(&summary))?;
    write(
        &out.join("offsets.txt"),
        format_offsets(&IndexMap::from([(rec.file_id.clone(), 0.0)])),
    )?;
    Ok(out)
}

/// Reads the recordings, checks patient eligibility and records what was found.
pub fn ingest(cfg: &ExperimentConfig) -> Result<IngestSummary> {
    let out = claim_output(cfg)?;
    let (channels, files, annotations) = match &cfg.data {
        DataConfig::Synthetic { synth } => {
            let (rec, annotations) =
                synth_recording(synth).ctx("generating synthetic recording")?;
            (rec.labels.clone(), vec![FileExtent::of(&rec)], annotations)
        }
        DataConfig::Edf {
            dir,
            summary,
            offsets,
            channels,
        } => {
            let (files, annotations) = ingest_edf(dir, summary, offsets.as_deref(), channels)?;
            (channels.clone(), files, annotations)
        }
    };
    let lead = select_lead_seizures(&annotations, cfg.policy.interictal_gap_hours)
        .ctx("selecting lead seizures")?;
    let summary = IngestSummary {
        patient: cfg.patient.clone(),
        eligible: eligible_patient(&annotations, channels.len()),
        lead_seizures: lead.len(),
        channels,
        files,
        annotations,
    };
    write_json(&out.join(INGEST_FILE), &summary)?;
    if !summary.eligible {
        let msg = format!(
            "patient {} is not eligible: {} channels, {} lead seizures (need 23 and 3)",
            summary.patient,
            summary.channels.len(),
            summary.lead_seizures
        );
        if !cfg.allow_ineligible {
            return Err(IneligiblePatient(msg).into());
        }
        log::warn!("{msg}; continuing");
    }
    Ok(summary)
}

/// The patient fails the selection rule; a data error.
#[derive(Debug, thiserror::Error)]
#[error("{0} (pass --allow-ineligible to continue anyway)")]
pub struct IneligiblePatient(pub String);

// ------------------------------------------------------------- windowing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpansArtifact {
    pub spans: Vec<LabeledSpan>,
    pub issues: Vec<SpanIssue>,
}

#[derive(Debug, Clone)]
pub struct Segmented {
    pub spans: Vec<LabeledSpan>,
    /// Every window before balancing.
    pub windows: Vec<Sample>,
    pub samples: Vec<Sample>,
    pub split: Split,
}

const WINDOWS_HEADER: &str = "file_id\tstart_sample\tstart_second\tlabel\tspan";

fn windows_tsv(windows: &[Sample]) -> String {
    let mut s = format!("{WINDOWS_HEADER}\n");
    for w in windows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            w.file_id,
            w.start_sample,
            w.start_second,
            w.label.as_u8(),
            w.span
        ));
    }
    s
}

/// Labels spans, tiles them into windows, balances and splits.
pub fn segment(cfg: &ExperimentConfig) -> Result<Segmented> {
    let out = claim_output(cfg)?;
    let ingest: IngestSummary = read_json(&out.join(INGEST_FILE))?;
    let extent: Vec<(f64, f64)> = ingest.files.iter().map(|f| (f.start, f.end())).collect();
    let labels = label_spans(&ingest.annotations, &cfg.policy, &extent).ctx("labeling spans")?;
    for issue in &labels.issues {
        log::warn!(
            "seizure {} at {} s: {}",
            issue.seizure,
            issue.onset,
            issue.reason
        );
    }
    let windows = window_spans(&ingest.files, &labels.spans, &cfg.window).ctx("windowing")?;
    let plan = cfg.split_plan();
    let samples = balance(&windows, plan.seed).ctx("balancing classes")?;
    let split = split(&samples, &plan).ctx("splitting")?;
    log::info!(
        "{} spans, {} windows, {} after balancing, {} test",
        labels.spans.len(),
        windows.len(),
        samples.len(),
        split.test.len()
    );
    write_json(
        &out.join(SPANS_FILE),
        &SpansArtifact {
            spans: labels.spans.clone(),
            issues: labels.issues,
        },
    )?;
    write(&out.join(WINDOWS_FILE), windows_tsv(&windows))?;
    write(&out.join(MANIFEST_FILE), write_manifest(&samples, &split))?;
    Ok(Segmented {
        spans: labels.spans,
        windows,
        samples,
        split,
    })
}

fn load_manifest(out: &Path) -> Result<(Vec<Sample>, Split)> {
    let path = out.join(MANIFEST_FILE);
    let text =
        read(&path).with_context(|| format!("{} is missing; run segment first", path.display()))?;
    read_manifest(&text).ctx(format!("parsing {}", path.display()))
}

fn files_of(samples: &[Sample]) -> HashSet<&str> {
    samples.iter().map(|s| s.file_id.as_str()).collect()
}

// -------------------------------------------------------------- training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub precision: Precision,
    pub param_count: usize,
    pub validation_fold: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub selected_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn train_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    out: &Path,
    recordings: &[Recording],
    samples: &[Sample],
    split: &Split,
) -> Result<TrainSummary> {
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let data = WindowDataset::new(recordings, samples, &cfg.window).ctx("indexing windows")?;
    let k = cfg.validation_fold;
    let train_idx = split.train_without(k);
    let val_idx = &split.folds[k];
    let model = Model::<T>::new(model_cfg.clone()).ctx("building model")?;
    let param_count = model.param_count();
    log::info!(
        "{}: {param_count} parameters, {} train / {} validation windows",
        model_cfg.kind(),
        train_idx.len(),
        val_idx.len()
    );
    let outcome = train(model, &data, &train_idx, val_idx, &train_cfg).ctx("training")?;
    outcome
        .model
        .save(&out.join(CHECKPOINT_FILE))
        .ctx("saving checkpoint")?;
    write(&out.join(MODEL_FILE), model_cfg.to_toml())?;
    write(&out.join(HISTORY_FILE), history_tsv(&outcome.history))?;
    if cfg.cross_validate {
        let cv = cross_validate::<T>(
            &model_cfg,
            &data,
            split,
            split.folds.len(),
            &train_cfg,
            cfg.jobs,
        )
        .ctx("cross-validating")?;
        write_json(&out.join(CV_FILE), &cv)?;
    }
    Ok(TrainSummary {
        model: model_cfg.kind().name().to_string(),
        precision: cfg.precision,
        param_count,
        validation_fold: k,
        train_windows: train_idx.len(),
        validation_windows: val_idx.len(),
        selected_epoch: outcome.selected_epoch,
        history: outcome.history,
    })
}

/// Trains on every fold but the validation one and saves the selected model.
pub fn train_stage(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let out = claim_output(cfg)?;
    let ingest: IngestSummary = read_json(&out.join(INGEST_FILE))?;
    let (samples, split) = load_manifest(&out)?;
    if split.folds.len() <= cfg.validation_fold {
        return Err(ConfigError(format!("manifest has {} folds", split.folds.len())).into());
    }
    let recordings = load_recordings(cfg, &ingest, &files_of(&samples))?;
    let summary = match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &out, &recordings, &samples, &split)?,
        Precision::F64 => train_typed::<f64>(cfg, &out, &recordings, &samples, &split)?,
    };
    write_json(&out.join(TRAIN_FILE), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------ evaluation

fn eval_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    out: &Path,
    recordings: &[Recording],
    samples: &[Sample],
) -> Result<EvalReport> {
    let model_cfg =
        ModelConfig::from_toml(&read(&out.join(MODEL_FILE))?).ctx("parsing model config")?;
    let model =
        Model::<T>::load(model_cfg, &out.join(CHECKPOINT_FILE)).ctx("loading checkpoint")?;
    score_samples(
        &cfg.patient,
        &model,
        recordings,
        samples,
        &cfg.window,
        cfg.train.batch_size,
    )
    .ctx("scoring")
}

/// Scores the held-out test windows. With `align`, scores instead the
/// windows of that report, each tiled by this experiment's shorter windows,
/// so the two reports can be compared pair by pair.
pub fn eval_stage(cfg: &ExperimentConfig, align: Option<&Path>) -> Result<EvalReport> {
    let out = claim_output(cfg)?;
    let ingest: IngestSummary = read_json(&out.join(INGEST_FILE))?;
    let samples = match align {
        Some(path) => {
            let other = load_report(path)?;
            align_to(&other, cfg.window.length_seconds, cfg.window.fs).ctx("aligning windows")?
        }
        None => {
            let (samples, split) = load_manifest(&out)?;
            split.test.iter().map(|&i| samples[i].clone()).collect()
        }
    };
    let recordings = load_recordings(cfg, &ingest, &files_of(&samples))?;
    let report = match cfg.precision {
        Precision::F32 => eval_typed::<f32>(cfg, &out, &recordings, &samples)?,
        Precision::F64 => eval_typed::<f64>(cfg, &out, &recordings, &samples)?,
    };
    write(&out.join(REPORT_FILE), report.to_json())?;
    write(&out.join(SCORES_FILE), report.to_csv())?;
    Ok(report)
}

/// Ingest, segment, train and evaluate in one go.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    ingest(cfg)?;
    segment(cfg)?;
    train_stage(cfg)?;
    eval_stage(cfg, None)
}

/// A report file, or a directory holding `report.json`.
pub fn load_report(path: &Path) -> Result<EvalReport> {
    let file = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let text = read(&file)?;
    EvalReport::from_json(&text).with_context(|| format!("parsing {}", file.display()))
}

/// McNemar comparison of two reports. Short-window scores are averaged
/// into the longer windows first.
pub fn compare_models(a: &Path, b: &Path) -> Result<Comparison> {
    let (ra, rb) = (load_report(a)?, load_report(b)?);
    compare_reports(&ra, &rb).ctx(format!("comparing {} with {}", a.display(), b.display()))
}

pub const TABLE_HEADER: &str = "patient\tmodel\tacc\tauc\tss\tsp";

/// One summary row per report.
pub fn report_rows(paths: &[PathBuf]) -> Result<Vec<String>> {
    paths
        .iter()
        .map(|p| Ok(load_report(p)?.table_row()))
        .collect()
}
