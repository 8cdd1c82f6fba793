//! One patient end to end: labeled windows, a trained model, a test report.

use crate::epoching::{
    balance, label_spans, split, window_spans, FileExtent, LabelPolicy, Sample, SpanLabels, Split,
    SplitPlan, WindowDataset, WindowSpec,
};
use crate::evaluation::{EvalReport, WindowScore};
use crate::models::{Model, ModelConfig};
use crate::signal::{synth_recording, Recording, SeizureAnnotation, SynthSpec};
use crate::training::{predict, train, EpochRecord, TrainConfig};
use crate::{Error, Scalar};

/// Recordings plus every intermediate product of windowing.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub recordings: Vec<Recording>,
    pub annotations: Vec<SeizureAnnotation>,
    pub spans: SpanLabels,
    /// Every window before balancing.
    pub windows: Vec<Sample>,
    /// The balanced dataset the split indexes into.
    pub samples: Vec<Sample>,
    pub split: Split,
}

/// Labels, windows, balances and splits. `annotations` are on the patient
/// timeline and sorted by onset.
pub fn prepare(
    recordings: Vec<Recording>,
    annotations: Vec<SeizureAnnotation>,
    policy: &LabelPolicy,
    spec: &WindowSpec,
    plan: &SplitPlan,
) -> Result<Prepared, Error> {
    plan.validate()?;
    let files: Vec<FileExtent> = recordings.iter().map(FileExtent::of).collect();
    let extent: Vec<(f64, f64)> = files.iter().map(|f| (f.start, f.end())).collect();
    let spans = label_spans(&annotations, policy, &extent)?;
    for issue in &spans.issues {
        log::warn!(
            "seizure {} at {} s: {}",
            issue.seizure,
            issue.onset,
            issue.reason
        );
    }
    let windows = window_spans(&files, &spans.spans, spec)?;
    let samples = balance(&windows, plan.seed)?;
    let split = split(&samples, plan)?;
    Ok(Prepared {
        recordings,
        annotations,
        spans,
        windows,
        samples,
        split,
    })
}

/// [`prepare`] on a generated recording.
pub fn prepare_synthetic(
    synth: &SynthSpec,
    spec: &WindowSpec,
    plan: &SplitPlan,
) -> Result<Prepared, Error> {
    let (rec, annotations) = synth_recording(synth)?;
    prepare(vec![rec], annotations, &synth.policy, spec, plan)
}

/// A model trained on all folds but one and scored on the test set.
#[derive(Debug, Clone)]
pub struct HoldoutRun<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub report: EvalReport,
}

/// Trains with fold `val_fold` as validation and the remaining folds as
/// training data, then scores the held-out test windows.
pub fn fit_holdout<T: Scalar>(
    patient: &str,
    model_cfg: &ModelConfig,
    prepared: &Prepared,
    spec: &WindowSpec,
    val_fold: usize,
    cfg: &TrainConfig,
) -> Result<HoldoutRun<T>, Error> {
    let folds = prepared.split.folds.len();
    if val_fold >= folds {
        return Err(Error::Config(format!(
            "validation fold {val_fold} of {folds}"
        )));
    }
    let data = WindowDataset::new(&prepared.recordings, &prepared.samples, spec)?;
    let train_idx = prepared.split.train_without(val_fold);
    let val_idx = &prepared.split.folds[val_fold];
    let outcome = train(
        Model::<T>::new(model_cfg.clone())?,
        &data,
        &train_idx,
        val_idx,
        cfg,
    )?;
    let report = evaluate(patient, &outcome.model, prepared, spec, cfg.batch_size)?;
    Ok(HoldoutRun {
        model: outcome.model,
        history: outcome.history,
        selected_epoch: outcome.selected_epoch,
        report,
    })
}

/// Scores the test windows of `prepared` with `model`.
pub fn evaluate<T: Scalar>(
    patient: &str,
    model: &Model<T>,
    prepared: &Prepared,
    spec: &WindowSpec,
    batch_size: usize,
) -> Result<EvalReport, Error> {
    let test: Vec<Sample> = prepared
        .split
        .test
        .iter()
        .map(|&i| prepared.samples[i].clone())
        .collect();
    score_samples(
        patient,
        model,
        &prepared.recordings,
        &test,
        spec,
        batch_size,
    )
}

/// Scores arbitrary windows with `model` into a report.
pub fn score_samples<T: Scalar>(
    patient: &str,
    model: &Model<T>,
    recordings: &[Recording],
    samples: &[Sample],
    spec: &WindowSpec,
    batch_size: usize,
) -> Result<EvalReport, Error> {
    let data = WindowDataset::new(recordings, samples, spec)?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let scores = predict(model, &data, &all, batch_size)?;
    let windows = samples
        .iter()
        .zip(scores)
        .map(|(s, score)| WindowScore {
            file_id: s.file_id.clone(),
            start_sample: s.start_sample,
            start_second: s.start_second,
            span: s.span,
            label: s.label.as_u8(),
            score,
        })
        .collect();
    Ok(EvalReport::new(
        patient,
        model.config().kind().name(),
        spec.length_seconds,
        0.5,
        windows,
    )?)
}

/// Tiles each window of `report` with back-to-back windows of
/// `short_seconds`, so a short-window model can be scored on the same
/// stretches of signal. Each tile carries the index of its parent window as
/// its span.
pub fn align_to(report: &EvalReport, short_seconds: f64, fs: u32) -> Result<Vec<Sample>, Error> {
    let ratio = report.window_seconds / short_seconds;
    if !(ratio >= 1.0) || ratio.fract() != 0.0 {
        return Err(Error::Config(format!(
            "{short_seconds}-s windows do not tile {}-s windows",
            report.window_seconds
        )));
    }
    let len = (short_seconds * f64::from(fs)).round() as usize;
    let mut out = Vec::new();
    for (i, w) in report.windows.iter().enumerate() {
        let label = crate::epoching::Label::from_u8(w.label)
            .ok_or_else(|| Error::Config(format!("label {} in report", w.label)))?;
        for k in 0..ratio as usize {
            out.push(Sample {
                file_id: w.file_id.clone(),
                start_sample: w.start_sample + k * len,
                start_second: w.start_second + (k as f64) * short_seconds,
                label,
                span: i,
            });
        }
    }
    Ok(out)
}
