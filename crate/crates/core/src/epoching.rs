//! Preictal/interictal labelling, window tiling, balancing and splitting.
//!
//! All times here are seconds on a single patient timeline. Annotations read
//! from summary files are relative to their file; [`to_timeline`] shifts them.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::signal::{Recording, SeizureAnnotation};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpochError {
    #[error("annotations must be sorted by onset (seizure {index} starts before its predecessor)")]
    Unsorted { index: usize },
    #[error("seizure {index} overlaps the previous seizure")]
    Overlapping { index: usize },
    #[error("invalid label policy: {0}")]
    Policy(String),
    #[error("invalid window spec: {0}")]
    Window(String),
    #[error("invalid split plan: {0}")]
    Plan(String),
    #[error("no preictal samples to balance against")]
    NoPreictal,
    #[error("no interictal samples")]
    NoInterictal,
    #[error("{label} class has {count} training samples, fewer than {folds} folds")]
    TooFewSamples {
        label: Label,
        count: usize,
        folds: usize,
    },
    #[error("sample refers to unknown file {0}")]
    UnknownFile(String),
    #[error("file {0} has no timeline offset")]
    MissingOffset(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelPolicy {
    pub preictal_minutes: f64,
    pub sph_minutes: f64,
    pub interictal_gap_hours: f64,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            preictal_minutes: 60.0,
            sph_minutes: 5.0,
            interictal_gap_hours: 4.0,
        }
    }
}

impl LabelPolicy {
    pub fn with_preictal(preictal_minutes: f64) -> Self {
        Self {
            preictal_minutes,
            ..Self::default()
        }
    }

    pub fn preictal_seconds(&self) -> f64 {
        self.preictal_minutes * 60.0
    }

    pub fn sph_seconds(&self) -> f64 {
        self.sph_minutes * 60.0
    }

    pub fn gap_seconds(&self) -> f64 {
        self.interictal_gap_hours * 3600.0
    }

    /// Preictal 30 or 60 min, SPH 5 min and a 4-h gap.
    pub fn is_reference_setting(&self) -> bool {
        (self.preictal_minutes == 30.0 || self.preictal_minutes == 60.0)
            && self.sph_minutes == 5.0
            && self.interictal_gap_hours == 4.0
    }

    pub fn validate(&self) -> Result<(), EpochError> {
        if !(self.preictal_minutes > 0.0 && self.preictal_minutes.is_finite()) {
            return Err(EpochError::Policy(format!(
                "preictal_minutes must be positive, got {}",
                self.preictal_minutes
            )));
        }
        if !(self.sph_minutes >= 0.0 && self.sph_minutes.is_finite()) {
            return Err(EpochError::Policy(format!(
                "sph_minutes must be ≥ 0, got {}",
                self.sph_minutes
            )));
        }
        if !(self.interictal_gap_hours >= 0.0 && self.interictal_gap_hours.is_finite()) {
            return Err(EpochError::Policy(format!(
                "interictal_gap_hours must be ≥ 0, got {}",
                self.interictal_gap_hours
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub length_seconds: f64,
    pub preictal_overlap_seconds: f64,
    pub fs: u32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_seconds: 20.0,
            preictal_overlap_seconds: 5.0,
            fs: crate::signal::EEG_SAMPLE_RATE,
        }
    }
}

impl WindowSpec {
    pub fn new(length_seconds: f64, preictal_overlap_seconds: f64) -> Self {
        Self {
            length_seconds,
            preictal_overlap_seconds,
            ..Self::default()
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.length_seconds * f64::from(self.fs)).round() as usize
    }

    pub fn preictal_stride_samples(&self) -> usize {
        ((self.length_seconds - self.preictal_overlap_seconds) * f64::from(self.fs)).round()
            as usize
    }

    pub fn interictal_stride_samples(&self) -> usize {
        self.window_samples()
    }

    pub fn stride_samples(&self, label: Label) -> usize {
        match label {
            Label::Preictal => self.preictal_stride_samples(),
            Label::Interictal => self.interictal_stride_samples(),
        }
    }

    pub fn validate(&self) -> Result<(), EpochError> {
        let fs = f64::from(self.fs);
        if self.fs == 0 || !(self.length_seconds > 0.0) {
            return Err(EpochError::Window("length and fs must be positive".into()));
        }
        if !(self.preictal_overlap_seconds >= 0.0
            && self.preictal_overlap_seconds < self.length_seconds)
        {
            return Err(EpochError::Window(format!(
                "overlap {} s must be in [0, {})",
                self.preictal_overlap_seconds, self.length_seconds
            )));
        }
        for (name, v) in [
            ("length", self.length_seconds),
            ("overlap", self.preictal_overlap_seconds),
        ] {
            if (v * fs).fract() != 0.0 {
                return Err(EpochError::Window(format!(
                    "{name} {v} s is not a whole number of samples"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Interictal,
    Preictal,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Interictal => 0,
            Label::Preictal => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Interictal),
            1 => Some(Label::Preictal),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Interictal => "interictal",
            Label::Preictal => "preictal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: f64,
    pub end: f64,
    pub label: Label,
    /// Index of the seizure (in the annotation list) a preictal span precedes.
    pub source_seizure: Option<usize>,
}

impl LabeledSpan {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A seizure whose preictal span could not be placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanIssue {
    pub seizure: usize,
    pub onset: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpanLabels {
    /// Preictal spans first (timeline order), then interictal spans (timeline order).
    pub spans: Vec<LabeledSpan>,
    pub issues: Vec<SpanIssue>,
}

/// Shifts per-file annotations onto the patient timeline using per-file
/// start offsets. The result is sorted by onset.
pub fn to_timeline(
    annotations: &IndexMap<String, Vec<SeizureAnnotation>>,
    offsets: &IndexMap<String, f64>,
) -> Result<Vec<SeizureAnnotation>, EpochError> {
    let mut out = Vec::new();
    for (file, list) in annotations {
        if list.is_empty() {
            continue;
        }
        let base = *offsets
            .get(file)
            .ok_or_else(|| EpochError::MissingOffset(file.clone()))?;
        out.extend(list.iter().map(|a| SeizureAnnotation {
            file_id: a.file_id.clone(),
            onset: base + a.onset,
            offset: base + a.offset,
        }));
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    Ok(out)
}

fn check_sorted(annotations: &[SeizureAnnotation]) -> Result<(), EpochError> {
    for (i, w) in annotations.windows(2).enumerate() {
        if w[1].onset < w[0].onset {
            return Err(EpochError::Unsorted { index: i + 1 });
        }
        if w[1].onset < w[0].offset {
            return Err(EpochError::Overlapping { index: i + 1 });
        }
    }
    Ok(())
}

/// Seizures starting at least `gap_hours` after the previous seizure ended.
/// The first seizure always qualifies.
pub fn select_lead_seizures(
    annotations: &[SeizureAnnotation],
    gap_hours: f64,
) -> Result<Vec<SeizureAnnotation>, EpochError> {
    check_sorted(annotations)?;
    let gap = gap_hours * 3600.0;
    Ok(annotations
        .iter()
        .enumerate()
        .filter(|(i, a)| *i == 0 || a.onset - annotations[i - 1].offset >= gap)
        .map(|(_, a)| a.clone())
        .collect())
}

/// Patient selection: exactly 23 channels and at least three lead seizures
/// under a 4-hour gap. Malformed annotation lists are not eligible.
pub fn eligible_patient(annotations: &[SeizureAnnotation], channel_count: usize) -> bool {
    channel_count == 23
        && select_lead_seizures(annotations, LabelPolicy::default().interictal_gap_hours)
            .map(|l| l.len() >= 3)
            .unwrap_or(false)
}

fn clip_to_extent(start: f64, end: f64, extent: &[(f64, f64)]) -> Vec<(f64, f64)> {
    extent
        .iter()
        .filter_map(|&(a, b)| {
            let (s, e) = (start.max(a), end.min(b));
            (s < e).then_some((s, e))
        })
        .collect()
}

/// Labels recorded time. `extent` lists the recorded intervals (one per
/// file) in timeline order; the gaps between them are unrecorded.
pub fn label_spans(
    annotations: &[SeizureAnnotation],
    policy: &LabelPolicy,
    extent: &[(f64, f64)],
) -> Result<SpanLabels, EpochError> {
    policy.validate()?;
    check_sorted(annotations)?;
    let sph = policy.sph_seconds();
    let pre = policy.preictal_seconds();
    let gap = policy.gap_seconds();
    let mut out = SpanLabels::default();

    // Truncation at the previous offset keeps successive preictal spans
    // disjoint, so no merging is needed.
    for (i, a) in annotations.iter().enumerate() {
        let mut start = a.onset - sph - pre;
        let end = a.onset - sph;
        if i > 0 {
            start = start.max(annotations[i - 1].offset);
        }
        let pieces = if start < end {
            clip_to_extent(start, end, extent)
        } else {
            Vec::new()
        };
        if pieces.is_empty() {
            out.issues.push(SpanIssue {
                seizure: i,
                onset: a.onset,
                reason: if start >= end {
                    "preictal span lies entirely within the previous seizure's ictal or SPH time"
                        .into()
                } else {
                    "preictal span falls outside recorded time".into()
                },
            });
        }
        out.spans
            .extend(pieces.into_iter().map(|(s, e)| LabeledSpan {
                start: s,
                end: e,
                label: Label::Preictal,
                source_seizure: Some(i),
            }));
    }

    // With a gap shorter than the preictal lead, the preictal and SPH time
    // must still stay out of the interictal class.
    let lead = gap.max(sph + pre);
    let forbidden: Vec<(f64, f64)> = annotations
        .iter()
        .map(|a| (a.onset - lead, a.offset + gap))
        .collect();
    for &(a, b) in extent {
        let mut cursor = a;
        for &(fs, fe) in &forbidden {
            if fe <= cursor || fs >= b {
                continue;
            }
            if fs > cursor {
                out.spans.push(LabeledSpan {
                    start: cursor,
                    end: fs,
                    label: Label::Interictal,
                    source_seizure: None,
                });
            }
            cursor = cursor.max(fe);
        }
        if cursor < b {
            out.spans.push(LabeledSpan {
                start: cursor,
                end: b,
                label: Label::Interictal,
                source_seizure: None,
            });
        }
    }
    Ok(out)
}

/// Where a file sits on the timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileExtent {
    pub file_id: String,
    pub start: f64,
    pub num_samples: usize,
    pub fs: u32,
}

impl FileExtent {
    pub fn of(rec: &Recording) -> Self {
        Self {
            file_id: rec.file_id.clone(),
            start: rec.start_time,
            num_samples: rec.num_samples(),
            fs: rec.fs,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.num_samples as f64 / f64::from(self.fs)
    }
}

/// One window, referenced lazily by its origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub file_id: String,
    pub start_sample: usize,
    /// Timeline second of the first sample.
    pub start_second: f64,
    pub label: Label,
    /// Index of the span the window was tiled from.
    pub span: usize,
}

/// Number of windows of `length` at `stride` that fit in `span` (all in samples).
pub fn window_count(span: usize, length: usize, stride: usize) -> usize {
    if span < length {
        0
    } else {
        (span - length) / stride + 1
    }
}

/// Tiles every span with windows. Spans are processed in order; windows
/// never cross file boundaries.
pub fn window_spans(
    files: &[FileExtent],
    spans: &[LabeledSpan],
    spec: &WindowSpec,
) -> Result<Vec<Sample>, EpochError> {
    spec.validate()?;
    let len = spec.window_samples();
    let mut out = Vec::new();
    for (si, span) in spans.iter().enumerate() {
        let stride = spec.stride_samples(span.label);
        for f in files {
            if f.fs != spec.fs {
                return Err(EpochError::Window(format!(
                    "file {} sampled at {} Hz, windows expect {} Hz",
                    f.file_id, f.fs, spec.fs
                )));
            }
            let fs = f64::from(f.fs);
            let lo = span.start.max(f.start);
            let hi = span.end.min(f.end());
            if lo >= hi {
                continue;
            }
            let a = ((lo - f.start) * fs - 1e-6).ceil().max(0.0) as usize;
            let b = (((hi - f.start) * fs + 1e-6).floor() as usize).min(f.num_samples);
            if b <= a {
                continue;
            }
            for k in 0..window_count(b - a, len, stride) {
                let s = a + k * stride;
                out.push(Sample {
                    file_id: f.file_id.clone(),
                    start_sample: s,
                    start_second: f.start + s as f64 / fs,
                    label: span.label,
                    span: si,
                });
            }
        }
    }
    Ok(out)
}

/// Downsamples the majority class without replacement so both classes have
/// equal counts. Normally the majority is interictal and preictal samples
/// are kept untouched. The input order is preserved.
pub fn balance(samples: &[Sample], seed: u64) -> Result<Vec<Sample>, EpochError> {
    let pre: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == Label::Preictal)
        .collect();
    let inter: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == Label::Interictal)
        .collect();
    if pre.is_empty() {
        return Err(EpochError::NoPreictal);
    }
    if inter.is_empty() {
        return Err(EpochError::NoInterictal);
    }
    let (keep_all, thin) = if inter.len() >= pre.len() {
        (&pre, &inter)
    } else {
        log::warn!(
            "fewer interictal ({}) than preictal ({}) samples; downsampling preictal",
            inter.len(),
            pre.len()
        );
        (&inter, &pre)
    };
    let mut rng = Rng::new(seed);
    let mut keep = vec![false; samples.len()];
    for &i in keep_all {
        keep[i] = true;
    }
    for j in rng.sample_indices(thin.len(), keep_all.len()) {
        keep[thin[j]] = true;
    }
    Ok(samples
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitOrder {
    #[default]
    Random,
    /// Latest samples of each class form the test set; folds are contiguous.
    Chronological,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub folds: usize,
    pub seed: u64,
    pub order: SplitOrder,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            folds: 5,
            seed: 0,
            order: SplitOrder::Random,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), EpochError> {
        if self.folds < 2 {
            return Err(EpochError::Plan(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(EpochError::Plan(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Indices into the sample list. Every list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Split {
    /// All training indices except those of fold `k`.
    pub fn train_without(&self, k: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn train_all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.folds.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }
}

/// Stratified holdout plus stratified folds.
pub fn split(samples: &[Sample], plan: &SplitPlan) -> Result<Split, EpochError> {
    plan.validate()?;
    let mut test = Vec::new();
    let mut folds = vec![Vec::new(); plan.folds];
    let root = Rng::new(plan.seed);
    for label in [Label::Interictal, Label::Preictal] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == label)
            .collect();
        let n = idx.len();
        let n_test = ((1.0 - plan.train_fraction) * n as f64).round() as usize;
        let n_train = n - n_test;
        if n_train < plan.folds {
            return Err(EpochError::TooFewSamples {
                label,
                count: n_train,
                folds: plan.folds,
            });
        }
        match plan.order {
            SplitOrder::Random => {
                let mut rng = root.fork(u64::from(label.as_u8()));
                rng.shuffle(&mut idx);
                test.extend_from_slice(&idx[..n_test]);
                for (j, &i) in idx[n_test..].iter().enumerate() {
                    folds[j % plan.folds].push(i);
                }
            }
            SplitOrder::Chronological => {
                idx.sort_by(|&a, &b| {
                    samples[a]
                        .start_second
                        .total_cmp(&samples[b].start_second)
                        .then(a.cmp(&b))
                });
                test.extend_from_slice(&idx[n_train..]);
                let base = n_train / plan.folds;
                let extra = n_train % plan.folds;
                let mut at = 0;
                for (k, fold) in folds.iter_mut().enumerate() {
                    let size = base + usize::from(k < extra);
                    fold.extend_from_slice(&idx[at..at + size]);
                    at += size;
                }
            }
        }
    }
    test.sort_unstable();
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(Split { test, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample: Sample,
    pub partition: Partition,
    pub fold: Option<usize>,
}

const MANIFEST_HEADER: &str = "file_id\tstart_sample\tstart_second\tlabel\tspan\tsplit\tfold";

/// Tab-separated manifest, one row per sample in sample order.
pub fn write_manifest(samples: &[Sample], split: &Split) -> String {
    let mut where_: Vec<(Partition, Option<usize>)> = vec![(Partition::Train, None); samples.len()];
    for &i in &split.test {
        where_[i] = (Partition::Test, None);
    }
    for (k, f) in split.folds.iter().enumerate() {
        for &i in f {
            where_[i] = (Partition::Train, Some(k));
        }
    }
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for (smp, (part, fold)) in samples.iter().zip(where_) {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            smp.file_id,
            smp.start_sample,
            smp.start_second,
            smp.label.as_u8(),
            smp.span,
            match part {
                Partition::Train => "train",
                Partition::Test => "test",
            },
            fold.map_or_else(|| "-".to_string(), |f| f.to_string()),
        ));
    }
    s
}

/// Parses a manifest back into samples and their split.
pub fn read_manifest(text: &str) -> Result<(Vec<Sample>, Split), EpochError> {
    let bad = |line: usize, message: String| EpochError::Manifest { line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header".into())),
    }
    let mut samples = Vec::new();
    let mut test = Vec::new();
    let mut folds: Vec<Vec<usize>> = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(line, format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(line, format!("invalid {what} {s:?}")))
        };
        let start_sample = num(f[1], "start_sample")?;
        let start_second: f64 = f[2]
            .parse()
            .map_err(|_| bad(line, format!("invalid start_second {:?}", f[2])))?;
        let label = f[3]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad(line, format!("invalid label {:?}", f[3])))?;
        let span = num(f[4], "span")?;
        let idx = samples.len();
        match (f[5], f[6]) {
            ("test", "-") => test.push(idx),
            ("train", k) => {
                let k = num(k, "fold")?;
                if folds.len() <= k {
                    folds.resize(k + 1, Vec::new());
                }
                folds[k].push(idx);
            }
            (p, k) => return Err(bad(line, format!("invalid split/fold {p:?}/{k:?}"))),
        }
        samples.push(Sample {
            file_id: f[0].to_string(),
            start_sample,
            start_second,
            label,
            span,
        });
    }
    Ok((samples, Split { test, folds }))
}

/// Materializes windows from recordings on demand.
pub struct WindowDataset<'a> {
    recordings: IndexMap<&'a str, &'a Recording>,
    samples: &'a [Sample],
    window: usize,
    channels: usize,
}

impl<'a> WindowDataset<'a> {
    pub fn new(
        recordings: &'a [Recording],
        samples: &'a [Sample],
        spec: &WindowSpec,
    ) -> Result<Self, EpochError> {
        let map: IndexMap<&str, &Recording> =
            recordings.iter().map(|r| (r.file_id.as_str(), r)).collect();
        let window = spec.window_samples();
        let channels = recordings.first().map_or(0, |r| r.num_channels());
        for s in samples {
            let rec = map
                .get(s.file_id.as_str())
                .ok_or_else(|| EpochError::UnknownFile(s.file_id.clone()))?;
            if s.start_sample + window > rec.num_samples() {
                return Err(EpochError::Window(format!(
                    "window at sample {} runs past the end of {}",
                    s.start_sample, s.file_id
                )));
            }
            if rec.num_channels() != channels {
                return Err(EpochError::Window(format!(
                    "file {} has a different channel count",
                    s.file_id
                )));
            }
        }
        Ok(Self {
            recordings: map,
            samples,
            window,
            channels,
        })
    }

    pub fn samples(&self) -> &'a [Sample] {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Windows for `indices` as an `N × channels × window` tensor plus 0/1 labels.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<T>) {
        let per = self.channels * self.window;
        let mut data = vec![T::zero(); indices.len() * per];
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &i) in indices.iter().enumerate() {
            let s = &self.samples[i];
            let rec = self.recordings[s.file_id.as_str()];
            rec.window_into(
                s.start_sample,
                self.window,
                &mut data[slot * per..(slot + 1) * per],
            );
            labels.push(T::of(f64::from(s.label.as_u8())));
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.window], data)
            .expect("batch shape is consistent");
        (t, labels)
    }
}
