//! Deterministic synthetic EEG with a planted preictal rhythm.
//!
//! Every channel is autoregressive Gaussian noise. Inside each preictal span
//! (as the default labelling policy defines it) a sinusoid of fixed frequency
//! and amplitude is added, which makes preictal windows separable from
//! interictal ones. Seizures themselves carry a high-amplitude 3 Hz rhythm
//! lasting [`ICTAL_SECONDS`], clipped at the end of the recording.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::recording::{Calibration, Recording, CHB_MIT_23, EEG_SAMPLE_RATE};
use super::summary::SeizureAnnotation;
use crate::epoching::LabelPolicy;
use crate::rng::Rng;

/// Length of every synthetic seizure.
pub const ICTAL_SECONDS: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub frequency: f64,
    /// Peak amplitude in µV.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub file_id: String,
    pub duration: f64,
    pub num_channels: usize,
    pub seizure_times: Vec<f64>,
    pub preictal_signature: Signature,
    /// AR coefficients `a_1..a_p` of `x_t = Σ a_i x_{t-i} + σ e_t`.
    pub ar_coefficients: Vec<f64>,
    /// Innovation standard deviation σ in µV.
    pub noise_std: f64,
    pub seed: u64,
    pub policy: LabelPolicy,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            file_id: "synth".into(),
            duration: 3600.0,
            num_channels: 23,
            seizure_times: Vec::new(),
            preictal_signature: Signature {
                frequency: 6.0,
                amplitude: 20.0,
            },
            ar_coefficients: vec![0.6, -0.2],
            noise_std: 10.0,
            seed: 0,
            policy: LabelPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("seizure times must be strictly increasing")]
    Unsorted,
    #[error("duration {duration} s does not cover seizure at {onset} s")]
    Duration { duration: f64, onset: f64 },
    #[error("seizures at {0:?} s are too close to the recording start to host a preictal span")]
    PreictalOutOfRange(Vec<f64>),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

/// Generates the recording and its seizure annotations.
pub fn synth_recording(
    spec: &SynthSpec,
) -> Result<(Recording, Vec<SeizureAnnotation>), SynthError> {
    validate(spec)?;
    let fs = f64::from(EEG_SAMPLE_RATE);
    let n = (spec.duration * fs).round() as usize;
    let sph = spec.policy.sph_seconds();
    let preictal = spec.policy.preictal_seconds();
    let spans: Vec<(usize, usize)> = spec
        .seizure_times
        .iter()
        .map(|&t| {
            let start = ((t - sph - preictal) * fs).round() as usize;
            let end = ((t - sph) * fs).round() as usize;
            (start, end.min(n))
        })
        .collect();
    let ictal: Vec<(usize, usize)> = spec
        .seizure_times
        .iter()
        .map(|&t| {
            let s = (t * fs).round() as usize;
            (s, (((t + ICTAL_SECONDS) * fs).round() as usize).min(n))
        })
        .collect();

    let labels: Vec<String> = if spec.num_channels == CHB_MIT_23.len() {
        CHB_MIT_23.iter().map(|s| s.to_string()).collect()
    } else {
        (0..spec.num_channels)
            .map(|i| format!("CH{i:02}"))
            .collect()
    };
    let cal = Calibration::EEG_16BIT;
    let root = Rng::new(spec.seed);
    let order = spec.ar_coefficients.len();
    let mut digital = Vec::with_capacity(n * spec.num_channels);
    let omega = 2.0 * std::f64::consts::PI * spec.preictal_signature.frequency / fs;
    let ictal_omega = 2.0 * std::f64::consts::PI * 3.0 / fs;
    for ch in 0..spec.num_channels {
        let mut rng = root.fork(ch as u64);
        let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        let mut history = vec![0.0; order];
        let step = |rng: &mut Rng, history: &mut Vec<f64>| {
            let mut x = spec.noise_std * rng.normal();
            for (a, h) in spec.ar_coefficients.iter().zip(history.iter()) {
                x += a * h;
            }
            if order > 0 {
                history.rotate_right(1);
                history[0] = x;
            }
            x
        };
        for _ in 0..1000 {
            step(&mut rng, &mut history);
        }
        let mut row = Vec::with_capacity(n);
        for _ in 0..n {
            row.push(step(&mut rng, &mut history));
        }
        if spec.preictal_signature.amplitude != 0.0 {
            for &(s, e) in &spans {
                for (t, v) in row.iter_mut().enumerate().take(e).skip(s) {
                    *v += spec.preictal_signature.amplitude * (omega * t as f64 + phase).sin();
                }
            }
        }
        for &(s, e) in &ictal {
            for (t, v) in row.iter_mut().enumerate().take(e).skip(s) {
                *v += 5.0 * spec.noise_std * (ictal_omega * t as f64).sin();
            }
        }
        digital.extend(row.into_iter().map(|v| cal.to_digital(v)));
    }
    let rec = Recording::from_digital(
        spec.file_id.clone(),
        labels,
        EEG_SAMPLE_RATE,
        vec![cal; spec.num_channels],
        digital,
    );
    let annotations = spec
        .seizure_times
        .iter()
        .map(|&t| SeizureAnnotation {
            file_id: spec.file_id.clone(),
            onset: t,
            offset: (t + ICTAL_SECONDS).min(spec.duration),
        })
        .collect();
    Ok((rec, annotations))
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    if spec.num_channels == 0 {
        return Err(SynthError::Invalid("at least one channel required".into()));
    }
    if !(spec.duration > 0.0) {
        return Err(SynthError::Invalid("duration must be positive".into()));
    }
    if !(spec.noise_std >= 0.0) || !spec.preictal_signature.frequency.is_finite() {
        return Err(SynthError::Invalid(
            "noise and signature must be finite".into(),
        ));
    }
    if spec.seizure_times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SynthError::Unsorted);
    }
    if let Some(&last) = spec.seizure_times.last() {
        if last >= spec.duration {
            return Err(SynthError::Duration {
                duration: spec.duration,
                onset: last,
            });
        }
    }
    let lead = spec.policy.sph_seconds() + spec.policy.preictal_seconds();
    let early: Vec<f64> = spec
        .seizure_times
        .iter()
        .copied()
        .filter(|&t| t - lead < 0.0)
        .collect();
    if !early.is_empty() {
        return Err(SynthError::PreictalOutOfRange(early));
    }
    Ok(())
}
