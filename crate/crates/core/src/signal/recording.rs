use crate::scalar::Scalar;

/// Sampling rate of every retained EEG channel.
pub const EEG_SAMPLE_RATE: u32 = 256;

/// The common 23-derivation bipolar montage of the CHB-MIT corpus. `T8-P8`
/// appears twice in the source files; selection picks occurrences in order.
/// This list is a convention, not something the recordings guarantee.
pub const CHB_MIT_23: [&str; 23] = [
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4", "F4-C4",
    "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ", "P7-T7", "T7-FT9",
    "FT9-FT10", "FT10-T8", "T8-P8",
];

pub fn default_channel_selection() -> Vec<String> {
    CHB_MIT_23.iter().map(|s| s.to_string()).collect()
}

/// Linear map between stored integers and physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
}

impl Calibration {
    /// ±3276.8 µV over the full 16-bit range: 0.1 µV per count.
    pub const EEG_16BIT: Calibration = Calibration {
        physical_min: -3276.8,
        physical_max: 3276.7,
        digital_min: -32768,
        digital_max: 32767,
    };

    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    /// The digital range endpoints map exactly onto the physical endpoints.
    pub fn to_physical(&self, d: i16) -> f64 {
        let d = i32::from(d);
        if d == self.digital_min {
            return self.physical_min;
        }
        if d == self.digital_max {
            return self.physical_max;
        }
        let span = f64::from(self.digital_max - self.digital_min);
        (self.physical_max * f64::from(d - self.digital_min)
            + self.physical_min * f64::from(self.digital_max - d))
            / span
    }

    /// Nearest representable digital value, saturating at the range ends.
    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = f64::from(self.digital_min) + (physical - self.physical_min) / self.gain();
        let d = d
            .round()
            .clamp(f64::from(self.digital_min), f64::from(self.digital_max));
        d.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
    }
}

/// Multi-channel signal from one file, stored as the original 16-bit
/// samples plus per-channel calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub file_id: String,
    pub labels: Vec<String>,
    pub fs: u32,
    /// Seconds on the patient timeline.
    pub start_time: f64,
    calibration: Vec<Calibration>,
    /// Channel-major: `digital[ch * num_samples + t]`.
    digital: Vec<i16>,
    num_samples: usize,
}

impl Recording {
    /// `digital` is channel-major with `labels.len()` rows.
    pub fn from_digital(
        file_id: impl Into<String>,
        labels: Vec<String>,
        fs: u32,
        calibration: Vec<Calibration>,
        digital: Vec<i16>,
    ) -> Self {
        let channels = labels.len();
        assert_eq!(calibration.len(), channels, "one calibration per channel");
        let num_samples = if channels == 0 {
            0
        } else {
            digital.len() / channels
        };
        assert_eq!(num_samples * channels, digital.len(), "ragged channel data");
        Self {
            file_id: file_id.into(),
            labels,
            fs,
            start_time: 0.0,
            calibration,
            digital,
            num_samples,
        }
    }

    /// Quantizes physical rows (one per channel) with a shared calibration.
    pub fn from_physical(
        file_id: impl Into<String>,
        labels: Vec<String>,
        fs: u32,
        calibration: Calibration,
        rows: &[Vec<f64>],
    ) -> Self {
        let digital = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| calibration.to_digital(v)))
            .collect();
        let cal = vec![calibration; labels.len()];
        Self::from_digital(file_id, labels, fs, cal, digital)
    }

    pub fn with_start_time(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    pub fn num_channels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn duration(&self) -> f64 {
        self.num_samples as f64 / f64::from(self.fs)
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn calibration(&self) -> &[Calibration] {
        &self.calibration
    }

    pub fn digital_channel(&self, ch: usize) -> &[i16] {
        &self.digital[ch * self.num_samples..(ch + 1) * self.num_samples]
    }

    pub fn physical(&self, ch: usize, t: usize) -> f64 {
        self.calibration[ch].to_physical(self.digital[ch * self.num_samples + t])
    }

    pub fn physical_channel(&self, ch: usize) -> Vec<f64> {
        let cal = self.calibration[ch];
        self.digital_channel(ch)
            .iter()
            .map(|&d| cal.to_physical(d))
            .collect()
    }

    /// Copies `len` samples from `start` of every channel into `out`
    /// (channel-major, `channels × len`), in physical units.
    pub fn window_into<T: Scalar>(&self, start: usize, len: usize, out: &mut [T]) {
        assert!(
            start + len <= self.num_samples,
            "window past end of recording"
        );
        assert_eq!(out.len(), len * self.num_channels());
        for ch in 0..self.num_channels() {
            let cal = self.calibration[ch];
            let src = &self.digital_channel(ch)[start..start + len];
            for (o, &d) in out[ch * len..(ch + 1) * len].iter_mut().zip(src) {
                *o = T::of(cal.to_physical(d));
            }
        }
    }

    /// Rows reordered (and filtered) to `order`, given as channel indices.
    pub fn select_indices(&self, order: &[usize]) -> Recording {
        let mut digital = Vec::with_capacity(order.len() * self.num_samples);
        for &ch in order {
            digital.extend_from_slice(self.digital_channel(ch));
        }
        Recording {
            file_id: self.file_id.clone(),
            labels: order.iter().map(|&c| self.labels[c].clone()).collect(),
            fs: self.fs,
            start_time: self.start_time,
            calibration: order.iter().map(|&c| self.calibration[c]).collect(),
            digital,
            num_samples: self.num_samples,
        }
    }
}

/// Resolves each requested label to a channel index. Repeated labels match
/// successive occurrences. Returns the first label that cannot be matched.
pub fn resolve_selection(available: &[String], selection: &[String]) -> Result<Vec<usize>, String> {
    let mut used = vec![false; available.len()];
    let mut order = Vec::with_capacity(selection.len());
    for want in selection {
        let hit = available
            .iter()
            .enumerate()
            .find(|(i, l)| !used[*i] && l.trim().eq_ignore_ascii_case(want.trim()))
            .map(|(i, _)| i)
            .ok_or_else(|| want.clone())?;
        used[hit] = true;
        order.push(hit);
    }
    Ok(order)
}
