//! Plain EDF reading and writing.
//!
//! The main header is 256 bytes of space-padded ASCII. It is followed by
//! `ns × 256` bytes of signal headers stored field by field (all labels,
//! then all transducer types, ...), and then the data records, each holding
//! `samples_per_record` little-endian 16-bit samples of every signal in turn.

use std::path::Path;

use thiserror::Error;

use super::recording::{resolve_selection, Calibration, Recording};

const MAIN_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("truncated input: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("field `{field}` at byte {offset}: expected a number, found {value:?}")]
    Field {
        field: &'static str,
        offset: usize,
        value: String,
    },
    #[error("signal {signal} ({label}): digital min {min} is not below digital max {max}")]
    DigitalRange {
        signal: usize,
        label: String,
        min: i32,
        max: i32,
    },
    #[error("signal {signal} ({label}): physical min equals physical max ({value})")]
    PhysicalRange {
        signal: usize,
        label: String,
        value: f64,
    },
    #[error("channel {0:?} not present in the recording")]
    MissingChannel(String),
    #[error("data section holds {have} bytes, header implies {expected}")]
    SampleCount { expected: usize, have: usize },
    #[error("selected channels do not share one sampling rate ({0:?})")]
    MixedRates(Vec<f64>),
    #[error("sampling rate {0} Hz is not a whole number")]
    FractionalRate(f64),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    pub fn calibration(&self) -> Calibration {
        Calibration {
            physical_min: self.physical_min,
            physical_max: self.physical_max,
            digital_min: self.digital_min,
            digital_max: self.digital_max,
        }
    }

    pub fn gain(&self) -> f64 {
        self.calibration().gain()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    /// Resolved from the data length when the header stores -1.
    pub num_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl RecordingHeader {
    pub fn sample_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration
    }

    fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

fn ascii(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .trim_matches(|c: char| c == ' ' || c == '\0')
        .to_string()
}

struct Fields<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, width: usize) -> Result<(usize, &'a [u8]), EdfError> {
        let end = self.pos + width;
        if end > self.bytes.len() {
            return Err(EdfError::Truncated {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let at = self.pos;
        self.pos = end;
        Ok((at, &self.bytes[at..end]))
    }

    fn text(&mut self, width: usize) -> Result<String, EdfError> {
        Ok(ascii(self.take(width)?.1))
    }

    fn number<N: std::str::FromStr>(
        &mut self,
        width: usize,
        field: &'static str,
    ) -> Result<N, EdfError> {
        let (offset, raw) = self.take(width)?;
        let value = ascii(raw);
        value.parse().map_err(|_| EdfError::Field {
            field,
            offset,
            value,
        })
    }
}

pub fn parse_edf_header(bytes: &[u8]) -> Result<RecordingHeader, EdfError> {
    if bytes.len() < MAIN_HEADER {
        return Err(EdfError::Truncated {
            needed: MAIN_HEADER,
            have: bytes.len(),
        });
    }
    let mut f = Fields { bytes, pos: 0 };
    let version = f.text(8)?;
    let patient = f.text(80)?;
    let recording = f.text(80)?;
    let start_date = f.text(8)?;
    let start_time = f.text(8)?;
    let header_bytes: usize = f.number(8, "header bytes")?;
    f.take(44)?;
    let num_records: i64 = f.number(8, "number of data records")?;
    let record_duration: f64 = f.number(8, "duration of a data record")?;
    let ns: usize = f.number(4, "number of signals")?;

    let needed = MAIN_HEADER + ns * SIGNAL_HEADER;
    if bytes.len() < needed {
        return Err(EdfError::Truncated {
            needed,
            have: bytes.len(),
        });
    }
    let texts = |f: &mut Fields, w| (0..ns).map(|_| f.text(w)).collect::<Result<Vec<_>, _>>();
    let labels = texts(&mut f, 16)?;
    let transducers = texts(&mut f, 80)?;
    let dimensions = texts(&mut f, 8)?;
    let mut nums = |name: &'static str| -> Result<Vec<f64>, EdfError> {
        (0..ns).map(|_| f.number::<f64>(8, name)).collect()
    };
    let phys_min = nums("physical minimum")?;
    let phys_max = nums("physical maximum")?;
    let dig_min = nums("digital minimum")?;
    let dig_max = nums("digital maximum")?;
    let prefilter = texts(&mut f, 80)?;
    let samples = (0..ns)
        .map(|_| f.number::<usize>(8, "number of samples in each data record"))
        .collect::<Result<Vec<_>, _>>()?;

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let s = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            dimension: dimensions[i].clone(),
            physical_min: phys_min[i],
            physical_max: phys_max[i],
            digital_min: dig_min[i] as i32,
            digital_max: dig_max[i] as i32,
            prefiltering: prefilter[i].clone(),
            samples_per_record: samples[i],
        };
        if s.digital_min >= s.digital_max {
            return Err(EdfError::DigitalRange {
                signal: i,
                label: s.label,
                min: s.digital_min,
                max: s.digital_max,
            });
        }
        if s.physical_min == s.physical_max {
            return Err(EdfError::PhysicalRange {
                signal: i,
                label: s.label,
                value: s.physical_min,
            });
        }
        signals.push(s);
    }

    let mut header = RecordingHeader {
        version,
        patient,
        recording,
        start_date,
        start_time,
        header_bytes,
        num_records: 0,
        record_duration,
        signals,
    };
    header.num_records = if num_records >= 0 {
        num_records as usize
    } else {
        // Unknown record count: infer from the bytes present.
        let record = header.record_bytes().max(1);
        bytes.len().saturating_sub(header.header_bytes.max(needed)) / record
    };
    Ok(header)
}

/// Decodes a whole EDF file. With a selection, only the named channels are
/// kept, in selection order; without one every signal is kept.
pub fn read_recording(
    bytes: &[u8],
    file_id: &str,
    selection: Option<&[String]>,
) -> Result<Recording, EdfError> {
    let header = parse_edf_header(bytes)?;
    let labels: Vec<String> = header.signals.iter().map(|s| s.label.clone()).collect();
    let order = match selection {
        Some(sel) => resolve_selection(&labels, sel).map_err(EdfError::MissingChannel)?,
        None => (0..labels.len()).collect(),
    };
    let rates: Vec<f64> = order.iter().map(|&i| header.sample_rate(i)).collect();
    if rates.windows(2).any(|w| w[0] != w[1]) {
        return Err(EdfError::MixedRates(rates));
    }
    let fs = rates.first().copied().unwrap_or(0.0);
    if fs.fract() != 0.0 {
        return Err(EdfError::FractionalRate(fs));
    }

    let data_start = header
        .header_bytes
        .max(MAIN_HEADER + header.signals.len() * SIGNAL_HEADER);
    let record = header.record_bytes();
    let expected = header.num_records * record;
    let have = bytes.len().saturating_sub(data_start);
    if have < expected {
        return Err(EdfError::SampleCount { expected, have });
    }
    let data = &bytes[data_start..data_start + expected];

    // Byte offset of each signal within a record.
    let mut offsets = Vec::with_capacity(header.signals.len());
    let mut acc = 0;
    for s in &header.signals {
        offsets.push(acc);
        acc += s.samples_per_record * 2;
    }

    let per_channel: usize = order
        .first()
        .map(|&i| header.signals[i].samples_per_record * header.num_records)
        .unwrap_or(0);
    let mut digital = Vec::with_capacity(per_channel * order.len());
    for &sig in &order {
        let spr = header.signals[sig].samples_per_record;
        for r in 0..header.num_records {
            let base = r * record + offsets[sig];
            digital.extend(
                data[base..base + spr * 2]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]])),
            );
        }
    }
    let calibration = order
        .iter()
        .map(|&i| header.signals[i].calibration())
        .collect();
    Ok(Recording::from_digital(
        file_id,
        order.iter().map(|&i| labels[i].clone()).collect(),
        fs as u32,
        calibration,
        digital,
    ))
}

pub fn read_edf_file(path: &Path, selection: Option<&[String]>) -> Result<Recording, EdfError> {
    let bytes = std::fs::read(path).map_err(|source| EdfError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_recording(&bytes, &file_id, selection)
}

fn pad(out: &mut Vec<u8>, text: &str, width: usize) {
    let b = text.as_bytes();
    let n = b.len().min(width);
    out.extend_from_slice(&b[..n]);
    out.extend(std::iter::repeat_n(b' ', width - n));
}

/// Formats a number into at most `width` characters.
fn fit_number(v: f64, width: usize) -> String {
    let s = format!("{v}");
    if s.len() <= width {
        return s;
    }
    for prec in (0..width).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= width {
            return s;
        }
    }
    format!("{}", v.round() as i64)
}

/// Encodes a recording as EDF with one-second data records. Trailing samples
/// that do not fill a full record are dropped.
pub fn write_edf(rec: &Recording) -> Vec<u8> {
    let ns = rec.num_channels();
    let spr = rec.fs as usize;
    let num_records = if spr == 0 { 0 } else { rec.num_samples() / spr };
    let header_bytes = MAIN_HEADER + ns * SIGNAL_HEADER;
    let mut out = Vec::with_capacity(header_bytes + num_records * spr * ns * 2);
    pad(&mut out, "0", 8);
    pad(&mut out, "X X X X", 80);
    pad(&mut out, &format!("Startdate X X X {}", rec.file_id), 80);
    pad(&mut out, "01.01.00", 8);
    pad(&mut out, "00.00.00", 8);
    pad(&mut out, &header_bytes.to_string(), 8);
    pad(&mut out, "", 44);
    pad(&mut out, &num_records.to_string(), 8);
    pad(&mut out, "1", 8);
    pad(&mut out, &ns.to_string(), 4);
    let cal = rec.calibration();
    for l in &rec.labels {
        pad(&mut out, l, 16);
    }
    for _ in 0..ns {
        pad(&mut out, "", 80);
    }
    for _ in 0..ns {
        pad(&mut out, "uV", 8);
    }
    for c in cal {
        pad(&mut out, &fit_number(c.physical_min, 8), 8);
    }
    for c in cal {
        pad(&mut out, &fit_number(c.physical_max, 8), 8);
    }
    for c in cal {
        pad(&mut out, &c.digital_min.to_string(), 8);
    }
    for c in cal {
        pad(&mut out, &c.digital_max.to_string(), 8);
    }
    for _ in 0..ns {
        pad(&mut out, "", 80);
    }
    for _ in 0..ns {
        pad(&mut out, &spr.to_string(), 8);
    }
    for _ in 0..ns {
        pad(&mut out, "", 32);
    }
    for r in 0..num_records {
        for ch in 0..ns {
            for &d in &rec.digital_channel(ch)[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_signal(records: usize) -> Recording {
        let rows = vec![(0..records * 256)
            .map(|i| (i as f64 * 0.37).sin() * 50.0)
            .collect()];
        Recording::from_physical(
            "t",
            vec!["FP1-F7".into()],
            256,
            Calibration::EEG_16BIT,
            &rows,
        )
    }

    #[test]
    fn header_fields_echo() {
        let bytes = write_edf(&one_signal(10));
        let h = parse_edf_header(&bytes).unwrap();
        assert_eq!(h.signals.len(), 1);
        assert_eq!(h.num_records, 10);
        assert_eq!(h.record_duration, 1.0);
        assert_eq!(h.signals[0].samples_per_record, 256);
        assert_eq!(h.signals[0].label, "FP1-F7");
        assert!((h.signals[0].gain() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn short_input_is_truncated_error() {
        assert!(matches!(
            parse_edf_header(&[b' '; 100]),
            Err(EdfError::Truncated { .. })
        ));
        let bytes = write_edf(&one_signal(1));
        assert!(matches!(
            parse_edf_header(&bytes[..300]),
            Err(EdfError::Truncated { .. })
        ));
    }

    #[test]
    fn non_numeric_field_reports_offset() {
        let mut bytes = write_edf(&one_signal(1));
        bytes[236..244].copy_from_slice(b"abc     ");
        match parse_edf_header(&bytes) {
            Err(EdfError::Field { offset, .. }) => assert_eq!(offset, 236),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inverted_digital_range_rejected() {
        let mut bytes = write_edf(&one_signal(1));
        // digital min field of signal 0 sits after label/transducer/dimension/phys min/max.
        let off = 256 + 16 + 80 + 8 + 8 + 8;
        bytes[off..off + 8].copy_from_slice(b"40000   ");
        assert!(matches!(
            parse_edf_header(&bytes),
            Err(EdfError::DigitalRange { .. })
        ));
    }

    #[test]
    fn unknown_record_count_is_inferred() {
        let mut bytes = write_edf(&one_signal(3));
        bytes[236..244].copy_from_slice(b"-1      ");
        assert_eq!(parse_edf_header(&bytes).unwrap().num_records, 3);
    }

    #[test]
    fn missing_data_is_sample_count_error() {
        let bytes = write_edf(&one_signal(3));
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(
            read_recording(cut, "t", None),
            Err(EdfError::SampleCount { .. })
        ));
    }
}
