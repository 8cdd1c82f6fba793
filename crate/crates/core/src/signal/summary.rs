//! Seizure-summary text files and per-file timeline offsets.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A seizure within one file, in seconds from the file start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub file_id: String,
    pub onset: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SummaryError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> SummaryError {
    SummaryError {
        line,
        message: message.into(),
    }
}

struct Block {
    file_id: String,
    line: usize,
    declared: Option<(usize, usize)>,
    seizures: Vec<SeizureAnnotation>,
    pending_start: Option<(usize, f64)>,
}

impl Block {
    fn finish(
        self,
        out: &mut IndexMap<String, Vec<SeizureAnnotation>>,
    ) -> Result<(), SummaryError> {
        if let Some((line, _)) = self.pending_start {
            return Err(err(line, "seizure start without a matching end"));
        }
        if let Some((line, k)) = self.declared {
            if k != self.seizures.len() {
                return Err(err(
                    line,
                    format!(
                        "file {} declares {k} seizures but lists {}",
                        self.file_id,
                        self.seizures.len()
                    ),
                ));
            }
        }
        if out.contains_key(&self.file_id) {
            return Err(err(
                self.line,
                format!("duplicate block for file {}", self.file_id),
            ));
        }
        out.insert(self.file_id, self.seizures);
        Ok(())
    }
}

fn seconds(line: usize, text: &str) -> Result<f64, SummaryError> {
    let t = text.trim();
    let t = t.strip_suffix("seconds").unwrap_or(t).trim();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| {
            err(
                line,
                format!("expected a non-negative number of seconds, found {text:?}"),
            )
        })
}

enum SeizureField {
    Start,
    End,
}

/// Matches `Seizure[ n] Start Time` / `Seizure[ n] End Time`.
fn seizure_field(key: &str) -> Option<SeizureField> {
    let rest = key.strip_prefix("Seizure")?.trim_start();
    let rest = rest
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start();
    match rest {
        "Start Time" => Some(SeizureField::Start),
        "End Time" => Some(SeizureField::End),
        _ => None,
    }
}

/// Parses a seizure summary into `file_id → seizures` in file order. File
/// ids drop the `.edf` extension.
pub fn parse_summary(text: &str) -> Result<IndexMap<String, Vec<SeizureAnnotation>>, SummaryError> {
    let mut out = IndexMap::new();
    let mut block: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, value)) = raw.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key == "File Name" {
            if let Some(b) = block.take() {
                b.finish(&mut out)?;
            }
            let name = value.trim();
            if name.is_empty() {
                return Err(err(line, "empty file name"));
            }
            let file_id = name.strip_suffix(".edf").unwrap_or(name).to_string();
            block = Some(Block {
                file_id,
                line,
                declared: None,
                seizures: Vec::new(),
                pending_start: None,
            });
        } else if key == "Number of Seizures in File" {
            let b = block
                .as_mut()
                .ok_or_else(|| err(line, "seizure count outside a file block"))?;
            let k = value
                .trim()
                .parse()
                .map_err(|_| err(line, format!("invalid seizure count {:?}", value.trim())))?;
            b.declared = Some((line, k));
        } else if let Some(field) = seizure_field(key) {
            let b = block
                .as_mut()
                .ok_or_else(|| err(line, "seizure line outside a file block"))?;
            let t = seconds(line, value)?;
            match field {
                SeizureField::Start => {
                    if b.pending_start.is_some() {
                        return Err(err(
                            line,
                            "seizure start while a previous start is unmatched",
                        ));
                    }
                    b.pending_start = Some((line, t));
                }
                SeizureField::End => {
                    let (_, start) = b
                        .pending_start
                        .take()
                        .ok_or_else(|| err(line, "seizure end without a start"))?;
                    if t <= start {
                        return Err(err(
                            line,
                            format!("seizure end {t} s not after start {start} s"),
                        ));
                    }
                    b.seizures.push(SeizureAnnotation {
                        file_id: b.file_id.clone(),
                        onset: start,
                        offset: t,
                    });
                }
            }
        }
    }
    if let Some(b) = block {
        b.finish(&mut out)?;
    }
    Ok(out)
}

/// Renders annotations back into the summary layout.
pub fn format_summary(files: &IndexMap<String, Vec<SeizureAnnotation>>) -> String {
    let mut s = String::new();
    for (file, seizures) in files {
        s.push_str(&format!("File Name: {file}.edf\n"));
        s.push_str(&format!("Number of Seizures in File: {}\n", seizures.len()));
        for (i, a) in seizures.iter().enumerate() {
            s.push_str(&format!(
                "Seizure {} Start Time: {} seconds\n",
                i + 1,
                a.onset
            ));
            s.push_str(&format!(
                "Seizure {} End Time: {} seconds\n",
                i + 1,
                a.offset
            ));
        }
        s.push('\n');
    }
    s
}

/// Parses `<file_id> <start_seconds>` lines. Blank lines and `#` comments
/// are skipped.
pub fn parse_offsets(text: &str) -> Result<IndexMap<String, f64>, SummaryError> {
    let mut out = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(t), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(
                i + 1,
                format!("expected `<file_id> <seconds>`, found {line:?}"),
            ));
        };
        let t = seconds(i + 1, t)?;
        let id = id.strip_suffix(".edf").unwrap_or(id).to_string();
        if out.insert(id.clone(), t).is_some() {
            return Err(err(i + 1, format!("duplicate offset for {id}")));
        }
    }
    Ok(out)
}

pub fn format_offsets(offsets: &IndexMap<String, f64>) -> String {
    offsets.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seizure_block() {
        let text = "File Name: chb01_03.edf\nFile Start Time: 13:43:04\nFile End Time: 14:43:04\n\
                    Number of Seizures in File: 1\nSeizure Start Time: 2996 seconds\n\
                    Seizure End Time: 3036 seconds\n";
        let m = parse_summary(text).unwrap();
        assert_eq!(m["chb01_03"].len(), 1);
        assert_eq!(
            (m["chb01_03"][0].onset, m["chb01_03"][0].offset),
            (2996.0, 3036.0)
        );
    }

    #[test]
    fn zero_seizure_block_is_empty() {
        let m = parse_summary("File Name: a.edf\nNumber of Seizures in File: 0\n").unwrap();
        assert!(m["a"].is_empty());
    }

    #[test]
    fn malformed_blocks_report_line() {
        let dangling = "Seizure Start Time: 5 seconds\n";
        assert_eq!(parse_summary(dangling).unwrap_err().line, 1);
        let reversed = "File Name: a.edf\nNumber of Seizures in File: 1\n\
                        Seizure 1 Start Time: 50 seconds\nSeizure 1 End Time: 20 seconds\n";
        assert_eq!(parse_summary(reversed).unwrap_err().line, 4);
        let miscount = "File Name: a.edf\nNumber of Seizures in File: 2\n\
                        Seizure Start Time: 5 seconds\nSeizure End Time: 9 seconds\n";
        assert_eq!(parse_summary(miscount).unwrap_err().line, 2);
        let unmatched = "File Name: a.edf\nSeizure Start Time: 5 seconds\nFile Name: b.edf\n";
        assert_eq!(parse_summary(unmatched).unwrap_err().line, 2);
    }

    #[test]
    fn offsets_sidecar() {
        let m = parse_offsets("# id start\nchb01_01 0\nchb01_02.edf 3600.5\n\n").unwrap();
        assert_eq!(m["chb01_02"], 3600.5);
        assert!(parse_offsets("x\n").is_err());
    }
}
