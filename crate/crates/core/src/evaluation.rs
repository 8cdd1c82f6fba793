//! Confusion metrics, ROC AUC, window aggregation and McNemar's test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

/// Decision threshold for the confusion metrics.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Below this many discordant pairs McNemar's test uses the exact binomial p.
pub const EXACT_MCNEMAR_BELOW: u64 = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(u8),
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("both classes are required, only label {0} present")]
    SingleClass(u8),
    #[error("group size must be positive")]
    ZeroGroup,
    #[error("no discordant pairs: McNemar's test is undefined")]
    NoDiscordant,
    #[error("reports cannot be aligned: {0}")]
    Unaligned(String),
}

fn check_binary(labels: &[u8]) -> Result<(), EvalError> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&l) => Err(EvalError::NonBinaryLabel(l)),
        None => Ok(()),
    }
}

fn check_pair(scores: usize, labels: usize) -> Result<(), EvalError> {
    if scores != labels {
        return Err(EvalError::LengthMismatch(scores, labels));
    }
    if scores == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Scores at or above `threshold` predict preictal (1).
pub fn confusion(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ConfusionMatrix, EvalError> {
    check_pair(scores.len(), labels.len())?;
    check_binary(labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Accuracy, sensitivity and specificity; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub ss: Option<f64>,
    pub sp: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    Metrics {
        acc: ratio(cm.tp + cm.tn, cm.total()),
        ss: ratio(cm.tp, cm.tp + cm.fn_),
        sp: ratio(cm.tn, cm.tn + cm.fp),
    }
}

/// Trapezoidal area under the ROC curve, sweeping every distinct score as a
/// threshold. Tied scores move the curve diagonally, which counts each tied
/// positive/negative pair as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_pair(scores.len(), labels.len())?;
    check_binary(labels)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 {
        return Err(EvalError::SingleClass(0));
    }
    if neg == 0.0 {
        return Err(EvalError::SingleClass(1));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - fp0) * (tp + tp0) / 2.0;
    }
    Ok(area / (pos * neg))
}

/// Means of consecutive groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub scores: Vec<f64>,
    /// Trailing scores that did not fill a group.
    pub dropped: usize,
}

/// Averages consecutive groups of `group` scores. A remainder is dropped
/// with a warning.
pub fn aggregate_windows(scores: &[f64], group: usize) -> Result<Aggregated, EvalError> {
    if group == 0 {
        return Err(EvalError::ZeroGroup);
    }
    let out: Vec<f64> = scores
        .chunks_exact(group)
        .map(|c| c.iter().sum::<f64>() / group as f64)
        .collect();
    let dropped = scores.len() % group;
    if dropped > 0 {
        log::warn!("aggregate_windows: {dropped} trailing score(s) do not fill a group of {group} and were dropped");
    }
    Ok(Aggregated {
        scores: out,
        dropped,
    })
}

/// Like [`aggregate_windows`], applied separately to each run of equal
/// `span` ids so that no group crosses a span boundary. Returns the means
/// with the index of each group's first element.
pub fn aggregate_by_span(
    scores: &[f64],
    spans: &[usize],
    group: usize,
) -> Result<(Vec<(usize, f64)>, usize), EvalError> {
    if scores.len() != spans.len() {
        return Err(EvalError::LengthMismatch(scores.len(), spans.len()));
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    let mut start = 0;
    while start < scores.len() {
        let mut end = start + 1;
        while end < scores.len() && spans[end] == spans[start] {
            end += 1;
        }
        let agg = aggregate_windows(&scores[start..end], group)?;
        out.extend(
            agg.scores
                .into_iter()
                .enumerate()
                .map(|(k, s)| (start + k * group, s)),
        );
        dropped += agg.dropped;
        start = end;
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McNemarMethod {
    /// Continuity-corrected chi-square with one degree of freedom.
    Chi2,
    /// Exact two-sided binomial test on the discordant pairs.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
    /// `(|b − c| − 1)² / (b + c)`.
    pub statistic: f64,
    pub p_chi2: f64,
    pub p_exact: f64,
    pub method: McNemarMethod,
    /// The p value of the selected method.
    pub p_value: f64,
}

impl McNemarResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// McNemar's test from discordant counts.
pub fn mcnemar_counts(b: u64, c: u64) -> Result<McNemarResult, EvalError> {
    let n = b + c;
    if n == 0 {
        return Err(EvalError::NoDiscordant);
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let statistic = d * d / n as f64;
    let p_chi2 = ChiSquared::new(1.0).expect("valid dof").sf(statistic);
    let k = b.min(c);
    let p_exact = (2.0 * Binomial::new(0.5, n).expect("valid binomial").cdf(k)).min(1.0);
    let method = if n < EXACT_MCNEMAR_BELOW {
        McNemarMethod::Exact
    } else {
        McNemarMethod::Chi2
    };
    let p_value = match method {
        McNemarMethod::Chi2 => p_chi2,
        McNemarMethod::Exact => p_exact,
    };
    Ok(McNemarResult {
        b,
        c,
        statistic,
        p_chi2,
        p_exact,
        method,
        p_value,
    })
}

/// Paired comparison of two classifiers' binary predictions.
pub fn mcnemar(preds_a: &[u8], preds_b: &[u8], labels: &[u8]) -> Result<McNemarResult, EvalError> {
    check_pair(preds_a.len(), labels.len())?;
    check_pair(preds_b.len(), labels.len())?;
    check_binary(labels)?;
    check_binary(preds_a)?;
    check_binary(preds_b)?;
    let (mut b, mut c) = (0, 0);
    for ((&a, &p), &l) in preds_a.iter().zip(preds_b).zip(labels) {
        match (a == l, p == l) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    mcnemar_counts(b, c)
}

/// One scored test window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub file_id: String,
    pub start_sample: usize,
    pub start_second: f64,
    pub span: usize,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub patient: String,
    pub model: String,
    pub window_seconds: f64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub acc: Option<f64>,
    pub ss: Option<f64>,
    pub sp: Option<f64>,
    pub auc: Option<f64>,
    pub windows: Vec<WindowScore>,
}

impl EvalReport {
    /// Scores `windows` at `threshold`. AUC is absent when only one class is present.
    pub fn new(
        patient: impl Into<String>,
        model: impl Into<String>,
        window_seconds: f64,
        threshold: f64,
        windows: Vec<WindowScore>,
    ) -> Result<Self, EvalError> {
        let scores: Vec<f64> = windows.iter().map(|w| w.score).collect();
        let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
        let confusion = confusion(&scores, &labels, threshold)?;
        let m = metrics(&confusion);
        let auc = match roc_auc(&scores, &labels) {
            Ok(a) => Some(a),
            Err(EvalError::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            patient: patient.into(),
            model: model.into(),
            window_seconds,
            threshold,
            confusion,
            acc: m.acc,
            ss: m.ss,
            sp: m.sp,
            auc,
            windows,
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Per-window scores, one CSV row each.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file_id,start_sample,start_second,span,label,score\n");
        for w in &self.windows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                w.file_id, w.start_sample, w.start_second, w.span, w.label, w.score
            ));
        }
        s
    }

    /// Summary row: patient, model, Acc, AUC, SS, SP (as percentages).
    pub fn table_row(&self) -> String {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.patient,
            self.model,
            pct(self.acc),
            pct(self.auc),
            pct(self.ss),
            pct(self.sp)
        )
    }
}

/// Result of comparing two reports on aligned windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    /// Consecutive short windows averaged per comparison unit (1 if none).
    pub group: usize,
    pub pairs: usize,
    pub dropped: usize,
    pub acc_a: f64,
    pub acc_b: f64,
    pub mcnemar: McNemarResult,
}

/// Pairs the windows of two reports and runs McNemar's test. When window
/// lengths differ, the shorter report's scores are averaged in groups of
/// `long / short` consecutive windows within each span, and each group is
/// matched to the longer window starting at the same sample.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison, EvalError> {
    let swap = a.window_seconds > b.window_seconds;
    let (short, long) = if swap { (b, a) } else { (a, b) };
    let ratio = long.window_seconds / short.window_seconds;
    if !(ratio >= 1.0) || ratio.fract() != 0.0 {
        return Err(EvalError::Unaligned(format!(
            "window lengths {} s and {} s are not integer multiples",
            short.window_seconds, long.window_seconds
        )));
    }
    let group = ratio as usize;
    let spans: Vec<usize> = short.windows.iter().map(|w| w.span).collect();
    let (groups, dropped) = aggregate_by_span(&short.scores(), &spans, group)?;
    let mut index = std::collections::HashMap::new();
    for (first, score) in groups {
        let w = &short.windows[first];
        index.insert((w.file_id.as_str(), w.start_sample), (score, w.label));
    }
    let (mut sa, mut sb, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut unmatched = 0;
    for w in &long.windows {
        match index.get(&(w.file_id.as_str(), w.start_sample)) {
            Some(&(s, l)) if l == w.label => {
                sa.push(s);
                sb.push(w.score);
                labels.push(l);
            }
            Some(_) => {
                return Err(EvalError::Unaligned(format!(
                    "label disagreement at {}:{}",
                    w.file_id, w.start_sample
                )))
            }
            None => unmatched += 1,
        }
    }
    if labels.is_empty() {
        return Err(EvalError::Unaligned(
            "no window of one report matches the other".into(),
        ));
    }
    let (scores_a, scores_b) = if swap { (sb, sa) } else { (sa, sb) };
    let threshold = a.threshold;
    let pa: Vec<u8> = scores_a.iter().map(|&s| u8::from(s >= threshold)).collect();
    let pb: Vec<u8> = scores_b
        .iter()
        .map(|&s| u8::from(s >= b.threshold))
        .collect();
    let acc = |p: &[u8]| {
        p.iter().zip(&labels).filter(|(x, y)| x == y).count() as f64 / labels.len() as f64
    };
    let result = mcnemar(&pa, &pb, &labels)?;
    Ok(Comparison {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        group,
        pairs: labels.len(),
        dropped: dropped + unmatched,
        acc_a: acc(&pa),
        acc_b: acc(&pb),
        mcnemar: result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (1, 1, 0, 0));
        let cm = confusion(&[0.5; 4], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!(cm.tp + cm.fp, 4);
        assert_eq!(confusion(&[], &[], 0.5), Err(EvalError::Empty));
    }

    #[test]
    fn metric_formulas() {
        let m = metrics(&ConfusionMatrix {
            tp: 96,
            fn_: 4,
            tn: 92,
            fp: 8,
        });
        assert!((m.acc.unwrap() - 0.94).abs() < 1e-12);
        assert!((m.ss.unwrap() - 0.96).abs() < 1e-12);
        assert!((m.sp.unwrap() - 0.92).abs() < 1e-12);
        let m = metrics(&ConfusionMatrix {
            tp: 0,
            fn_: 0,
            tn: 3,
            fp: 1,
        });
        assert_eq!(m.ss, None);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.7], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.5, 0.4], &[1, 1]),
            Err(EvalError::SingleClass(1))
        );
    }

    #[test]
    fn aggregation() {
        assert_eq!(
            aggregate_windows(&[0.2, 0.4, 0.6, 0.8], 4).unwrap().scores,
            vec![0.5]
        );
        let a = aggregate_windows(&[0.3; 9], 4).unwrap();
        assert_eq!((a.scores.len(), a.dropped), (2, 1));
        assert_eq!(aggregate_windows(&[0.1], 0), Err(EvalError::ZeroGroup));
        let (g, dropped) =
            aggregate_by_span(&[1.0, 1.0, 3.0, 3.0, 3.0], &[0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(g, vec![(0, 1.0), (2, 3.0)]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn mcnemar_counts_and_methods() {
        let r = mcnemar_counts(10, 30).unwrap();
        assert!((r.statistic - 9.025).abs() < 1e-12);
        assert_eq!(r.method, McNemarMethod::Chi2);
        let r = mcnemar_counts(5, 5).unwrap();
        assert!((r.statistic - 0.1).abs() < 1e-12);
        assert_eq!(r.method, McNemarMethod::Exact);
        assert!((r.p_exact - 1.0).abs() < 1e-12);
        assert_eq!(mcnemar_counts(0, 0), Err(EvalError::NoDiscordant));
    }
}
