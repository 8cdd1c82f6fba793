mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use tmc_core::epoching::{
    balance, eligible_patient, label_spans, read_manifest, select_lead_seizures, split,
    window_count, window_spans, write_manifest, FileExtent, Label, LabelPolicy, LabeledSpan,
    Sample, SplitOrder, SplitPlan, WindowSpec,
};
use tmc_core::rng::Rng;
use tmc_core::signal::SeizureAnnotation;

fn seizure(onset: f64) -> SeizureAnnotation {
    SeizureAnnotation {
        file_id: "t".into(),
        onset,
        offset: onset + 40.0,
    }
}

fn file(id: &str, start: f64, seconds: f64) -> FileExtent {
    FileExtent {
        file_id: id.into(),
        start,
        num_samples: (seconds * 256.0) as usize,
        fs: 256,
    }
}

fn span(len: f64, label: Label) -> LabeledSpan {
    LabeledSpan {
        start: 0.0,
        end: len,
        label,
        source_seizure: None,
    }
}

/// Synthetic window list with `pre` preictal and `inter` interictal entries.
fn samples(pre: usize, inter: usize) -> Vec<Sample> {
    (0..pre + inter)
        .map(|i| Sample {
            file_id: "f".into(),
            start_sample: i * 5120,
            start_second: i as f64 * 20.0,
            label: if i < pre {
                Label::Preictal
            } else {
                Label::Interictal
            },
            span: 0,
        })
        .collect()
}

#[test]
fn lead_seizure_examples() {
    let a: Vec<_> = [1000.0, 20000.0, 30000.0, 50000.0].map(seizure).to_vec();
    let leads: Vec<f64> = select_lead_seizures(&a, 4.0)
        .unwrap()
        .iter()
        .map(|s| s.onset)
        .collect();
    assert_eq!(leads, vec![1000.0, 20000.0, 50000.0]);
    assert_eq!(select_lead_seizures(&a[..1], 4.0).unwrap().len(), 1);
    assert!(eligible_patient(&a, 23));
    assert!(!eligible_patient(&a[..2], 23));
    assert!(!eligible_patient(&a, 28));
}

#[test]
fn preictal_spans_on_constructed_timelines() {
    let l = label_spans(
        &[seizure(7200.0)],
        &LabelPolicy::with_preictal(30.0),
        &[(0.0, 9000.0)],
    )
    .unwrap();
    let pre: Vec<_> = l
        .spans
        .iter()
        .filter(|s| s.label == Label::Preictal)
        .collect();
    assert_eq!(
        (pre[0].start, pre[0].end),
        (7200.0 - 300.0 - 1800.0, 7200.0 - 300.0)
    );
    let l = label_spans(
        &[seizure(7200.0)],
        &LabelPolicy::default(),
        &[(4000.0, 9000.0)],
    )
    .unwrap();
    assert_eq!((l.spans[0].start, l.spans[0].end), (4000.0, 6900.0));
    // Seizures 8 h apart (offset to onset): interictal time lies between
    // offset + 4 h and onset − 4 h, an empty interval here.
    let h = 3600.0;
    let pair = [seizure(2.0 * h), seizure(10.0 * h + 40.0)];
    let l = label_spans(&pair, &LabelPolicy::default(), &[(0.0, 20.0 * h)]).unwrap();
    let inter: Vec<(f64, f64)> = l
        .spans
        .iter()
        .filter(|s| s.label == Label::Interictal)
        .map(|s| (s.start, s.end))
        .collect();
    assert_eq!(inter, vec![(10.0 * h + 80.0 + 4.0 * h, 20.0 * h)]);
    let pair = [seizure(2.0 * h), seizure(11.0 * h)];
    let l = label_spans(&pair, &LabelPolicy::default(), &[(0.0, 20.0 * h)]).unwrap();
    let inter: Vec<(f64, f64)> = l
        .spans
        .iter()
        .filter(|s| s.label == Label::Interictal)
        .map(|s| (s.start, s.end))
        .collect();
    assert_eq!(
        inter,
        vec![(6.0 * h + 40.0, 7.0 * h), (15.0 * h + 40.0, 20.0 * h)]
    );
}

#[test]
fn window_count_examples() {
    let f = [file("f", 0.0, 7200.0)];
    let spec = WindowSpec::new(20.0, 5.0);
    let n = window_spans(&f, &[span(3600.0, Label::Preictal)], &spec)
        .unwrap()
        .len();
    assert_eq!(n, ((3600 - 20) / 15) + 1);
    assert_eq!(n, 239);
    let spec5 = WindowSpec::new(5.0, 0.0);
    assert_eq!(
        window_spans(&f, &[span(1800.0, Label::Preictal)], &spec5)
            .unwrap()
            .len(),
        360
    );
    assert!(window_spans(&f, &[span(19.0, Label::Preictal)], &spec)
        .unwrap()
        .is_empty());
    // Interictal time is never overlapped.
    let inter = window_spans(&f, &[span(3600.0, Label::Interictal)], &spec).unwrap();
    assert_eq!(inter.len(), 180);
}

#[test]
fn windows_stop_at_file_boundaries() {
    let files = [file("a", 0.0, 100.0), file("b", 100.0, 100.0)];
    let spec = WindowSpec::new(20.0, 0.0);
    let w = window_spans(
        &files,
        &[LabeledSpan {
            start: 90.0,
            end: 130.0,
            label: Label::Interictal,
            source_seizure: None,
        }],
        &spec,
    )
    .unwrap();
    // [90, 100) in file a is too short; file b hosts one window at 100.
    assert_eq!(w.len(), 1);
    assert_eq!((w[0].file_id.as_str(), w[0].start_sample), ("b", 0));
}

#[test]
fn balance_examples() {
    let s = samples(239, 5000);
    let b = balance(&s, 7).unwrap();
    let counts = common::tally(b.iter().map(|x| x.label.as_u8()));
    assert_eq!((counts[&0], counts[&1]), (239, 239));
    let pre: Vec<_> = b
        .iter()
        .filter(|x| x.label == Label::Preictal)
        .cloned()
        .collect();
    assert_eq!(pre, s[..239].to_vec());
    assert_eq!(b, balance(&s, 7).unwrap());
    assert_ne!(b, balance(&s, 8).unwrap());
    let even = samples(10, 10);
    assert_eq!(balance(&even, 3).unwrap(), even);
    assert!(balance(&samples(0, 10), 1).is_err());
}

#[test]
fn split_examples() {
    let s = balance(&samples(239, 5000), 1).unwrap();
    let sp = split(&s, &SplitPlan::default()).unwrap();
    let test_counts = common::tally(sp.test.iter().map(|&i| s[i].label.as_u8()));
    assert_eq!((test_counts[&0], test_counts[&1]), (48, 48));
    assert_eq!(sp.train_all().len(), 382);
    for label in [Label::Interictal, Label::Preictal] {
        let sizes: Vec<usize> = sp
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| s[i].label == label).count())
            .collect();
        assert!(
            sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
            "{sizes:?}"
        );
    }
    let tiny = samples(2, 2);
    let plan = SplitPlan {
        folds: 2,
        ..SplitPlan::default()
    };
    let sp = split(&tiny, &plan).unwrap();
    assert!(sp.test.is_empty());
    for f in &sp.folds {
        assert_eq!(f.len(), 2);
        assert_eq!(
            f.iter()
                .filter(|&&i| tiny[i].label == Label::Preictal)
                .count(),
            1
        );
    }
    let plan = SplitPlan {
        folds: 5,
        ..SplitPlan::default()
    };
    assert!(split(&samples(3, 3), &plan).is_err());
}

#[test]
fn chronological_split_keeps_latest_for_test() {
    let s = samples(50, 50);
    let plan = SplitPlan {
        order: SplitOrder::Chronological,
        ..SplitPlan::default()
    };
    let sp = split(&s, &plan).unwrap();
    let last_train = sp
        .train_all()
        .iter()
        .map(|&i| s[i].start_second)
        .fold(f64::MIN, f64::max);
    for label in [Label::Interictal, Label::Preictal] {
        let first_test = sp
            .test
            .iter()
            .filter(|&&i| s[i].label == label)
            .map(|&i| s[i].start_second)
            .fold(f64::MAX, f64::min);
        let last_train_label = sp
            .train_all()
            .iter()
            .filter(|&&i| s[i].label == label)
            .map(|&i| s[i].start_second)
            .fold(f64::MIN, f64::max);
        assert!(first_test > last_train_label);
    }
    assert!(last_train > 0.0);
}

#[test]
fn manifests_are_bit_identical_across_runs() {
    let make = || {
        let files = [file("f", 0.0, 6.0 * 3600.0)];
        let spans = label_spans(
            &[seizure(5.5 * 3600.0)],
            &LabelPolicy::default(),
            &[(0.0, 6.0 * 3600.0)],
        )
        .unwrap();
        let all = window_spans(&files, &spans.spans, &WindowSpec::default()).unwrap();
        let bal = balance(&all, 11).unwrap();
        let sp = split(
            &bal,
            &SplitPlan {
                seed: 11,
                ..SplitPlan::default()
            },
        )
        .unwrap();
        write_manifest(&bal, &sp)
    };
    let (a, b) = (make(), make());
    assert_eq!(a.as_bytes(), b.as_bytes());
    let (s, sp) = read_manifest(&a).unwrap();
    assert_eq!(write_manifest(&s, &sp), a);
}

/// Up to four seizures placed at random on a 36-h, two-file timeline with an
/// unrecorded hour between the files.
fn random_timeline(seed: u64) -> (Vec<SeizureAnnotation>, Vec<FileExtent>) {
    let mut rng = Rng::new(seed);
    let h = 3600.0;
    let n = 1 + rng.below(4);
    let mut onsets: Vec<f64> = (0..n)
        .map(|_| (rng.uniform_range(0.0, 36.0 * h) as u64) as f64)
        .collect();
    onsets.sort_by(f64::total_cmp);
    let mut ann: Vec<SeizureAnnotation> = Vec::new();
    for t in onsets {
        if ann.last().is_none_or(|p| t > p.offset) {
            let len = rng.uniform_range(10.0, 120.0).round();
            ann.push(SeizureAnnotation {
                file_id: "t".into(),
                onset: t,
                offset: t + len,
            });
        }
    }
    let files = vec![file("a", 0.0, 17.0 * h), file("b", 18.0 * h, 18.0 * h)];
    (ann, files)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interictal_windows_keep_their_distance(seed in any::<u64>(), pre in prop::sample::select(vec![30.0, 60.0])) {
        let (ann, files) = random_timeline(seed);
        let policy = LabelPolicy::with_preictal(pre);
        let extent: Vec<(f64, f64)> = files.iter().map(|f| (f.start, f.end())).collect();
        let spans = label_spans(&ann, &policy, &extent).unwrap();
        let spec = WindowSpec::default();
        let windows = window_spans(&files, &spans.spans, &spec).unwrap();
        let gap = policy.gap_seconds();
        let sph = policy.sph_seconds();
        for w in &windows {
            let (s, e) = (w.start_second, w.start_second + spec.length_seconds);
            for a in &ann {
                match w.label {
                    Label::Interictal => prop_assert!(s >= a.offset + gap || e <= a.onset - gap),
                    Label::Preictal => prop_assert!(e <= a.onset - sph || s >= a.offset),
                }
            }
            let f = files.iter().find(|f| f.file_id == w.file_id).unwrap();
            prop_assert!(w.start_sample + spec.window_samples() <= f.num_samples);
        }
        for (i, sp) in spans.spans.iter().enumerate() {
            let expected: usize = files
                .iter()
                .map(|f| {
                    let lo = sp.start.max(f.start);
                    let hi = sp.end.min(f.end());
                    let len = if hi > lo { ((hi - lo) * 256.0).round() as usize } else { 0 };
                    window_count(len, spec.window_samples(), spec.stride_samples(sp.label))
                })
                .sum();
            prop_assert_eq!(windows.iter().filter(|w| w.span == i).count(), expected);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balance_and_split_partition_the_input(pre in 7usize..80, inter in 7usize..400, seed in any::<u64>()) {
        let s = samples(pre, inter);
        let b = balance(&s, seed).unwrap();
        let n = pre.min(inter);
        prop_assert_eq!(b.iter().filter(|x| x.label == Label::Preictal).count(), n);
        prop_assert_eq!(b.iter().filter(|x| x.label == Label::Interictal).count(), n);
        let plan = SplitPlan { seed, ..SplitPlan::default() };
        let sp = split(&b, &plan).unwrap();
        let mut seen = BTreeSet::new();
        for &i in sp.test.iter().chain(sp.folds.iter().flatten()) {
            prop_assert!(seen.insert(i), "index {} appears twice", i);
        }
        prop_assert_eq!(seen.len(), b.len());
        for label in [Label::Interictal, Label::Preictal] {
            let t = sp.test.iter().filter(|&&i| b[i].label == label).count();
            prop_assert_eq!(t, (0.2 * n as f64).round() as usize);
        }
        prop_assert_eq!(&sp, &split(&b, &plan).unwrap());
    }
}
