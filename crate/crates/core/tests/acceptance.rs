//! Acceptance suite: one line per criterion, then a single verdict.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use tmc_core::attention::scaled_dot_product_attention;
use tmc_core::autodiff::Graph;
use tmc_core::epoching::{
    balance, label_spans, split, window_count, window_spans, write_manifest, FileExtent, Label,
    LabelPolicy, LabeledSpan, Sample, SplitPlan, WindowSpec,
};
use tmc_core::evaluation::{confusion, mcnemar, mcnemar_counts, metrics, roc_auc};
use tmc_core::experiment::{evaluate, fit_holdout, prepare_synthetic, Prepared};
use tmc_core::models::{shape_trace, Arch, CnnConfig, Kind, Model, ModelConfig, TmcvitConfig};
use tmc_core::rng::Rng;
use tmc_core::signal::{
    read_recording, write_edf, Calibration, Recording, SeizureAnnotation, Signature, SynthSpec,
};
use tmc_core::training::{bce_loss, LrSchedule, TrainConfig};
use tmc_core::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let cases = common::cases::all();
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for c in &cases {
        let err = common::max_rel_error(&c.inputs, c.build.as_ref());
        if !(err < c.tol) {
            failures.push(format!("{} {err:.2e}", c.name));
        }
        if err / c.tol > worst.0 {
            worst = (err / c.tol, c.name);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(failures.is_empty(), || {
        format!("over tolerance: {failures:?}")
    })?;
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} cases, worst {} at {:.2} of its tolerance, {secs:.1} s",
        cases.len(),
        worst.1,
        worst.0
    ))
}

// ---------------------------------------------------------------- attention

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn attention_math() -> Outcome {
    let mut g = Graph::new();
    let q = g.constant(t(&[1, 2], &[1.0, 0.0]));
    let eye = g.constant(Tensor::eye(2));
    let (out, _) = scaled_dot_product_attention(&mut g, q, eye, eye).map_err(|e| e.to_string())?;
    let o = g.value(out).data().to_vec();
    ensure(
        (o[0] - 0.6698).abs() < 1e-3 && (o[1] - 0.3302).abs() < 1e-3,
        || format!("2×2 case gave {o:?}"),
    )?;

    let mut g = Graph::new();
    let q = g.constant(t(&[2, 2], &[3.0, -1.0, 0.0, 7.0]));
    let k = g.constant(t(&[1, 2], &[0.4, 0.9]));
    let v = g.constant(t(&[1, 2], &[2.5, -1.5]));
    let (out, w) = scaled_dot_product_attention(&mut g, q, k, v).map_err(|e| e.to_string())?;
    ensure(g.value(w).data() == [1.0, 1.0], || {
        "singleton softmax is not 1".into()
    })?;
    ensure(g.value(out).data() == [2.5, -1.5, 2.5, -1.5], || {
        "singleton key does not return its value".into()
    })?;

    let mut g = Graph::new();
    let q = g.constant(t(&[1, 2], &[5.0, -3.0]));
    let k = g.constant(t(&[3, 2], &[0.2, 0.1, 0.2, 0.1, 0.2, 0.1]));
    let v = g.constant(t(&[3, 1], &[3.0, 6.0, 9.0]));
    let (out, w) = scaled_dot_product_attention(&mut g, q, k, v).map_err(|e| e.to_string())?;
    ensure(
        g.value(w)
            .data()
            .iter()
            .all(|&x| (x - 1.0 / 3.0).abs() < 1e-12),
        || "identical keys not uniform".into(),
    )?;
    ensure((g.value(out).data()[0] - 6.0).abs() < 1e-12, || {
        "identical keys do not average".into()
    })?;

    let mut worst = 0.0f64;
    let mut rng = Rng::new(41);
    for _ in 0..500 {
        let (n, m, d) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(5));
        let spread = rng.uniform_range(0.1, 30.0);
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_fn([n, d], |_| spread * rng.normal()));
        let k = g.constant(Tensor::from_fn([m, d], |_| spread * rng.normal()));
        let v = g.constant(Tensor::from_fn([m, 1], |_| rng.normal()));
        let (_, w) = scaled_dot_product_attention(&mut g, q, k, v).map_err(|e| e.to_string())?;
        for row in g.value(w).data().chunks(m) {
            ensure(row.iter().all(|&x| x >= 0.0), || "negative weight".into())?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst < 1e-6, || format!("row sums off by {worst:.2e}"))?;
    Ok(format!(
        "[{:.4}, {:.4}]; 500 random maps, row sums within {worst:.1e}",
        o[0], o[1]
    ))
}

// ---------------------------------------------------------------- shapes

fn shape_of(cfg: &ModelConfig, layer: &str) -> Result<Vec<usize>, String> {
    shape_trace(cfg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|e| e.layer == layer)
        .map(|e| e.shape)
        .ok_or_else(|| format!("no layer {layer}"))
}

fn shape_anchors() -> Outcome {
    for (l, want) in [(5120, 322), (1280, 69)] {
        let w = common::floor_chain(l, &[10, 6, 6]);
        ensure(23 * w[3] == want, || format!("floor chain for {l}: {w:?}"))?;
        let got = shape_of(&ModelConfig::reference(Kind::Tmct, l), "tokens")?;
        ensure(got == [want, 32], || {
            format!("TMC-T tokens for {l}: {got:?}")
        })?;
    }
    let vit = ModelConfig::reference(Kind::Tmcvit, 5120);
    let grid = shape_of(&vit, "embed4.conv")?;
    ensure(grid == [64, 21, 21], || format!("ViT grid {grid:?}"))?;
    let patches = shape_of(&vit, "patches")?;
    ensure(patches == [49, 3 * 3 * 64], || {
        format!("ViT patches {patches:?}")
    })?;
    // CNN: pools (1,10), (1,10), (1,5), (2,2), (2,2); a pool wider than its
    // input is clipped to the input width.
    for l in [5120, 1280] {
        let cfg = ModelConfig::reference(Kind::Cnn, l);
        let (mut h, mut w) = (23usize, l);
        for (i, (ph, pw)) in [(1, 10), (1, 10), (1, 5), (2, 2), (2, 2)]
            .into_iter()
            .enumerate()
        {
            let pw = if pw > w { w } else { pw };
            h /= ph;
            w /= pw;
            let f = [16, 32, 64, 128, 256][i];
            let got = shape_of(&cfg, &format!("conv{}.pool", i + 1))?;
            ensure(got == [f, h, w], || {
                format!("CNN {l} conv{}: {got:?} vs {:?}", i + 1, [f, h, w])
            })?;
        }
    }
    Ok("tokens 322 and 69; grid 21×21×64 with 49 patches; CNN traces at 5120 and 1280".into())
}

// ---------------------------------------------------------------- labeling

fn seizure(onset: f64, len: f64) -> SeizureAnnotation {
    SeizureAnnotation {
        file_id: "t".into(),
        onset,
        offset: onset + len,
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

fn labeling_windowing() -> Outcome {
    for (onset, pre, extent_start) in [
        (7200.0, 30.0, 0.0),
        (20000.0, 60.0, 0.0),
        (7200.0, 60.0, 4000.0),
    ] {
        let policy = LabelPolicy::with_preictal(pre);
        let l = label_spans(
            &[seizure(onset, 40.0)],
            &policy,
            &[(extent_start, onset + 3600.0)],
        )
        .map_err(|e| e.to_string())?;
        let p = l
            .spans
            .iter()
            .find(|s| s.label == Label::Preictal)
            .ok_or("no preictal span")?;
        let want = (
            (onset - 300.0 - pre * 60.0).max(extent_start),
            onset - 300.0,
        );
        ensure((p.start, p.end) == want, || {
            format!("preictal {:?} vs {want:?}", (p.start, p.end))
        })?;
    }
    let span = LabeledSpan {
        start: 0.0,
        end: 3600.0,
        label: Label::Preictal,
        source_seizure: Some(0),
    };
    let n = window_spans(
        &[file("f", 0.0, 7200.0)],
        &[span],
        &WindowSpec::new(20.0, 5.0),
    )
    .map_err(|e| e.to_string())?
    .len();
    ensure(n == 239, || format!("{n} windows in a 60-min span"))?;

    let h = 3600.0;
    let spec = WindowSpec::default();
    let mut checked = 0usize;
    for trial in 0..1000u64 {
        let mut rng = Rng::new(trial);
        let mut onsets: Vec<f64> = (0..1 + rng.below(4))
            .map(|_| rng.uniform_range(0.0, 36.0 * h).floor())
            .collect();
        onsets.sort_by(f64::total_cmp);
        let mut ann: Vec<SeizureAnnotation> = Vec::new();
        for o in onsets {
            if ann.last().is_none_or(|p| o > p.offset) {
                ann.push(seizure(o, rng.uniform_range(10.0, 120.0).round()));
            }
        }
        let files = [file("a", 0.0, 17.0 * h), file("b", 18.0 * h, 18.0 * h)];
        let extent: Vec<(f64, f64)> = files.iter().map(|f| (f.start, f.end())).collect();
        let policy = LabelPolicy::with_preictal(if trial % 2 == 0 { 60.0 } else { 30.0 });
        let spans = label_spans(&ann, &policy, &extent).map_err(|e| e.to_string())?;
        let windows = window_spans(&files, &spans.spans, &spec).map_err(|e| e.to_string())?;
        for w in windows.iter().filter(|w| w.label == Label::Interictal) {
            let (s, e) = (w.start_second, w.start_second + spec.length_seconds);
            for a in &ann {
                ensure(s >= a.offset + 4.0 * h || e <= a.onset - 4.0 * h, || {
                    format!(
                        "trial {trial}: interictal window at {s} near seizure {}",
                        a.onset
                    )
                })?;
            }
            checked += 1;
        }
        for (i, sp) in spans.spans.iter().enumerate() {
            let want: usize = files
                .iter()
                .map(|f| {
                    let (lo, hi) = (sp.start.max(f.start), sp.end.min(f.end()));
                    let len = if hi > lo {
                        ((hi - lo) * 256.0).round() as usize
                    } else {
                        0
                    };
                    window_count(len, spec.window_samples(), spec.stride_samples(sp.label))
                })
                .sum();
            let got = windows.iter().filter(|w| w.span == i).count();
            ensure(got == want, || {
                format!("trial {trial}: span {i} has {got} windows, formula {want}")
            })?;
        }
    }
    Ok(format!("3 constructed spans, 239 windows, 1000 timelines ({checked} interictal windows) ≥ 4 h clear"))
}

// ---------------------------------------------------------------- balance/split

fn synthetic_samples(pre: usize, inter: usize) -> Vec<Sample> {
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

fn balance_and_split() -> Outcome {
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let (pre, inter) = (10 + rng.below(300), 10 + rng.below(3000));
        let seed = rng.next_u64();
        let s = synthetic_samples(pre, inter);
        let b = balance(&s, seed).map_err(|e| e.to_string())?;
        let n = pre.min(inter);
        let counts = common::tally(b.iter().map(|x| x.label.as_u8()));
        ensure(counts[&0] == n && counts[&1] == n, || {
            format!("balanced counts {counts:?}")
        })?;
        let plan = SplitPlan {
            seed,
            ..SplitPlan::default()
        };
        let sp = split(&b, &plan).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for &i in sp.test.iter().chain(sp.folds.iter().flatten()) {
            ensure(seen.insert(i), || format!("index {i} in two partitions"))?;
        }
        ensure(seen.len() == b.len(), || "split is not exhaustive".into())?;
        for label in [Label::Interictal, Label::Preictal] {
            let t = sp.test.iter().filter(|&&i| b[i].label == label).count();
            ensure(t == (0.2 * n as f64).round() as usize, || {
                format!("test has {t} of {label:?}")
            })?;
            let sizes: Vec<usize> = sp
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| b[i].label == label).count())
                .collect();
            ensure(
                sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
                || format!("folds {sizes:?}"),
            )?;
        }
    }
    let make = || -> Result<String, String> {
        let files = [file("f", 0.0, 6.0 * 3600.0)];
        let spans = label_spans(
            &[seizure(5.5 * 3600.0, 40.0)],
            &LabelPolicy::default(),
            &[(0.0, 6.0 * 3600.0)],
        )
        .map_err(|e| e.to_string())?;
        let all = window_spans(&files, &spans.spans, &WindowSpec::default())
            .map_err(|e| e.to_string())?;
        let bal = balance(&all, 11).map_err(|e| e.to_string())?;
        let sp = split(
            &bal,
            &SplitPlan {
                seed: 11,
                ..SplitPlan::default()
            },
        )
        .map_err(|e| e.to_string())?;
        Ok(write_manifest(&bal, &sp))
    };
    let (a, b) = (make()?, make()?);
    ensure(a.as_bytes() == b.as_bytes(), || {
        "manifests differ between runs".into()
    })?;
    Ok(format!(
        "50 random datasets balanced and split; manifest of {} bytes identical across runs",
        a.len()
    ))
}

// ---------------------------------------------------------------- loss/optimizer

fn loss_and_optimizer() -> Outcome {
    let l1 = bce_loss(1.0, 0.5).map_err(|e| e.to_string())?;
    let l2 = bce_loss(0.0, 0.9).map_err(|e| e.to_string())?;
    ensure((l1 - 2f64.ln()).abs() < 1e-9, || {
        format!("ln 2 case gave {l1}")
    })?;
    ensure((l2 + 0.1f64.ln()).abs() < 1e-9, || {
        format!("−ln 0.1 case gave {l2}")
    })?;
    let mut worst = 0.0f64;
    let mut rng = Rng::new(8);
    for i in 0..200 {
        let z = rng.uniform_range(-6.0, 6.0);
        let y = (i % 2) as f64;
        let mut g = Graph::new();
        let x = g.param(Tensor::new([1], vec![z]).unwrap());
        let p = g.sigmoid(x);
        let l = g.bce(p, &[y]).map_err(|e| e.to_string())?;
        g.backward(l).map_err(|e| e.to_string())?;
        let y_hat = 1.0 / (1.0 + (-z).exp());
        worst = worst.max((g.grad(x).unwrap().data()[0] - (y_hat - y)).abs());
    }
    ensure(worst < 1e-6, || {
        format!("logit gradient off by {worst:.2e}")
    })?;
    for n in [382usize, 1000, 1147, 128, 5] {
        let s = LrSchedule::for_dataset(0.001, 0.94, n, 128);
        ensure(s.interval == n.div_ceil(128) as u64, || {
            format!("interval for n = {n}")
        })?;
        for k in 0..30u64 {
            let want = 0.001 * 0.94f64.powi(k as i32);
            ensure(s.lr(k * s.interval) == want, || {
                format!("lr at boundary {k} for n = {n}")
            })?;
        }
    }
    Ok(format!(
        "ln 2 and −ln 0.1 exact to 1e-9; ŷ−y within {worst:.1e}; schedule exact at 150 boundaries"
    ))
}

// ---------------------------------------------------------------- metrics

fn metrics_and_statistics() -> Outcome {
    let mut rng = Rng::new(1);
    for trial in 0..200 {
        let n = 20 + rng.below(200);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.uniform() * 20.0).round() / 20.0)
            .collect();
        let cm = confusion(&scores, &labels, 0.5).map_err(|e| e.to_string())?;
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (s, l) in scores.iter().zip(&labels) {
            match (*s >= 0.5, *l == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        ensure((cm.tp, cm.tn, cm.fp, cm.fn_) == (tp, tn, fp, fn_), || {
            format!("trial {trial}: counts")
        })?;
        let m = metrics(&cm);
        ensure(m.acc == Some((tp + tn) as f64 / n as f64), || {
            format!("trial {trial}: acc")
        })?;
        ensure(
            m.ss == (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
            || format!("trial {trial}: ss"),
        )?;
        ensure(
            m.sp == (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64),
            || format!("trial {trial}: sp"),
        )?;
    }
    let mut worst = 0.0f64;
    let mut rng = Rng::new(2);
    for trial in 0..100 {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let s = 0.3 * f64::from(l) + 0.7 * rng.uniform();
                if trial % 2 == 0 {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let a = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - common::pairwise_auc(&scores, &labels)).abs());
    }
    ensure(worst < 1e-9, || {
        format!("AUC off the pairwise statistic by {worst:.2e}")
    })?;
    let r = mcnemar_counts(10, 30).map_err(|e| e.to_string())?;
    ensure((r.statistic - 9.025).abs() < 1e-12, || {
        format!("statistic {}", r.statistic)
    })?;
    ensure((r.p_value - 0.00266).abs() < 1e-3, || {
        format!("p {}", r.p_value)
    })?;
    ensure((r.p_value - common::chi2_1_sf(9.025)).abs() < 1e-6, || {
        "p disagrees with the chi-square oracle".into()
    })?;
    // 21 against 44 discordant windows reproduces p ≈ 0.0064 and rejects.
    let pair = |b: usize, c: usize| {
        let n = b + c + 300;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let (mut pa, mut pb) = (labels.clone(), labels.clone());
        for i in 0..b {
            pb[i] = 1 - labels[i];
        }
        for i in b..b + c {
            pa[i] = 1 - labels[i];
        }
        mcnemar(&pa, &pb, &labels)
    };
    let r = pair(21, 44).map_err(|e| e.to_string())?;
    ensure((r.p_value - 0.0064).abs() < 5e-4 && r.rejects(0.05), || {
        format!("21/44 gave p {}", r.p_value)
    })?;
    let r2 = pair(20, 24).map_err(|e| e.to_string())?;
    ensure(!r2.rejects(0.05), || {
        format!("20/24 rejected with p {}", r2.p_value)
    })?;
    Ok(format!(
        "200 recounts exact; AUC within {worst:.1e}; McNemar 9.025 / p {:.5}; 21 vs 44 → p {:.4} rejects",
        mcnemar_counts(10, 30).unwrap().p_value,
        r.p_value
    ))
}

// ---------------------------------------------------------------- end to end

fn reduced_vit() -> ModelConfig {
    ModelConfig {
        seed: 1,
        arch: Arch::Tmcvit(TmcvitConfig {
            filters: vec![4, 8, 16, 16],
            d_model: 32,
            num_heads: 4,
            d_ff: 64,
            depth: 2,
            dense: vec![64, 32],
            ..TmcvitConfig::default()
        }),
        ..ModelConfig::reference(Kind::Tmcvit, 5120)
    }
}

fn reduced_cnn() -> ModelConfig {
    ModelConfig {
        seed: 1,
        arch: Arch::Cnn(CnnConfig {
            filters: vec![4, 8, 16, 16, 32],
            dense: vec![32, 16],
            ..CnnConfig::default()
        }),
        ..ModelConfig::reference(Kind::Cnn, 5120)
    }
}

/// Three seizures 1.5 h apart after 8 h of seizure-free recording.
fn synth(amplitude: f64) -> SynthSpec {
    let h = 3600.0;
    SynthSpec {
        duration: 11.2 * h,
        seizure_times: vec![8.0 * h, 9.5 * h, 11.0 * h],
        preictal_signature: Signature {
            amplitude,
            ..SynthSpec::default().preictal_signature
        },
        seed: 17,
        ..SynthSpec::default()
    }
}

fn e2e_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 32,
        patience: Some(2),
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Test accuracy and AUC of both reduced models, plus the largest number of
/// epochs either ran.
fn run_both(prepared: &Prepared) -> Result<Vec<(&'static str, f64, f64, usize)>, String> {
    let spec = WindowSpec::default();
    let cfg = e2e_train_config();
    let mut out = Vec::new();
    for (name, model) in [("vit", reduced_vit()), ("cnn", reduced_cnn())] {
        let run = fit_holdout::<f32>("synth", &model, prepared, &spec, 0, &cfg)
            .map_err(|e| e.to_string())?;
        out.push((
            name,
            run.report.acc.unwrap_or(f64::NAN),
            run.report.auc.unwrap_or(f64::NAN),
            run.history.len(),
        ));
    }
    Ok(out)
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let plan = SplitPlan {
        seed: 3,
        ..SplitPlan::default()
    };
    let spec = WindowSpec::default();
    let mut lines = Vec::new();
    let mut failures = Vec::new();

    let signal = {
        let prepared = prepare_synthetic(
            &synth(SynthSpec::default().preictal_signature.amplitude),
            &spec,
            &plan,
        )
        .map_err(|e| e.to_string())?;
        run_both(&prepared)?
    };
    for &(name, acc, auc, epochs) in &signal {
        lines.push(format!(
            "{name} acc {acc:.3} auc {auc:.3} in {epochs} epochs"
        ));
        if !(acc >= 0.90 && auc >= 0.95 && epochs <= 15) {
            failures.push(format!("{name} below target"));
        }
    }
    let control = {
        let prepared = prepare_synthetic(&synth(0.0), &spec, &plan).map_err(|e| e.to_string())?;
        run_both(&prepared)?
    };
    for &(name, acc, _, _) in &control {
        lines.push(format!("{name} control acc {acc:.3}"));
        if (acc - 0.5).abs() > 0.05 {
            failures.push(format!("{name} control outside 50 ± 5%"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    lines.push(format!("{secs:.0} s including controls"));
    if secs > 600.0 {
        failures.push(format!("runtime {secs:.0} s"));
    }
    if failures.is_empty() {
        Ok(lines.join("; "))
    } else {
        Err(format!("{}: {}", failures.join(", "), lines.join("; ")))
    }
}

// ---------------------------------------------------------------- determinism

fn determinism_and_persistence() -> Outcome {
    let h = 3600.0;
    let synth = SynthSpec {
        duration: 5.6 * h,
        num_channels: 4,
        seizure_times: vec![5.5 * h],
        seed: 2,
        ..SynthSpec::default()
    };
    let spec = WindowSpec::new(5.0, 0.0);
    let plan = SplitPlan {
        seed: 9,
        ..SplitPlan::default()
    };
    let model = ModelConfig {
        channels: 4,
        samples: 1280,
        seed: 4,
        arch: Arch::Cnn(CnnConfig {
            filters: vec![2, 3, 4, 4, 4],
            dense: vec![8, 4],
            ..CnnConfig::default()
        }),
        ..ModelConfig::reference(Kind::Cnn, 1280)
    };
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        seed: 6,
        ..TrainConfig::default()
    };
    let once = || -> Result<_, String> {
        let prepared = prepare_synthetic(&synth, &spec, &plan).map_err(|e| e.to_string())?;
        let run = fit_holdout::<f32>("p", &model, &prepared, &spec, 0, &cfg)
            .map_err(|e| e.to_string())?;
        Ok((prepared, run))
    };
    let (prepared, a) = once()?;
    let (_, b) = once()?;
    let (ja, jb) = (a.report.to_json(), b.report.to_json());
    ensure(ja.as_bytes() == jb.as_bytes(), || {
        "EvalReports differ between runs".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    a.model.save(&path).map_err(|e| e.to_string())?;
    let back = Model::<f32>::load(model.clone(), &path).map_err(|e| e.to_string())?;
    let reloaded = evaluate("p", &back, &prepared, &spec, 64).map_err(|e| e.to_string())?;
    let bits = |r: &tmc_core::evaluation::EvalReport| {
        r.windows
            .iter()
            .map(|w| w.score.to_bits())
            .collect::<Vec<_>>()
    };
    ensure(bits(&reloaded) == bits(&a.report), || {
        "reloaded checkpoint scores differ".into()
    })?;

    let mut rng = Rng::new(12);
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            (0..256 * 8)
                .map(|_| rng.uniform_range(-3276.8, 3276.7))
                .collect()
        })
        .collect();
    let labels: Vec<String> = (0..5).map(|i| format!("C{i}")).collect();
    let rec = Recording::from_physical("r", labels, 256, Calibration::EEG_16BIT, &rows);
    let back = read_recording(&write_edf(&rec), "r", None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (ch, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            worst = worst.max((back.physical(ch, i) - v).abs());
        }
    }
    ensure(back == rec, || {
        "EDF round trip changed the digital samples".into()
    })?;
    ensure(worst <= 0.1 + 1e-9, || format!("EDF error {worst}"))?;
    Ok(format!(
        "EvalReport of {} bytes identical; {} reloaded scores bit-exact; EDF error {worst:.3} µV ≤ 0.1",
        ja.len(),
        reloaded.windows.len()
    ))
}

// ---------------------------------------------------------------- runner

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_checks),
        ("attention math", attention_math),
        ("shape anchors", shape_anchors),
        ("labeling and windowing", labeling_windowing),
        ("balance and split", balance_and_split),
        ("loss and optimizer", loss_and_optimizer),
        ("metrics and statistics", metrics_and_statistics),
        ("end-to-end synthetic experiment", end_to_end),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        // Written past the test harness's capture so every line reaches the log.
        let line = match &outcome {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(detail) => format!("FAIL  {name}: {detail}"),
        };
        let _ = writeln!(std::io::stdout().lock(), "{line}");
        if outcome.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
