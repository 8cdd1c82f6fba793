//! Binary cross-entropy, Adam with staircase decay, the epoch loop and
//! cross-validation.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, GraphError, Mode};
use crate::epoching::{Split, WindowDataset};
use crate::evaluation::{self, EvalError};
use crate::models::{Model, ModelConfig, ModelError};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use crate::autodiff::BCE_CLAMP;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("{0} set is empty")]
    EmptyFold(&'static str),
    #[error("need {want} folds, got {have}")]
    Folds { want: usize, have: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Binary cross-entropy on a probability clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]`.
pub fn bce_loss(y: f64, y_hat: f64) -> Result<f64, TrainError> {
    if y != 0.0 && y != 1.0 {
        return Err(TrainError::InvalidLabel(y));
    }
    let p = y_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Mean of [`bce_loss`] over a batch.
pub fn bce_batch(labels: &[f64], probs: &[f64]) -> Result<f64, TrainError> {
    if labels.is_empty() || labels.len() != probs.len() {
        return Err(TrainError::EmptyFold("loss batch"));
    }
    let mut total = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        total += bce_loss(y, p)?;
    }
    Ok(total / labels.len() as f64)
}

/// `lr(t) = lr0 · rate^floor(t / interval)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_rate: f64,
    pub interval: u64,
}

impl LrSchedule {
    /// Decay once every `ceil(n / batch)` steps.
    pub fn for_dataset(lr0: f64, decay_rate: f64, n: usize, batch: usize) -> Self {
        Self {
            lr0,
            decay_rate,
            interval: n.div_ceil(batch.max(1)).max(1) as u64,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let k = (step / self.interval.max(1)) as i32;
        self.lr0 * self.decay_rate.powi(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    step: u64,
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// One bias-corrected update. Every gradient is checked before any
    /// parameter changes; a non-finite one aborts the step.
    pub fn step<'a>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Result<(), TrainError> {
        let grads: Vec<(&str, &Tensor<T>)> = grads.into_iter().collect();
        for (name, g) in &grads {
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }
        let lr = T::of(self.lr());
        let t = (self.step + 1) as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(t));
        let c2 = T::one() - T::of(self.beta2.powi(t));
        let eps = T::of(self.eps);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Restore the parameters of the epoch with the lowest validation loss.
    #[default]
    BestValidation,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_rate: f64,
    pub selection: Selection,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr0: 1e-3,
            decay_rate: 0.94,
            selection: Selection::BestValidation,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(TrainError::Config(
                "epochs ≥ 1 and batch_size ≥ 2 required".into(),
            ));
        }
        if !(self.lr0 > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(TrainError::Config(
                "lr0 > 0 and decay_rate in (0, 1] required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch\tlr\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n");
    for r in history {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters the returned model carries.
    pub selected_epoch: usize,
}

fn accuracy(labels: &[f64], probs: &[f64]) -> f64 {
    let hits = labels
        .iter()
        .zip(probs)
        .filter(|(&y, &p)| (p >= evaluation::DEFAULT_THRESHOLD) == (y == 1.0))
        .count();
    hits as f64 / labels.len() as f64
}

/// Eval-mode probabilities for the given samples, in `indices` order.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    data: &WindowDataset<'_>,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = data.batch::<T>(chunk);
        out.extend(model.predict(&x)?.into_iter().map(|p| p.to_f64_lossy()));
    }
    Ok(out)
}

fn labels_of(data: &WindowDataset<'_>, indices: &[usize]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| f64::from(data.samples()[i].label.as_u8()))
        .collect()
}

/// Batches of `order`; a trailing batch of one sample joins the previous
/// batch since train-mode batch norm needs two.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut at = 0;
    while at < order.len() {
        let mut end = (at + size).min(order.len());
        if order.len() - end == 1 {
            end += 1;
        }
        out.push(&order[at..end]);
        at = end;
    }
    out
}

/// Trains `model` on `train` and validates on `val` after every epoch.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    data: &WindowDataset<'_>,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(TrainError::EmptyFold("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyFold("validation"));
    }
    let schedule = LrSchedule::for_dataset(cfg.lr0, cfg.decay_rate, train.len(), cfg.batch_size);
    let mut adam = Adam::<T>::new(schedule);
    let root = Rng::new(cfg.seed);
    let val_labels = labels_of(data, val);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Option<ParamStore<T>>)> = None;
    let mut since_best = 0;
    let mut order = train.to_vec();
    for epoch in 0..cfg.epochs {
        let lr = adam.lr();
        let mut shuffle_rng = root.fork(2 * epoch as u64);
        let mut dropout_rng = root.fork(2 * epoch as u64 + 1);
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut hits) = (0.0, 0.0);
        for idx in batches(&order, cfg.batch_size) {
            let (x, y) = data.batch::<T>(idx);
            let mut g = Graph::new();
            let b = model.bind(&mut g, true);
            let xv = g.constant(x);
            let out = model.forward(&mut g, &b, xv, Mode::Train, &mut dropout_rng)?;
            let loss = g.bce(out.probs, &y).map_err(ModelError::from)?;
            let lv = g.value(loss).data()[0].to_f64_lossy();
            if !lv.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            match g.backward(loss) {
                Ok(()) => {}
                Err(GraphError::NonFiniteLoss(_)) => return Err(TrainError::Diverged { epoch }),
                Err(e) => return Err(ModelError::from(e).into()),
            }
            let probs: Vec<f64> = g
                .value(out.probs)
                .data()
                .iter()
                .map(|p| p.to_f64_lossy())
                .collect();
            let yl: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
            loss_sum += lv * idx.len() as f64;
            hits += accuracy(&yl, &probs) * idx.len() as f64;
            let zero: Vec<(String, Tensor<T>)> = b
                .iter()
                .filter(|(_, v)| g.grad(*v).is_none())
                .map(|(n, v)| (n.to_string(), Tensor::zeros(g.shape(v).to_vec())))
                .collect();
            let grads = b
                .iter()
                .filter_map(|(n, v)| g.grad(v).map(|t| (n, t)))
                .chain(zero.iter().map(|(n, t)| (n.as_str(), t)));
            adam.step(model.params_mut(), grads)?;
            model.apply_bn_stats(&out.bn_stats);
        }
        let train_loss = loss_sum / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let val_probs = predict(&model, data, val, cfg.batch_size)?;
        let val_loss = bce_batch(&val_labels, &val_probs)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc: hits / order.len() as f64,
            val_loss,
            val_acc: accuracy(&val_labels, &val_probs),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.3}",
            record.train_loss,
            record.val_loss,
            record.val_acc
        );
        history.push(record);
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            let keep = (cfg.selection == Selection::BestValidation).then(|| model.params().clone());
            best = Some((val_loss, epoch, keep));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let last = history.len() - 1;
    let selected_epoch = match (cfg.selection, best) {
        (Selection::BestValidation, Some((_, epoch, Some(params)))) => {
            *model.params_mut() = params;
            epoch
        }
        _ => last,
    };
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Aggregates per-fold values; `sd` is the sample (n − 1) standard deviation.
pub fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub selected_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub acc: Option<f64>,
    pub ss: Option<f64>,
    pub sp: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    pub acc: Option<MeanSd>,
    pub ss: Option<MeanSd>,
    pub sp: Option<MeanSd>,
    pub auc: Option<MeanSd>,
}

fn summarize(folds: &[FoldResult], f: impl Fn(&FoldResult) -> Option<f64>) -> Option<MeanSd> {
    let v: Option<Vec<f64>> = folds.iter().map(f).collect();
    v.map(|v| mean_sd(&v))
}

/// Seed of the model trained for `fold`, derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    Rng::new(seed).fork(1_000 + fold as u64).next_u64()
}

fn run_fold<T: Scalar>(
    model_cfg: &ModelConfig,
    data: &WindowDataset<'_>,
    split: &Split,
    fold: usize,
    cfg: &TrainConfig,
) -> Result<FoldResult, TrainError> {
    let seed = fold_seed(cfg.seed, fold);
    let model = Model::<T>::new(model_cfg.clone().with_seed(seed))?;
    let train_idx = split.train_without(fold);
    let val = &split.folds[fold];
    let fold_cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let out = train(model, data, &train_idx, val, &fold_cfg)?;
    let probs = predict(&out.model, data, val, cfg.batch_size)?;
    let labels: Vec<u8> = val
        .iter()
        .map(|&i| data.samples()[i].label.as_u8())
        .collect();
    let cm = evaluation::confusion(&probs, &labels, evaluation::DEFAULT_THRESHOLD)?;
    let m = evaluation::metrics(&cm);
    Ok(FoldResult {
        fold,
        selected_epoch: out.selected_epoch,
        history: out.history,
        acc: m.acc,
        ss: m.ss,
        sp: m.sp,
        auc: evaluation::roc_auc(&probs, &labels).ok(),
    })
}

/// Trains one model per fold (that fold validates, the rest train) and
/// aggregates validation metrics. Folds run on up to `jobs` threads; the
/// result does not depend on `jobs`.
pub fn cross_validate<T: Scalar>(
    model_cfg: &ModelConfig,
    data: &WindowDataset<'_>,
    split: &Split,
    folds: usize,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CvSummary, TrainError> {
    if split.folds.len() < folds {
        return Err(TrainError::Folds {
            want: folds,
            have: split.folds.len(),
        });
    }
    let jobs = jobs.clamp(1, folds.max(1));
    let mut results: Vec<Option<Result<FoldResult, TrainError>>> =
        (0..folds).map(|_| None).collect();
    if jobs == 1 {
        for (k, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_fold::<T>(model_cfg, data, split, k, cfg));
        }
    } else {
        for start in (0..folds).step_by(jobs) {
            let end = (start + jobs).min(folds);
            let chunk: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = (start..end)
                    .map(|k| s.spawn(move || run_fold::<T>(model_cfg, data, split, k, cfg)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("fold thread panicked"))
                    .collect()
            });
            for (k, r) in (start..end).zip(chunk) {
                results[k] = Some(r);
            }
        }
    }
    let folds: Vec<FoldResult> = results
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect::<Result<_, _>>()?;
    Ok(CvSummary {
        acc: summarize(&folds, |f| f.acc),
        ss: summarize(&folds, |f| f.ss),
        sp: summarize(&folds, |f| f.sp),
        auc: summarize(&folds, |f| f.auc),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_closed_forms() {
        assert!((bce_loss(1.0, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(0.0, 0.9).unwrap() + 0.1f64.ln()).abs() < 1e-9);
        assert!(bce_loss(1.0, 1.0).unwrap() < 1.2e-7);
        assert!(bce_loss(0.5, 0.3).is_err());
    }

    #[test]
    fn schedule_staircase() {
        let s = LrSchedule::for_dataset(1e-3, 0.94, 382, 128);
        assert_eq!(s.interval, 3);
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(2), 1e-3);
        assert!((s.lr(9) - 8.30584e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let specs = [crate::params::ParamSpec::constant(
            "w",
            vec![1],
            crate::params::Init::Ones,
        )];
        let mut p = ParamStore::<f64>::from_specs(&specs, &mut Rng::new(0));
        let mut adam = Adam::new(LrSchedule::for_dataset(1e-3, 0.94, 128, 128));
        let g = Tensor::scalar(1.0);
        adam.step(&mut p, [("w", &g)]).unwrap();
        assert!((p.get("w").unwrap().data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        let z = Tensor::scalar(0.0);
        let mut q = ParamStore::<f64>::from_specs(&specs, &mut Rng::new(0));
        let mut adam = Adam::new(LrSchedule::for_dataset(1e-3, 0.94, 128, 128));
        for _ in 0..5 {
            adam.step(&mut q, [("w", &z)]).unwrap();
        }
        assert_eq!(q.get("w").unwrap().data()[0], 1.0);
        let bad = Tensor::scalar(f64::NAN);
        assert!(matches!(
            adam.step(&mut q, [("w", &bad)]),
            Err(TrainError::NonFiniteGradient { param }) if param == "w"
        ));
    }

    #[test]
    fn sample_sd() {
        let s = mean_sd(&[0.9, 0.92, 0.94, 0.96, 0.98]);
        assert!((s.mean - 0.94).abs() < 1e-12);
        assert!((s.sd - 0.0316).abs() < 1e-4);
        assert_eq!(mean_sd(&[0.5; 5]).sd, 0.0);
    }

    #[test]
    fn single_sample_tail_is_merged() {
        let idx: Vec<usize> = (0..9).collect();
        let b = batches(&idx, 4);
        assert_eq!(b.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 5]);
    }
}
