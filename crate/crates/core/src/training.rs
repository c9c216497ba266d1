//! Softmax cross-entropy, Adam with coupled L2 weight decay, the per-fold
//! training loop and the k-fold cross-validation harness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{EpochMonitor, TraceSink};
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, FeaturePolicy, FoldSplit, Graph};
use crate::init::{self, InitScheme, ReinitReport};
use crate::models::{Model, ModelSpec};
use crate::numcore::{Matrix, Rng};
use crate::scalar::Scalar;

/// Weight decay used by the "decay" model variants.
pub const DECAY_PRESET: f64 = 5e-3;

/// Stream id for per-epoch shuffles, kept apart from parameter draws.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// Numerically stable softmax cross-entropy. Returns the loss and its
/// gradient `softmax(scores) - onehot(label)`.
pub fn cross_entropy<S: Scalar>(scores: &Matrix<S>, label: usize) -> Result<(S, Matrix<S>)> {
    let s = scores.data();
    if label >= s.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            s.len()
        )));
    }
    let max = s.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = s.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    let loss = total.ln() + max - s[label];
    let mut grad: Vec<S> = exps.iter().map(|&e| e / total).collect();
    grad[label] -= S::one();
    Ok((loss, Matrix::from_vec(scores.rows(), scores.cols(), grad)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Coupled L2 coefficient added to each gradient before the moment updates.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 64,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            init: InitScheme::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.init.reinit_sample_cap == Some(0) {
            return Err(Error::Config("reinit_sample_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam moment buffers for one parameter registry.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &[&Matrix<S>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Frozen parameters are skipped
    /// entirely, moments included.
    pub fn step(
        &mut self,
        params: Vec<&mut Matrix<S>>,
        grads: &[Matrix<S>],
        frozen: &[bool],
        cfg: &TrainConfig,
    ) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || frozen.len() != self.m.len()
        {
            return Err(Error::State(format!(
                "optimiser tracks {} tensors, got {} params, {} grads, {} flags",
                self.m.len(),
                params.len(),
                grads.len(),
                frozen.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (S::of(cfg.betas.0), S::of(cfg.betas.1));
        let t = self.step as i32;
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let lr = S::of(cfg.lr);
        let eps = S::of(cfg.eps);
        let wd = S::of(cfg.weight_decay);
        for (i, p) in params.into_iter().enumerate() {
            let g = &grads[i];
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::State(format!(
                    "tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            if frozen[i] {
                continue;
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k] + wd * *w;
                m[k] = b1 * m[k] + (S::one() - b1) * gk;
                v[k] = b2 * v[k] + (S::one() - b2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step<S: Scalar>(
    state: &mut Adam<S>,
    model: &mut Model<S>,
    grads: &[Matrix<S>],
    cfg: &TrainConfig,
) -> Result<()> {
    let frozen = model.frozen_mask();
    state.step(model.params_mut(), grads, &frozen, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epochs: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Held-out accuracy in percent after the configured number of epochs.
    pub accuracy: f64,
    /// Mean training loss of each epoch, accumulated while training.
    pub train_loss: Vec<f64>,
    /// 1-based epoch with the lowest training loss.
    pub best_epoch: usize,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<EpochAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reinit: Option<ReinitReport>,
}

/// Optional per-fold extras.
#[derive(Debug, Clone, Default)]
pub struct FoldOptions {
    /// Record per-epoch diagnostics; epoch 0 holds the untrained model.
    pub trace: bool,
    /// Also evaluate held-out accuracy after each of these epochs.
    pub eval_at: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FoldOutput<S> {
    pub result: FoldResult,
    pub trace: Option<TraceSink>,
    pub model: Model<S>,
}

fn fold_seed(cfg: &TrainConfig, fold: usize) -> u64 {
    cfg.seed ^ fold as u64
}

/// Builds and initialises the model for one fold exactly as
/// [`train_fold`] does, including ReInit on the training graphs.
pub fn build_fold_model<S: Scalar>(
    ds: &Dataset<S>,
    split: &FoldSplit,
    fold: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model<S>, Option<ReinitReport>)> {
    let mut rng = Rng::derive(fold_seed(cfg, fold), cfg.init.seed);
    let mut model = Model::build(spec, ds.feature_dim, ds.num_classes, &mut rng)?;
    let report = if cfg.init.uses_reinit() {
        let train = split.train_indices(fold);
        let cap = cfg
            .init
            .reinit_sample_cap
            .unwrap_or(train.len())
            .min(train.len());
        let calibration: Vec<&Graph<S>> = train[..cap].iter().map(|&i| &ds.graphs[i]).collect();
        Some(init::reinit(&mut model, &calibration)?)
    } else {
        None
    };
    Ok((model, report))
}

/// Percentage of `indices` whose prediction matches the label.
pub fn accuracy<S: Scalar>(
    model: &mut Model<S>,
    ds: &Dataset<S>,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Harness("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for &i in indices {
        let g = &ds.graphs[i];
        if model.predict(g)? == g.label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / indices.len() as f64)
}

fn trace_untrained<S: Scalar>(
    model: &mut Model<S>,
    ds: &Dataset<S>,
    train: &[usize],
    sink: &mut TraceSink,
) -> Result<()> {
    let mut monitor = EpochMonitor::new();
    let mut loss = 0.0;
    for &i in train {
        let g = &ds.graphs[i];
        let scores = model.forward(g)?;
        loss += cross_entropy(&scores, g.label)?.0.to_f64_lossy();
        monitor.observe_forward(model)?;
    }
    monitor.flush(sink, 0, Some(loss / train.len() as f64))
}

/// Trains one fold and evaluates it on the held-out graphs.
pub fn train_fold<S: Scalar>(
    ds: &Dataset<S>,
    split: &FoldSplit,
    fold: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    opts: &FoldOptions,
) -> Result<FoldOutput<S>> {
    cfg.validate()?;
    if fold >= split.fold_count {
        return Err(Error::Harness(format!(
            "fold {fold} out of range for {} folds",
            split.fold_count
        )));
    }
    if split.assignments.len() != ds.len() {
        return Err(Error::Harness(format!(
            "split covers {} graphs but the dataset has {}",
            split.assignments.len(),
            ds.len()
        )));
    }
    let train = split.train_indices(fold);
    let test = split.test_indices(fold);
    if train.is_empty() {
        return Err(Error::Harness(format!(
            "fold {fold} has an empty training set"
        )));
    }
    if test.is_empty() {
        return Err(Error::Harness(format!("fold {fold} has an empty test set")));
    }

    let (mut model, reinit) = build_fold_model(ds, split, fold, spec, cfg)?;
    let mut adam = Adam::new(&model.params());
    let frozen = model.frozen_mask();
    let mut shuffle = Rng::derive(fold_seed(cfg, fold), SHUFFLE_STREAM);
    let mut trace = opts.trace.then(TraceSink::new);
    let mut monitor = EpochMonitor::new();
    if let Some(sink) = &mut trace {
        trace_untrained(&mut model, ds, &train, sink)?;
    }

    let mut order = train.clone();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let g = &ds.graphs[i];
                let scores = model.forward(g)?;
                let (loss, grad_scores) = cross_entropy(&scores, g.label)?;
                epoch_loss += loss.to_f64_lossy();
                if trace.is_some() {
                    monitor.observe_forward(&model)?;
                }
                for (acc, g) in grads.iter_mut().zip(model.backward(&grad_scores)?) {
                    acc.add_assign(&g)?;
                }
            }
            let inv = S::of(batch.len() as f64).recip();
            grads.iter_mut().for_each(|g| g.scale_in_place(inv));
            if trace.is_some() {
                monitor.observe_grads(&model, &grads);
                monitor.end_batch();
            }
            adam.step(model.params_mut(), &grads, &frozen, cfg)?;
        }
        let mean_loss = epoch_loss / train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Harness(format!(
                "fold {fold}: training loss diverged at epoch {epoch}"
            )));
        }
        train_loss.push(mean_loss);
        if let Some(sink) = &mut trace {
            monitor.flush(sink, epoch, Some(mean_loss))?;
        }
        if opts.eval_at.contains(&epoch) {
            checkpoints.push(EpochAccuracy {
                epochs: epoch,
                accuracy: accuracy(&mut model, ds, &test)?,
            });
        }
    }

    let acc = accuracy(&mut model, ds, &test)?;
    let best_epoch = train_loss
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (i, &l)| if l < best.1 { (i, l) } else { best },
        )
        .0
        + 1;
    info!(
        "fold {fold}: accuracy {acc:.2}% after {} epochs",
        cfg.epochs
    );
    Ok(FoldOutput {
        result: FoldResult {
            fold,
            accuracy: acc,
            train_loss,
            best_epoch,
            steps: adam.steps(),
            checkpoints,
            reinit,
        },
        trace,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub dataset: String,
    pub feature_policy: FeaturePolicy,
    pub fold_count: usize,
    pub split_seed: u64,
    pub folds: Vec<FoldResult>,
    /// Mean of the fold accuracies, in percent.
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
    /// Per-fold ReInit divisors, when ReInit was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reinit_divisors: Option<Vec<Vec<f64>>>,
    pub wall_clock_s: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads for folds. Results are identical for any value.
    pub jobs: usize,
    pub fold: FoldOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            fold: FoldOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Per-fold traces, in fold order, when tracing was enabled.
    pub traces: Vec<TraceSink>,
}

/// Runs every fold of `split` and aggregates the accuracies. Folds may run
/// on several threads; results are reduced in fold order.
pub fn run_cv<S: Scalar>(
    ds: &Dataset<S>,
    split: &FoldSplit,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunOutput> {
    spec.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let folds = split.fold_count;
    let jobs = opts.jobs.clamp(1, folds.max(1));
    let slots: Vec<Mutex<Option<Result<FoldOutput<S>>>>> =
        (0..folds).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let fold = next.fetch_add(1, Ordering::Relaxed);
                if fold >= folds {
                    break;
                }
                let out = train_fold(ds, split, fold, spec, cfg, &opts.fold);
                *slots[fold].lock().expect("fold slot poisoned") = Some(out);
            });
        }
    });

    let mut results = Vec::with_capacity(folds);
    let mut traces = Vec::new();
    for slot in slots {
        let out = slot
            .into_inner()
            .expect("fold slot poisoned")
            .ok_or_else(|| Error::Harness("fold worker exited without a result".into()))??;
        results.push(out.result);
        traces.extend(out.trace);
    }
    let accs: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    let reinit_divisors = cfg.init.uses_reinit().then(|| {
        results
            .iter()
            .map(|r| {
                r.reinit
                    .as_ref()
                    .map(|x| x.divisors.clone())
                    .unwrap_or_default()
            })
            .collect()
    });
    Ok(RunOutput {
        report: RunReport {
            model: spec.clone(),
            config: cfg.clone(),
            dataset: ds.name.clone(),
            feature_policy: ds.feature_policy,
            fold_count: folds,
            split_seed: split.seed,
            folds: results,
            mean,
            std,
            reinit_divisors,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
        traces,
    })
}
